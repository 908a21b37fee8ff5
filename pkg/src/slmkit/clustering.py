"""Window embedding, k-means clustering, and cluster-histogram diagnostics.

Windows are embedded as L2-normalized hashed token n-gram counts (orders 1-3,
term-frequency weighted), then clustered with Lloyd's algorithm seeded by
k-means++. The resulting cluster histogram of a corpus is the statistic the
sampler and specializer consume.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Corpus, Document, Window, corpus_windows
from .errors import ConfigError, EmptyCorpusError, EmptyInputError

DEFAULT_EMBED_DIM = 256
NGRAM_ORDERS = (1, 2, 3)

# Cluster-count defaults: a large k for importance sampling, a small one for
# per-expert conditioning, scaled to desk-size corpora.
DEFAULT_K_IMPORTANCE = 64
DEFAULT_K_EXPERTS = 8

_FNV_OFFSET = np.uint64(0xCBF29CE484222325)
_FNV_PRIME = np.uint64(0x100000001B3)

CLUSTERING_MAGIC = b"SLMC"
CLUSTERING_FORMAT_VERSION = 1


def _hash_rows(grams: np.ndarray) -> np.ndarray:
    """FNV-1a over the token columns of each row, with a final avalanche."""
    h = np.full(grams.shape[0], _FNV_OFFSET, dtype=np.uint64)
    h = (h ^ np.uint64(grams.shape[1])) * _FNV_PRIME
    for col in range(grams.shape[1]):
        h = (h ^ grams[:, col].astype(np.uint64)) * _FNV_PRIME
    h ^= h >> np.uint64(33)
    h *= np.uint64(0xFF51AFD7ED558CCD)
    h ^= h >> np.uint64(33)
    return h


def ngram_buckets(tokens: Sequence[int], dim: int = DEFAULT_EMBED_DIM,
                  orders: Sequence[int] = NGRAM_ORDERS) -> np.ndarray:
    """Hash buckets of every token n-gram, concatenated across orders."""
    arr = np.asarray(tokens, dtype=np.uint64)
    parts = []
    for n in orders:
        if len(arr) < n:
            continue
        grams = np.lib.stride_tricks.sliding_window_view(arr, n)
        parts.append(_hash_rows(grams) % np.uint64(dim))
    if not parts:
        return np.empty(0, dtype=np.uint64)
    return np.concatenate(parts)


def embed_tokens(tokens: Sequence[int], dim: int = DEFAULT_EMBED_DIM,
                 orders: Sequence[int] = NGRAM_ORDERS) -> np.ndarray:
    """Unit-norm hashed n-gram count vector for a token sequence."""
    if len(tokens) == 0:
        raise EmptyInputError("cannot embed an empty token sequence")
    vec = np.zeros(dim, dtype=np.float64)
    buckets = ngram_buckets(tokens, dim, orders)
    np.add.at(vec, buckets.astype(np.intp), 1.0)
    return vec / np.linalg.norm(vec)


def embed(doc_or_window: Document | Window, dim: int = DEFAULT_EMBED_DIM) -> np.ndarray:
    return embed_tokens(doc_or_window.tokens, dim)


@dataclass
class Clustering:
    k: int
    centroids: np.ndarray  # (k, d_emb)
    assignments: dict[str, int]  # window id -> cluster id
    inertia: float
    inertia_history: list[float] = field(default_factory=list)
    context_length: int | None = None  # windowing used when fitting

    @property
    def d_emb(self) -> int:
        return self.centroids.shape[1]


@dataclass
class ClusterHistogram:
    counts: np.ndarray  # (k,) nonnegative ints

    @property
    def k(self) -> int:
        return len(self.counts)

    @property
    def frequencies(self) -> np.ndarray:
        total = self.counts.sum()
        if total == 0:
            raise EmptyCorpusError("histogram has no windows")
        return self.counts / total


def _kmeanspp_init(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centroids = np.empty((k, X.shape[1]), dtype=X.dtype)
    centroids[0] = X[rng.integers(n)]
    d2 = ((X - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            # All remaining mass sits on already-chosen points; pick any
            # point distinct from the current centroids.
            candidates = np.nonzero(d2 > 0)[0]
            idx = rng.integers(n) if len(candidates) == 0 else rng.choice(candidates)
        else:
            idx = rng.choice(n, p=d2 / total)
        centroids[j] = X[idx]
        d2 = np.minimum(d2, ((X - centroids[j]) ** 2).sum(axis=1))
    return centroids


def _squared_distances(X: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # (n, k) matrix of squared L2 distances; clamp tiny negatives from the
    # expansion identity.
    d2 = (
        (X**2).sum(axis=1)[:, None]
        - 2.0 * X @ centroids.T
        + (centroids**2).sum(axis=1)[None, :]
    )
    return np.maximum(d2, 0.0)


def kmeans(vectors: Sequence[np.ndarray] | np.ndarray, k: int, max_iters: int = 100,
           seed: int = 0, ids: Sequence[str] | None = None,
           context_length: int | None = None) -> Clustering:
    """Lloyd's algorithm with k-means++ initialization.

    Deterministic given the seed; stops when assignments are stable or after
    ``max_iters``. Empty clusters are reseeded to the point farthest from its
    assigned centroid.
    """
    X = np.asarray(vectors, dtype=np.float64)
    if X.ndim != 2:
        raise ConfigError("expected a 2-D array of embedding vectors")
    if max_iters < 1:
        raise ConfigError("max_iters must be >= 1")
    n_distinct = np.unique(X, axis=0).shape[0]
    if k < 1 or k > n_distinct:
        raise ConfigError(f"k={k} must be in [1, {n_distinct}] (distinct vectors)")
    if ids is None:
        ids = [str(i) for i in range(X.shape[0])]
    elif len(ids) != X.shape[0]:
        raise ConfigError("ids and vectors disagree in length")

    rng = np.random.default_rng(seed)
    centroids = _kmeanspp_init(X, k, rng)
    history: list[float] = []
    labels = None
    for _ in range(max_iters):
        d2 = _squared_distances(X, centroids)
        new_labels = d2.argmin(axis=1)  # argmin takes the lowest index on ties
        # Reseed empty clusters to the farthest point of a multi-member cluster.
        for _ in range(k):
            sizes = np.bincount(new_labels, minlength=k)
            empty = np.nonzero(sizes == 0)[0]
            if len(empty) == 0:
                break
            own_d2 = d2[np.arange(len(new_labels)), new_labels]
            movable = sizes[new_labels] > 1
            candidates = np.where(movable, own_d2, -np.inf)
            far = int(candidates.argmax())
            centroids[empty[0]] = X[far]
            d2 = _squared_distances(X, centroids)
            new_labels = d2.argmin(axis=1)
        inertia = float(d2[np.arange(len(new_labels)), new_labels].sum())
        history.append(inertia)
        if labels is not None and np.array_equal(labels, new_labels):
            break
        labels = new_labels
        for j in range(k):
            centroids[j] = X[labels == j].mean(axis=0)

    assignments = {ids[i]: int(labels[i]) for i in range(len(ids))}
    return Clustering(k, centroids, assignments, history[-1], history, context_length)


def assign(vector: np.ndarray, clustering: Clustering) -> int:
    """Nearest centroid under L2; ties break to the lowest cluster id."""
    vector = np.asarray(vector, dtype=np.float64)
    if vector.shape != (clustering.d_emb,):
        raise ConfigError(
            f"vector dimension {vector.shape} does not match centroids ({clustering.d_emb})"
        )
    d2 = ((clustering.centroids - vector) ** 2).sum(axis=1)
    return int(d2.argmin())


def cluster_of(win: Window, clustering: Clustering) -> int:
    """Cluster id of a window: recorded assignment if known, else embed+assign."""
    hit = clustering.assignments.get(win.id)
    if hit is not None:
        return hit
    return assign(embed(win, clustering.d_emb), clustering)


def assign_windows(windows: Sequence[Window], clustering: Clustering) -> list[Window]:
    out = []
    for w in windows:
        w.cluster = cluster_of(w, clustering)
        out.append(w)
    return out


def histogram(corpus: Corpus, clustering: Clustering,
              context_length: int | None = None) -> ClusterHistogram:
    """Distribution of a corpus's windows over the clustering's clusters."""
    context_length = context_length or clustering.context_length
    if context_length is None:
        raise ConfigError("context_length needed: clustering does not record one")
    windows = corpus_windows(corpus, context_length)
    if not windows:
        raise EmptyCorpusError("corpus has no windows to histogram")
    counts = np.zeros(clustering.k, dtype=np.int64)
    for w in windows:
        counts[cluster_of(w, clustering)] += 1
    return ClusterHistogram(counts)


def histogram_from_assignments(cluster_ids: Sequence[int], k: int) -> ClusterHistogram:
    return ClusterHistogram(np.bincount(np.asarray(cluster_ids), minlength=k))


def entropy(hist: ClusterHistogram) -> float:
    """Shannon entropy of the histogram in nats, with 0*ln(0) = 0."""
    p = hist.frequencies
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def top_cluster_fraction(hist: ClusterHistogram) -> float:
    return float(hist.frequencies.max())


def fit_corpus_clustering(corpus: Corpus, k: int, context_length: int,
                          seed: int = 0, dim: int = DEFAULT_EMBED_DIM,
                          max_iters: int = 100) -> Clustering:
    """Window a corpus, embed every window, and fit k-means."""
    windows = corpus_windows(corpus, context_length)
    if not windows:
        raise EmptyCorpusError("corpus has no windows to cluster")
    vectors = np.stack([embed(w, dim) for w in windows])
    ids = [w.id for w in windows]
    return kmeans(vectors, k, max_iters=max_iters, seed=seed, ids=ids,
                  context_length=context_length)


def save_clustering(clustering: Clustering, path: str | Path) -> None:
    """Binary artifact: magic, version, JSON header, centroid f32 bytes."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "format_version": CLUSTERING_FORMAT_VERSION,
        "k": clustering.k,
        "d_emb": clustering.d_emb,
        "inertia": clustering.inertia,
        "inertia_history": clustering.inertia_history,
        "context_length": clustering.context_length,
        "assignments": clustering.assignments,
    }
    blob = json.dumps(header).encode("utf-8")
    cents = np.ascontiguousarray(clustering.centroids, dtype="<f4").tobytes()
    with path.open("wb") as fh:
        fh.write(CLUSTERING_MAGIC)
        fh.write(struct.pack("<IQ", CLUSTERING_FORMAT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(cents)


def load_clustering(path: str | Path) -> Clustering:
    path = Path(path)
    with path.open("rb") as fh:
        magic = fh.read(4)
        if magic != CLUSTERING_MAGIC:
            raise ConfigError(f"{path} is not a clustering artifact")
        version, hlen = struct.unpack("<IQ", fh.read(12))
        if version != CLUSTERING_FORMAT_VERSION:
            raise ConfigError(f"unsupported clustering format version {version}")
        header = json.loads(fh.read(hlen).decode("utf-8"))
        cents = np.frombuffer(fh.read(), dtype="<f4").astype(np.float64)
    centroids = cents.reshape(header["k"], header["d_emb"])
    return Clustering(
        k=header["k"],
        centroids=centroids,
        assignments={k: int(v) for k, v in header["assignments"].items()},
        inertia=header["inertia"],
        inertia_history=header["inertia_history"],
        context_length=header["context_length"],
    )
