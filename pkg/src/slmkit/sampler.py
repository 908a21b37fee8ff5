"""Cluster-level importance weights and generic-corpus resampling.

The importance weight of a cluster is the ratio of its frequency in the
specialization corpus to its frequency in the generic corpus. Resampling
draws generic windows so their cluster histogram imitates the specialization
histogram: first a cluster (by target probability), then a window uniformly
within that cluster, with replacement.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .clustering import Clustering, ClusterHistogram, cluster_of
from .corpus import Corpus, Document, corpus_windows
from .errors import ConfigError, UnsupportedClusterError


@dataclass
class ImportanceWeights:
    weights: np.ndarray  # (k,) nonnegative reals

    @property
    def k(self) -> int:
        return len(self.weights)


@dataclass
class ResamplePlan:
    probabilities: np.ndarray  # (k,) target cluster distribution, sums to 1
    target_size: int  # number of windows to draw
    seed: int

    def to_json(self) -> dict:
        return {
            "probabilities": self.probabilities.tolist(),
            "target_size": self.target_size,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, data: dict) -> "ResamplePlan":
        return cls(np.asarray(data["probabilities"], dtype=np.float64),
                   data["target_size"], data["seed"])


def importance_weights(spec_hist: ClusterHistogram,
                       gen_hist: ClusterHistogram) -> ImportanceWeights:
    """Per-cluster ratio of specialization to generic frequencies."""
    if spec_hist.k != gen_hist.k:
        raise ConfigError(
            f"histograms disagree on k: {spec_hist.k} vs {gen_hist.k}"
        )
    spec = spec_hist.frequencies
    gen = gen_hist.frequencies
    unsupported = np.nonzero((spec > 0) & (gen == 0))[0]
    if len(unsupported) > 0:
        raise UnsupportedClusterError(int(unsupported[0]))
    weights = np.zeros_like(spec)
    nz = gen > 0
    weights[nz] = spec[nz] / gen[nz]
    return ImportanceWeights(weights)


def resample_plan(spec_hist: ClusterHistogram, target_size: int, seed: int,
                  smoothing_alpha: float = 0.0) -> ResamplePlan:
    """Plan targeting the specialization histogram.

    ``smoothing_alpha`` > 0 applies Laplace smoothing to the counts, useful
    when the specialization set is tiny; off by default.
    """
    counts = spec_hist.counts.astype(np.float64) + smoothing_alpha
    probs = counts / counts.sum()
    return ResamplePlan(probs, target_size, seed)


def resample(generic: Corpus, clustering: Clustering, plan: ResamplePlan,
             context_length: int | None = None) -> Corpus:
    """Draw ``plan.target_size`` windows from the generic corpus.

    Two-stage sampling with replacement: cluster by plan probability, then a
    window uniformly within the cluster. Deterministic given ``plan.seed``;
    the resulting corpus records each draw's source window in its ids.
    """
    if len(plan.probabilities) != clustering.k:
        raise ConfigError("plan and clustering disagree on the number of clusters")
    if abs(plan.probabilities.sum() - 1.0) > 1e-9:
        raise ConfigError("plan probabilities must sum to 1")
    context_length = context_length or clustering.context_length
    windows = corpus_windows(generic, context_length)
    members: list[list] = [[] for _ in range(clustering.k)]
    for w in windows:
        members[cluster_of(w, clustering)].append(w)
    for c in np.nonzero(plan.probabilities > 0)[0]:
        if not members[c]:
            raise UnsupportedClusterError(int(c), f"cluster {c} is empty in the generic corpus")

    rng = np.random.default_rng(plan.seed)
    clusters = rng.choice(clustering.k, size=plan.target_size, p=plan.probabilities)
    sizes = np.array([max(len(m), 1) for m in members])
    picks = np.floor(rng.random(plan.target_size) * sizes[clusters]).astype(np.int64)

    documents = []
    for i, (c, j) in enumerate(zip(clusters, picks)):
        src = members[c][j]
        documents.append(
            Document(f"rs{i:07d}:{src.id}", src.domain, "", src.tokens)
        )
    return Corpus(
        documents,
        vocab_size=generic.vocab_size,
        role=generic.role,
        split="train",
        tokenizer_meta=generic.tokenizer_meta,
    )


def weighted_loss(per_window_losses: Sequence[tuple[int, float]],
                  weights: ImportanceWeights) -> float:
    """Mean over windows of weight[cluster] * loss."""
    if not per_window_losses:
        raise ConfigError("no losses given")
    total = 0.0
    for c, loss in per_window_losses:
        if c >= weights.k:
            raise ConfigError(f"cluster id {c} out of range for k={weights.k}")
        total += weights.weights[c] * loss
    return total / len(per_window_losses)


def save_plan(plan: ResamplePlan, path: str | Path, provenance: dict | None = None) -> None:
    payload = plan.to_json()
    if provenance:
        payload["provenance"] = provenance
    Path(path).write_text(json.dumps(payload, indent=2), encoding="utf-8")


def load_plan(path: str | Path) -> ResamplePlan:
    return ResamplePlan.from_json(json.loads(Path(path).read_text(encoding="utf-8")))
