"""Corpus ingestion, tokenization, windowing, and train/held-out splits.

A corpus is a list of domain-tagged, tokenized documents. Long documents are
broken into non-overlapping windows of at most ``context_length`` tokens;
windows are the unit used by clustering, sampling, training and evaluation.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, EmptyCorpusError

BYTE_VOCAB_SIZE = 257  # 256 byte values + trailing pad id

CORPUS_FORMAT_VERSION = 1


class ByteTokenizer:
    """Deterministic byte-level tokenizer: token ids are UTF-8 byte values.

    The last vocabulary slot (id 256) is reserved for padding and never
    produced by ``encode``.
    """

    mode = "byte"

    @property
    def vocab_size(self) -> int:
        return BYTE_VOCAB_SIZE

    @property
    def pad_id(self) -> int:
        return BYTE_VOCAB_SIZE - 1

    def encode(self, text: str) -> list[int]:
        return list(text.encode("utf-8"))

    def decode(self, ids: Sequence[int]) -> str:
        return bytes(i for i in ids if i < 256).decode("utf-8", errors="replace")

    def meta(self) -> dict:
        return {"mode": self.mode}


class WordTokenizer:
    """Whitespace word tokenizer with a learned, size-capped vocabulary.

    Id 0 is the unknown-word token; the last id is reserved for padding.
    Decoding yields a normalization of the input (single spaces, unknowns
    replaced by ``<unk>``).
    """

    mode = "word"

    def __init__(self, vocab: Sequence[str], max_vocab: int):
        if max_vocab < 3:
            raise ConfigError("word tokenizer needs max_vocab >= 3")
        self.max_vocab = max_vocab
        self._words = list(vocab)[: max_vocab - 2]
        self._index = {w: i + 1 for i, w in enumerate(self._words)}

    @classmethod
    def train(cls, texts: Iterable[str], max_vocab: int) -> "WordTokenizer":
        counts = Counter()
        for text in texts:
            counts.update(text.split())
        # Frequency order, ties alphabetical, so training is deterministic.
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        return cls([w for w, _ in ranked], max_vocab)

    @property
    def vocab_size(self) -> int:
        return len(self._words) + 2

    @property
    def pad_id(self) -> int:
        return self.vocab_size - 1

    def encode(self, text: str) -> list[int]:
        return [self._index.get(w, 0) for w in text.split()]

    def decode(self, ids: Sequence[int]) -> str:
        out = []
        for i in ids:
            if i == 0:
                out.append("<unk>")
            elif 1 <= i <= len(self._words):
                out.append(self._words[i - 1])
        return " ".join(out)

    def meta(self) -> dict:
        return {"mode": self.mode, "max_vocab": self.max_vocab, "vocab": self._words}


def tokenizer_from_meta(meta: dict):
    if meta["mode"] == "byte":
        return ByteTokenizer()
    if meta["mode"] == "word":
        return WordTokenizer(meta["vocab"], meta["max_vocab"])
    raise ConfigError(f"unknown tokenizer mode {meta['mode']!r}")


def tokenize(text: str, tokenizer=None) -> list[int]:
    """Tokenize ``text``; byte-level by default."""
    return (tokenizer or ByteTokenizer()).encode(text)


@dataclass(frozen=True)
class Document:
    id: str
    domain: str
    text: str
    tokens: tuple[int, ...]


@dataclass
class Corpus:
    documents: list[Document]
    vocab_size: int
    role: str = "generic"  # "generic" | "specialization"
    split: str = "train"  # "train" | "heldout"
    tokenizer_meta: dict = field(default_factory=lambda: {"mode": "byte"})

    def __len__(self) -> int:
        return len(self.documents)

    @property
    def pad_id(self) -> int:
        return self.vocab_size - 1

    def domains(self) -> list[str]:
        return sorted({d.domain for d in self.documents})

    def total_tokens(self) -> int:
        return sum(len(d.tokens) for d in self.documents)

    def restrict(self, domain: str) -> "Corpus":
        docs = [d for d in self.documents if d.domain == domain]
        return replace(self, documents=docs)


@dataclass
class Window:
    """A contiguous, non-overlapping slice of one document's tokens."""

    doc_id: str
    index: int
    domain: str
    tokens: tuple[int, ...]
    cluster: int | None = None

    @property
    def id(self) -> str:
        return f"{self.doc_id}#{self.index}"


def ingest(paths: Sequence[str | Path], domain: str, tokenizer=None, unit: str = "line") -> Corpus:
    """Read text files and return a tokenized, domain-tagged corpus.

    ``unit="line"`` makes each non-empty line a document; ``unit="file"``
    makes each file one document.
    """
    if unit not in ("line", "file"):
        raise ConfigError(f"unit must be 'line' or 'file', got {unit!r}")
    tokenizer = tokenizer or ByteTokenizer()
    documents: list[Document] = []
    for path in paths:
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"cannot read corpus file: {path}")
        text = path.read_text(encoding="utf-8")
        if unit == "file":
            pieces = [text] if text.strip() else []
        else:
            pieces = [line for line in text.splitlines() if line.strip()]
        for i, piece in enumerate(pieces):
            doc_id = f"{path.stem}-{i:06d}"
            documents.append(
                Document(doc_id, domain, piece, tuple(tokenizer.encode(piece)))
            )
    if not documents:
        raise EmptyCorpusError(f"no documents ingested for domain {domain!r}")
    return Corpus(
        documents,
        vocab_size=tokenizer.vocab_size,
        role="generic",
        split="train",
        tokenizer_meta=tokenizer.meta(),
    )


def merge(corpora: Sequence[Corpus], role: str = "generic", split: str = "train") -> Corpus:
    """Concatenate same-tokenizer corpora (e.g. one per domain) into one."""
    if not corpora:
        raise EmptyCorpusError("nothing to merge")
    vocab = corpora[0].vocab_size
    if any(c.vocab_size != vocab for c in corpora):
        raise ConfigError("cannot merge corpora with different vocabularies")
    docs = [d for c in corpora for d in c.documents]
    ids = [d.id for d in docs]
    if len(set(ids)) != len(ids):
        raise ConfigError("duplicate document ids across merged corpora")
    return Corpus(docs, vocab, role, split, corpora[0].tokenizer_meta)


def window(doc: Document, context_length: int) -> list[Window]:
    """Break a document into non-overlapping windows of ``context_length``.

    All windows are full length except possibly the last; windows shorter
    than 2 tokens are dropped (no next-token target).
    """
    if context_length < 2:
        raise ConfigError(f"context_length must be >= 2, got {context_length}")
    out = []
    for i, start in enumerate(range(0, len(doc.tokens), context_length)):
        chunk = doc.tokens[start : start + context_length]
        if len(chunk) >= 2:
            out.append(Window(doc.id, i, doc.domain, chunk))
    return out


def corpus_windows(corpus: Corpus, context_length: int) -> list[Window]:
    return [w for doc in corpus.documents for w in window(doc, context_length)]


def split_heldout(corpus: Corpus, n_docs: int, seed: int) -> tuple[Corpus, Corpus]:
    """Deterministically split off ``n_docs`` held-out documents."""
    if n_docs >= len(corpus.documents):
        raise ConfigError(
            f"n_docs={n_docs} must be smaller than the corpus ({len(corpus.documents)} docs)"
        )
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(corpus.documents))
    held_idx = set(order[:n_docs].tolist())
    held = [d for i, d in enumerate(corpus.documents) if i in held_idx]
    train = [d for i, d in enumerate(corpus.documents) if i not in held_idx]
    return (
        replace(corpus, documents=train, split="train"),
        replace(corpus, documents=held, split="heldout"),
    )


def save_corpus(corpus: Corpus, path: str | Path, extra_meta: dict | None = None) -> None:
    """Write a corpus as JSON-lines records with a ``.meta.json`` sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for doc in corpus.documents:
            rec = {"id": doc.id, "domain": doc.domain, "tokens": list(doc.tokens)}
            if doc.text:
                rec["text"] = doc.text
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
    meta = {
        "format_version": CORPUS_FORMAT_VERSION,
        "vocab_size": corpus.vocab_size,
        "role": corpus.role,
        "split": corpus.split,
        "tokenizer": corpus.tokenizer_meta,
        "num_documents": len(corpus.documents),
    }
    if extra_meta:
        meta.update(extra_meta)
    meta_path(path).write_text(json.dumps(meta, indent=2), encoding="utf-8")


def meta_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_suffix(path.suffix + ".meta.json")


def load_corpus(path: str | Path) -> Corpus:
    path = Path(path)
    meta = json.loads(meta_path(path).read_text(encoding="utf-8"))
    documents = []
    with path.open("r", encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            documents.append(
                Document(rec["id"], rec["domain"], rec.get("text", ""), tuple(rec["tokens"]))
            )
    return Corpus(
        documents,
        vocab_size=meta["vocab_size"],
        role=meta["role"],
        split=meta["split"],
        tokenizer_meta=meta["tokenizer"],
    )
