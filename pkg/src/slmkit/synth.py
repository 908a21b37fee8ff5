"""Synthetic multi-domain text: one character-level Markov source per domain.

Each domain concentrates on its own slice of the alphabet and has its own
transition structure, so domains are topically distinct at the n-gram level
while still sharing characters. This is the offline stand-in for a real
generic/specialization corpus pair; the whole pipeline is testable on it.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

ALPHABET = "abcdefghijklmnopqrstuvwxyz "

DEFAULT_DOMAINS = ("news", "law", "chat", "code")


class MarkovSource:
    """Seeded first-order character Markov chain over a preferred subset."""

    def __init__(self, domain: str, seed: int, alphabet: str = ALPHABET,
                 subset_size: int = 10, focus: float = 0.92):
        self.domain = domain
        self.alphabet = alphabet
        rng = np.random.default_rng(seed)
        n = len(alphabet)
        letters = [i for i, ch in enumerate(alphabet) if ch != " "]
        subset = rng.choice(letters, size=min(subset_size, len(letters)), replace=False)
        space = alphabet.index(" ")
        self.subset = np.append(subset, space)

        # Row-stochastic transitions: most mass on the domain subset, a spiky
        # per-row profile so bigram statistics differ across domains too.
        trans = np.zeros((n, n))
        for i in range(n):
            spike = rng.random(len(self.subset)) ** 4
            trans[i, self.subset] = spike + 0.02
            trans[i] += (1.0 - focus) / n * rng.random(n)
            trans[i, space] = max(trans[i, space], 0.15 * trans[i].sum())
            trans[i] /= trans[i].sum()
        self.transitions = trans
        start = np.zeros(n)
        start[self.subset] = rng.random(len(self.subset)) + 0.1
        self.start = start / start.sum()

    def document(self, rng: np.random.Generator, length: int) -> str:
        n = len(self.alphabet)
        out = np.empty(length, dtype=np.int64)
        out[0] = rng.choice(n, p=self.start)
        for t in range(1, length):
            out[t] = rng.choice(n, p=self.transitions[out[t - 1]])
        return "".join(self.alphabet[i] for i in out)


def generate_domain(domain: str, num_docs: int, seed: int,
                    length_range: tuple[int, int] = (120, 360)) -> list[str]:
    source = MarkovSource(domain, seed=hash_seed(domain, seed))
    rng = np.random.default_rng(hash_seed(domain, seed) + 1)
    lo, hi = length_range
    return [source.document(rng, int(rng.integers(lo, hi + 1))) for _ in range(num_docs)]


def hash_seed(domain: str, seed: int) -> int:
    mixed = np.random.SeedSequence([seed, *[ord(c) for c in domain]])
    return int(mixed.generate_state(1)[0])


def write_domain_files(out_dir: str | Path, domains: dict[str, list[str]]) -> dict[str, Path]:
    """One text file per domain, one document per line."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    for domain, docs in domains.items():
        path = out_dir / f"{domain}.txt"
        path.write_text("\n".join(docs) + "\n", encoding="utf-8")
        paths[domain] = path
    return paths


def generate_corpus_files(out_dir: str | Path, seed: int,
                          domains: tuple[str, ...] = DEFAULT_DOMAINS,
                          docs_per_domain: int = 200,
                          length_range: tuple[int, int] = (120, 360)) -> dict[str, Path]:
    texts = {
        d: generate_domain(d, docs_per_domain, seed, length_range) for d in domains
    }
    return write_domain_files(out_dir, texts)
