"""Turning a pretrained multi-expert artifact into one fine-tuned small model.

Three expert-selection strategies are supported: the expert of the most
frequent specialization cluster (cheap, the default), the expert with the
best pre-fine-tuning validation loss (cheap), and fine-tuning every expert
and keeping the best (costs num_experts times as much fine-tuning).
Specialization never reads the pretraining corpus.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .clustering import Clustering, ClusterHistogram, histogram
from .corpus import Corpus, corpus_windows
from .errors import ConfigError
from .evaluator import windows_nll
from .model import MixtureLM, ProjectedLM, TransformerLM, project_expert
from .trainer import FinetuneConfig, TrainConfig, TrainLog, finetune

STRATEGIES = ("most_frequent_cluster", "best_pretrained", "best_finetuned")


@dataclass
class ExpertSelection:
    strategy: str
    chosen_index: int
    scores: list[float] | None = None  # per-expert metric where applicable
    cost_multiplier: float = 1.0  # fine-tune cost relative to one expert
    uninformative: bool = False  # flagged when the histogram cannot discriminate

    def to_json(self) -> dict:
        return {
            "strategy": self.strategy,
            "chosen_index": self.chosen_index,
            "scores": self.scores,
            "cost_multiplier": self.cost_multiplier,
            "uninformative": self.uninformative,
        }


def select_most_frequent(spec_hist: ClusterHistogram) -> ExpertSelection:
    """Expert of the specialization set's most frequent cluster.

    Ties break to the lowest index; a uniform histogram is flagged as
    uninformative.
    """
    freqs = spec_hist.frequencies
    chosen = int(np.argmax(freqs))
    uninformative = bool(np.allclose(freqs, 1.0 / len(freqs)))
    return ExpertSelection("most_frequent_cluster", chosen, freqs.tolist(),
                           cost_multiplier=1.0, uninformative=uninformative)


def select_best_pretrained(experts: Sequence[TransformerLM], spec_val: Corpus,
                           context_length: int) -> ExpertSelection:
    """Expert with the lowest validation NLL before any fine-tuning."""
    if not experts:
        raise ConfigError("no experts to select from")
    if len(spec_val) == 0:
        raise ConfigError("validation corpus is empty")
    windows = corpus_windows(spec_val, context_length)
    scores = [windows_nll(e, windows, spec_val.pad_id)[0] for e in experts]
    return ExpertSelection("best_pretrained", int(np.argmin(scores)), scores,
                           cost_multiplier=1.0)


def select_best_finetuned(
    experts: Sequence[TransformerLM], spec_train: Corpus, spec_val: Corpus,
    cfg: FinetuneConfig, base: TrainConfig, context_length: int,
) -> tuple[ExpertSelection, list[TransformerLM], list[TrainLog]]:
    """Fine-tune every expert, keep the one with the best validation NLL.

    Also returns the fine-tuned experts and their logs so the chosen one
    need not be retrained; the recorded cost multiplier is the expert count.
    """
    if not experts:
        raise ConfigError("no experts to select from")
    tuned, scores, logs = [], [], []
    for expert in experts:
        model, log = finetune(expert, spec_train, spec_val, cfg, base, context_length)
        tuned.append(model)
        logs.append(log)
        scores.append(min(log.val_losses))
    sel = ExpertSelection("best_finetuned", int(np.argmin(scores)), scores,
                          cost_multiplier=float(len(experts)))
    return sel, tuned, logs


def materialize(artifact: ProjectedLM | MixtureLM, index: int) -> TransformerLM:
    """A standalone small model for one expert of either artifact kind.

    Always a fresh copy: fine-tuning the result leaves the artifact intact.
    """
    if isinstance(artifact, ProjectedLM):
        return project_expert(artifact, index)
    if isinstance(artifact, MixtureLM):
        return copy.deepcopy(artifact.expert(index))
    raise ConfigError(f"cannot materialize experts from {type(artifact).__name__}")


def materialize_all(artifact: ProjectedLM | MixtureLM) -> list[TransformerLM]:
    return [materialize(artifact, i) for i in range(artifact.num_experts)]


@dataclass
class SpecializeResult:
    model: TransformerLM
    selection: ExpertSelection
    log: TrainLog
    spec_hist: list[float] = field(default_factory=list)

    def manifest(self) -> dict:
        return {
            "selection": self.selection.to_json(),
            "spec_histogram": self.spec_hist,
            "finetune": self.log.summary(),
        }


def specialize(artifact: ProjectedLM | MixtureLM, clustering: Clustering,
               spec_train: Corpus, spec_val: Corpus, strategy: str,
               cfg: FinetuneConfig, base: TrainConfig,
               context_length: int) -> SpecializeResult:
    """Select an expert, materialize it, and fine-tune it into a plain SLM."""
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")
    if clustering.k != artifact.num_experts:
        raise ConfigError(
            f"clustering has {clustering.k} clusters but the artifact has "
            f"{artifact.num_experts} experts"
        )
    spec_hist = histogram(spec_train, clustering, context_length)

    if strategy == "most_frequent_cluster":
        selection = select_most_frequent(spec_hist)
        model, log = finetune(materialize(artifact, selection.chosen_index),
                              spec_train, spec_val, cfg, base, context_length)
    elif strategy == "best_pretrained":
        selection = select_best_pretrained(materialize_all(artifact), spec_val,
                                           context_length)
        model, log = finetune(materialize(artifact, selection.chosen_index),
                              spec_train, spec_val, cfg, base, context_length)
    else:
        selection, tuned, logs = select_best_finetuned(materialize_all(artifact),
                                                       spec_train, spec_val, cfg,
                                                       base, context_length)
        model = tuned[selection.chosen_index]
        log = logs[selection.chosen_index]
        log.cost_units = sum(l.cost_units for l in logs)
    return SpecializeResult(model, selection, log, spec_hist.frequencies.tolist())


def save_manifest(result: SpecializeResult, path: str | Path,
                  extra: dict | None = None) -> None:
    payload = result.manifest()
    if extra:
        payload.update(extra)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2), encoding="utf-8")
