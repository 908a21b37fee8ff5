"""Optimization loops: generic pretraining for every model family,
fine-tuning with early stopping, response-based distillation, low-rank
adapter fine-tuning, and the importance-sampled pretraining pipeline.

All loops use Adam with linear warmup followed by a constant learning rate
and global-norm gradient clipping, and are deterministic given their seed in
single-threaded mode.
"""

from __future__ import annotations

import copy
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .clustering import Clustering, ClusterHistogram, cluster_of
from .corpus import Corpus, Window, corpus_windows
from .errors import ConfigError, EmptyCorpusError, TrainingDivergedError
from .evaluator import cost_units, make_batch, windows_nll
from .model import (
    IGNORE_INDEX,
    MixtureLM,
    ModelConfig,
    ProjectedLM,
    TransformerLM,
    build_slm,
    count_params,
    model_kind,
    nll,
    pn_projection_macs,
    save_checkpoint,
)
from .sampler import resample, resample_plan


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    clip_norm: float = 5.0
    warmup_steps: int = 1000
    batch_size: int = 16
    max_steps: int = 1000
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    checkpoint_every: int = 0  # 0 = final checkpoint only
    mixture_schedule: str = "round_robin"  # round_robin | independent

    def __post_init__(self):
        if self.learning_rate <= 0 or self.clip_norm <= 0 or self.eps <= 0:
            raise ConfigError("learning_rate, clip_norm and eps must be positive")
        if self.batch_size < 1 or self.max_steps < 1:
            raise ConfigError("batch_size and max_steps must be >= 1")
        if not 0 <= self.warmup_steps <= self.max_steps:
            raise ConfigError("need 0 <= warmup_steps <= max_steps")
        if self.mixture_schedule not in ("round_robin", "independent"):
            raise ConfigError(f"unknown mixture schedule {self.mixture_schedule!r}")


@dataclass
class FinetuneConfig:
    lr_divisor: float = 3.0  # small specialization sets; use 1.0 for large ones
    patience: int = 3
    eval_every: int = 50
    max_steps: int = 2000

    def __post_init__(self):
        if self.lr_divisor < 1:
            raise ConfigError("lr_divisor must be >= 1")
        if self.patience < 1 or self.eval_every < 1:
            raise ConfigError("patience and eval_every must be >= 1")
        if self.max_steps < 0:
            raise ConfigError("max_steps must be >= 0")


@dataclass
class DistillConfig:
    mix_weight: float = 0.5  # share of the teacher term in the loss
    temperature: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.mix_weight <= 1.0:
            raise ConfigError("mix_weight must be in [0, 1]")
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")


@dataclass
class TrainLog:
    method: str = ""
    steps: list[int] = field(default_factory=list)
    train_losses: list[float] = field(default_factory=list)
    lrs: list[float] = field(default_factory=list)
    eval_steps: list[int] = field(default_factory=list)
    val_losses: list[float] = field(default_factory=list)
    best_step: int | None = None
    cost_units: float = 0.0
    cost_kind: str = "generic"  # generic | specialization
    checkpoint_paths: list[str] = field(default_factory=list)

    def write_csv(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        val_at = dict(zip(self.eval_steps, self.val_losses))
        per_step = self.cost_units / len(self.steps) if self.steps else 0.0
        with path.open("w", encoding="utf-8") as fh:
            fh.write("step,train_loss,val_loss,lr,cost_units\n")
            for i, step in enumerate(self.steps):
                val = val_at.get(step, "")
                fh.write(
                    f"{step},{self.train_losses[i]:.6f},{val},"
                    f"{self.lrs[i]:.3e},{per_step * (i + 1):.6g}\n"
                )

    def summary(self) -> dict:
        return {
            "method": self.method,
            "steps": len(self.steps),
            "final_train_loss": self.train_losses[-1] if self.train_losses else None,
            "best_step": self.best_step,
            "best_val_loss": min(self.val_losses) if self.val_losses else None,
            "cost_units": self.cost_units,
            "cost_kind": self.cost_kind,
        }


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warmup to the base rate, then constant."""
    if cfg.warmup_steps > 0 and step <= cfg.warmup_steps:
        return cfg.learning_rate * step / cfg.warmup_steps
    return cfg.learning_rate


def _make_optimizer(params, cfg: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(
        params, lr=cfg.learning_rate, betas=(cfg.beta1, cfg.beta2), eps=cfg.eps
    )


def _batch_hash(inputs: torch.Tensor) -> str:
    return hashlib.sha1(inputs.cpu().numpy().tobytes()).hexdigest()[:12]


def _step(model, optimizer, loss: torch.Tensor, clip_norm: float,
          step: int, batch: torch.Tensor, params=None) -> float:
    if not torch.isfinite(loss):
        raise TrainingDivergedError(step, _batch_hash(batch))
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    torch.nn.utils.clip_grad_norm_(
        params if params is not None else model.parameters(), clip_norm
    )
    optimizer.step()
    return float(loss.detach())


def _cluster_ids(windows: Sequence[Window], clustering: Clustering) -> np.ndarray:
    return np.array([cluster_of(w, clustering) for w in windows], dtype=np.int64)


def _training_cost(model, cfg: TrainConfig, context_length: int, steps: int) -> float:
    pretrain_count, _ = count_params(model)
    projection = 0.0
    if isinstance(model, ProjectedLM):
        per_expert = pn_projection_macs(model.config, model.pn_config)
        projection = min(model.num_experts, cfg.batch_size) * per_expert
    return cost_units(model_kind(model), steps, cfg.batch_size, context_length,
                      pretrain_count, projection_macs_per_step=projection)


def pretrain(model, corpus: Corpus, clustering: Clustering | None, cfg: TrainConfig,
             context_length: int, checkpoint_dir: str | Path | None = None,
             method: str = "") -> tuple[nn.Module, TrainLog]:
    """Next-token pretraining for a plain, projected, or mixture model.

    Projected and mixture models require a clustering: window cluster ids
    route examples to experts. Batches sample windows with replacement.
    """
    windows = corpus_windows(corpus, context_length)
    if not windows:
        raise EmptyCorpusError("corpus has no trainable windows")
    routed = isinstance(model, (ProjectedLM, MixtureLM))
    if routed and clustering is None:
        raise ConfigError(f"{model_kind(model)} pretraining requires a clustering")
    cluster_ids = _cluster_ids(windows, clustering) if routed else None

    if isinstance(model, MixtureLM):
        return _pretrain_mixture(model, windows, cluster_ids, cfg, context_length,
                                 corpus.pad_id, checkpoint_dir, method)

    rng = np.random.default_rng(cfg.seed)
    optimizer = _make_optimizer(model.parameters(), cfg)
    log = TrainLog(method=method or model_kind(model))
    model.train()
    for step in range(1, cfg.max_steps + 1):
        lr = lr_at(step, cfg)
        for group in optimizer.param_groups:
            group["lr"] = lr
        idx = rng.integers(len(windows), size=cfg.batch_size)
        inputs, targets = make_batch([windows[i] for i in idx], corpus.pad_id)
        if routed:
            ids = torch.as_tensor(cluster_ids[idx])
            logits = model(inputs, ids)
        else:
            logits = model(inputs)
        loss = _step(model, optimizer, nll(logits, targets), cfg.clip_norm, step, inputs)
        log.steps.append(step)
        log.train_losses.append(loss)
        log.lrs.append(lr)
        if checkpoint_dir and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
            p = Path(checkpoint_dir) / f"step{step:07d}.ckpt"
            save_checkpoint(model, p, extra={"step": step, "method": log.method})
            log.checkpoint_paths.append(str(p))
    log.cost_units = _training_cost(model, cfg, context_length, cfg.max_steps)
    return model, log


def _pretrain_mixture(model: MixtureLM, windows, cluster_ids, cfg: TrainConfig,
                      context_length: int, pad_id: int, checkpoint_dir, method):
    """Round-robin over per-cluster batches, or fully independent experts."""
    members = [np.nonzero(cluster_ids == c)[0] for c in range(model.num_experts)]
    active = [c for c in range(model.num_experts) if len(members[c]) > 0]
    if not active:
        raise EmptyCorpusError("no cluster has any windows")
    rng = np.random.default_rng(cfg.seed)
    optimizer = _make_optimizer(model.parameters(), cfg)
    log = TrainLog(method=method or "mixture")
    model.train()

    def one_step(expert_idx: int, step: int, global_step: int):
        lr = lr_at(step, cfg)
        for group in optimizer.param_groups:
            group["lr"] = lr
        pool = members[expert_idx]
        idx = pool[rng.integers(len(pool), size=cfg.batch_size)]
        inputs, targets = make_batch([windows[i] for i in idx], pad_id)
        expert = model.expert(expert_idx)
        loss = _step(expert, optimizer, nll(expert(inputs), targets),
                     cfg.clip_norm, global_step, inputs)
        log.steps.append(global_step)
        log.train_losses.append(loss)
        log.lrs.append(lr)

    if cfg.mixture_schedule == "round_robin":
        for step in range(1, cfg.max_steps + 1):
            one_step(active[(step - 1) % len(active)], step, step)
        total_steps = cfg.max_steps
    else:  # independent: every expert gets the full step budget
        global_step = 0
        for c in active:
            for step in range(1, cfg.max_steps + 1):
                global_step += 1
                one_step(c, step, global_step)
        total_steps = global_step
    if checkpoint_dir and cfg.checkpoint_every:
        p = Path(checkpoint_dir) / f"step{total_steps:07d}.ckpt"
        save_checkpoint(model, p, extra={"step": total_steps, "method": log.method})
        log.checkpoint_paths.append(str(p))
    # Each step runs one expert, so cost scales with a single expert's size.
    _, expert_count = count_params(model)
    log.cost_units = cost_units("mixture", total_steps, cfg.batch_size,
                                context_length, expert_count)
    return model, log


def best_checkpoint_index(val_losses: Sequence[float]) -> int:
    """Index of the minimum validation loss (first occurrence)."""
    if not val_losses:
        raise ConfigError("no validation losses recorded")
    return int(np.argmin(val_losses))


def early_stopping_trace(val_losses: Sequence[float], patience: int) -> tuple[int, int]:
    """(number of evaluations consumed, index of the best one) when stopping
    after ``patience`` consecutive non-improving evaluations."""
    best = math.inf
    best_idx = -1
    bad = 0
    for i, v in enumerate(val_losses):
        if v < best:
            best, best_idx, bad = v, i, 0
        else:
            bad += 1
            if bad >= patience:
                return i + 1, best_idx
    return len(val_losses), best_idx


def _check_disjoint(train: Corpus, val: Corpus) -> None:
    if len(val) == 0:
        raise ConfigError("validation corpus is empty")
    overlap = {d.id for d in train.documents} & {d.id for d in val.documents}
    if overlap:
        raise ConfigError(f"validation overlaps training by id, e.g. {sorted(overlap)[0]!r}")


def _finetune_loop(model, loss_fn, spec_train: Corpus, spec_val: Corpus,
                   cfg: FinetuneConfig, base: TrainConfig, context_length: int,
                   trainable=None, method: str = "finetune") -> tuple[nn.Module, TrainLog]:
    """Shared early-stopped loop; returns the best-validation checkpoint."""
    _check_disjoint(spec_train, spec_val)
    log = TrainLog(method=method, cost_kind="specialization")
    if cfg.max_steps == 0:
        return model, log
    train_windows = corpus_windows(spec_train, context_length)
    val_windows = corpus_windows(spec_val, context_length)
    if not train_windows:
        raise EmptyCorpusError("specialization training corpus has no windows")
    params = list(trainable) if trainable is not None else list(model.parameters())
    lr = base.learning_rate / cfg.lr_divisor
    optimizer = torch.optim.Adam(params, lr=lr, betas=(base.beta1, base.beta2), eps=base.eps)
    rng = np.random.default_rng(base.seed)

    def validate(step: int) -> float:
        val, _ = windows_nll(model, val_windows, spec_val.pad_id, base.batch_size)
        model.train()
        log.eval_steps.append(step)
        log.val_losses.append(val)
        return val

    best_val = validate(0)
    best_state = copy.deepcopy(model.state_dict())
    best_step = 0
    bad = 0
    steps_run = 0
    model.train()
    for step in range(1, cfg.max_steps + 1):
        idx = rng.integers(len(train_windows), size=base.batch_size)
        inputs, targets = make_batch([train_windows[i] for i in idx], spec_train.pad_id)
        loss = loss_fn(model, inputs, targets)
        loss_value = _step(model, optimizer, loss, base.clip_norm, step, inputs,
                           params=params)
        log.steps.append(step)
        log.train_losses.append(loss_value)
        log.lrs.append(lr)
        steps_run = step
        if step % cfg.eval_every == 0:
            val = validate(step)
            if val < best_val:
                best_val, best_step, bad = val, step, 0
                best_state = copy.deepcopy(model.state_dict())
            else:
                bad += 1
                if bad >= cfg.patience:
                    break
    model.load_state_dict(best_state)
    log.best_step = best_step
    pretrain_count, _ = count_params(model)
    log.cost_units = cost_units("finetune", steps_run, base.batch_size,
                                context_length, pretrain_count)
    return model, log


def finetune(model: TransformerLM, spec_train: Corpus, spec_val: Corpus,
             cfg: FinetuneConfig, base: TrainConfig,
             context_length: int) -> tuple[TransformerLM, TrainLog]:
    """Fine-tune on the specialization set, returning the checkpoint with the
    lowest validation loss."""

    def data_loss(m, inputs, targets):
        return nll(m(inputs), targets)

    return _finetune_loop(model, data_loss, spec_train, spec_val, cfg, base,
                          context_length, method="finetune")


def distill(student: TransformerLM, teacher: TransformerLM, spec_train: Corpus,
            spec_val: Corpus, dcfg: DistillConfig, cfg: FinetuneConfig,
            base: TrainConfig, context_length: int) -> tuple[TransformerLM, TrainLog]:
    """Fine-tune the student against a mixture of data targets and the
    teacher's tempered next-token distributions.

    Per token: (1 - w) * CE(data) + w * t^2 * CE(teacher softmax at t).
    With w = 0 this reproduces plain fine-tuning exactly.
    """
    if teacher.config.vocab_size != student.config.vocab_size:
        raise ConfigError("teacher and student must share a vocabulary")
    teacher.eval()
    t = dcfg.temperature
    w = dcfg.mix_weight

    def mixed_loss(m, inputs, targets):
        logits = m(inputs)
        data = nll(logits, targets)
        if w == 0.0:
            return data
        with torch.no_grad():
            teacher_probs = torch.softmax(teacher(inputs) / t, dim=-1)
        log_probs = torch.log_softmax(logits / t, dim=-1)
        per_pos = -(teacher_probs * log_probs).sum(dim=-1)
        mask = targets != IGNORE_INDEX
        soft = (t * t) * per_pos[mask].mean()
        return (1.0 - w) * data + w * soft

    return _finetune_loop(student, mixed_loss, spec_train, spec_val, cfg, base,
                          context_length, method="distill")


class LowRankUpdate(nn.Module):
    """Additive low-rank reparameterization W + up @ down.

    ``up`` starts at zero, so the adapted model is exactly the base model at
    initialization; only ``up`` and ``down`` are trainable.
    """

    def __init__(self, rows: int, cols: int, rank: int, generator: torch.Generator,
                 dtype=None):
        super().__init__()
        down = torch.empty(rank, cols, dtype=dtype)
        down.normal_(0.0, 0.02, generator=generator).clamp_(-0.04, 0.04)
        self.down = nn.Parameter(down)
        self.up = nn.Parameter(torch.zeros(rows, rank, dtype=dtype))

    def forward(self, weight: torch.Tensor) -> torch.Tensor:
        return weight + self.up @ self.down


LORA_SITES = ("attn_q", "attn_k", "attn_v", "attn_o", "mlp_up", "mlp_down")
DEFAULT_LORA_SITES = ("attn_q", "attn_v")


def _lora_targets(model: TransformerLM, sites: Sequence[str]):
    for site in sites:
        if site not in LORA_SITES:
            raise ConfigError(f"unknown adapter site {site!r}; choose from {LORA_SITES}")
    for block in model.blocks:
        for site in sites:
            if site.startswith("attn_"):
                yield getattr(block.attn, site.removeprefix("attn_")), "weight"
            elif site == "mlp_up":
                yield block, "up_weight"
            else:
                yield block, "down_weight"


def attach_lora(model: TransformerLM, rank: int, seed: int,
                sites: Sequence[str] = DEFAULT_LORA_SITES) -> list[nn.Parameter]:
    """Freeze the base model and attach low-rank adapters at ``sites``.

    Returns the trainable adapter parameters (rank x (d_in + d_out) per
    adapted matrix).
    """
    cfg = model.config
    if rank < 1 or rank > min(cfg.model_dim, cfg.inner_dim):
        raise ConfigError(
            f"rank {rank} out of range [1, {min(cfg.model_dim, cfg.inner_dim)}]"
        )
    for p in model.parameters():
        p.requires_grad_(False)
    g = torch.Generator().manual_seed(seed)
    trainable: list[nn.Parameter] = []
    for module, attr in _lora_targets(model, sites):
        weight = getattr(module, attr)
        adapter = LowRankUpdate(weight.shape[0], weight.shape[1], rank, g, weight.dtype)
        torch.nn.utils.parametrize.register_parametrization(module, attr, adapter)
        trainable.extend([adapter.up, adapter.down])
    return trainable


def lora_trainable_count(config: ModelConfig, rank: int,
                         sites: Sequence[str] = DEFAULT_LORA_SITES) -> int:
    d, inner = config.model_dim, config.inner_dim
    per_site = {
        "attn_q": rank * 2 * d, "attn_k": rank * 2 * d,
        "attn_v": rank * 2 * d, "attn_o": rank * 2 * d,
        "mlp_up": rank * (d + inner), "mlp_down": rank * (inner + d),
    }
    return config.num_layers * sum(per_site[s] for s in sites)


def finetune_lora(model: TransformerLM, rank: int, spec_train: Corpus,
                  spec_val: Corpus, cfg: FinetuneConfig, base: TrainConfig,
                  context_length: int,
                  sites: Sequence[str] = DEFAULT_LORA_SITES) -> tuple[TransformerLM, TrainLog]:
    """LoRA fine-tuning: base weights frozen, adapters trained."""
    trainable = attach_lora(model, rank, base.seed, sites)

    def data_loss(m, inputs, targets):
        return nll(m(inputs), targets)

    model, log = _finetune_loop(model, data_loss, spec_train, spec_val, cfg, base,
                                context_length, trainable=trainable, method="lora")
    log.method = "lora"
    return model, log


def pretrain_is(config: ModelConfig, generic: Corpus, clustering: Clustering,
                spec_hist: ClusterHistogram, cfg: TrainConfig, context_length: int,
                checkpoint_dir: str | Path | None = None) -> tuple[TransformerLM, TrainLog]:
    """Importance-sampled pretraining: resample the generic corpus toward the
    specialization histogram, then pretrain on the resampled set.

    The whole cost is specialization cost; nothing is shared across domains.
    """
    plan = resample_plan(spec_hist, target_size=cfg.max_steps * cfg.batch_size,
                         seed=cfg.seed)
    resampled = resample(generic, clustering, plan, context_length)
    model = build_slm(config, cfg.seed)
    model, log = pretrain(model, resampled, None, cfg, context_length,
                          checkpoint_dir=checkpoint_dir, method="slm_is")
    log.cost_kind = "specialization"
    return model, log
