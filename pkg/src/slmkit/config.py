"""Pipeline configuration: JSON schema, validation with field paths, and
construction of the per-module config dataclasses."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ConfigError
from .model import ModelConfig, PNConfig
from .trainer import DistillConfig, FinetuneConfig, TrainConfig

METHODS = ("slm", "slm_nopt", "slm_is", "slm_pn", "slm_mix", "slm_d", "lora")

_MISSING = object()


def _get(cfg: dict, path: str, types, default: Any = _MISSING) -> Any:
    """Fetch a dotted path with type checking; errors name the field path."""
    node: Any = cfg
    for part in path.split("."):
        if not isinstance(node, dict) or part not in node:
            if default is _MISSING:
                raise ConfigError(f"{path}: required field is missing")
            return default
        node = node[part]
    if types is not None and not isinstance(node, types):
        wanted = "/".join(t.__name__ for t in (types if isinstance(types, tuple) else (types,)))
        raise ConfigError(f"{path}: expected {wanted}, got {type(node).__name__}")
    return node


def _section(cfg: dict, name: str) -> dict:
    return _get(cfg, name, dict, default={})


def _kwargs(cfg: dict, name: str, fields: dict[str, tuple]) -> dict:
    """Collect a section's known fields, type-checked with dotted paths."""
    section = _section(cfg, name)
    unknown = set(section) - set(fields)
    if unknown:
        raise ConfigError(f"{name}.{sorted(unknown)[0]}: unknown field")
    out = {}
    for key, types in fields.items():
        val = _get(cfg, f"{name}.{key}", types, default=None)
        if val is not None:
            out[key] = val
    return out


_NUM = (int, float)


@dataclass
class PipelineConfig:
    raw: dict
    seed: int
    context_length: int
    method: str
    generic_sources: dict[str, list[str]]
    spec_sources: dict[str, list[str]]
    corpus_unit: str
    tokenizer: dict
    heldout_docs: int
    val_docs: int
    clustering_k: int
    clustering_seed: int
    embed_dim: int
    kmeans_iters: int
    model_block: dict
    llm_block: dict
    pn: PNConfig
    train: TrainConfig
    finetune: FinetuneConfig
    distill: DistillConfig
    lora_rank: int
    lora_sites: list[str]
    lora_base: str
    costs: dict[str, dict]
    compare_methods: list[str]
    compare_spec_sizes: list
    compare_tasks: list
    synth: dict = field(default_factory=dict)

    def model_config(self, vocab_size: int, block: dict | None = None) -> ModelConfig:
        block = dict(self.model_block if block is None else block)
        block.setdefault("num_layers", 2)
        block.setdefault("model_dim", 64)
        block.setdefault("inner_dim", 256)
        block.setdefault("num_heads", 4)
        block.setdefault("vocab_size", vocab_size)
        block.setdefault("context_length", self.context_length)
        return ModelConfig(**block)

    def llm_config(self, vocab_size: int) -> ModelConfig:
        if self.llm_block:
            return self.model_config(vocab_size, self.llm_block)
        # Default teacher: the small model widened 2x.
        small = self.model_config(vocab_size)
        block = {
            "num_layers": small.num_layers,
            "model_dim": 2 * small.model_dim,
            "inner_dim": 2 * small.inner_dim,
            "num_heads": small.num_heads,
        }
        return self.model_config(vocab_size, block)


_MODEL_FIELDS = {
    "num_layers": int, "model_dim": int, "inner_dim": int, "num_heads": int,
    "vocab_size": int, "context_length": int, "tie_embeddings": bool,
    "activation": str, "pre_norm": bool, "positional": str,
}

_TRAIN_FIELDS = {
    "learning_rate": _NUM, "clip_norm": _NUM, "warmup_steps": int,
    "batch_size": int, "max_steps": int, "seed": int, "beta1": _NUM,
    "beta2": _NUM, "eps": _NUM, "checkpoint_every": int, "mixture_schedule": str,
}

_FINETUNE_FIELDS = {
    "lr_divisor": _NUM, "patience": int, "eval_every": int, "max_steps": int,
}


def _domain_map(cfg: dict, path: str) -> dict[str, list[str]]:
    raw = _get(cfg, path, dict, default={})
    out = {}
    for domain, paths in raw.items():
        if isinstance(paths, str):
            paths = [paths]
        if not isinstance(paths, list) or not all(isinstance(p, str) for p in paths):
            raise ConfigError(f"{path}.{domain}: expected a path or list of paths")
        out[domain] = paths
    return out


def load_config(path: str | Path, seed_override: int | None = None) -> PipelineConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return parse_config(raw, seed_override)


def parse_config(raw: dict, seed_override: int | None = None) -> PipelineConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root: expected an object")
    seed = seed_override if seed_override is not None else _get(raw, "seed", int, 0)
    method = _get(raw, "method", str, "slm")
    if method not in METHODS:
        raise ConfigError(f"method: {method!r} is not one of {METHODS}")

    train_kwargs = _kwargs(raw, "train", _TRAIN_FIELDS)
    train_kwargs.setdefault("seed", seed)
    ft_kwargs = _kwargs(raw, "finetune", _FINETUNE_FIELDS)
    distill_kwargs = _kwargs(raw, "distill", {"mix_weight": _NUM, "temperature": _NUM})
    pn_kwargs = _kwargs(raw, "pn", {"num_experts": int, "width_factor": int, "code_dim": int})
    pn_kwargs.setdefault("num_experts", _get(raw, "clustering.k", int, 8))

    costs = {}
    for name, block in _section(raw, "costs").items():
        if not isinstance(block, dict):
            raise ConfigError(f"costs.{name}: expected an object")
        costs[name] = {
            "generic": _get(raw, f"costs.{name}.generic", _NUM, 0.0),
            "specialization": _get(raw, f"costs.{name}.specialization", _NUM, 0.0),
        }

    compare_methods = _get(raw, "compare.methods", list,
                           ["slm", "slm_nopt", "slm_is", "slm_pn", "slm_mix"])
    for m in compare_methods:
        if m not in METHODS:
            raise ConfigError(f"compare.methods: {m!r} is not one of {METHODS}")

    return PipelineConfig(
        raw=raw,
        seed=seed,
        context_length=_get(raw, "context_length", int, 128),
        method=method,
        generic_sources=_domain_map(raw, "corpus.generic"),
        spec_sources=_domain_map(raw, "corpus.specialization"),
        corpus_unit=_get(raw, "corpus.unit", str, "line"),
        tokenizer=_get(raw, "corpus.tokenizer", dict, {"mode": "byte"}),
        heldout_docs=_get(raw, "corpus.heldout_docs", int, 20),
        val_docs=_get(raw, "corpus.val_docs", int, 10),
        clustering_k=_get(raw, "clustering.k", int, 8),
        clustering_seed=_get(raw, "clustering.seed", int, seed),
        embed_dim=_get(raw, "clustering.dim", int, 256),
        kmeans_iters=_get(raw, "clustering.max_iters", int, 50),
        model_block=_kwargs(raw, "model", _MODEL_FIELDS),
        llm_block=_kwargs(raw, "llm_model", _MODEL_FIELDS),
        pn=PNConfig(**pn_kwargs),
        train=TrainConfig(**train_kwargs),
        finetune=FinetuneConfig(**ft_kwargs),
        distill=DistillConfig(**distill_kwargs),
        lora_rank=_get(raw, "lora.rank", int, 8),
        lora_sites=_get(raw, "lora.sites", list, ["attn_q", "attn_v"]),
        lora_base=_get(raw, "lora.base", str, "slm"),
        costs=costs,
        compare_methods=compare_methods,
        compare_spec_sizes=_get(raw, "compare.spec_sizes", list, [None]),
        compare_tasks=_get(raw, "compare.tasks", list, [1, 7, 50]),
        synth=_section(raw, "synth"),
    )
