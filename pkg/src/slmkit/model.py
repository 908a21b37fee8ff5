"""Decoder-only transformer, its projected multi-expert variant, and the
hard mixture of independently trained experts.

The projected variant keeps attention, embeddings, norms and MLP biases
shared while storing each layer's two MLP matrices in a weight bank tensor
of shape (d_in, d_out, width_factor). Expert ``i`` materializes its matrix as

    W[a, b] = sum_q codes[i, q] * sum_r layer_mix[q, r] * bank[a, b, r]

which is a closed-form linear projection: a standard small model falls out
of the bank, and the mixture is the special case where codes and the layer
mix are identity matrices (experts are then independent bank slices).
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError

IGNORE_INDEX = -100

CHECKPOINT_MAGIC = b"SLMK"
CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    num_layers: int
    model_dim: int
    inner_dim: int
    num_heads: int
    vocab_size: int
    context_length: int
    tie_embeddings: bool = True
    activation: str = "gelu"  # gelu | relu
    pre_norm: bool = True
    positional: str = "learned"  # learned | sinusoidal

    def __post_init__(self):
        for name in ("num_layers", "model_dim", "inner_dim", "num_heads", "vocab_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.vocab_size < 2:
            raise ConfigError("vocab_size must be > 1")
        if self.context_length < 2:
            raise ConfigError("context_length must be >= 2")
        if self.model_dim % self.num_heads != 0:
            raise ConfigError(
                f"model_dim {self.model_dim} not divisible by num_heads {self.num_heads}"
            )
        if self.activation not in ("gelu", "relu"):
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.positional not in ("learned", "sinusoidal"):
            raise ConfigError(f"unknown positional mode {self.positional!r}")


@dataclass(frozen=True)
class PNConfig:
    """Multi-expert projection hyper-parameters.

    ``width_factor`` scales the overall pretraining parameter count,
    ``num_experts`` is the number of cluster-tied experts, and ``code_dim``
    is the per-expert code length.
    """

    num_experts: int
    width_factor: int = 1
    code_dim: int = 1

    def __post_init__(self):
        for name in ("num_experts", "width_factor", "code_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")


def _sinusoidal_table(context_length: int, dim: int) -> torch.Tensor:
    pos = torch.arange(context_length, dtype=torch.float32)[:, None]
    idx = torch.arange(0, dim, 2, dtype=torch.float32)[None, :]
    angles = pos / torch.pow(10000.0, idx / dim)
    table = torch.zeros(context_length, dim)
    table[:, 0::2] = torch.sin(angles)
    table[:, 1::2] = torch.cos(angles[:, : table[:, 1::2].shape[1]])
    return table


class CausalSelfAttention(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        d = config.model_dim
        self.num_heads = config.num_heads
        self.head_dim = d // config.num_heads
        self.q = nn.Linear(d, d)
        self.k = nn.Linear(d, d)
        self.v = nn.Linear(d, d)
        self.o = nn.Linear(d, d)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, t, d = x.shape
        def split(z):
            return z.view(b, t, self.num_heads, self.head_dim).transpose(1, 2)
        q, k, v = split(self.q(x)), split(self.k(x)), split(self.v(x))
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        mask = torch.triu(torch.ones(t, t, dtype=torch.bool, device=x.device), diagonal=1)
        scores = scores.masked_fill(mask, float("-inf"))
        y = torch.softmax(scores, dim=-1) @ v
        y = y.transpose(1, 2).reshape(b, t, d)
        return self.o(y)


class Block(nn.Module):
    """Pre-norm residual block; MLP weights may live here or be injected."""

    def __init__(self, config: ModelConfig, owns_mlp: bool = True):
        super().__init__()
        d, inner = config.model_dim, config.inner_dim
        self.pre_norm = config.pre_norm
        self.act = F.gelu if config.activation == "gelu" else F.relu
        self.ln1 = nn.LayerNorm(d)
        self.attn = CausalSelfAttention(config)
        self.ln2 = nn.LayerNorm(d)
        self.up_bias = nn.Parameter(torch.zeros(inner))
        self.down_bias = nn.Parameter(torch.zeros(d))
        if owns_mlp:
            # Stored input-major, (d_in, d_out), applied as x @ W.
            self.up_weight = nn.Parameter(torch.empty(d, inner))
            self.down_weight = nn.Parameter(torch.empty(inner, d))

    def _mlp(self, x, up_weight, down_weight):
        h = self.act(x @ up_weight + self.up_bias)
        return h @ down_weight + self.down_bias

    def forward(self, x, up_weight=None, down_weight=None):
        w_up = self.up_weight if up_weight is None else up_weight
        w_down = self.down_weight if down_weight is None else down_weight
        if self.pre_norm:
            x = x + self.attn(self.ln1(x))
            x = x + self._mlp(self.ln2(x), w_up, w_down)
        else:
            x = self.ln1(x + self.attn(x))
            x = self.ln2(x + self._mlp(x, w_up, w_down))
        return x


class TransformerLM(nn.Module):
    """Causal decoder-only language model.

    With ``owns_mlp=False`` the blocks hold no MLP weight matrices and the
    caller must inject per-layer (up, down) weights into ``forward``.
    """

    def __init__(self, config: ModelConfig, owns_mlp: bool = True):
        super().__init__()
        self.config = config
        self.owns_mlp = owns_mlp
        d = config.model_dim
        self.tok_emb = nn.Parameter(torch.empty(config.vocab_size, d))
        if config.positional == "learned":
            self.pos_emb = nn.Parameter(torch.empty(config.context_length, d))
        else:
            self.register_buffer(
                "pos_table", _sinusoidal_table(config.context_length, d), persistent=False
            )
        self.blocks = nn.ModuleList(
            Block(config, owns_mlp) for _ in range(config.num_layers)
        )
        self.ln_f = nn.LayerNorm(d)
        if not config.tie_embeddings:
            self.head = nn.Parameter(torch.empty(config.vocab_size, d))

    def _check_tokens(self, tokens: torch.Tensor) -> None:
        if tokens.dim() != 2:
            raise ConfigError(f"expected (batch, positions) tokens, got {tuple(tokens.shape)}")
        if tokens.shape[1] > self.config.context_length:
            raise ConfigError(
                f"sequence length {tokens.shape[1]} exceeds context "
                f"{self.config.context_length}"
            )
        if tokens.numel() and (tokens.min() < 0 or tokens.max() >= self.config.vocab_size):
            raise ConfigError("token id out of vocabulary range")

    def forward(self, tokens: torch.Tensor, mlp_weights=None) -> torch.Tensor:
        self._check_tokens(tokens)
        t = tokens.shape[1]
        x = F.embedding(tokens, self.tok_emb)
        if self.config.positional == "learned":
            x = x + self.pos_emb[:t]
        else:
            x = x + self.pos_table[:t].to(x.dtype)
        for i, block in enumerate(self.blocks):
            up, down = mlp_weights[i] if mlp_weights is not None else (None, None)
            x = block(x, up, down)
        x = self.ln_f(x)
        head = self.tok_emb if self.config.tie_embeddings else self.head
        return x @ head.t()


class ProjectedLM(nn.Module):
    """Multi-expert model whose expert MLP weights are linear projections
    of shared weight banks; everything else is shared across experts."""

    def __init__(self, config: ModelConfig, pn_config: PNConfig):
        super().__init__()
        self.config = config
        self.pn_config = pn_config
        d, inner = config.model_dim, config.inner_dim
        h, m = pn_config.width_factor, pn_config.code_dim
        self.core = TransformerLM(config, owns_mlp=False)
        self.banks_up = nn.ParameterList(
            nn.Parameter(torch.empty(d, inner, h)) for _ in range(config.num_layers)
        )
        self.banks_down = nn.ParameterList(
            nn.Parameter(torch.empty(inner, d, h)) for _ in range(config.num_layers)
        )
        self.layer_mix = nn.ParameterList(
            nn.Parameter(torch.empty(m, h)) for _ in range(config.num_layers)
        )
        self.expert_codes = nn.Parameter(torch.empty(pn_config.num_experts, m))

    @property
    def num_experts(self) -> int:
        return self.pn_config.num_experts

    def _check_expert(self, expert: int) -> None:
        if not 0 <= expert < self.num_experts:
            raise IndexError(f"expert {expert} out of range [0, {self.num_experts})")

    def expert_mlp_weights(self, expert: int):
        """Materialized (up, down) matrices per layer; differentiable."""
        self._check_expert(expert)
        code = self.expert_codes[expert]
        out = []
        for l in range(self.config.num_layers):
            mixed = code @ self.layer_mix[l]  # (width_factor,)
            w_up = torch.einsum("abr,r->ab", self.banks_up[l], mixed)
            w_down = torch.einsum("abr,r->ab", self.banks_down[l], mixed)
            out.append((w_up, w_down))
        return out

    def forward(self, tokens: torch.Tensor, cluster_ids: torch.Tensor) -> torch.Tensor:
        if cluster_ids.shape != tokens.shape[:1]:
            raise ConfigError("need one cluster id per sequence")
        if cluster_ids.numel() and (
            cluster_ids.min() < 0 or cluster_ids.max() >= self.num_experts
        ):
            raise ConfigError("cluster id out of range")
        pieces, order = [], []
        for c in torch.unique(cluster_ids):
            idx = (cluster_ids == c).nonzero(as_tuple=True)[0]
            weights = self.expert_mlp_weights(int(c))
            pieces.append(self.core(tokens[idx], mlp_weights=weights))
            order.append(idx)
        perm = torch.cat(order)
        inverse = torch.empty_like(perm)
        inverse[perm] = torch.arange(len(perm), device=perm.device)
        return torch.cat(pieces)[inverse]


class MixtureLM(nn.Module):
    """Hard mixture: one independent small model per cluster."""

    def __init__(self, config: ModelConfig, num_experts: int):
        super().__init__()
        if num_experts < 1:
            raise ConfigError("num_experts must be >= 1")
        self.config = config
        self.experts = nn.ModuleList(TransformerLM(config) for _ in range(num_experts))

    @property
    def num_experts(self) -> int:
        return len(self.experts)

    def expert(self, i: int) -> TransformerLM:
        if not 0 <= i < self.num_experts:
            raise IndexError(f"expert {i} out of range [0, {self.num_experts})")
        return self.experts[i]

    def forward(self, tokens: torch.Tensor, cluster_ids: torch.Tensor) -> torch.Tensor:
        if cluster_ids.shape != tokens.shape[:1]:
            raise ConfigError("need one cluster id per sequence")
        pieces, order = [], []
        for c in torch.unique(cluster_ids):
            idx = (cluster_ids == c).nonzero(as_tuple=True)[0]
            pieces.append(self.expert(int(c))(tokens[idx]))
            order.append(idx)
        perm = torch.cat(order)
        inverse = torch.empty_like(perm)
        inverse[perm] = torch.arange(len(perm), device=perm.device)
        return torch.cat(pieces)[inverse]


def _trunc_normal_(tensor: torch.Tensor, std: float, generator: torch.Generator) -> None:
    with torch.no_grad():
        tensor.normal_(0.0, std, generator=generator)
        tensor.clamp_(-2.0 * std, 2.0 * std)


def _init_parameters(model: nn.Module, seed: int, pn_config: PNConfig | None = None) -> None:
    g = torch.Generator().manual_seed(seed)
    for name, p in model.named_parameters():
        if "banks_" in name:
            # Bank entries shrink with width so materialized weights keep
            # the same scale as a directly initialized small model.
            _trunc_normal_(p, 0.02 / math.sqrt(pn_config.width_factor), g)
        elif "layer_mix" in name:
            _trunc_normal_(p, 1.0 / math.sqrt(pn_config.code_dim), g)
        elif "expert_codes" in name:
            _trunc_normal_(p, 1.0, g)
        elif p.dim() >= 2:
            _trunc_normal_(p, 0.02, g)
        elif name.endswith("bias"):
            nn.init.zeros_(p)
        else:  # 1-D weights are normalization gains
            nn.init.ones_(p)


def build_slm(config: ModelConfig, seed: int) -> TransformerLM:
    model = TransformerLM(config)
    _init_parameters(model, seed)
    return model


def build_pn(config: ModelConfig, pn_config: PNConfig, seed: int) -> ProjectedLM:
    model = ProjectedLM(config, pn_config)
    _init_parameters(model, seed, pn_config)
    return model


def mixture_expert_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence(seed).spawn(index + 1)[index].generate_state(1)[0])


def build_mix(config: ModelConfig, num_experts: int, seed: int) -> MixtureLM:
    model = MixtureLM(config, num_experts)
    for i, expert in enumerate(model.experts):
        _init_parameters(expert, mixture_expert_seed(seed, i))
    return model


def set_identity_routing(pn: ProjectedLM) -> None:
    """Force expert codes and layer mixes to identity matrices.

    Requires code_dim == num_experts == width_factor. Expert weights then
    reduce to independent slices of the banks, i.e. the hard-mixture layout.
    """
    cfg = pn.pn_config
    if not (cfg.code_dim == cfg.num_experts == cfg.width_factor):
        raise ConfigError("identity routing needs code_dim == num_experts == width_factor")
    with torch.no_grad():
        eye = torch.eye(cfg.code_dim, dtype=pn.expert_codes.dtype)
        pn.expert_codes.copy_(eye)
        for mix in pn.layer_mix:
            mix.copy_(eye)


def project_expert(pn: ProjectedLM, expert: int) -> TransformerLM:
    """Materialize expert ``expert`` as a standalone small model."""
    pn._check_expert(expert)
    model = TransformerLM(pn.config)
    model = model.to(pn.expert_codes.dtype)
    with torch.no_grad():
        core_state = pn.core.state_dict()
        model.load_state_dict(core_state, strict=False)
        for l, (w_up, w_down) in enumerate(pn.expert_mlp_weights(expert)):
            model.blocks[l].up_weight.copy_(w_up)
            model.blocks[l].down_weight.copy_(w_down)
    return model


def nll(logits: torch.Tensor, targets: torch.Tensor,
        ignore_index: int = IGNORE_INDEX) -> torch.Tensor:
    """Mean next-token negative log-likelihood per (non-ignored) target, nats."""
    if logits.shape[:-1] != targets.shape:
        raise ConfigError(
            f"logits {tuple(logits.shape)} and targets {tuple(targets.shape)} disagree"
        )
    return F.cross_entropy(
        logits.reshape(-1, logits.shape[-1]), targets.reshape(-1),
        ignore_index=ignore_index,
    )


def slm_param_count(config: ModelConfig) -> int:
    d, inner = config.model_dim, config.inner_dim
    count = config.vocab_size * d  # token embedding
    if config.positional == "learned":
        count += config.context_length * d
    per_layer = (
        4 * (d * d + d)  # attention q, k, v, o
        + d * inner + inner  # up
        + inner * d + d  # down
        + 2 * 2 * d  # two layer norms
    )
    count += config.num_layers * per_layer
    count += 2 * d  # final norm
    if not config.tie_embeddings:
        count += config.vocab_size * d
    return count


def pn_param_count(config: ModelConfig, pn_config: PNConfig) -> int:
    d, inner, L = config.model_dim, config.inner_dim, config.num_layers
    h, m, k = pn_config.width_factor, pn_config.code_dim, pn_config.num_experts
    shared = slm_param_count(config) - L * (d * inner + inner * d)
    return shared + L * (2 * d * inner * h) + L * m * h + k * m


def mixture_param_count(config: ModelConfig, num_experts: int) -> int:
    return num_experts * slm_param_count(config)


def count_params(model: nn.Module) -> tuple[int, int]:
    """(pretraining, inference) parameter counts.

    Inference counts one materialized small model; for the plain transformer
    the two coincide.
    """
    pretrain = sum(p.numel() for p in model.parameters())
    if isinstance(model, (ProjectedLM, MixtureLM)):
        inference = slm_param_count(model.config)
    else:
        inference = pretrain
    return pretrain, inference


def pn_projection_macs(config: ModelConfig, pn_config: PNConfig) -> int:
    """Multiply-adds to materialize one expert's MLP matrices."""
    d, inner, L = config.model_dim, config.inner_dim, config.num_layers
    h, m = pn_config.width_factor, pn_config.code_dim
    return L * (m * h + 2 * d * inner * h)


def model_kind(model: nn.Module) -> str:
    if isinstance(model, ProjectedLM):
        return "pn"
    if isinstance(model, MixtureLM):
        return "mixture"
    if isinstance(model, TransformerLM):
        return "slm"
    raise ConfigError(f"unknown model type {type(model).__name__}")


def save_checkpoint(model: nn.Module, path: str | Path, extra: dict | None = None) -> None:
    """Versioned container: magic, version, JSON header, f32 tensor bytes.

    Tensor names follow ``named_parameters`` (e.g. ``blocks.0.attn.q.weight``
    for a small model, ``banks_up.0`` / ``expert_codes`` for the projected
    variant, ``experts.3.tok_emb`` for a mixture), so checkpoint kinds are
    distinguishable by header and by name schema.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    kind = model_kind(model)
    names, tensors = [], []
    for name, p in model.named_parameters():
        names.append({"name": name, "shape": list(p.shape)})
        tensors.append(p.detach().cpu().numpy().astype("<f4"))
    header = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "kind": kind,
        "config": asdict(model.config),
        "tensors": names,
    }
    if kind == "pn":
        header["pn_config"] = asdict(model.pn_config)
    if kind == "mixture":
        header["num_experts"] = model.num_experts
    if extra:
        header["extra"] = extra
    blob = json.dumps(header).encode("utf-8")
    with path.open("wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for arr in tensors:
            fh.write(np.ascontiguousarray(arr).tobytes())


def load_checkpoint(path: str | Path) -> nn.Module:
    path = Path(path)
    with path.open("rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise ConfigError(f"{path} is not a model checkpoint")
        version, hlen = struct.unpack("<IQ", fh.read(12))
        if version != CHECKPOINT_FORMAT_VERSION:
            raise ConfigError(f"unsupported checkpoint version {version}")
        header = json.loads(fh.read(hlen).decode("utf-8"))
        config = ModelConfig(**header["config"])
        if header["kind"] == "slm":
            model = TransformerLM(config)
        elif header["kind"] == "pn":
            model = ProjectedLM(config, PNConfig(**header["pn_config"]))
        elif header["kind"] == "mixture":
            model = MixtureLM(config, header["num_experts"])
        else:
            raise ConfigError(f"unknown checkpoint kind {header['kind']!r}")
        params = dict(model.named_parameters())
        with torch.no_grad():
            for entry in header["tensors"]:
                n = int(np.prod(entry["shape"])) if entry["shape"] else 1
                arr = np.frombuffer(fh.read(4 * n), dtype="<f4").reshape(entry["shape"])
                params[entry["name"]].copy_(torch.from_numpy(arr.copy()))
    return model


def checkpoint_extra(path: str | Path) -> dict:
    """Read just the ``extra`` metadata block of a checkpoint."""
    with Path(path).open("rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise ConfigError(f"{path} is not a model checkpoint")
        _, hlen = struct.unpack("<IQ", fh.read(12))
        header = json.loads(fh.read(hlen).decode("utf-8"))
    return header.get("extra", {})
