"""Multi-branch regression network over embedding sequences.

Each source gets its own branch: linear projection, non-overlapping mean
downsampling, one pre-norm self-attention block, and multi-query multi-head
attention statistics pooling (MQMHASTP) into a fixed-length vector. Branch
vectors are concatenated and fed to a two-layer MLP head that emits 1 score
(track 1) or 5 (track 2). No positional encoding: pooling is statistics-based
and permutation equivariance is a tested property.

All computation runs on the hark.grad engine, so outputs are differentiable
with respect to every parameter and input.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from . import grad
from .core import SCALE_SEGMENT, SCALE_TRACK, EmbeddingSequence, ScoreVector
from .errors import InputError, ValidationError
from .grad import Tensor

POOL_EPS = 1e-6
HEAD_HIDDEN_DEFAULT = 512


@dataclass(frozen=True)
class BranchConfig:
    source_id: str
    scale: str
    input_dim: int
    model_dim: int = 256
    downsample_factor: int = 4
    attention_heads: int = 4
    pooling_queries: int = 2

    def __post_init__(self):
        if self.scale not in (SCALE_SEGMENT, SCALE_TRACK):
            raise ValidationError(f"branch {self.source_id!r}: bad scale {self.scale!r}")
        if self.model_dim % self.attention_heads != 0:
            raise ValidationError(
                f"branch {self.source_id!r}: model_dim {self.model_dim} not divisible "
                f"by attention_heads {self.attention_heads}"
            )
        if self.downsample_factor < 1 or self.pooling_queries < 1 or self.input_dim < 1:
            raise ValidationError(f"branch {self.source_id!r}: sizes must be >= 1")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.attention_heads

    @property
    def pooled_dim(self) -> int:
        return 2 * self.pooling_queries * self.model_dim

    def to_json(self) -> dict:
        return {
            "source_id": self.source_id,
            "scale": self.scale,
            "input_dim": self.input_dim,
            "model_dim": self.model_dim,
            "downsample_factor": self.downsample_factor,
            "attention_heads": self.attention_heads,
            "pooling_queries": self.pooling_queries,
        }

    @staticmethod
    def from_json(obj: dict) -> "BranchConfig":
        return BranchConfig(**{k: obj[k] for k in (
            "source_id", "scale", "input_dim", "model_dim",
            "downsample_factor", "attention_heads", "pooling_queries",
        )})


def default_branch(source_id: str, scale: str, input_dim: int, **overrides) -> BranchConfig:
    """Branch with the stock defaults: downsampling 4 at segment scale, 1 at
    track scale."""
    kwargs = dict(
        source_id=source_id,
        scale=scale,
        input_dim=input_dim,
        downsample_factor=4 if scale == SCALE_SEGMENT else 1,
    )
    kwargs.update(overrides)
    return BranchConfig(**kwargs)


@dataclass
class ModelParams:
    branches: tuple[BranchConfig, ...]
    track: int
    seed: int
    tensors: dict[str, Tensor]
    head_hidden: int = HEAD_HIDDEN_DEFAULT

    @property
    def out_dim(self) -> int:
        return 1 if self.track == 1 else 5

    @property
    def fused_dim(self) -> int:
        return sum(b.pooled_dim for b in self.branches)

    def parameters(self) -> list[Tensor]:
        return [self.tensors[k] for k in sorted(self.tensors)]

    def named_parameters(self) -> dict[str, Tensor]:
        return dict(self.tensors)


def _param_names(branches: Sequence[BranchConfig]):
    """(name, shape, fan_in) for every parameter, in a fixed order."""
    names = []
    for b in branches:
        p = f"branch.{b.source_id}"
        d, dh = b.model_dim, b.head_dim
        names.append((f"{p}.proj.w", (b.input_dim, d), b.input_dim))
        names.append((f"{p}.proj.b", (d,), 0))
        for w in ("wq", "wk", "wv", "wo"):
            names.append((f"{p}.attn.{w}", (d, d), d))
            names.append((f"{p}.attn.{w}_b", (d,), 0))
        names.append((f"{p}.attn.mlp.w1", (d, 4 * d), d))
        names.append((f"{p}.attn.mlp.b1", (4 * d,), 0))
        names.append((f"{p}.attn.mlp.w2", (4 * d, d), 4 * d))
        names.append((f"{p}.attn.mlp.b2", (d,), 0))
        for q in range(b.pooling_queries):
            for h in range(b.attention_heads):
                s = f"{p}.pool.q{q}.h{h}"
                names.append((f"{s}.w1", (dh, dh), dh))
                names.append((f"{s}.b1", (dh,), 0))
                names.append((f"{s}.w2", (dh, 1), dh))
                names.append((f"{s}.b2", (1,), 0))
    fused = sum(b.pooled_dim for b in branches)
    return names, fused


def init_params(
    branches: Sequence[BranchConfig],
    track: int,
    seed: int,
    dtype=np.float64,
    head_hidden: int = HEAD_HIDDEN_DEFAULT,
) -> ModelParams:
    """Deterministic initialization: weights uniform in +-sqrt(1/fan_in),
    biases zero, drawn in fixed parameter order from the session seed."""
    if track not in (1, 2):
        raise ValidationError(f"track must be 1 or 2, got {track}")
    branches = tuple(branches)
    if not branches:
        raise ValidationError("model needs at least one branch")
    if len({b.source_id for b in branches}) != len(branches):
        raise ValidationError("branch source_ids must be unique")
    names, fused = _param_names(branches)
    out_dim = 1 if track == 1 else 5
    names = list(names)
    names.append(("head.w1", (fused, head_hidden), fused))
    names.append(("head.b1", (head_hidden,), 0))
    names.append(("head.w2", (head_hidden, out_dim), head_hidden))
    names.append(("head.b2", (out_dim,), 0))

    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x6D6F64]))
    tensors: dict[str, Tensor] = {}
    for name, shape, fan_in in names:
        if fan_in == 0:
            data = np.zeros(shape, dtype=dtype)
        else:
            bound = math.sqrt(1.0 / fan_in)
            data = rng.uniform(-bound, bound, size=shape).astype(dtype)
        tensors[name] = Tensor(data, requires_grad=True, dtype=dtype)
    return ModelParams(branches=branches, track=track, seed=int(seed),
                       tensors=tensors, head_hidden=head_hidden)


# --- branch pipeline ----------------------------------------------------------


def project_and_downsample(
    frames: Tensor, valid: int, cfg: BranchConfig, params: Mapping[str, Tensor]
) -> tuple[Tensor, np.ndarray]:
    """Linear projection then non-overlapping mean over windows of k frames.
    Rows past `valid` are treated as padding; the returned boolean mask marks
    windows containing at least one valid frame. A trailing partial window is
    averaged over its actual (valid) length."""
    t, in_dim = frames.shape
    if in_dim != cfg.input_dim:
        raise ValidationError(
            f"branch {cfg.source_id!r}: input dim {in_dim} != configured {cfg.input_dim}"
        )
    if not 1 <= valid <= t:
        raise ValidationError(f"valid frame count {valid} outside [1, {t}]")
    p = f"branch.{cfg.source_id}"
    proj = grad.matmul(frames, params[f"{p}.proj.w"]) + params[f"{p}.proj.b"]
    row_mask = np.zeros((t, 1), dtype=frames.dtype.type)
    row_mask[:valid] = 1.0
    proj = proj * Tensor(row_mask)
    k = cfg.downsample_factor
    if k == 1:
        return proj, row_mask[:, 0].astype(bool)
    t_out = -(-t // k)
    pad = t_out * k - t
    if pad:
        proj = grad.concat([proj, Tensor(np.zeros((pad, cfg.model_dim), dtype=frames.dtype.type))], axis=0)
    windows = grad.reshape(proj, (t_out, k, cfg.model_dim))
    sums = grad.sum_(windows, axis=1)
    counts = np.minimum(np.arange(1, t_out + 1) * k, valid) - np.arange(t_out) * k
    counts = np.maximum(counts, 0)
    mask = counts > 0
    divisor = np.maximum(counts, 1).astype(frames.dtype.type)[:, None]
    return sums / Tensor(divisor), mask


def self_attention_block(
    h: Tensor, mask: np.ndarray, cfg: BranchConfig, params: Mapping[str, Tensor]
) -> Tensor:
    """Pre-norm transformer block: h + MHSA(LN(h)), then + MLP(LN(.)) with a
    4x hidden gelu MLP. Masked positions are excluded from attention and the
    output rows at masked positions are exactly zero."""
    t, d = h.shape
    if not mask.any():
        raise ValidationError("self-attention block received a fully masked input")
    p = f"branch.{cfg.source_id}.attn"
    heads, dh = cfg.attention_heads, cfg.head_dim

    def split_heads(x: Tensor) -> Tensor:
        return grad.transpose(grad.reshape(x, (t, heads, dh)), (1, 0, 2))

    a = grad.layer_norm(h, axis=-1)
    q = split_heads(grad.matmul(a, params[f"{p}.wq"]) + params[f"{p}.wq_b"])
    k = split_heads(grad.matmul(a, params[f"{p}.wk"]) + params[f"{p}.wk_b"])
    v = split_heads(grad.matmul(a, params[f"{p}.wv"]) + params[f"{p}.wv_b"])
    scores = grad.matmul(q, grad.transpose(k, (0, 2, 1))) * (1.0 / math.sqrt(dh))
    attn = grad.softmax(scores, axis=-1, mask=mask[None, None, :])
    ctx = grad.matmul(attn, v)
    ctx = grad.reshape(grad.transpose(ctx, (1, 0, 2)), (t, d))
    x1 = h + (grad.matmul(ctx, params[f"{p}.wo"]) + params[f"{p}.wo_b"])
    m = grad.layer_norm(x1, axis=-1)
    mlp = grad.matmul(grad.gelu(grad.matmul(m, params[f"{p}.mlp.w1"]) + params[f"{p}.mlp.b1"]),
                      params[f"{p}.mlp.w2"]) + params[f"{p}.mlp.b2"]
    out = x1 + mlp
    return out * Tensor(mask.astype(h.dtype.type)[:, None])


def mqmhastp(
    h: Tensor, mask: np.ndarray, cfg: BranchConfig, params: Mapping[str, Tensor]
) -> Tensor:
    """Multi-query multi-head attention statistics pooling.

    Channels split into head-groups; per (query, head) a tanh-bottleneck
    scoring net produces logits, softmax runs over valid positions, and the
    attention-weighted mean and standard deviation (epsilon-stabilized) are
    concatenated. Output length is 2 * queries * model_dim regardless of T."""
    t, d = h.shape
    if not mask.any():
        raise ValidationError("pooling requires at least one valid position")
    p = f"branch.{cfg.source_id}.pool"
    dh = cfg.head_dim
    col_mask = mask[:, None]
    pieces: list[Tensor] = []
    for qi in range(cfg.pooling_queries):
        for hi in range(cfg.attention_heads):
            s = f"{p}.q{qi}.h{hi}"
            x = grad.slice_(h, (slice(None), slice(hi * dh, (hi + 1) * dh)))
            logits = grad.matmul(grad.tanh(grad.matmul(x, params[f"{s}.w1"]) + params[f"{s}.b1"]),
                                 params[f"{s}.w2"]) + params[f"{s}.b2"]
            w = grad.softmax(logits, axis=0, mask=col_mask)
            mu = grad.sum_(w * x, axis=0)
            var = grad.sum_(w * ((x - mu) * (x - mu)), axis=0)
            sd = grad.sqrt(var + POOL_EPS)
            pieces.append(mu)
            pieces.append(sd)
    return grad.concat(pieces, axis=0)


def branch_forward(
    seq_frames: np.ndarray, valid: int, cfg: BranchConfig, params: Mapping[str, Tensor],
    dtype=None,
) -> Tensor:
    frames = Tensor(np.asarray(seq_frames, dtype=dtype) if dtype is not None else seq_frames)
    h, mask = project_and_downsample(frames, valid, cfg, params)
    h = self_attention_block(h, mask, cfg, params)
    return mqmhastp(h, mask, cfg, params)


def encode(
    inputs: Mapping[str, EmbeddingSequence],
    params: ModelParams,
    padding: Optional[Mapping[str, int]] = None,
) -> Tensor:
    """Run every branch and concatenate the pooled vectors (branch config
    order). `padding` optionally appends that many zero frames per source,
    which must not change the output (tested invariance)."""
    dtype = next(iter(params.tensors.values())).dtype
    pieces = []
    for cfg in params.branches:
        if cfg.source_id not in inputs:
            raise ValidationError(f"missing input for configured branch {cfg.source_id!r}")
        seq = inputs[cfg.source_id]
        frames = np.asarray(seq.frames, dtype=dtype)
        valid = frames.shape[0]
        pad = 0 if padding is None else int(padding.get(cfg.source_id, 0))
        if pad:
            frames = np.concatenate([frames, np.zeros((pad, frames.shape[1]), dtype=dtype)])
        pieces.append(branch_forward(frames, valid, cfg, params.tensors))
    return grad.concat(pieces, axis=0)


def head(fused: Tensor, params: ModelParams) -> Tensor:
    """Two-layer gelu MLP over fused vectors; accepts (F,) or (B, F)."""
    single = len(fused.shape) == 1
    x = grad.reshape(fused, (1, -1)) if single else fused
    h1 = grad.gelu(grad.matmul(x, params.tensors["head.w1"]) + params.tensors["head.b1"])
    out = grad.matmul(h1, params.tensors["head.w2"]) + params.tensors["head.b2"]
    return grad.reshape(out, (params.out_dim,)) if single else out


def forward(
    inputs: Mapping[str, EmbeddingSequence],
    params: ModelParams,
    padding: Optional[Mapping[str, int]] = None,
) -> Tensor:
    """Differentiable scores for one item: Tensor of shape (out_dim,)."""
    return head(encode(inputs, params, padding=padding), params)


def predict(inputs: Mapping[str, EmbeddingSequence], params: ModelParams) -> ScoreVector:
    return ScoreVector(values=forward(inputs, params).data.copy())


# --- checkpoint file format (HCKP v1) ----------------------------------------
#
# Little-endian layout:
#   magic "HCKP" | u16 version=1 | u32 json_len | JSON config blob
#   | repeated: u16 name_len | name (UTF-8) | u8 rank | u32 dims... | f32 payload

_HCKP_MAGIC = b"HCKP"
_HCKP_VERSION = 1


def save_checkpoint(params: ModelParams, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    config = {
        "branches": [b.to_json() for b in params.branches],
        "track": params.track,
        "seed": params.seed,
        "head_hidden": params.head_hidden,
    }
    blob = json.dumps(config, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_HCKP_MAGIC + struct.pack("<HI", _HCKP_VERSION, len(blob)) + blob)
        for name in sorted(params.tensors):
            data = np.ascontiguousarray(params.tensors[name].data, dtype="<f4")
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)) + nb)
            fh.write(struct.pack("<B", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
            fh.write(data.tobytes())


def load_checkpoint(path, dtype=np.float32) -> ModelParams:
    path = Path(path)
    if not path.exists():
        raise InputError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if len(raw) < 10 or raw[:4] != _HCKP_MAGIC:
        raise InputError(f"bad magic in checkpoint {path}")
    version, json_len = struct.unpack_from("<HI", raw, 4)
    if version != _HCKP_VERSION:
        raise InputError(f"unsupported checkpoint version {version} in {path}")
    pos = 10
    if len(raw) < pos + json_len:
        raise InputError(f"truncated checkpoint config in {path}")
    config = json.loads(raw[pos : pos + json_len].decode("utf-8"))
    pos += json_len
    tensors: dict[str, Tensor] = {}
    while pos < len(raw):
        if len(raw) < pos + 2:
            raise InputError(f"truncated tensor record in {path}")
        (name_len,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        name = raw[pos : pos + name_len].decode("utf-8")
        pos += name_len
        (rank,) = struct.unpack_from("<B", raw, pos)
        pos += 1
        dims = struct.unpack_from(f"<{rank}I", raw, pos)
        pos += 4 * rank
        count = int(np.prod(dims)) if rank else 1
        if len(raw) < pos + 4 * count:
            raise InputError(f"truncated tensor payload for {name!r} in {path}")
        data = np.frombuffer(raw, dtype="<f4", count=count, offset=pos).reshape(dims)
        pos += 4 * count
        tensors[name] = Tensor(data.astype(dtype), requires_grad=True)
    branches = tuple(BranchConfig.from_json(b) for b in config["branches"])
    return ModelParams(
        branches=branches,
        track=int(config["track"]),
        seed=int(config["seed"]),
        tensors=tensors,
        head_hidden=int(config.get("head_hidden", HEAD_HIDDEN_DEFAULT)),
    )
