"""Training loop: AdamW-style optimization of the multi-branch model with
optional pooled-feature mixing and the hybrid regression+ranking objective,
seeded end to end for bit-reproducible runs.

Model selection: best validation aggregate SRCC, with early stopping after a
configurable number of epochs without improvement. History is one JSON object
per epoch carrying every loss component and validation metric.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from . import grad, metrics as metrics_mod, mixup as mixup_mod, model as model_mod
from .core import Manifest, ManifestEntry
from .errors import NumericalError, ValidationError
from .features import resolve_features
from .grad import Tensor
from .losses import LossConfig, hybrid_loss
from .mixup import MixupConfig
from .model import BranchConfig, ModelParams

PRECISIONS = {"float32": np.float32, "float64": np.float64}


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-5
    weight_decay: float = 1e-3
    batch_size: int = 8
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_epochs: int = 100
    early_stop_patience: int = 20
    seed: int = 0
    track: int = 1
    precision: str = "float64"
    tta_quantile: float = 0.8
    use_mixup: bool = True
    use_augmented_data: bool = True
    use_hybrid_loss: bool = True
    branches_enabled: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if self.early_stop_patience < 1:
            raise ValidationError("early_stop_patience must be >= 1")
        if self.max_epochs < 0:
            raise ValidationError("max_epochs must be >= 0")
        if self.track not in (1, 2):
            raise ValidationError("track must be 1 or 2")
        if self.precision not in PRECISIONS:
            raise ValidationError(f"precision must be one of {sorted(PRECISIONS)}")

    @staticmethod
    def from_json(obj: dict) -> "TrainConfig":
        known = {f.name for f in TrainConfig.__dataclass_fields__.values()}  # type: ignore[attr-defined]
        kwargs = {k: v for k, v in obj.items() if k in known}
        if "branches_enabled" in kwargs and kwargs["branches_enabled"] is not None:
            kwargs["branches_enabled"] = tuple(kwargs["branches_enabled"])
        return TrainConfig(**kwargs)


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(tensors: Mapping[str, Tensor], state: OptimizerState, cfg: TrainConfig) -> None:
    """Decoupled weight decay (param *= 1 - lr*wd) followed by the
    bias-corrected Adam update. Missing gradients count as zero, so decay
    still applies and moments stay untouched by the epsilon floor."""
    state.t += 1
    t = state.t
    bc1 = 1.0 - cfg.beta1**t
    bc2 = 1.0 - cfg.beta2**t
    for name in sorted(tensors):
        p = tensors[name]
        g = p.grad
        if g is not None and not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in tensor {name!r}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data, dtype=np.float64)
            state.v[name] = np.zeros_like(p.data, dtype=np.float64)
        if cfg.weight_decay:
            p.data = p.data * p.data.dtype.type(1.0 - cfg.learning_rate * cfg.weight_decay)
        if g is None:
            continue
        g64 = np.asarray(g, dtype=np.float64)
        state.m[name] = cfg.beta1 * state.m[name] + (1.0 - cfg.beta1) * g64
        state.v[name] = cfg.beta2 * state.v[name] + (1.0 - cfg.beta2) * (g64 * g64)
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        step = cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)
        p.data = (p.data.astype(np.float64) - step).astype(p.data.dtype)


@dataclass
class TrainResult:
    checkpoint_path: str
    history: list[dict]
    best_epoch: int
    best_val_srcc: Optional[float]


def _labels_matrix(entries: Sequence[ManifestEntry], track: int) -> np.ndarray:
    out_dim = 1 if track == 1 else 5
    rows = []
    for e in entries:
        if e.scores is None:
            raise ValidationError(f"entry {e.id!r} has no scores; cannot train/evaluate")
        if len(e.scores) != out_dim:
            raise ValidationError(
                f"entry {e.id!r} has {len(e.scores)} score dimensions but track "
                f"{track} expects {out_dim}"
            )
        rows.append(e.scores.values)
    return np.stack(rows)


def _dimension_names(entries: Sequence[ManifestEntry]) -> list[str]:
    return list(entries[0].scores.dimension_names)


class _FeatureCache:
    def __init__(self, branches: Sequence[BranchConfig], base_dir):
        self.branches = tuple(branches)
        self.base_dir = base_dir
        self._cache: dict[str, dict] = {}

    def get(self, entry: ManifestEntry) -> dict:
        if entry.id not in self._cache:
            self._cache[entry.id] = resolve_features(entry, self.branches, self.base_dir)
        return self._cache[entry.id]


def _predict_matrix(
    entries: Sequence[ManifestEntry], params: ModelParams, cache: _FeatureCache
) -> np.ndarray:
    preds = []
    for e in entries:
        preds.append(model_mod.forward(cache.get(e), params).data.astype(np.float64))
    return np.stack(preds)


def _val_report(
    entries, params, cache, truths, dim_names, tta_quantile
) -> metrics_mod.MetricsReport:
    preds = _predict_matrix(entries, params, cache)
    threshold = metrics_mod.quantile_threshold(truths.reshape(-1), tta_quantile)
    return metrics_mod.compute_report(preds, truths, dim_names, threshold)


def train(
    manifest: Manifest,
    branches: Sequence[BranchConfig],
    cfg: TrainConfig,
    mix_cfg: Optional[MixupConfig] = None,
    loss_cfg: Optional[LossConfig] = None,
    out_path="model.hckp",
    history_path=None,
    base_dir=".",
    head_hidden: int = model_mod.HEAD_HIDDEN_DEFAULT,
) -> TrainResult:
    mix_cfg = mix_cfg or MixupConfig()
    loss_cfg = loss_cfg or LossConfig.default_for_track(cfg.track)
    dtype = PRECISIONS[cfg.precision]

    branches = tuple(branches)
    if cfg.branches_enabled is not None:
        enabled = set(cfg.branches_enabled)
        unknown = enabled - {b.source_id for b in branches}
        if unknown:
            raise ValidationError(f"branches_enabled names unknown sources: {sorted(unknown)}")
        branches = tuple(b for b in branches if b.source_id in enabled)
    if not branches:
        raise ValidationError("no branches enabled")

    train_entries = [e for e in manifest.split("train")]
    if not cfg.use_augmented_data:
        train_entries = [e for e in train_entries if e.augmented_from is None]
    val_entries = list(manifest.split("val"))
    if not train_entries:
        raise ValidationError("train split is empty")
    if not val_entries:
        raise ValidationError("val split is empty")

    train_labels = _labels_matrix(train_entries, cfg.track)
    val_labels = _labels_matrix(val_entries, cfg.track)
    dim_names = _dimension_names(train_entries)

    cache = _FeatureCache(branches, base_dir)
    params = model_mod.init_params(branches, cfg.track, cfg.seed, dtype=dtype,
                                   head_hidden=head_hidden)
    state = OptimizerState()

    ss = np.random.SeedSequence([int(cfg.seed), 0x7472])
    order_ss, mix_ss = ss.spawn(2)
    order_rng = np.random.default_rng(order_ss)
    mix_rng = np.random.default_rng(mix_ss)

    effective_loss = loss_cfg if cfg.use_hybrid_loss else LossConfig(beta=0.0, delta=loss_cfg.delta)

    def snapshot() -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in params.tensors.items()}

    best = {"epoch": 0, "srcc": None, "weights": snapshot()}
    history: list[dict] = []
    epochs_since_improvement = 0

    for epoch in range(1, cfg.max_epochs + 1):
        perm = order_rng.permutation(len(train_entries))
        loss_sums = {"total": 0.0, "smooth_l1": 0.0, "listmle": 0.0}
        seen = 0
        for batch_start in range(0, len(perm), cfg.batch_size):
            batch_idx = perm[batch_start : batch_start + cfg.batch_size]
            try:
                report = _train_batch(
                    [train_entries[i] for i in batch_idx],
                    train_labels[batch_idx],
                    params, state, cache, cfg, mix_cfg, effective_loss, mix_rng, dtype,
                )
            except NumericalError as exc:
                raise NumericalError(
                    f"epoch {epoch}, batch {batch_start // cfg.batch_size}: {exc}"
                ) from exc
            b = len(batch_idx)
            loss_sums["total"] += report.total * b
            loss_sums["smooth_l1"] += report.smooth_l1_component * b
            loss_sums["listmle"] += report.listmle_component * b
            seen += b

        val_report = _val_report(val_entries, params, cache, val_labels,
                                 dim_names, cfg.tta_quantile)
        entry = {
            "epoch": epoch,
            "loss_total": loss_sums["total"] / seen,
            "loss_smooth_l1": loss_sums["smooth_l1"] / seen,
            "loss_listmle": loss_sums["listmle"] / seen,
            "val_lcc": val_report.lcc,
            "val_srcc": val_report.srcc,
            "val_ktau": val_report.ktau,
            "val_tta": val_report.tta,
            "val_per_dimension": val_report.per_dimension,
        }
        history.append(entry)

        srcc = val_report.srcc
        improved = srcc is not None and (best["srcc"] is None or srcc > best["srcc"])
        if improved:
            best = {"epoch": epoch, "srcc": srcc, "weights": snapshot()}
            epochs_since_improvement = 0
        else:
            epochs_since_improvement += 1
            if epochs_since_improvement >= cfg.early_stop_patience:
                break

    for name, data in best["weights"].items():
        params.tensors[name].data = data
    out_path = Path(out_path)
    model_mod.save_checkpoint(params, out_path)
    if history_path is not None:
        history_path = Path(history_path)
        history_path.parent.mkdir(parents=True, exist_ok=True)
        with open(history_path, "w", encoding="utf-8") as fh:
            for entry in history:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")
    return TrainResult(
        checkpoint_path=str(out_path),
        history=history,
        best_epoch=best["epoch"],
        best_val_srcc=best["srcc"],
    )


def _train_batch(
    entries, labels, params, state, cache, cfg, mix_cfg, loss_cfg, mix_rng, dtype
):
    vectors = [model_mod.encode(cache.get(e), params) for e in entries]
    b = len(vectors)
    targets = labels.copy()

    if cfg.use_mixup and mix_cfg.enabled and b >= 2:
        originals = list(vectors)
        for i in range(b):
            if mix_rng.uniform() >= mix_cfg.apply_probability:
                continue
            j = mixup_mod.sample_pair(labels, i, mix_cfg, mix_rng)
            lam = mixup_mod.sample_lambda(mix_cfg.alpha, mix_rng)
            vectors[i] = originals[i] * lam + originals[j] * (1.0 - lam)
            targets[i] = lam * labels[i] + (1.0 - lam) * labels[j]

    rows = [grad.reshape(v, (1, -1)) for v in vectors]
    fused = grad.concat(rows, axis=0)
    preds = model_mod.head(fused, params)
    total, report = hybrid_loss(preds, targets.astype(dtype), loss_cfg)
    grad.zero_grads(params.tensors.values())
    grad.backward(total)
    adam_step(params.tensors, state, cfg)
    return report


def evaluate(
    checkpoint_path,
    manifest: Manifest,
    split: str,
    tta_threshold: Optional[float] = None,
    tta_quantile: Optional[float] = None,
    base_dir=".",
    precision: str = "float32",
) -> metrics_mod.MetricsReport:
    """Deterministic forward passes over a split, reported with the four
    metrics. Exactly one of tta_threshold / tta_quantile must be given."""
    if (tta_threshold is None) == (tta_quantile is None):
        raise ValidationError("provide exactly one of tta_threshold / tta_quantile")
    params = model_mod.load_checkpoint(checkpoint_path, dtype=PRECISIONS[precision])
    entries = list(manifest.split(split))
    if not entries:
        raise ValidationError(f"split {split!r} is empty")
    truths = _labels_matrix(entries, params.track)
    cache = _FeatureCache(params.branches, base_dir)
    preds = _predict_matrix(entries, params, cache)
    if tta_threshold is None:
        tta_threshold = metrics_mod.quantile_threshold(truths.reshape(-1), tta_quantile)
    return metrics_mod.compute_report(
        preds, truths, _dimension_names(entries), float(tta_threshold)
    )


def predict_entries(
    checkpoint_path,
    manifest: Manifest,
    base_dir=".",
    precision: str = "float32",
) -> list[tuple[str, np.ndarray]]:
    """(id, score vector) for every manifest entry, in manifest order."""
    params = model_mod.load_checkpoint(checkpoint_path, dtype=PRECISIONS[precision])
    cache = _FeatureCache(params.branches, base_dir)
    out = []
    for e in manifest.entries:
        scores = model_mod.forward(cache.get(e), params).data.astype(np.float64)
        out.append((e.id, scores))
    return out
