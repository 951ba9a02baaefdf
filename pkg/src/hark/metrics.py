"""The four evaluation metrics: Pearson (lcc), Spearman with average ranks
(srcc), Kendall tau-b (ktau), and thresholded F1 (tta), plus the report
structure the eval command emits.

Correlations raise UndefinedMetricError on degenerate inputs (n < 2 or zero
variance); report assembly converts that to a null field so tta can still be
reported for tiny splits.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import UndefinedMetricError, ValidationError


def _pair(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=np.float64).reshape(-1)
    t = np.asarray(truth, dtype=np.float64).reshape(-1)
    if p.size != t.size:
        raise ValidationError(f"length mismatch: {p.size} vs {t.size}")
    return p, t


def lcc(pred, truth) -> float:
    """Pearson linear correlation coefficient."""
    p, t = _pair(pred, truth)
    if p.size < 2:
        raise UndefinedMetricError("lcc needs at least two samples")
    pc = p - p.mean()
    tc = t - t.mean()
    denom = np.sqrt((pc * pc).sum() * (tc * tc).sum())
    if denom == 0.0:
        raise UndefinedMetricError("lcc undefined for zero-variance input")
    return float((pc * tc).sum() / denom)


def average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks; tied values receive the mean of their rank positions."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="stable")
    ranks = np.empty(x.size, dtype=np.float64)
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def srcc(pred, truth) -> float:
    """Spearman rank correlation: Pearson over average ranks."""
    p, t = _pair(pred, truth)
    if p.size < 2:
        raise UndefinedMetricError("srcc needs at least two samples")
    return lcc(average_ranks(p), average_ranks(t))


def ktau(pred, truth) -> float:
    """Kendall tau-b: (C - D) / sqrt((C + D + T_pred)(C + D + T_truth)), where
    T_* counts pairs tied only in that vector."""
    p, t = _pair(pred, truth)
    n = p.size
    if n < 2:
        raise UndefinedMetricError("ktau needs at least two samples")
    dp = np.sign(p[:, None] - p[None, :])
    dt = np.sign(t[:, None] - t[None, :])
    iu = np.triu_indices(n, k=1)
    dp, dt = dp[iu], dt[iu]
    concordant = int(np.sum((dp * dt) > 0))
    discordant = int(np.sum((dp * dt) < 0))
    ties_p_only = int(np.sum((dp == 0) & (dt != 0)))
    ties_t_only = int(np.sum((dt == 0) & (dp != 0)))
    denom = np.sqrt(
        float(concordant + discordant + ties_p_only)
        * float(concordant + discordant + ties_t_only)
    )
    if denom == 0.0:
        raise UndefinedMetricError("ktau undefined: all pairs tied")
    return float((concordant - discordant) / denom)


def tta(pred, truth, threshold: float) -> float:
    """F1 of identifying items whose true score clears `threshold`, applying
    the same threshold to predictions. Degenerate conventions: 1.0 when
    neither truth nor predictions have positives; 0.0 when precision and
    recall are both zero."""
    p, t = _pair(pred, truth)
    if not np.isfinite(threshold):
        raise ValidationError("tta threshold must be finite")
    pred_pos = p >= threshold
    true_pos = t >= threshold
    tp = int(np.sum(pred_pos & true_pos))
    fp = int(np.sum(pred_pos & ~true_pos))
    fn = int(np.sum(~pred_pos & true_pos))
    if not true_pos.any() and not pred_pos.any():
        return 1.0
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return float(2.0 * precision * recall / (precision + recall))


def quantile_threshold(truth, q: float) -> float:
    """Threshold at the q-quantile of the ground-truth scores (e.g. q = 0.8
    marks the top 20% as the positive tier)."""
    if not 0.0 <= q <= 1.0:
        raise ValidationError("quantile must lie in [0, 1]")
    return float(np.quantile(np.asarray(truth, dtype=np.float64).reshape(-1), q))


@dataclass(frozen=True)
class MetricsReport:
    lcc: Optional[float]
    srcc: Optional[float]
    ktau: Optional[float]
    tta: Optional[float]
    per_dimension: dict
    n: int
    tta_threshold: float

    def to_json(self) -> dict:
        return {
            "lcc": self.lcc,
            "srcc": self.srcc,
            "ktau": self.ktau,
            "tta": self.tta,
            "per_dimension": self.per_dimension,
            "n": self.n,
            "tta_threshold": self.tta_threshold,
        }

    def to_json_str(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


def _try(fn, *args) -> Optional[float]:
    try:
        return fn(*args)
    except UndefinedMetricError:
        return None


def compute_report(
    preds: np.ndarray,
    truths: np.ndarray,
    dimension_names: Sequence[str],
    tta_threshold: float,
) -> MetricsReport:
    """Per-dimension metrics plus their unweighted mean. Undefined
    correlations become nulls; aggregates over only the defined values
    (null if none are)."""
    preds = np.atleast_2d(np.asarray(preds, dtype=np.float64))
    truths = np.atleast_2d(np.asarray(truths, dtype=np.float64))
    if preds.shape != truths.shape:
        raise ValidationError(f"shape mismatch: {preds.shape} vs {truths.shape}")
    if preds.shape[1] != len(dimension_names):
        raise ValidationError("dimension_names length must match score width")
    per_dim = {}
    for d, name in enumerate(dimension_names):
        p, t = preds[:, d], truths[:, d]
        per_dim[name] = {
            "lcc": _try(lcc, p, t),
            "srcc": _try(srcc, p, t),
            "ktau": _try(ktau, p, t),
            "tta": tta(p, t, tta_threshold),
        }

    def agg(key):
        vals = [v[key] for v in per_dim.values() if v[key] is not None]
        return float(np.mean(vals)) if vals else None

    return MetricsReport(
        lcc=agg("lcc"),
        srcc=agg("srcc"),
        ktau=agg("ktau"),
        tta=agg("tta"),
        per_dimension=per_dim,
        n=preds.shape[0],
        tta_threshold=float(tta_threshold),
    )
