"""Data-level audio augmentation: eight independent, probability-gated
perturbations applied in a fixed order, with counter-based seeding so every
draw is reproducible in isolation.

Op order: time_stretch, time_shift, pitch_shift, gain, highpass, lowpass,
parametric_eq, noise. The chain hard-clips to [-1, 1] after the last applied
op; with no op applied the pipeline is the identity.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np
from scipy.signal import lfilter, resample_poly

from .core import AudioClip
from .errors import ValidationError

EQ_CENTERS_HZ = (60.0, 150.0, 400.0, 1000.0, 2400.0, 6000.0, 15000.0)
EQ_Q = 1.0

OP_NAMES = (
    "time_stretch",
    "time_shift",
    "pitch_shift",
    "gain",
    "highpass",
    "lowpass",
    "eq",
    "noise",
)


@dataclass(frozen=True)
class AugmentConfig:
    time_stretch_rate: tuple[float, float] = (0.99, 1.01)
    time_stretch_p: float = 0.4
    time_shift_s: tuple[float, float] = (-0.5, 0.5)
    time_shift_p: float = 0.4
    pitch_cents: tuple[float, float] = (-10.0, 10.0)
    pitch_p: float = 0.5
    gain_db: tuple[float, float] = (-2.0, 2.0)
    gain_p: float = 0.9
    hpf_cutoff_hz: tuple[float, float] = (80.0, 120.0)
    hpf_p: float = 0.3
    lpf_cutoff_hz: tuple[float, float] = (15000.0, 18000.0)
    lpf_p: float = 0.3
    eq_gain_db: tuple[float, float] = (-3.0, 3.0)
    eq_p: float = 0.3
    noise_snr_db: tuple[float, float] = (30.0, 50.0)
    noise_p: float = 0.25
    seed: int = 0
    copies_per_clip: int = 1

    def __post_init__(self):
        for name in OP_NAMES:
            p = self.probability(name)
            if not 0.0 <= p <= 1.0:
                raise ValidationError(f"{name}: probability {p} outside [0, 1]")
            lo, hi = self.param_range(name)
            if lo > hi:
                raise ValidationError(f"{name}: range ({lo}, {hi}) not ordered")
        if self.copies_per_clip < 1:
            raise ValidationError("copies_per_clip must be >= 1")

    def probability(self, op: str) -> float:
        return {
            "time_stretch": self.time_stretch_p,
            "time_shift": self.time_shift_p,
            "pitch_shift": self.pitch_p,
            "gain": self.gain_p,
            "highpass": self.hpf_p,
            "lowpass": self.lpf_p,
            "eq": self.eq_p,
            "noise": self.noise_p,
        }[op]

    def param_range(self, op: str) -> tuple[float, float]:
        return {
            "time_stretch": self.time_stretch_rate,
            "time_shift": self.time_shift_s,
            "pitch_shift": self.pitch_cents,
            "gain": self.gain_db,
            "highpass": self.hpf_cutoff_hz,
            "lowpass": self.lpf_cutoff_hz,
            "eq": self.eq_gain_db,
            "noise": self.noise_snr_db,
        }[op]

    def disable(self, ops: Sequence[str]) -> "AugmentConfig":
        updates = {}
        fields = {
            "time_stretch": "time_stretch_p",
            "time_shift": "time_shift_p",
            "pitch_shift": "pitch_p",
            "gain": "gain_p",
            "highpass": "hpf_p",
            "lowpass": "lpf_p",
            "eq": "eq_p",
            "noise": "noise_p",
        }
        for op in ops:
            if op not in fields:
                raise ValidationError(f"unknown augmentation op {op!r}")
            updates[fields[op]] = 0.0
        return replace(self, **updates)


@dataclass(frozen=True)
class OpDraw:
    """One op's randomness for one clip: gate decision plus drawn parameters."""

    op: str
    applied: bool
    params: dict

    def to_json(self) -> dict:
        return {"op": self.op, "applied": self.applied, **self.params}


def stable_id_hash(text: str) -> int:
    """64-bit platform-independent hash of a clip id."""
    return int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "little")


def _op_rng(cfg_seed: int, clip_key, op_index: int) -> np.random.Generator:
    if isinstance(clip_key, (int, np.integer)):
        clip_key = (int(clip_key),)
    entropy = [int(cfg_seed), *[int(k) for k in clip_key], int(op_index)]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def draw_parameters(cfg: AugmentConfig, clip_key) -> list[OpDraw]:
    """Draw gate decisions and parameters for all eight ops.

    Parameters are drawn whether or not the gate fires, so a single op's draw
    is reproducible in isolation and independent of the configured
    probabilities."""
    draws = []
    for i, op in enumerate(OP_NAMES):
        rng = _op_rng(cfg.seed, clip_key, i)
        applied = rng.uniform() < cfg.probability(op)
        lo, hi = cfg.param_range(op)
        if op == "eq":
            params = {"gains_db": [float(v) for v in rng.uniform(lo, hi, size=len(EQ_CENTERS_HZ))]}
        elif op == "noise":
            params = {
                "snr_db": float(rng.uniform(lo, hi)),
                "noise_seed": int(rng.integers(0, 2**63 - 1)),
            }
        else:
            key = {
                "time_stretch": "rate",
                "time_shift": "shift_s",
                "pitch_shift": "cents",
                "gain": "gain_db",
                "highpass": "cutoff_hz",
                "lowpass": "cutoff_hz",
            }[op]
            params = {key: float(rng.uniform(lo, hi))}
        draws.append(OpDraw(op=op, applied=applied, params=params))
    return draws


def apply_draws(clip: AudioClip, draws: Sequence[OpDraw]) -> AudioClip:
    """Apply recorded draws in order, then hard-clip to [-1, 1].

    With no applied op the input is returned unchanged (bit-identity)."""
    if not any(d.applied for d in draws):
        return clip
    out = clip
    for d in draws:
        if not d.applied:
            continue
        if d.op == "time_stretch":
            out = time_stretch(out, d.params["rate"])
        elif d.op == "time_shift":
            out = time_shift(out, d.params["shift_s"])
        elif d.op == "pitch_shift":
            out = pitch_shift(out, d.params["cents"])
        elif d.op == "gain":
            out = gain(out, d.params["gain_db"])
        elif d.op == "highpass":
            out = butterworth_filter(out, "highpass", d.params["cutoff_hz"])
        elif d.op == "lowpass":
            # Table 1's low-pass range sits above Nyquist at the canonical
            # 24 kHz rate; a cutoff the signal cannot represent is a no-op.
            if d.params["cutoff_hz"] < 0.5 * out.sample_rate_hz:
                out = butterworth_filter(out, "lowpass", d.params["cutoff_hz"])
        elif d.op == "eq":
            out = parametric_eq(out, d.params["gains_db"])
        elif d.op == "noise":
            out = add_noise_snr(out, d.params["snr_db"], d.params["noise_seed"])
        else:
            raise ValidationError(f"unknown op in draws: {d.op!r}")
    return AudioClip(np.clip(out.samples, -1.0, 1.0), out.sample_rate_hz)


def apply_pipeline(clip: AudioClip, cfg: AugmentConfig, clip_key) -> AudioClip:
    return apply_draws(clip, draw_parameters(cfg, clip_key))


# --- individual ops ----------------------------------------------------------


def _resample_by_factor(x: np.ndarray, factor: float) -> np.ndarray:
    """Windowed-sinc resampling to length ~= len(x) * factor."""
    if factor == 1.0:
        return x.copy()
    frac = Fraction(factor).limit_denominator(10000)
    return resample_poly(x, frac.numerator, frac.denominator)


def time_stretch(clip: AudioClip, rate: float) -> AudioClip:
    """Speed playback up by `rate` via plain resampling; pitch shifts by the
    same factor (<= +-17.3 cents over the configured 0.99-1.01 range)."""
    if not 0.9 <= rate <= 1.1:
        raise ValidationError(f"time_stretch rate {rate} outside guard range [0.9, 1.1]")
    if rate == 1.0:
        return AudioClip(clip.samples.copy(), clip.sample_rate_hz)
    y = _resample_by_factor(clip.samples, 1.0 / rate)
    return AudioClip(y, clip.sample_rate_hz)


def time_shift(clip: AudioClip, shift_s: float) -> AudioClip:
    """Non-circular shift: positive prepends silence and truncates the tail."""
    n = clip.samples.size
    shift = int(round(shift_s * clip.sample_rate_hz))
    if abs(shift) > n:
        raise ValidationError(f"time_shift {shift_s}s exceeds clip duration")
    y = np.zeros_like(clip.samples)
    if shift >= 0:
        y[shift:] = clip.samples[: n - shift]
    else:
        y[: n + shift] = clip.samples[-shift:]
    return AudioClip(y, clip.sample_rate_hz)


def pitch_shift(clip: AudioClip, cents: float) -> AudioClip:
    """Shift pitch by `cents` via resampling; the length change (under 0.6% at
    +-10 cents) is repaired by zero-padding or truncating back to the input
    length, since a second resampling pass would undo the shift."""
    if abs(cents) > 100:
        raise ValidationError(f"pitch_shift {cents} cents outside guard range [-100, 100]")
    if cents == 0.0:
        return AudioClip(clip.samples.copy(), clip.sample_rate_hz)
    ratio = 2.0 ** (cents / 1200.0)
    y = _resample_by_factor(clip.samples, 1.0 / ratio)
    n = clip.samples.size
    if y.size >= n:
        y = y[:n]
    else:
        y = np.concatenate([y, np.zeros(n - y.size)])
    return AudioClip(y, clip.sample_rate_hz)


def gain(clip: AudioClip, gain_db: float) -> AudioClip:
    """Scale by 10^(gain_db/20); clipping protection is the pipeline's job."""
    if abs(gain_db) > 24:
        raise ValidationError(f"gain {gain_db} dB outside guard range [-24, 24]")
    return AudioClip(clip.samples * 10.0 ** (gain_db / 20.0), clip.sample_rate_hz)


def _butterworth_coeffs(mode: str, cutoff_hz: float, rate_hz: int):
    # Second-order Butterworth via bilinear transform with pre-warped cutoff.
    k = math.tan(math.pi * cutoff_hz / rate_hz)
    norm = 1.0 / (1.0 + math.sqrt(2.0) * k + k * k)
    a = [1.0, 2.0 * (k * k - 1.0) * norm, (1.0 - math.sqrt(2.0) * k + k * k) * norm]
    if mode == "lowpass":
        b = [k * k * norm, 2.0 * k * k * norm, k * k * norm]
    elif mode == "highpass":
        b = [norm, -2.0 * norm, norm]
    else:
        raise ValidationError(f"unknown filter mode {mode!r}")
    return b, a


def butterworth_filter(clip: AudioClip, mode: str, cutoff_hz: float) -> AudioClip:
    if not 0.0 < cutoff_hz < 0.5 * clip.sample_rate_hz:
        raise ValidationError(
            f"cutoff {cutoff_hz} Hz must lie strictly below Nyquist "
            f"({0.5 * clip.sample_rate_hz} Hz)"
        )
    b, a = _butterworth_coeffs(mode, cutoff_hz, clip.sample_rate_hz)
    return AudioClip(lfilter(b, a, clip.samples), clip.sample_rate_hz)


def _peaking_coeffs(center_hz: float, gain_db: float, q: float, rate_hz: int):
    # RBJ peaking biquad; exact unity when gain_db == 0.
    amp = 10.0 ** (gain_db / 40.0)
    w0 = 2.0 * math.pi * center_hz / rate_hz
    alpha = math.sin(w0) / (2.0 * q)
    b = [1.0 + alpha * amp, -2.0 * math.cos(w0), 1.0 - alpha * amp]
    a = [1.0 + alpha / amp, -2.0 * math.cos(w0), 1.0 - alpha / amp]
    return [bi / a[0] for bi in b], [ai / a[0] for ai in a]


def parametric_eq(clip: AudioClip, band_gains_db: Sequence[float]) -> AudioClip:
    """Cascade of 7 peaking biquads at fixed log-spaced centers, Q = 1.
    Bands whose center is at or above Nyquist are bypassed."""
    gains = list(band_gains_db)
    if len(gains) != len(EQ_CENTERS_HZ):
        raise ValidationError(f"expected {len(EQ_CENTERS_HZ)} band gains, got {len(gains)}")
    for g in gains:
        if abs(g) > 12:
            raise ValidationError(f"EQ gain {g} dB outside guard range [-12, 12]")
    x = clip.samples
    for center, g in zip(EQ_CENTERS_HZ, gains):
        if g == 0.0 or center >= 0.5 * clip.sample_rate_hz:
            continue
        b, a = _peaking_coeffs(center, g, EQ_Q, clip.sample_rate_hz)
        x = lfilter(b, a, x)
    return AudioClip(x, clip.sample_rate_hz)


def add_noise_snr(clip: AudioClip, snr_db: float, seed: int) -> AudioClip:
    """Add white Gaussian noise at the requested SNR. Silent input and an
    infinite SNR are both no-ops."""
    rms = float(np.sqrt(np.mean(clip.samples**2)))
    if rms == 0.0 or math.isinf(snr_db):
        return AudioClip(clip.samples.copy(), clip.sample_rate_hz)
    noise_rms = rms * 10.0 ** (-snr_db / 20.0)
    rng = np.random.default_rng(int(seed))
    noise = rng.standard_normal(clip.samples.size) * noise_rms
    return AudioClip(clip.samples + noise, clip.sample_rate_hz)
