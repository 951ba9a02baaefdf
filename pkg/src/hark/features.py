"""Feature acquisition: deterministic toy extractors computed from raw audio,
plus resolution logic that prefers precomputed embedding files when a manifest
entry offers them.

The toy pair mirrors the segment/track duality of real music encoders so the
multi-branch model paths can be exercised without any pretrained weights:
  toy-logmel  -- 50 Hz log-mel frames (segment scale)
  toy-track   -- windowed [mean; std] summaries of the log-mel (track scale)
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .core import (
    SCALE_SEGMENT,
    SCALE_TRACK,
    AudioClip,
    EmbeddingSequence,
    ManifestEntry,
    read_embedding,
    read_wav,
)
from .errors import ValidationError

TOY_SEGMENT_SOURCE = "toy-logmel"
TOY_TRACK_SOURCE = "toy-track"

STFT_WINDOW = 1024
MEL_FMIN_HZ = 0.0
MEL_FMAX_HZ = 12000.0


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(n_mels: int) -> np.ndarray:
    """Center frequencies (Hz) of the triangular mel filters."""
    pts = np.linspace(_hz_to_mel(MEL_FMIN_HZ), _hz_to_mel(MEL_FMAX_HZ), n_mels + 2)
    return _mel_to_hz(pts)[1:-1]


def _mel_filterbank(n_mels: int, n_fft: int, rate_hz: int) -> np.ndarray:
    pts = np.linspace(_hz_to_mel(MEL_FMIN_HZ), _hz_to_mel(MEL_FMAX_HZ), n_mels + 2)
    hz = _mel_to_hz(pts)
    freqs = np.fft.rfftfreq(n_fft, d=1.0 / rate_hz)
    fb = np.zeros((n_mels, freqs.size))
    for i in range(n_mels):
        lo, center, hi = hz[i], hz[i + 1], hz[i + 2]
        up = (freqs - lo) / max(center - lo, 1e-9)
        down = (hi - freqs) / max(hi - center, 1e-9)
        fb[i] = np.clip(np.minimum(up, down), 0.0, None)
    return fb


def toy_logmel(clip: AudioClip, n_mels: int = 64, hop_s: float = 0.02) -> EmbeddingSequence:
    """Windowed log-mel power features: STFT (Hann window of 1024 samples,
    hop = hop_s * rate), triangular HTK-spaced mel filterbank over 0-12 kHz,
    log(1 + power)."""
    hop = int(round(hop_s * clip.sample_rate_hz))
    if hop < 1:
        raise ValidationError("hop shorter than one sample")
    x = clip.samples
    if x.size < hop:
        raise ValidationError("clip too short: needs at least one hop of audio")
    # One frame per hop (T = ceil(N / hop)); the tail is zero-padded so the
    # last window is complete.
    n_frames = -(-x.size // hop)
    needed = (n_frames - 1) * hop + STFT_WINDOW
    if x.size < needed:
        x = np.concatenate([x, np.zeros(needed - x.size)])
    window = np.hanning(STFT_WINDOW)
    idx = np.arange(STFT_WINDOW)[None, :] + hop * np.arange(n_frames)[:, None]
    spec = np.fft.rfft(x[idx] * window, axis=1)
    power = np.abs(spec) ** 2
    fb = _mel_filterbank(n_mels, STFT_WINDOW, clip.sample_rate_hz)
    feats = np.log1p(power @ fb.T)
    return EmbeddingSequence(
        source_id=TOY_SEGMENT_SOURCE,
        scale=SCALE_SEGMENT,
        frames=feats,
        frame_rate_hz=1.0 / hop_s,
    )


def toy_track_stats(seq: EmbeddingSequence, window_s: float = 5.0) -> EmbeddingSequence:
    """Global summaries: per non-overlapping window, [mean; std] over frames
    (population std), giving a track-scale sequence of dimension 2*D."""
    w = max(1, int(round(window_s * seq.frame_rate_hz)))
    frames = seq.frames
    t = frames.shape[0]
    chunks = []
    for start in range(0, t, w):
        block = frames[start : start + w]
        chunks.append(np.concatenate([block.mean(axis=0), block.std(axis=0)]))
    return EmbeddingSequence(
        source_id=TOY_TRACK_SOURCE,
        scale=SCALE_TRACK,
        frames=np.stack(chunks),
        frame_rate_hz=seq.frame_rate_hz / w,
    )


def compute_toy_features(clip: AudioClip, n_mels: int = 64) -> dict[str, EmbeddingSequence]:
    seg = toy_logmel(clip, n_mels=n_mels)
    return {TOY_SEGMENT_SOURCE: seg, TOY_TRACK_SOURCE: toy_track_stats(seg)}


def resolve_features(
    entry: ManifestEntry,
    branch_configs: Sequence,
    base_dir=".",
) -> dict[str, EmbeddingSequence]:
    """Gather one EmbeddingSequence per configured branch for a manifest entry.

    Precomputed embedding files win over recomputation; toy sources fall back
    to extraction from audio. A configured source reachable by neither route
    is an error naming the source."""
    base = Path(base_dir)
    out: dict[str, EmbeddingSequence] = {}
    toy_cache: dict[str, EmbeddingSequence] | None = None
    for cfg in branch_configs:
        sid = cfg.source_id
        if sid in entry.embedding_paths:
            seq = read_embedding(base / entry.embedding_paths[sid])
            if seq.scale != cfg.scale:
                raise ValidationError(
                    f"entry {entry.id!r}: source {sid!r} file is {seq.scale}-scale "
                    f"but the branch expects {cfg.scale}"
                )
            if seq.dim != cfg.input_dim:
                raise ValidationError(
                    f"entry {entry.id!r}: source {sid!r} has dimension {seq.dim}, "
                    f"branch expects {cfg.input_dim}"
                )
            out[sid] = seq
        elif sid in (TOY_SEGMENT_SOURCE, TOY_TRACK_SOURCE) and entry.audio_path:
            if toy_cache is None:
                clip = read_wav(base / entry.audio_path)
                n_mels = cfg.input_dim if cfg.source_id == TOY_SEGMENT_SOURCE else cfg.input_dim // 2
                toy_cache = compute_toy_features(clip, n_mels=n_mels)
            seq = toy_cache[sid]
            if seq.dim != cfg.input_dim:
                raise ValidationError(
                    f"entry {entry.id!r}: toy source {sid!r} produced dimension "
                    f"{seq.dim}, branch expects {cfg.input_dim}"
                )
            out[sid] = seq
        else:
            raise ValidationError(
                f"entry {entry.id!r}: source {sid!r} unavailable (no embedding file "
                "and no audio to compute it from)"
            )
    return out
