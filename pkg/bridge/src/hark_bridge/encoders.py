"""Encoder adapters.

An adapter wraps one pretrained model and yields one or more feature streams
per clip: a segment-scale stream of frame-rate features and, when the model
exposes one, a track-scale stream of pooled/global vectors. The published
MuQ and MusicFM inference stacks are heavyweight optional dependencies, so
both adapters import lazily and report unavailability instead of crashing.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Protocol, Sequence

import numpy as np


@dataclass(frozen=True)
class EncoderOutput:
    source_id: str
    scale: str  # "segment" or "track"
    frames: np.ndarray  # T x D float32
    frame_rate_hz: float


class EncoderAdapter(Protocol):
    name: str

    def available(self) -> tuple[bool, str]:
        """(usable, reason-if-not)."""

    def encode(self, samples: np.ndarray, rate_hz: int) -> list[EncoderOutput]:
        """Mono float samples in [-1, 1] at `rate_hz` -> feature streams."""


class MuqAdapter:
    """Wraps the published MuQ inference code (the `muq` package).

    Emits the selected hidden layer at the model's native 25 Hz frame rate
    (segment scale) plus the time-mean of that layer (track scale)."""

    name = "muq"
    default_model = "OpenMuQ/MuQ-large-msd-iter"

    def __init__(self, checkpoint: Optional[str] = None, layer: int = -1,
                 device: str = "cpu"):
        self.checkpoint = checkpoint or self.default_model
        self.layer = layer
        self.device = device
        self._model = None

    def available(self) -> tuple[bool, str]:
        try:
            import muq  # noqa: F401
            import torch  # noqa: F401
        except ImportError as exc:
            return False, f"missing dependency: {exc}"
        return True, ""

    def _load(self):
        if self._model is None:
            import torch
            from muq import MuQ

            self._model = MuQ.from_pretrained(self.checkpoint)
            self._model = self._model.to(self.device).eval()
        return self._model

    def encode(self, samples: np.ndarray, rate_hz: int) -> list[EncoderOutput]:
        import torch

        ok, reason = self.available()
        if not ok:
            raise RuntimeError(f"muq adapter unavailable: {reason}")
        model = self._load()
        if rate_hz != 24000:
            samples = _resample(samples, rate_hz, 24000)
        wav = torch.from_numpy(np.asarray(samples, dtype=np.float32))[None, :]
        with torch.no_grad():
            out = model(wav.to(self.device), output_hidden_states=True)
        hidden = out.hidden_states[self.layer][0].cpu().numpy().astype(np.float32)
        return _streams(self.name, hidden, frame_rate_hz=25.0)


class MusicFmAdapter:
    """Wraps the published MusicFM inference code, loaded from a local
    checkout plus checkpoint (there is no pip package)."""

    name = "musicfm"

    def __init__(self, repo_dir: Optional[str] = None, checkpoint: Optional[str] = None,
                 layer: int = -1, device: str = "cpu"):
        self.repo_dir = repo_dir
        self.checkpoint = checkpoint
        self.layer = layer
        self.device = device
        self._model = None

    def available(self) -> tuple[bool, str]:
        try:
            import torch  # noqa: F401
        except ImportError as exc:
            return False, f"missing dependency: {exc}"
        if not self.repo_dir or not Path(self.repo_dir).exists():
            return False, "musicfm repo_dir not provided or missing"
        if not self.checkpoint or not Path(self.checkpoint).exists():
            return False, "musicfm checkpoint not provided or missing"
        return True, ""

    def _load(self):
        if self._model is None:
            import sys

            import torch

            sys.path.insert(0, str(self.repo_dir))
            from model.musicfm_25hz import MusicFM25Hz

            self._model = MusicFM25Hz(
                is_flash=False,
                stat_path=str(Path(self.repo_dir) / "data" / "msd_stats.json"),
                model_path=str(self.checkpoint),
            ).to(self.device).eval()
        return self._model

    def encode(self, samples: np.ndarray, rate_hz: int) -> list[EncoderOutput]:
        import torch

        ok, reason = self.available()
        if not ok:
            raise RuntimeError(f"musicfm adapter unavailable: {reason}")
        model = self._load()
        if rate_hz != 24000:
            samples = _resample(samples, rate_hz, 24000)
        wav = torch.from_numpy(np.asarray(samples, dtype=np.float32))[None, :]
        with torch.no_grad():
            _, hidden_states = model.get_predictions(wav.to(self.device))
        hidden = hidden_states[self.layer][0].cpu().numpy().astype(np.float32)
        return _streams(self.name, hidden, frame_rate_hz=25.0)


def _streams(name: str, hidden: np.ndarray, frame_rate_hz: float) -> list[EncoderOutput]:
    segment = EncoderOutput(
        source_id=name, scale="segment",
        frames=hidden, frame_rate_hz=frame_rate_hz,
    )
    duration_s = hidden.shape[0] / frame_rate_hz
    track = EncoderOutput(
        source_id=f"{name}-track", scale="track",
        frames=hidden.mean(axis=0, keepdims=True).astype(np.float32),
        frame_rate_hz=1.0 / max(duration_s, 1e-9),
    )
    return [segment, track]


def _resample(x: np.ndarray, rate_in: int, rate_out: int) -> np.ndarray:
    from fractions import Fraction

    from scipy.signal import resample_poly

    frac = Fraction(rate_out, rate_in)
    return resample_poly(np.asarray(x, dtype=np.float64),
                         frac.numerator, frac.denominator)


def default_adapters(layer: int = -1, muq_checkpoint: Optional[str] = None,
                     musicfm_repo: Optional[str] = None,
                     musicfm_checkpoint: Optional[str] = None) -> dict[str, EncoderAdapter]:
    return {
        "muq": MuqAdapter(checkpoint=muq_checkpoint, layer=layer),
        "musicfm": MusicFmAdapter(repo_dir=musicfm_repo,
                                  checkpoint=musicfm_checkpoint, layer=layer),
    }
