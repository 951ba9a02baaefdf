"""Domain types and file I/O: dataset manifests, WAV audio, embedding files.

Everything downstream (augmentation, feature extraction, training) moves data
through the types defined here. All functions are pure and thread-safe.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.signal import resample_poly

from .errors import InputError, ValidationError

CANONICAL_RATE_HZ = 24000

TRACK1_DIMENSIONS = ("overall",)
TRACK2_DIMENSIONS = ("dim1", "dim2", "dim3", "dim4", "dim5")

SCALE_SEGMENT = "segment"
SCALE_TRACK = "track"
_SCALES = (SCALE_SEGMENT, SCALE_TRACK)

_SPLITS = ("train", "val", "test")


def default_dimension_names(n_dims: int) -> tuple[str, ...]:
    if n_dims == 1:
        return TRACK1_DIMENSIONS
    if n_dims == 5:
        return TRACK2_DIMENSIONS
    raise ValidationError(f"score vector must have 1 or 5 dimensions, got {n_dims}")


@dataclass(frozen=True)
class AudioClip:
    """Mono waveform. `samples` is a 1-D float64 array, nominally in [-1, 1];
    intermediate pipeline stages may exceed that range until the final clip."""

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise ValidationError("AudioClip requires a non-empty 1-D sample array")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("AudioClip samples must be finite")
        if int(self.sample_rate_hz) <= 0:
            raise ValidationError("sample_rate_hz must be positive")
        object.__setattr__(self, "samples", arr)
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz


@dataclass(frozen=True)
class EmbeddingSequence:
    """A T x D frame matrix tagged with its source and temporal scale."""

    source_id: str
    scale: str
    frames: np.ndarray
    frame_rate_hz: float

    def __post_init__(self):
        if self.scale not in _SCALES:
            raise ValidationError(f"scale must be one of {_SCALES}, got {self.scale!r}")
        arr = np.asarray(self.frames)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValidationError("frames must be a T x D matrix with T, D >= 1")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("embedding frames must be finite")
        if not (float(self.frame_rate_hz) > 0):
            raise ValidationError("frame_rate_hz must be positive")
        object.__setattr__(self, "frames", arr)
        object.__setattr__(self, "frame_rate_hz", float(self.frame_rate_hz))

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


@dataclass(frozen=True)
class ScoreVector:
    """Aesthetic scores for one song: 1 value (Track 1) or 5 (Track 2)."""

    values: np.ndarray
    dimension_names: tuple[str, ...] = ()

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if arr.size not in (1, 5):
            raise ValidationError(f"score vector must have 1 or 5 entries, got {arr.size}")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("score values must be finite")
        names = tuple(self.dimension_names) or default_dimension_names(arr.size)
        if len(names) != arr.size:
            raise ValidationError("dimension_names length must match score length")
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "dimension_names", names)

    def __len__(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    audio_path: Optional[str] = None
    embedding_paths: Mapping[str, str] = field(default_factory=dict)
    scores: Optional[ScoreVector] = None
    split: str = "train"
    augmented_from: Optional[str] = None

    def __post_init__(self):
        if not self.id:
            raise ValidationError("manifest entry id must be non-empty")
        if self.split not in _SPLITS:
            raise ValidationError(
                f"entry {self.id!r}: split must be one of {_SPLITS}, got {self.split!r}"
            )
        if self.audio_path is None and not self.embedding_paths:
            raise ValidationError(
                f"entry {self.id!r}: needs at least one of audio_path / embedding_paths"
            )
        object.__setattr__(self, "embedding_paths", dict(self.embedding_paths))


@dataclass(frozen=True)
class Manifest:
    entries: tuple[ManifestEntry, ...]

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            if e.id in seen:
                raise ValidationError(f"duplicate manifest id {e.id!r}")
            seen.add(e.id)
        object.__setattr__(self, "entries", tuple(self.entries))

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def split(self, name: str) -> tuple[ManifestEntry, ...]:
        return tuple(e for e in self.entries if e.split == name)

    def by_id(self, entry_id: str) -> ManifestEntry:
        for e in self.entries:
            if e.id == entry_id:
                return e
        raise ValidationError(f"no manifest entry with id {entry_id!r}")


def _entry_from_dict(obj: dict, line_no: int) -> ManifestEntry:
    if not isinstance(obj, dict):
        raise InputError(f"manifest line {line_no}: expected a JSON object")
    scores = None
    if obj.get("scores") is not None:
        scores = ScoreVector(
            values=np.asarray(obj["scores"], dtype=np.float64),
            dimension_names=tuple(obj.get("dimension_names") or ()),
        )
    return ManifestEntry(
        id=str(obj.get("id", "")),
        audio_path=obj.get("audio_path"),
        embedding_paths=dict(obj.get("embedding_paths") or {}),
        scores=scores,
        split=obj.get("split", "train"),
        augmented_from=obj.get("augmented_from"),
    )


def entry_to_dict(entry: ManifestEntry) -> dict:
    obj: dict = {"id": entry.id}
    if entry.audio_path is not None:
        obj["audio_path"] = entry.audio_path
    if entry.embedding_paths:
        obj["embedding_paths"] = dict(entry.embedding_paths)
    if entry.scores is not None:
        obj["scores"] = [float(v) for v in entry.scores.values]
        obj["dimension_names"] = list(entry.scores.dimension_names)
    obj["split"] = entry.split
    if entry.augmented_from is not None:
        obj["augmented_from"] = entry.augmented_from
    return obj


def load_manifest(path) -> Manifest:
    """Load a JSON-lines manifest. Order is preserved; unknown fields are ignored."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"manifest not found: {path}")
    entries = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InputError(f"manifest parse error at line {line_no}: {exc}") from exc
            entry = _entry_from_dict(obj, line_no)
            if entry.id in seen:
                raise ValidationError(
                    f"manifest line {line_no}: duplicate id {entry.id!r}"
                )
            seen.add(entry.id)
            entries.append(entry)
    if not entries:
        raise InputError(f"empty manifest: {path}")
    return Manifest(entries=tuple(entries))


def save_manifest(manifest: Manifest, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for entry in manifest.entries:
            fh.write(json.dumps(entry_to_dict(entry), sort_keys=True) + "\n")


# --- WAV I/O ---------------------------------------------------------------
#
# Minimal RIFF/WAVE reader and writer. The stdlib `wave` module rejects
# IEEE-float files, which the augmentation pipeline emits, so we parse the
# container ourselves. Supported codecs: PCM 16-bit, PCM 24-bit, float32.


def _parse_riff_chunks(raw: bytes, path) -> dict[bytes, bytes]:
    if len(raw) < 12 or raw[0:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise InputError(f"not a RIFF/WAVE file: {path}")
    chunks: dict[bytes, bytes] = {}
    pos = 12
    while pos + 8 <= len(raw):
        cid = raw[pos : pos + 4]
        (size,) = struct.unpack_from("<I", raw, pos + 4)
        body = raw[pos + 8 : pos + 8 + size]
        if len(body) < size:
            raise InputError(f"truncated chunk {cid!r} in {path}")
        if cid not in chunks:
            chunks[cid] = body
        pos += 8 + size + (size & 1)
    return chunks


def read_wav(path) -> AudioClip:
    """Read a WAV file, downmix to mono, and resample to 24000 Hz.

    Integer full scale maps to 1.0; resampling is windowed-sinc (polyphase
    Kaiser-windowed FIR)."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"audio file not found: {path}")
    raw = path.read_bytes()
    chunks = _parse_riff_chunks(raw, path)
    if b"fmt " not in chunks or b"data" not in chunks:
        raise InputError(f"missing fmt/data chunk in {path}")
    fmt = chunks[b"fmt "]
    if len(fmt) < 16:
        raise InputError(f"truncated fmt chunk in {path}")
    audio_format, n_channels, sample_rate, _, block_align, bits = struct.unpack_from(
        "<HHIIHH", fmt, 0
    )
    if audio_format == 0xFFFE and len(fmt) >= 26:
        # WAVE_FORMAT_EXTENSIBLE: the real format lives in the GUID prefix.
        (audio_format,) = struct.unpack_from("<H", fmt, 24)
    if n_channels < 1:
        raise InputError(f"invalid channel count in {path}")
    data = chunks[b"data"]

    if audio_format == 1 and bits == 16:
        if len(data) % 2:
            raise InputError(f"truncated sample data in {path}")
        x = np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0
    elif audio_format == 1 and bits == 24:
        if len(data) % 3:
            raise InputError(f"truncated sample data in {path}")
        b3 = np.frombuffer(data, dtype=np.uint8).reshape(-1, 3)
        vals = (
            b3[:, 0].astype(np.int32)
            | (b3[:, 1].astype(np.int32) << 8)
            | (b3[:, 2].astype(np.int32) << 16)
        )
        vals = np.where(vals & 0x800000, vals - (1 << 24), vals)
        x = vals.astype(np.float64) / float(1 << 23)
    elif audio_format == 3 and bits == 32:
        if len(data) % 4:
            raise InputError(f"truncated sample data in {path}")
        x = np.frombuffer(data, dtype="<f4").astype(np.float64)
    else:
        raise InputError(
            f"unsupported codec in {path}: format={audio_format}, bits={bits} "
            "(supported: PCM16, PCM24, float32)"
        )

    if x.size % n_channels:
        raise InputError(f"sample count not divisible by channel count in {path}")
    mono = x.reshape(-1, n_channels).mean(axis=1)
    if mono.size == 0:
        raise InputError(f"no audio samples in {path}")
    mono = resample(mono, sample_rate, CANONICAL_RATE_HZ)
    return AudioClip(samples=mono, sample_rate_hz=CANONICAL_RATE_HZ)


def resample(x: np.ndarray, rate_in: int, rate_out: int) -> np.ndarray:
    """Windowed-sinc resampling between integer sample rates."""
    if rate_in == rate_out:
        return np.asarray(x, dtype=np.float64).copy()
    frac = Fraction(rate_out, rate_in)
    return resample_poly(np.asarray(x, dtype=np.float64), frac.numerator, frac.denominator)


def write_wav(clip: AudioClip, path, encoding: str = "float32") -> None:
    """Write a mono WAV file. Encodings: float32 (default), pcm16, pcm24."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    x = clip.samples
    if encoding == "float32":
        payload = x.astype("<f4").tobytes()
        audio_format, bits = 3, 32
    elif encoding == "pcm16":
        vals = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
        payload = vals.tobytes()
        audio_format, bits = 1, 16
    elif encoding == "pcm24":
        vals = np.clip(np.round(x * float(1 << 23)), -(1 << 23), (1 << 23) - 1).astype(np.int32)
        b = np.zeros((vals.size, 3), dtype=np.uint8)
        b[:, 0] = vals & 0xFF
        b[:, 1] = (vals >> 8) & 0xFF
        b[:, 2] = (vals >> 16) & 0xFF
        payload = b.tobytes()
        audio_format, bits = 1, 24
    else:
        raise ValidationError(f"unknown WAV encoding {encoding!r}")
    n_channels = 1
    byte_rate = clip.sample_rate_hz * n_channels * bits // 8
    block_align = n_channels * bits // 8
    fmt = struct.pack(
        "<HHIIHH", audio_format, n_channels, clip.sample_rate_hz, byte_rate, block_align, bits
    )
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(payload)) + payload
    if len(payload) & 1:
        body += b"\x00"
    with open(path, "wb") as fh:
        fh.write(b"RIFF" + struct.pack("<I", len(body)) + body)


# --- Embedding file format (HEMB v1) ----------------------------------------
#
# Little-endian layout:
#   magic "HEMB" | u16 version=1 | u8 scale (0=segment, 1=track)
#   | u8 source_id_len | source_id (UTF-8) | f32 frame_rate_hz
#   | u32 T | u32 D | T*D f32 values, row-major

_HEMB_MAGIC = b"HEMB"
_HEMB_VERSION = 1
_SCALE_CODES = {SCALE_SEGMENT: 0, SCALE_TRACK: 1}
_SCALE_NAMES = {v: k for k, v in _SCALE_CODES.items()}


def write_embedding(seq: EmbeddingSequence, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    src = seq.source_id.encode("utf-8")
    if len(src) > 255:
        raise ValidationError("source_id longer than 255 bytes")
    t, d = seq.frames.shape
    header = _HEMB_MAGIC + struct.pack("<HBB", _HEMB_VERSION, _SCALE_CODES[seq.scale], len(src))
    header += src + struct.pack("<fII", seq.frame_rate_hz, t, d)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(seq.frames, dtype="<f4").tobytes())


def read_embedding(path) -> EmbeddingSequence:
    path = Path(path)
    if not path.exists():
        raise InputError(f"embedding file not found: {path}")
    raw = path.read_bytes()
    if len(raw) < 8 or raw[:4] != _HEMB_MAGIC:
        raise InputError(f"bad magic in embedding file {path}")
    version, scale_code, src_len = struct.unpack_from("<HBB", raw, 4)
    if version != _HEMB_VERSION:
        raise InputError(f"unsupported embedding version {version} in {path}")
    if scale_code not in _SCALE_NAMES:
        raise InputError(f"unknown scale code {scale_code} in {path}")
    pos = 8
    if len(raw) < pos + src_len + 12:
        raise InputError(f"truncated embedding header in {path}")
    source_id = raw[pos : pos + src_len].decode("utf-8")
    pos += src_len
    frame_rate, t, d = struct.unpack_from("<fII", raw, pos)
    pos += 12
    expected = t * d * 4
    if len(raw) - pos < expected:
        raise InputError(
            f"truncated embedding payload in {path}: expected {expected} bytes, "
            f"got {len(raw) - pos}"
        )
    if len(raw) - pos > expected:
        raise InputError(f"trailing bytes after embedding payload in {path}")
    frames = np.frombuffer(raw, dtype="<f4", count=t * d, offset=pos).reshape(t, d)
    return EmbeddingSequence(
        source_id=source_id, scale=_SCALE_NAMES[scale_code], frames=frames,
        frame_rate_hz=frame_rate,
    )
