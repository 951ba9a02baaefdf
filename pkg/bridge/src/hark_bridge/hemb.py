"""HEMB v1 writer.

Byte layout (little-endian), matching the hark toolkit's reader exactly:
  magic "HEMB" | u16 version=1 | u8 scale (0=segment, 1=track)
  | u8 source_id_len | source_id (UTF-8) | f32 frame_rate_hz
  | u32 T | u32 D | T*D f32 values, row-major

The bridge never transforms features; whatever the encoder emits is written
verbatim (cast to float32).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"HEMB"
VERSION = 1
SCALE_CODES = {"segment": 0, "track": 1}


def write_hemb(path, source_id: str, scale: str, frames: np.ndarray,
               frame_rate_hz: float) -> None:
    frames = np.ascontiguousarray(frames, dtype="<f4")
    if frames.ndim != 2 or frames.shape[0] < 1 or frames.shape[1] < 1:
        raise ValueError(f"frames must be a T x D matrix, got shape {frames.shape}")
    if not np.all(np.isfinite(frames)):
        raise ValueError("frames must be finite")
    if scale not in SCALE_CODES:
        raise ValueError(f"scale must be one of {sorted(SCALE_CODES)}, got {scale!r}")
    src = source_id.encode("utf-8")
    if not 1 <= len(src) <= 255:
        raise ValueError("source_id must encode to 1..255 bytes")
    t, d = frames.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HBB", VERSION, SCALE_CODES[scale], len(src)))
        fh.write(src)
        fh.write(struct.pack("<fII", float(frame_rate_hz), t, d))
        fh.write(frames.tobytes())
