"""Batch export: run encoders over every manifest entry with audio and write
one HEMB file per (clip, feature stream), then emit a patched manifest whose
entries gain embedding_paths keys. All other manifest fields pass through
untouched, so the patch is safe to apply to manifests the bridge does not
fully understand.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.io import wavfile

from .encoders import EncoderAdapter
from .hemb import write_hemb


@dataclass
class ExportedFile:
    entry_id: str
    source_id: str
    scale: str
    path: str
    num_frames: int
    dim: int
    frame_rate_hz: float


@dataclass
class ExportReport:
    files: list[ExportedFile] = field(default_factory=list)
    manifest_path: str = ""
    skipped: list[str] = field(default_factory=list)


def read_audio(path) -> tuple[np.ndarray, int]:
    """Mono float64 samples in [-1, 1] plus the sample rate."""
    rate, data = wavfile.read(path)
    x = np.asarray(data)
    if x.dtype == np.int16:
        x = x.astype(np.float64) / 32768.0
    elif x.dtype == np.int32:
        x = x.astype(np.float64) / 2147483648.0
    elif x.dtype == np.uint8:
        x = (x.astype(np.float64) - 128.0) / 128.0
    else:
        x = x.astype(np.float64)
    if x.ndim == 2:
        x = x.mean(axis=1)
    if x.size == 0:
        raise ValueError(f"no audio samples in {path}")
    return x, int(rate)


def _load_manifest_lines(path) -> list[dict]:
    lines = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"manifest parse error at line {line_no}: {exc}") from exc
            if not isinstance(obj, dict) or "id" not in obj:
                raise ValueError(f"manifest line {line_no}: expected an object with an id")
            lines.append(obj)
    if not lines:
        raise ValueError(f"empty manifest: {path}")
    return lines


def export(
    manifest_path,
    out_dir,
    adapters: Mapping[str, EncoderAdapter],
    sources: Sequence[str],
    audio_dir: Optional[str] = None,
) -> ExportReport:
    """Export features for `sources` (adapter names) over every entry that has
    audio. Returns a report listing every written file with its header facts;
    entries without audio are recorded as skipped."""
    manifest_path = Path(manifest_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    audio_base = Path(audio_dir) if audio_dir else manifest_path.parent

    chosen: list[EncoderAdapter] = []
    for name in sources:
        if name not in adapters:
            raise ValueError(f"unknown source {name!r}; available: {sorted(adapters)}")
        adapter = adapters[name]
        ok, reason = adapter.available()
        if not ok:
            raise RuntimeError(f"encoder {name!r} unavailable: {reason}")
        chosen.append(adapter)

    entries = _load_manifest_lines(manifest_path)
    report = ExportReport()
    for obj in entries:
        if not obj.get("audio_path"):
            report.skipped.append(obj["id"])
            continue
        audio_path = audio_base / obj["audio_path"]
        samples, rate = read_audio(audio_path)
        paths = dict(obj.get("embedding_paths") or {})
        for adapter in chosen:
            for stream in adapter.encode(samples, rate):
                stem = str(obj["id"]).replace("/", "_")
                name = f"{stem}.{stream.source_id}.hemb"
                write_hemb(out_dir / name, stream.source_id, stream.scale,
                           stream.frames, stream.frame_rate_hz)
                paths[stream.source_id] = name
                report.files.append(ExportedFile(
                    entry_id=obj["id"], source_id=stream.source_id,
                    scale=stream.scale, path=name,
                    num_frames=stream.frames.shape[0], dim=stream.frames.shape[1],
                    frame_rate_hz=stream.frame_rate_hz,
                ))
        obj["embedding_paths"] = paths

    patched = out_dir / "manifest.jsonl"
    with open(patched, "w", encoding="utf-8") as fh:
        for obj in entries:
            fh.write(json.dumps(obj, sort_keys=True) + "\n")
    report.manifest_path = str(patched)
    return report
