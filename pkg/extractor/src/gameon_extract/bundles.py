"""Writer for the gameon feature-bundle and manifest formats.

Implemented against the published format description (version 1), not
against the consumer's code, so the two sides check each other:

    magic "GMON" | version u16 LE | label u8 | reserved u8
    n_text u32 | d_text u32 (=768) | n_visual u32 | d_visual u32 (=2048)
    sample_id_len u16 | sample_id UTF-8
    text matrix f32 LE row-major | visual matrix f32 LE row-major

Manifest: one JSON object per line with keys id/path/label/split, after an
optional header line naming the dataset.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"GMON"
VERSION = 1
TEXT_DIM = 768
VISUAL_DIM = 2048


class BundleError(ValueError):
    pass


def bundle_bytes(sample_id: str, label: int, text: np.ndarray, visual: np.ndarray) -> bytes:
    text = np.ascontiguousarray(text, dtype="<f4")
    visual = np.ascontiguousarray(visual, dtype="<f4")
    if label not in (0, 1):
        raise BundleError(f"label must be 0 or 1, got {label}")
    if text.ndim != 2 or text.shape[1] != TEXT_DIM or text.shape[0] < 1:
        raise BundleError(f"text features must be (k+1, {TEXT_DIM}), got {text.shape}")
    if visual.ndim != 2 or visual.shape[1] != VISUAL_DIM or visual.shape[0] < 1:
        raise BundleError(f"visual features must be (l+1, {VISUAL_DIM}), got {visual.shape}")
    if not np.isfinite(text).all() or not np.isfinite(visual).all():
        raise BundleError(f"sample {sample_id!r}: non-finite feature values")
    sid = sample_id.encode("utf-8")
    header = struct.pack(
        "<4sHBBIIIIH",
        MAGIC,
        VERSION,
        label,
        0,
        text.shape[0],
        TEXT_DIM,
        visual.shape[0],
        VISUAL_DIM,
        len(sid),
    )
    return header + sid + text.tobytes() + visual.tobytes()


def write_bundle(path, sample_id: str, label: int, text: np.ndarray, visual: np.ndarray) -> None:
    Path(path).write_bytes(bundle_bytes(sample_id, label, text, visual))


def write_manifest(path, records: list[dict], dataset: str) -> None:
    """records: dicts with id, path (relative), label, split."""
    lines = [json.dumps({"dataset": dataset, "format_version": VERSION}, sort_keys=True)]
    lines += [json.dumps(r, sort_keys=True) for r in records]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
