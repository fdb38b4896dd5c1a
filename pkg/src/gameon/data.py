"""On-disk formats and synthetic datasets.

Bundle binary format, version 1 (all integers little-endian):

    magic  b"GMON" | version u16 | label u8 | reserved u8
    n_text u32 | d_text u32 | n_visual u32 | d_visual u32
    sample_id_len u16 | sample_id (UTF-8)
    text matrix    f32, row-major, n_text x d_text
    visual matrix  f32, row-major, n_visual x d_visual

Version 1 fixes d_text = 768 and d_visual = 2048. Row 0 of the text block
is the whole-text embedding; row 0 of the visual block is the whole-image
feature; visual rows are stored raw at 2048 and resized at load time.

Manifest: one JSON object per line with keys id/path/label/split;
relative paths resolve against the manifest's directory. An optional
first line {"dataset": ..., "format_version": ...} names the dataset.

The synthetic generators use the Philox 64-bit counter-based PRNG, so a
seed fully determines every byte written.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._binio import Cursor
from .errors import ContractError, FormatError, ResolutionError, ValidationError

BUNDLE_MAGIC = b"GMON"
BUNDLE_VERSION = 1
TEXT_DIM = 768
VISUAL_DIM = 2048
SPLITS = ("train", "val", "test")


@dataclass
class SampleBundle:
    """One news sample: label plus precomputed text and raw visual node
    features."""

    sample_id: str
    label: int
    text_features: np.ndarray        # (k+1, 768), row 0 = whole-text embedding
    visual_features_raw: np.ndarray  # (l+1, 2048), row 0 = whole-image feature

    def validate(self) -> None:
        if self.label not in (0, 1):
            raise ValidationError(f"label must be 0 or 1, got {self.label}")
        t, v = np.asarray(self.text_features), np.asarray(self.visual_features_raw)
        if t.ndim != 2 or t.shape[1] != TEXT_DIM or t.shape[0] < 1:
            raise ValidationError(
                f"text features must be (k+1, {TEXT_DIM}) with k >= 0, got {t.shape}"
            )
        if v.ndim != 2 or v.shape[1] != VISUAL_DIM or v.shape[0] < 1:
            raise ValidationError(
                f"visual features must be (l+1, {VISUAL_DIM}) with l >= 0, got {v.shape}"
            )
        if not np.isfinite(t).all() or not np.isfinite(v).all():
            raise ValidationError(f"bundle {self.sample_id!r} contains non-finite values")


def bundle_bytes(bundle: SampleBundle) -> bytes:
    bundle.validate()
    text = np.ascontiguousarray(bundle.text_features, dtype="<f4")
    visual = np.ascontiguousarray(bundle.visual_features_raw, dtype="<f4")
    sid = bundle.sample_id.encode("utf-8")
    header = struct.pack(
        "<4sHBBIIIIH",
        BUNDLE_MAGIC,
        BUNDLE_VERSION,
        bundle.label,
        0,
        text.shape[0],
        TEXT_DIM,
        visual.shape[0],
        VISUAL_DIM,
        len(sid),
    )
    return header + sid + text.tobytes() + visual.tobytes()


def write_bundle(bundle: SampleBundle, path) -> None:
    try:
        with open(path, "wb") as fh:
            fh.write(bundle_bytes(bundle))
    except OSError as exc:
        raise OSError(f"cannot write bundle to {path}: {exc}") from exc


def read_bundle(path) -> SampleBundle:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise OSError(f"cannot read bundle from {path}: {exc}") from exc
    cur = Cursor(raw, f"bundle {path}")
    magic = cur.take(4)
    if magic != BUNDLE_MAGIC:
        raise FormatError(f"bundle {path}: bad magic {magic!r} at offset 0")
    version, label, _reserved = cur.unpack("<HBB")
    if version != BUNDLE_VERSION:
        raise FormatError(f"bundle {path}: unsupported version {version}")
    n_text, d_text, n_visual, d_visual, sid_len = cur.unpack("<IIIIH")
    if d_text != TEXT_DIM:
        raise ValidationError(f"bundle {path}: text feature dim {d_text}, expected {TEXT_DIM}")
    if d_visual != VISUAL_DIM:
        raise ValidationError(
            f"bundle {path}: visual feature dim {d_visual}, expected {VISUAL_DIM}"
        )
    try:
        sid = cur.take(sid_len).decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"bundle {path}: sample id is not UTF-8: {exc}") from exc
    text = np.frombuffer(cur.take(4 * n_text * d_text), dtype="<f4").reshape(n_text, d_text)
    visual = np.frombuffer(cur.take(4 * n_visual * d_visual), dtype="<f4").reshape(
        n_visual, d_visual
    )
    cur.expect_end()
    bundle = SampleBundle(sid, label, text.astype(np.float32), visual.astype(np.float32))
    bundle.validate()
    return bundle


# --------------------------------------------------------------------------
# Manifest

@dataclass
class ManifestRecord:
    sample_id: str
    path: Path       # resolved
    label: int
    split: str


@dataclass
class DatasetManifest:
    records: list[ManifestRecord]
    name: str = "unnamed"
    format_version: int = BUNDLE_VERSION
    base_dir: Path = field(default_factory=Path)

    def split(self, name: str) -> list[ManifestRecord]:
        if name not in SPLITS:
            raise ValidationError(f"unknown split {name!r}; expected one of {SPLITS}")
        return [r for r in self.records if r.split == name]


RECORD_KEYS = {"id", "path", "label", "split"}


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise OSError(f"cannot read manifest {path}: {exc}") from exc
    base = path.parent
    name, version = "unnamed", BUNDLE_VERSION
    records: list[ManifestRecord] = []
    seen: set[str] = set()
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"manifest {path}:{lineno}: not valid JSON: {exc}") from exc
        if lineno == 1 and isinstance(obj, dict) and "id" not in obj:
            name = obj.get("dataset", name)
            version = obj.get("format_version", version)
            extra = set(obj) - {"dataset", "format_version"}
            if extra:
                raise ValidationError(f"manifest {path}:1: unknown header keys {sorted(extra)}")
            continue
        if not isinstance(obj, dict) or set(obj) != RECORD_KEYS:
            raise ValidationError(
                f"manifest {path}:{lineno}: record must have exactly keys {sorted(RECORD_KEYS)}"
            )
        sid = obj["id"]
        if sid in seen:
            raise ValidationError(f"manifest {path}:{lineno}: duplicate sample id {sid!r}")
        seen.add(sid)
        if obj["label"] not in (0, 1):
            raise ValidationError(f"manifest {path}:{lineno}: label must be 0 or 1")
        if obj["split"] not in SPLITS:
            raise ValidationError(
                f"manifest {path}:{lineno}: split must be one of {SPLITS}, got {obj['split']!r}"
            )
        bundle_path = Path(obj["path"])
        if not bundle_path.is_absolute():
            bundle_path = base / bundle_path
        records.append(ManifestRecord(sid, bundle_path, int(obj["label"]), obj["split"]))
    missing = [str(r.path) for r in records if not r.path.is_file()]
    if missing:
        raise ResolutionError(f"manifest {path}: missing bundle files: {missing}")
    return DatasetManifest(records, name=name, format_version=version, base_dir=base)


def write_manifest(path, records: list[ManifestRecord], name: str, base_dir=None) -> None:
    path = Path(path)
    base = (Path(base_dir) if base_dir is not None else path.parent).resolve()
    lines = [json.dumps({"dataset": name, "format_version": BUNDLE_VERSION}, sort_keys=True)]
    for r in records:
        p = Path(r.path)
        if not p.is_absolute():
            p = Path.cwd() / p
        try:
            target = p.resolve().relative_to(base)
        except ValueError:
            target = p.resolve()  # outside the manifest dir: keep absolute
        lines.append(
            json.dumps(
                {"id": r.sample_id, "path": str(target), "label": r.label, "split": r.split},
                sort_keys=True,
            )
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------
# Synthetic datasets
#
# `separable`: the label is a sign along one fixed direction planted in the
# whole-text node; everything else is noise. A linear probe on that node
# separates the classes perfectly.
#
# `crossmodal`: one token node of the text block and one object node of
# the visual block each carry a planted signed code (+-amplitude times one
# vector from a large fixed orthonormal codebook); both nodes of a sample
# draw the same codebook entry, and the sample is labeled 1 exactly when
# the two copies carry the same sign (a cross-modal match) and 0 when they
# cancel. Each modality's node multiset is marginally uniform (uniform
# code, uniform sign) regardless of label, so any per-modality pooled
# statistic is label-independent; the label lives only in the cross-modal
# sign agreement. The fused graph exposes it directly: the summed node
# features have a doubled or a cancelled code coefficient, a single
# code-agnostic threshold. A per-modality model must instead relate the
# two blocks code by code, and the codebook is much larger than the
# training split, so per-code machinery cannot be estimated.
#
# Codes are constant on aligned blocks (3 wide at 768, 8 wide at 2048) so
# the 2048 -> 768 mean-pool resize maps the visual copy of a code onto the
# text copy.

SEPARABLE_AMPLITUDE = 8.0
SEPARABLE_NOISE = 1.0
CROSSMODAL_CODES = 192
CROSSMODAL_AMPLITUDE = 8.0
CROSSMODAL_NOISE = 0.05


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def _codebook(rng: np.random.Generator, n_codes: int) -> tuple[np.ndarray, np.ndarray]:
    base, _ = np.linalg.qr(rng.standard_normal((TEXT_DIM // 3, n_codes)))
    text_codes = np.repeat(base.T, 3, axis=1) / np.sqrt(3.0)       # unit norm at 768
    visual_codes = np.repeat(base.T, 8, axis=1) / np.sqrt(3.0)     # resizes onto text_codes
    return text_codes, visual_codes


def synth_samples(seed: int, n_samples: int, mode: str) -> list[SampleBundle]:
    """Generate a balanced labeled sample list entirely in memory."""
    if mode not in ("separable", "crossmodal"):
        raise ContractError(f"unknown synthetic mode {mode!r}")
    if n_samples < 4 or n_samples % 2 != 0:
        raise ContractError(f"n_samples must be even and >= 4, got {n_samples}")
    rng = _rng(seed)
    labels = np.tile([0, 1], n_samples // 2)
    direction = rng.standard_normal(TEXT_DIM)
    direction /= np.linalg.norm(direction)
    text_codes, visual_codes = _codebook(rng, CROSSMODAL_CODES)
    samples = []
    for i, label in enumerate(labels):
        if mode == "separable":
            n_text = int(rng.integers(3, 5))    # whole-text node + 2..3 tokens
            n_visual = int(rng.integers(3, 5))  # whole-image node + 2..3 objects
        else:
            n_text = n_visual = 2  # global node + the code-carrying node
        noise = SEPARABLE_NOISE if mode == "separable" else CROSSMODAL_NOISE
        text = noise * rng.standard_normal((n_text, TEXT_DIM))
        visual = noise * rng.standard_normal((n_visual, VISUAL_DIM))
        if mode == "separable":
            text[0] += SEPARABLE_AMPLITUDE * (1.0 if label == 1 else -1.0) * direction
        else:
            code = int(rng.integers(CROSSMODAL_CODES))
            sign = 1.0 if rng.random() < 0.5 else -1.0
            text[1] += sign * CROSSMODAL_AMPLITUDE * text_codes[code]
            v_sign = sign if label == 1 else -sign
            visual[1] += v_sign * CROSSMODAL_AMPLITUDE * visual_codes[code]
        samples.append(
            SampleBundle(
                sample_id=f"{mode}-{seed}-{i:05d}",
                label=int(label),
                text_features=text.astype(np.float32),
                visual_features_raw=visual.astype(np.float32),
            )
        )
    return samples


def assign_splits(labels: list[int]) -> list[str]:
    """Stratified 80/10/10 split in generation order; val and test get at
    least one sample per class when possible."""
    labels = np.asarray(labels)
    splits = np.empty(len(labels), dtype=object)
    for cls in (0, 1):
        idx = np.flatnonzero(labels == cls)
        n = len(idx)
        n_val = max(1, round(0.1 * n)) if n >= 3 else 0
        n_test = max(1, round(0.1 * n)) if n >= 3 else 0
        n_train = n - n_val - n_test
        splits[idx[:n_train]] = "train"
        splits[idx[n_train : n_train + n_val]] = "val"
        splits[idx[n_train + n_val :]] = "test"
    return splits.tolist()


def synth_dataset(seed: int, n_samples: int, mode: str, out_dir) -> DatasetManifest:
    """Write a synthetic dataset (bundles + manifest) under ``out_dir`` and
    return the loaded manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    samples = synth_samples(seed, n_samples, mode)
    splits = assign_splits([s.label for s in samples])
    records = []
    for sample, split in zip(samples, splits):
        rel = Path(f"{sample.sample_id}.gmon")
        write_bundle(sample, out_dir / rel)
        records.append(ManifestRecord(sample.sample_id, out_dir / rel, sample.label, split))
    manifest_path = out_dir / "manifest.jsonl"
    write_manifest(manifest_path, records, name=f"synth-{mode}-{seed}", base_dir=out_dir)
    return load_manifest(manifest_path)
