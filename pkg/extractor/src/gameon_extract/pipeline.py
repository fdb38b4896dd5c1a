"""Raw-manifest reading and the sample-to-bundle conversion loop.

A raw manifest is a CSV file (with a header) or JSON-lines file whose
records carry id, text, image_path, label, split. Unreadable samples are
skipped and logged, never aborting the batch.
"""
from __future__ import annotations

import csv
import json
import sys
from dataclasses import dataclass
from pathlib import Path

from .bundles import write_bundle, write_manifest
from .encoders import EncoderError

RAW_KEYS = {"id", "text", "image_path", "label", "split"}


@dataclass
class RawSample:
    sample_id: str
    text: str
    image_path: Path
    label: int
    split: str


def read_raw_manifest(path) -> list[RawSample]:
    path = Path(path)
    rows: list[dict] = []
    if path.suffix == ".csv":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
    else:
        for line in path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                rows.append(json.loads(line))
    samples = []
    for i, row in enumerate(rows):
        missing = RAW_KEYS - set(row)
        if missing:
            raise ValueError(f"{path} record {i}: missing keys {sorted(missing)}")
        image_path = Path(row["image_path"])
        if not image_path.is_absolute():
            image_path = path.parent / image_path
        samples.append(
            RawSample(
                sample_id=str(row["id"]),
                text=row["text"],
                image_path=image_path,
                label=int(row["label"]),
                split=row["split"],
            )
        )
    return samples


@dataclass
class ExtractionReport:
    written: list[str]
    skipped: list[tuple[str, str]]  # (sample_id, reason)
    manifest_path: Path


def build_dataset(
    raw_samples: list[RawSample],
    out_dir,
    text_encoder,
    visual_encoder,
    dataset_name: str = "extracted",
    log=sys.stderr,
) -> ExtractionReport:
    """Encode every sample into a bundle file plus one manifest. Failures
    skip the sample with a logged reason."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records, written, skipped = [], [], []
    for sample in raw_samples:
        try:
            text = text_encoder.encode(sample.text)
            visual = visual_encoder.encode(sample.image_path)
            rel = f"{sample.sample_id}.gmon"
            write_bundle(out_dir / rel, sample.sample_id, sample.label, text, visual)
        except (EncoderError, OSError, ValueError) as exc:
            skipped.append((sample.sample_id, str(exc)))
            print(f"skip {sample.sample_id}: {exc}", file=log)
            continue
        written.append(sample.sample_id)
        records.append(
            {"id": sample.sample_id, "path": rel, "label": sample.label, "split": sample.split}
        )
    manifest_path = out_dir / "manifest.jsonl"
    write_manifest(manifest_path, records, dataset_name)
    return ExtractionReport(written, skipped, manifest_path)
