"""gameon-extract: convert raw (text, image) samples into feature bundles.

Example:
    gameon-extract --raw-manifest raw.csv --out data/twitter \
        --backend pretrained --text-model bert-base-uncased
"""
from __future__ import annotations

import argparse
import json
import sys

from .encoders import (
    DEFAULT_CONFIDENCE,
    DEFAULT_MAX_OBJECTS,
    DEFAULT_MAX_TOKENS,
    EncoderError,
    make_encoders,
)
from .pipeline import build_dataset, read_raw_manifest


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="gameon-extract", description=__doc__)
    ap.add_argument("--raw-manifest", required=True, help="CSV or JSON-lines raw sample list")
    ap.add_argument("--out", required=True, help="output directory for bundles + manifest")
    ap.add_argument("--backend", choices=["pretrained", "hashed"], default="pretrained")
    ap.add_argument("--text-model", default="bert-base-uncased")
    ap.add_argument("--max-tokens", type=int, default=DEFAULT_MAX_TOKENS)
    ap.add_argument("--max-objects", type=int, default=DEFAULT_MAX_OBJECTS)
    ap.add_argument("--confidence", type=float, default=DEFAULT_CONFIDENCE)
    ap.add_argument("--dataset-name", default="extracted")
    args = ap.parse_args(argv)

    try:
        samples = read_raw_manifest(args.raw_manifest)
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        text_enc, visual_enc = make_encoders(
            args.backend,
            text_model=args.text_model,
            max_tokens=args.max_tokens,
            max_objects=args.max_objects,
            confidence=args.confidence,
        )
    except EncoderError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    report = build_dataset(
        samples, args.out, text_enc, visual_enc, dataset_name=args.dataset_name
    )
    print(
        json.dumps(
            {
                "manifest": str(report.manifest_path),
                "written": len(report.written),
                "skipped": [{"id": sid, "reason": why} for sid, why in report.skipped],
                "backend": args.backend,
                "settings": {
                    "max_tokens": args.max_tokens,
                    "max_objects": args.max_objects,
                    "confidence": args.confidence,
                },
            },
            indent=2,
        )
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
