#!/usr/bin/env python3
"""Train the full model on the 32-sample separable dataset until it
memorizes it, then report train accuracy and loss. A quick end-to-end
sanity check of the whole stack (graph construction, attention, autodiff,
Adam, scheduling).

Usage: python scripts/overfit_oracle.py [--epochs 300] [--seed 7]
"""
import argparse
import json
import sys
import tempfile
from pathlib import Path

from gameon import data as D
from gameon import train as TR
from gameon.config import ModelConfig, TrainConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--epochs", type=int, default=300)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()

    cfg = ModelConfig()
    tc = TrainConfig(epochs=args.epochs, seed=args.seed, eval_every=50)
    with tempfile.TemporaryDirectory() as tmp:
        manifest = D.synth_dataset(args.seed, 32, "separable", Path(tmp))
        train_samples = TR.load_split(manifest, "train", cfg)
        val_samples = TR.load_split(manifest, "val", cfg)
        result = TR.train(train_samples, cfg, tc, val_samples)
        metrics = TR.evaluate(result.params, train_samples, cfg)
        _, loss = TR.predict_split(train_samples, result.params, cfg)
    for record in result.history.records[::50]:
        print(
            f"epoch {record.epoch:4d}  loss {record.loss:.5f}  lr {record.lr:.2e}",
            file=sys.stderr,
        )
    print(json.dumps({"train_accuracy": metrics.accuracy, "train_loss": loss}, indent=2))


if __name__ == "__main__":
    main()
