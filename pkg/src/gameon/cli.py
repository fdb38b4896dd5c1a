"""Command-line entry point: train, eval, ablate, gradcheck, params, synth.

Exit codes: 0 success, 1 validation/contract failure, 2 file or format
failure, 3 numeric failure. Machine-readable results go to stdout as
JSON; human logs go to stderr.

Configuration precedence is flag > config file > default. Config files
are key=value lines (``#`` comments allowed) or a JSON object when the
file ends in ``.json``; keys are the ModelConfig and TrainConfig field
names plus the path keys manifest/out/checkpoint. Unknown keys are
rejected.

``GAMEON_THREADS`` caps BLAS parallelism; it must take effect before
numpy loads, so heavy imports happen inside the command handlers.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .config import ModelConfig, TrainConfig, Variant, VARIANT_LABELS
from .errors import (
    ContractError,
    DimensionError,
    FormatError,
    GameOnError,
    NumericError,
    ResolutionError,
    StructuralError,
    ValidationError,
)

PATH_KEYS = ("manifest", "out", "checkpoint")
GRADCHECK_THRESHOLD = 1e-4
GRADCHECK_ENTRIES_PER_TENSOR = 64


def _cap_threads() -> None:
    cap = os.environ.get("GAMEON_THREADS")
    if cap:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
            os.environ.setdefault(var, cap)


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2))


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


# --------------------------------------------------------------------------
# Run configuration

def _parse_scalar(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def read_config_file(path) -> dict:
    path = Path(path)
    raw = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise FormatError(f"config {path}: not valid JSON: {exc}") from exc
        if not isinstance(obj, dict):
            raise ValidationError(f"config {path}: top level must be an object")
        return obj
    values = {}
    for lineno, line in enumerate(raw.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValidationError(f"config {path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key == "betas":
            values[key] = [float(v) for v in value.split(",")]
        else:
            values[key] = _parse_scalar(value)
    return values


def build_run_config(
    config_path, overrides: dict
) -> tuple[ModelConfig, TrainConfig, dict]:
    """Merge defaults, config file, and CLI overrides into validated
    configs plus a path mapping."""
    merged: dict = {}
    if config_path:
        merged.update(read_config_file(config_path))
    merged.update({k: v for k, v in overrides.items() if v is not None})
    paths = {k: merged.pop(k) for k in PATH_KEYS if k in merged}
    model_fields = set(ModelConfig.__dataclass_fields__)
    train_fields = set(TrainConfig.__dataclass_fields__)
    unknown = set(merged) - model_fields - train_fields
    if unknown:
        raise ValidationError(
            f"unknown config keys: {sorted(unknown)}; "
            f"known keys are the model/train fields and {list(PATH_KEYS)}"
        )
    try:
        model_cfg = ModelConfig.from_dict({k: v for k, v in merged.items() if k in model_fields})
        train_cfg = TrainConfig.from_dict({k: v for k, v in merged.items() if k in train_fields})
    except TypeError as exc:
        raise ValidationError(f"bad config value: {exc}") from exc
    return model_cfg, train_cfg, paths


# --------------------------------------------------------------------------
# Commands

def cmd_train(args) -> int:
    from . import data, model, train as tr

    overrides = {"variant": args.variant, "seed": args.seed}
    if args.no_self_loops:
        overrides["self_loops"] = False
    cfg, tc, paths = build_run_config(args.config, overrides)
    manifest_path = args.manifest or paths.get("manifest")
    out_dir = args.out or paths.get("out")
    if not manifest_path:
        raise ValidationError("train needs --manifest (or a manifest= config entry)")
    if not out_dir:
        raise ValidationError("train needs --out (or an out= config entry)")
    manifest = data.load_manifest(manifest_path)
    train_samples = tr.load_split(manifest, "train", cfg)
    val_samples = tr.load_split(manifest, "val", cfg)
    result = tr.train(train_samples, cfg, tc, val_samples or None)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "checkpoint.bin"
    model.save_checkpoint(ckpt, result.best_params, cfg)
    tr.write_history(result.history, out)
    last = result.history.records[-1]
    _log(
        f"trained variant={cfg.variant.value} for {len(result.history.records)} epochs; "
        f"final loss {last.loss:.4f}"
    )
    _emit(
        {
            "checkpoint": str(ckpt),
            "history": str(out / "history.json"),
            "epochs_run": len(result.history.records),
            "final_loss": last.loss,
            "final_train_metrics": last.train_metrics,
            "final_val_metrics": last.val_metrics,
        }
    )
    return 0


def cmd_eval(args) -> int:
    from . import data, model, train as tr

    params, cfg = model.load_checkpoint(args.checkpoint)
    manifest = data.load_manifest(args.manifest)
    samples = tr.load_split(manifest, args.split, cfg)
    if not samples:
        raise ValidationError(f"split {args.split!r} of {args.manifest} is empty")
    metrics = tr.evaluate(params, samples, cfg)
    payload = metrics.to_dict()
    if args.metrics_per_class:
        labels = [s.label for s in samples]
        import numpy as np

        preds, _ = tr.predict_split(samples, params, cfg)
        payload["per_class"] = {
            "real": tr.compute_metrics(preds, np.asarray(labels), positive=0).to_dict(),
            "fake": tr.compute_metrics(preds, np.asarray(labels), positive=1).to_dict(),
        }
    _emit(payload)
    return 0


ABLATION_ORDER = (
    Variant.TEXT_ONLY,
    Variant.VISUAL_ONLY,
    Variant.CONCATENATION,
    Variant.GCN_FUSION,
    Variant.FULL,
)


def cmd_ablate(args) -> int:
    from dataclasses import replace

    from . import data, model, train as tr

    cfg, tc, paths = build_run_config(args.config, {})
    manifest_path = args.manifest or paths.get("manifest")
    out_dir = args.out or paths.get("out")
    if not manifest_path or not out_dir:
        raise ValidationError("ablate needs --manifest and --out")
    manifest = data.load_manifest(manifest_path)
    rows = []
    for variant in ABLATION_ORDER:
        # every variant re-trains from the same seed so differences are
        # architectural, not init luck
        vcfg = replace(cfg, variant=variant)
        train_samples = tr.load_split(manifest, "train", vcfg)
        val_samples = tr.load_split(manifest, "val", vcfg)
        test_samples = tr.load_split(manifest, "test", vcfg)
        if not test_samples:
            raise ValidationError("ablate needs a nonempty test split")
        result = tr.train(train_samples, vcfg, tc, val_samples or None)
        metrics = tr.evaluate(result.best_params, test_samples, vcfg)
        vout = Path(out_dir) / variant.value
        vout.mkdir(parents=True, exist_ok=True)
        model.save_checkpoint(vout / "checkpoint.bin", result.best_params, vcfg)
        tr.write_history(result.history, vout)
        _log(
            f"{VARIANT_LABELS[variant]:>14}: acc {metrics.accuracy:.4f}  f1 {metrics.f1:.4f}"
        )
        rows.append(
            {
                "variant": variant.value,
                "label": VARIANT_LABELS[variant],
                "accuracy": metrics.accuracy,
                "f1": metrics.f1,
            }
        )
    _emit({"rows": rows})
    return 0


def cmd_gradcheck(args) -> int:
    import numpy as np

    from . import graphs, model, tensor as T

    cfg, _tc, _paths = build_run_config(args.config, {})
    rng = np.random.Generator(np.random.Philox(args.seed))
    g_text = graphs.build_unimodal_graph(
        rng.standard_normal((2, cfg.d_in)), graphs.Modality.TEXT, cfg.self_loops
    )
    g_visual = graphs.build_unimodal_graph(
        rng.standard_normal((2, cfg.d_in)), graphs.Modality.VISUAL, cfg.self_loops
    )
    batch = graphs.batch_graphs(
        model.assemble_variant_graphs(g_text, g_visual, cfg.variant, cfg.self_loops)
    )
    labels = np.array([1], dtype=np.int64)
    params = model.ModelParams.initialize(cfg, seed=args.seed).astype(np.float64)

    def loss_fn():
        pred = model.forward(batch, params, cfg, training=False)
        return model.cross_entropy_loss(pred.probs, labels)

    per_tensor = {}
    worst_name, worst = None, -1.0
    for i, (name, tensor) in enumerate(params.items()):
        err = T.grad_check(
            loss_fn,
            [tensor],
            eps=1e-5,
            max_entries_per_tensor=GRADCHECK_ENTRIES_PER_TENSOR,
            rng=np.random.Generator(np.random.Philox([args.seed, i])),
        )
        per_tensor[name] = err
        if err > worst:
            worst_name, worst = name, err
    passed = worst < GRADCHECK_THRESHOLD
    _emit(
        {
            "max_rel_error": worst,
            "worst": worst_name,
            "threshold": GRADCHECK_THRESHOLD,
            "per_tensor": per_tensor,
            "passed": passed,
        }
    )
    if not passed:
        _log(f"gradient check FAILED: {worst_name} has relative error {worst:.3e}")
        return 3
    return 0


def cmd_params(args) -> int:
    from . import model

    cfg, _tc, _paths = build_run_config(args.config, {})
    tensors = [
        {"name": name, "shape": list(shape), "count": int(_prod(shape))}
        for name, shape in model.param_shapes(cfg)
    ]
    _emit({"tensors": tensors, "total": model.count_parameters(cfg)})
    return 0


def _prod(shape) -> int:
    out = 1
    for s in shape:
        out *= int(s)
    return out


def cmd_synth(args) -> int:
    from . import data

    manifest = data.synth_dataset(args.seed, args.n, args.mode, args.out)
    _emit(
        {
            "manifest": str(Path(args.out) / "manifest.jsonl"),
            "n": len(manifest.records),
            "mode": args.mode,
            "splits": {s: len(manifest.split(s)) for s in data.SPLITS},
        }
    )
    return 0


# --------------------------------------------------------------------------
# Parser and dispatch

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gameon", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model on a manifest")
    p.add_argument("--manifest")
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--variant", choices=[v.value for v in Variant])
    p.add_argument("--seed", type=int)
    p.add_argument("--no-self-loops", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--metrics-per-class", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and compare all five variants")
    p.add_argument("--manifest")
    p.add_argument("--config")
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("params", help="list tensors and the trainable total")
    p.add_argument("--config")
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--mode", choices=["separable", "crossmodal"], required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    _cap_threads()
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except (ValidationError, ContractError, DimensionError, StructuralError) as exc:
        _log(f"error: {exc}")
        return 1
    except (FormatError, ResolutionError, OSError) as exc:
        _log(f"error: {exc}")
        return 2
    except NumericError as exc:
        _log(f"numeric error: {exc}")
        return 3
    except GameOnError as exc:  # any future subclass defaults to validation
        _log(f"error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
