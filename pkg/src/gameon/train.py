"""Training and evaluation: Adam with a linearly decaying learning rate,
seeded epoch shuffling, optional gradient accumulation, metric
computation, best-checkpoint tracking, and history emission.

Everything is deterministic given (seed, config, dataset): parameter
init, shuffling, and dropout draw from independent Philox streams derived
from the seed, and all reductions run in a fixed order.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import model as M
from . import tensor as T
from .config import ModelConfig, TrainConfig, Variant
from .data import DatasetManifest, read_bundle
from .errors import ContractError, NumericError
from .graphs import MultimodalGraph, batch_graphs
from .model import ModelParams
from .tensor import Tape, Tensor


# --------------------------------------------------------------------------
# Adam

@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0


def adam_init(params: list[Tensor]) -> AdamState:
    return AdamState(
        m=[np.zeros_like(p.data) for p in params],
        v=[np.zeros_like(p.data) for p in params],
    )


def adam_step(
    params: list[Tensor],
    grads: list[np.ndarray],
    state: AdamState,
    lr: float,
    betas: tuple = (0.9, 0.999),
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> AdamState:
    """Standard bias-corrected Adam update, in place on the parameters."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ContractError("params, grads and optimizer state must have equal lengths")
    b1, b2 = betas
    state.step += 1
    t = state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p.data)
        g = np.asarray(g, dtype=p.data.dtype)
        if g.shape != p.data.shape:
            raise ContractError(f"gradient shape {g.shape} does not match parameter {p.data.shape}")
        if weight_decay:
            g = g + weight_decay * p.data
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.data.dtype)
    return state


def lr_at(step: int, total_steps: int, config: TrainConfig) -> float:
    """Linear decay from lr_init at step 0 to lr_final at the final step."""
    if total_steps < 1:
        raise ContractError(f"total_steps must be >= 1, got {total_steps}")
    if not 0 <= step <= total_steps:
        raise ContractError(f"step {step} outside [0, {total_steps}]")
    return config.lr_init + (config.lr_final - config.lr_init) * (step / total_steps)


# --------------------------------------------------------------------------
# Metrics

@dataclass
class Metrics:
    """Binary classification metrics; precision/recall/F1 are for the fake
    class (label 1) unless stated otherwise."""

    accuracy: float
    precision: float
    recall: float
    f1: float
    confusion: list  # confusion[label][prediction], 2x2

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "confusion": self.confusion,
        }


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def compute_metrics(predictions, labels, positive: int = 1) -> Metrics:
    preds = np.asarray(predictions)
    labs = np.asarray(labels)
    if preds.shape != labs.shape or preds.ndim != 1:
        raise ContractError(f"predictions {preds.shape} and labels {labs.shape} must be equal-length vectors")
    if preds.size == 0:
        raise ContractError("cannot compute metrics over zero samples")
    confusion = np.zeros((2, 2), dtype=np.int64)
    np.add.at(confusion, (labs, preds), 1)
    accuracy = float(np.trace(confusion) / preds.size)
    neg = 1 - positive
    tp = int(confusion[positive, positive])
    fp = int(confusion[neg, positive])
    fn = int(confusion[positive, neg])
    precision, recall, f1 = _prf(tp, fp, fn)
    return Metrics(accuracy, precision, recall, f1, confusion.tolist())


# --------------------------------------------------------------------------
# Dataset loading

@dataclass
class LoadedSample:
    sample_id: str
    label: int
    graphs: list[MultimodalGraph]


def load_split(
    manifest: DatasetManifest, split: str, config: ModelConfig
) -> list[LoadedSample]:
    """Read a split's bundles and pre-build the variant's graphs."""
    samples = []
    for rec in manifest.split(split):
        bundle = read_bundle(rec.path)
        graphs = M.build_sample_graphs(
            bundle.text_features, bundle.visual_features_raw, config.variant, config.self_loops
        )
        samples.append(LoadedSample(rec.sample_id, rec.label, graphs))
    return samples


def _batch(samples: list[LoadedSample]):
    graphs = [g for s in samples for g in s.graphs]
    labels = np.array([s.label for s in samples], dtype=np.int64)
    return batch_graphs(graphs), labels


# --------------------------------------------------------------------------
# History

@dataclass
class EpochRecord:
    epoch: int
    loss: float
    lr: float
    seconds: float
    train_metrics: dict | None = None
    val_metrics: dict | None = None
    val_loss: float | None = None


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(
            {
                "epochs": [
                    {
                        "epoch": r.epoch,
                        "loss": r.loss,
                        "lr": r.lr,
                        "seconds": r.seconds,
                        "train_metrics": r.train_metrics,
                        "val_metrics": r.val_metrics,
                        "val_loss": r.val_loss,
                    }
                    for r in self.records
                ]
            },
            indent=2,
        )

    def to_log(self) -> str:
        lines = ["epoch\tloss\tlr\ttrain_acc\tval_acc\tval_f1\tseconds"]
        for r in self.records:
            t_acc = f"{r.train_metrics['accuracy']:.4f}" if r.train_metrics else "-"
            v_acc = f"{r.val_metrics['accuracy']:.4f}" if r.val_metrics else "-"
            v_f1 = f"{r.val_metrics['f1']:.4f}" if r.val_metrics else "-"
            lines.append(
                f"{r.epoch}\t{r.loss:.6f}\t{r.lr:.3e}\t{t_acc}\t{v_acc}\t{v_f1}\t{r.seconds:.2f}"
            )
        return "\n".join(lines) + "\n"


@dataclass
class TrainResult:
    params: ModelParams       # final parameters
    best_params: ModelParams  # best validation F1 (ties broken by loss), else final
    history: TrainHistory
    config: ModelConfig
    train_config: TrainConfig


# --------------------------------------------------------------------------
# Evaluation

def predict_split(samples, params, config, batch_size=512):
    """Eval-mode predicted labels and mean loss over a sample list."""
    preds = []
    losses = []
    n_total = 0
    for start in range(0, len(samples), batch_size):
        chunk = samples[start : start + batch_size]
        batch, labels = _batch(chunk)
        pred = M.forward(batch, params, config, training=False)
        preds.append(pred.labels())
        losses.append(M.cross_entropy_loss(pred.probs, labels).item() * len(chunk))
        n_total += len(chunk)
    return np.concatenate(preds), float(sum(losses) / n_total)


def evaluate(
    params: ModelParams,
    samples: list[LoadedSample],
    config: ModelConfig,
    batch_size: int = 512,
    positive: int = 1,
) -> Metrics:
    """Dropout-free metrics over a sample list; probability ties predict
    class 0 (real)."""
    if not samples:
        raise ContractError("cannot evaluate an empty split")
    preds, _ = predict_split(samples, params, config, batch_size)
    labels = np.array([s.label for s in samples], dtype=np.int64)
    return compute_metrics(preds, labels, positive=positive)


# --------------------------------------------------------------------------
# Training loop

def train(
    train_samples: list[LoadedSample],
    config: ModelConfig,
    tc: TrainConfig,
    val_samples: list[LoadedSample] | None = None,
) -> TrainResult:
    """Seeded end-to-end training: shuffle each epoch, batch, run
    forward/backward on the tape, and apply Adam with the per-step linear
    schedule."""
    if not train_samples:
        raise ContractError("training split is empty")
    shuffle_seed, dropout_seed = np.random.SeedSequence(tc.seed).spawn(2)
    params = ModelParams.initialize(config, seed=tc.seed)
    rng_shuffle = np.random.Generator(np.random.Philox(shuffle_seed))
    rng_dropout = np.random.Generator(np.random.Philox(dropout_seed))

    plist = params.tensors()
    state = adam_init(plist)
    n = len(train_samples)
    steps_per_epoch = (n + tc.batch_size - 1) // tc.batch_size
    total_steps = tc.epochs * steps_per_epoch
    history = TrainHistory()
    best_params: ModelParams | None = None
    best_key: tuple | None = None
    epochs_since_best = 0
    global_step = 0

    for epoch in range(1, tc.epochs + 1):
        tic = time.perf_counter()
        order = rng_shuffle.permutation(n)
        epoch_loss = 0.0
        epoch_lr = lr_at(global_step, total_steps, tc)
        train_preds = np.empty(n, dtype=np.int64)
        train_labels = np.empty(n, dtype=np.int64)
        for start in range(0, n, tc.batch_size):
            idx = order[start : start + tc.batch_size]
            chunk = [train_samples[i] for i in idx]
            micro = tc.micro_batch_size or len(chunk)
            params.zero_grad()
            batch_loss = 0.0
            for mstart in range(0, len(chunk), micro):
                mchunk = chunk[mstart : mstart + micro]
                batch, labels = _batch(mchunk)
                with Tape() as tape:
                    pred = M.forward(batch, params, config, training=True, rng=rng_dropout)
                    loss = M.cross_entropy_loss(pred.probs, labels)
                    # weight so accumulated grads equal the single-pass batch mean
                    scaled = T.scale(loss, len(mchunk) / len(chunk))
                    tape.backward(scaled)
                batch_loss += loss.item() * len(mchunk) / len(chunk)
                pos = start + mstart
                train_preds[pos : pos + len(mchunk)] = pred.labels()
                train_labels[pos : pos + len(mchunk)] = labels
            if not np.isfinite(batch_loss):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, batch starting at sample {start}"
                )
            lr = lr_at(global_step, total_steps, tc)
            adam_step(plist, [p.grad for p in plist], state, lr, tc.betas, tc.eps_adam, tc.weight_decay)
            global_step += 1
            epoch_loss += batch_loss * len(chunk)
        epoch_loss /= n
        record = EpochRecord(
            epoch=epoch,
            loss=epoch_loss,
            lr=epoch_lr,
            seconds=time.perf_counter() - tic,
            # training-mode predictions collected during the epoch
            train_metrics=compute_metrics(train_preds, train_labels).to_dict(),
        )
        if val_samples and (epoch % tc.eval_every == 0 or epoch == tc.epochs):
            val_pred, val_loss = predict_split(val_samples, params, config, tc.batch_size)
            val_labels = np.array([s.label for s in val_samples], dtype=np.int64)
            val_metrics = compute_metrics(val_pred, val_labels)
            record.val_metrics = val_metrics.to_dict()
            record.val_loss = val_loss
            key = (val_metrics.f1, -val_loss)
            if best_key is None or key > best_key:
                best_key = key
                best_params = params.copy()
                epochs_since_best = 0
            else:
                epochs_since_best += 1
        history.records.append(record)
        if (
            tc.early_stop_patience is not None
            and val_samples
            and epochs_since_best >= tc.early_stop_patience
        ):
            break
    return TrainResult(
        params=params,
        best_params=best_params if best_params is not None else params.copy(),
        history=history,
        config=config,
        train_config=tc,
    )


def write_history(history: TrainHistory, out_dir) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    json_path = out / "history.json"
    log_path = out / "history.log"
    json_path.write_text(history.to_json(), encoding="utf-8")
    log_path.write_text(history.to_log(), encoding="utf-8")
    return json_path, log_path
