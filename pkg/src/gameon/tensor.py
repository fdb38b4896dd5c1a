"""Dense tensors with a recording tape for reverse-mode differentiation.

This is deliberately small: rank-0/1/2 arrays in float32 (training) or
float64 (gradient checking), the fixed set of operations the fusion model
needs, hand-written backward rules, and a central-difference checker.
Arrays never exceed rank 2; there is no broadcasting beyond the few
explicit forms below (row bias, row scaling).

Recording model: ops record onto the innermost active ``Tape`` whenever
any input requires a gradient. Records are appended in creation order,
which is already a topological order, so one reverse sweep suffices.
A tape is confined to one thread; independent tapes may run concurrently.
"""
from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericError, StructuralError

FLOAT_DTYPES = (np.float32, np.float64)


def _as_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data)
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    elif arr.dtype not in FLOAT_DTYPES:
        arr = arr.astype(np.float32)
    if arr.ndim > 2:
        raise DimensionError(f"rank-{arr.ndim} tensors are not supported (shape {arr.shape})")
    return arr


class Tensor:
    """Contiguous row-major float array plus an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.ascontiguousarray(_as_array(data, dtype))
        assert np.isfinite(self.data).all(), "non-finite values in tensor"
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=self.requires_grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


# --------------------------------------------------------------------------
# Tape

_STACK = threading.local()


def _tape_stack() -> list:
    stack = getattr(_STACK, "tapes", None)
    if stack is None:
        stack = _STACK.tapes = []
    return stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of operations; record order is topological order."""

    def __init__(self):
        self._records: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> bool:
        popped = _tape_stack().pop()
        assert popped is self, "tapes must be exited in LIFO order"
        return False

    def __len__(self) -> int:
        return len(self._records)

    def backward(self, loss: Tensor) -> None:
        """Populate .grad for every requires_grad tensor reachable from
        ``loss``. Gradients accumulate additively across fan-out."""
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not np.isfinite(loss.data).all():
            raise NumericError("loss is not finite")
        loss.grad = np.ones_like(loss.data)
        for out, backward_fn in reversed(self._records):
            if out.grad is not None:
                backward_fn(out.grad)


def backward(tape: Tape, loss: Tensor) -> None:
    tape.backward(loss)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    t.grad = g.copy() if t.grad is None else t.grad + g


def _emit(inputs: Sequence[Tensor], out_data: np.ndarray, backward_fn) -> Tensor:
    tape = active_tape()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=track)
    if track:
        tape._records.append((out, backward_fn))
    return out


def _check_dtype(*tensors: Tensor) -> None:
    dtypes = {t.data.dtype for t in tensors}
    if len(dtypes) > 1:
        raise ContractError(f"mixed dtypes in one op: {sorted(str(d) for d in dtypes)}")


# --------------------------------------------------------------------------
# Linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; also accepts a rank-1 right operand (matrix-vector)."""
    _check_dtype(a, b)
    ad, bd = a.data, b.data
    if ad.ndim != 2 or bd.ndim not in (1, 2) or ad.shape[1] != bd.shape[0]:
        raise DimensionError(f"matmul shapes do not chain: {ad.shape} x {bd.shape}")
    out = ad @ bd

    def bwd(g):
        if bd.ndim == 1:
            _accumulate(a, np.outer(g, bd))
            _accumulate(b, ad.T @ g)
        else:
            _accumulate(a, g @ bd.T)
            _accumulate(b, ad.T @ g)

    return _emit((a, b), out, bwd)


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_dtype(a, b)
    if a.shape != b.shape:
        raise DimensionError(f"add shapes differ: {a.shape} vs {b.shape}")

    def bwd(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return _emit((a, b), a.data + b.data, bwd)


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Add a length-d bias vector to every row of an (n, d) matrix."""
    _check_dtype(x, bias)
    if x.data.ndim != 2 or bias.data.ndim != 1 or x.shape[1] != bias.shape[0]:
        raise DimensionError(f"add_bias shapes do not match: {x.shape} + {bias.shape}")

    def bwd(g):
        _accumulate(x, g)
        _accumulate(bias, g.sum(axis=0))

    return _emit((x, bias), x.data + bias.data, bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_dtype(a, b)
    if a.shape != b.shape:
        raise DimensionError(f"mul shapes differ: {a.shape} vs {b.shape}")

    def bwd(g):
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    return _emit((a, b), a.data * b.data, bwd)


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)

    def bwd(g):
        _accumulate(x, g * np.asarray(c, dtype=x.data.dtype))

    return _emit((x,), x.data * x.data.dtype.type(c), bwd)


def scale_rows(x: Tensor, s: Tensor) -> Tensor:
    """Multiply row i of an (n, d) matrix by scalar s[i]."""
    _check_dtype(x, s)
    if x.data.ndim != 2 or s.data.ndim != 1 or x.shape[0] != s.shape[0]:
        raise DimensionError(f"scale_rows shapes do not match: {x.shape} * {s.shape}")
    col = s.data[:, None]

    def bwd(g):
        _accumulate(x, g * col)
        _accumulate(s, (g * x.data).sum(axis=1))

    return _emit((x, s), x.data * col, bwd)


def reshape(x: Tensor, shape: tuple) -> Tensor:
    out = x.data.reshape(shape)
    if out.ndim > 2:
        raise DimensionError(f"reshape to rank {out.ndim} is not supported")

    def bwd(g):
        _accumulate(x, g.reshape(x.data.shape))

    return _emit((x,), out, bwd)


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate two (n, *) matrices along columns."""
    _check_dtype(a, b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[0] != b.shape[0]:
        raise DimensionError(f"concat_cols shapes do not match: {a.shape} | {b.shape}")
    da = a.shape[1]

    def bwd(g):
        _accumulate(a, g[:, :da])
        _accumulate(b, g[:, da:])

    return _emit((a, b), np.concatenate([a.data, b.data], axis=1), bwd)


def slice_vec(x: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous slice of a rank-1 tensor."""
    if x.data.ndim != 1:
        raise DimensionError(f"slice_vec needs a rank-1 tensor, got shape {x.shape}")
    if not 0 <= start <= stop <= x.shape[0]:
        raise ContractError(f"slice [{start}:{stop}] out of range for length {x.shape[0]}")

    def bwd(g):
        full = np.zeros_like(x.data)
        full[start:stop] = g
        _accumulate(x, full)

    return _emit((x,), x.data[start:stop].copy(), bwd)


def gather_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """Select rows (rank 2) or elements (rank 1) by integer index, with
    repetition; backward scatter-adds."""
    idx = np.asarray(index)
    n = x.shape[0]
    if idx.ndim != 1 or not np.issubdtype(idx.dtype, np.integer):
        raise ContractError("gather index must be a rank-1 integer array")
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise DimensionError(f"gather index out of range for {n} rows")

    def bwd(g):
        if x.requires_grad:
            dx = np.zeros_like(x.data)
            np.add.at(dx, idx, g)
            _accumulate(x, dx)

    return _emit((x,), x.data[idx], bwd)


def pick_per_row(x: Tensor, cols: np.ndarray) -> Tensor:
    """out[i] = x[i, cols[i]] for an (n, d) matrix."""
    cols = np.asarray(cols)
    if x.data.ndim != 2 or cols.shape != (x.shape[0],):
        raise DimensionError(f"pick_per_row needs (n, d) x and (n,) cols, got {x.shape}, {cols.shape}")
    if cols.size and (cols.min() < 0 or cols.max() >= x.shape[1]):
        raise DimensionError(f"column index out of range for width {x.shape[1]}")
    rows = np.arange(x.shape[0])

    def bwd(g):
        if x.requires_grad:
            dx = np.zeros_like(x.data)
            np.add.at(dx, (rows, cols), g)
            _accumulate(x, dx)

    return _emit((x,), x.data[rows, cols], bwd)


def sum_all(x: Tensor) -> Tensor:
    def bwd(g):
        _accumulate(x, np.full_like(x.data, g.reshape(())))

    return _emit((x,), np.asarray(x.data.sum(), dtype=x.data.dtype), bwd)


# --------------------------------------------------------------------------
# Nonlinearities

def elu(x: Tensor, alpha: float = 1.0) -> Tensor:
    xd = x.data
    neg = alpha * np.expm1(np.minimum(xd, 0))  # clip so the dead branch cannot overflow
    out = np.where(xd > 0, xd, neg)

    def bwd(g):
        _accumulate(x, np.where(xd > 0, g, g * (neg + alpha)))

    return _emit((x,), out, bwd)


def leaky_relu(x: Tensor, slope: float) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise ContractError(f"leaky_relu slope must be in (0, 1), got {slope}")
    xd = x.data
    out = np.where(xd >= 0, xd, xd.dtype.type(slope) * xd)

    def bwd(g):
        _accumulate(x, np.where(xd >= 0, g, g * xd.dtype.type(slope)))

    return _emit((x,), out, bwd)


def relu(x: Tensor) -> Tensor:
    xd = x.data

    def bwd(g):
        _accumulate(x, g * (xd > 0))

    return _emit((x,), np.maximum(xd, 0), bwd)


def log(x: Tensor) -> Tensor:
    def bwd(g):
        _accumulate(x, g / x.data)

    return _emit((x,), np.log(x.data), bwd)


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; gradient is zero outside the open interval."""
    xd = x.data
    passthrough = (xd > lo) & (xd < hi)

    def bwd(g):
        _accumulate(x, g * passthrough)

    return _emit((x,), np.clip(xd, lo, hi), bwd)


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax of an (n, d) matrix, max-subtracted for stability."""
    if x.data.ndim != 2:
        raise DimensionError(f"softmax_rows needs rank 2, got shape {x.shape}")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    y = ex / ex.sum(axis=1, keepdims=True)

    def bwd(g):
        dot = (g * y).sum(axis=1, keepdims=True)
        _accumulate(x, (g - dot) * y)

    return _emit((x,), y, bwd)


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: zero with probability ``rate`` and scale survivors
    by 1/(1-rate). Identity (the same tensor, bit-exact) when not training
    or when rate is zero."""
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ContractError("training-mode dropout needs a seeded generator")
    keep = rng.random(x.data.shape) >= rate
    mask = keep.astype(x.data.dtype) / x.data.dtype.type(1.0 - rate)

    def bwd(g):
        _accumulate(x, g * mask)

    return _emit((x,), x.data * mask, bwd)


# --------------------------------------------------------------------------
# Segment (per-destination / per-graph) reductions

def _segment_ids(segment_of, n_segments: int, length: int) -> np.ndarray:
    seg = np.asarray(segment_of)
    if seg.shape != (length,) or not np.issubdtype(seg.dtype, np.integer):
        raise ContractError(f"segment ids must be {length} integers, got shape {seg.shape}")
    if seg.size and (seg.min() < 0 or seg.max() >= n_segments):
        raise DimensionError(f"segment id out of range for {n_segments} segments")
    return seg


def _unsafe_segment_sum(x: np.ndarray, seg: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros((n,) + x.shape[1:], dtype=x.dtype)
    np.add.at(out, seg, x)
    return out


def segment_sum(x: Tensor, segment_of, n_segments: int) -> Tensor:
    """Sum rows (or elements) sharing a segment id into one row per segment."""
    seg = _segment_ids(segment_of, n_segments, x.shape[0])

    def bwd(g):
        _accumulate(x, g[seg])

    return _emit((x,), _unsafe_segment_sum(x.data, seg, n_segments), bwd)


def segment_mean(x: Tensor, segment_of, n_segments: int) -> Tensor:
    """Per-segment arithmetic mean; every segment must be non-empty.
    Accumulation runs in ascending row order."""
    seg = _segment_ids(segment_of, n_segments, x.shape[0])
    counts = np.bincount(seg, minlength=n_segments)
    if (counts == 0).any():
        empty = int(np.flatnonzero(counts == 0)[0])
        raise StructuralError(f"segment {empty} is empty; cannot take its mean")
    inv = (1.0 / counts).astype(x.data.dtype)
    out = _unsafe_segment_sum(x.data, seg, n_segments)
    out = out * inv[:, None] if out.ndim == 2 else out * inv

    def bwd(g):
        scaled = g * inv[:, None] if g.ndim == 2 else g * inv
        _accumulate(x, scaled[seg])

    return _emit((x,), out, bwd)


def segment_softmax(scores: Tensor, segment_of, n_segments: int) -> Tensor:
    """Softmax computed independently within each segment of a rank-1 score
    vector, max-subtracted per segment. Each segment must be non-empty."""
    if scores.data.ndim != 1:
        raise DimensionError(f"segment_softmax needs rank-1 scores, got shape {scores.shape}")
    seg = _segment_ids(segment_of, n_segments, scores.shape[0])
    counts = np.bincount(seg, minlength=n_segments)
    if (counts == 0).any():
        empty = int(np.flatnonzero(counts == 0)[0])
        raise StructuralError(
            f"segment {empty} has no entries; a node with no incoming edges cannot be attended"
        )
    seg_max = np.full(n_segments, -np.inf, dtype=scores.data.dtype)
    np.maximum.at(seg_max, seg, scores.data)
    ex = np.exp(scores.data - seg_max[seg])
    denom = _unsafe_segment_sum(ex, seg, n_segments)
    y = ex / denom[seg]

    def bwd(g):
        weighted = _unsafe_segment_sum(g * y, seg, n_segments)
        _accumulate(scores, y * (g - weighted[seg]))

    return _emit((scores,), y, bwd)


# --------------------------------------------------------------------------
# Gradient checking

def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
    max_entries_per_tensor: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Compare tape gradients of the scalar ``f()`` against central finite
    differences over the entries of ``params``.

    ``f`` must be deterministic (dropout off, fixed inputs) and is
    re-evaluated with entries of ``params`` perturbed in place. Requires
    float64 parameters. Returns the maximum relative error
    |analytic - numeric| / max(1, |analytic|, |numeric|) over the checked
    entries; ``max_entries_per_tensor`` subsamples large tensors.
    """
    params = list(params)
    for p in params:
        if p.data.dtype != np.float64:
            raise ContractError("grad_check requires float64 parameters")

    def run() -> float:
        out = f()
        if out.data.size != 1:
            raise ContractError("grad_check needs a scalar-valued f")
        val = float(out.data.reshape(()))
        if not np.isfinite(val):
            raise NumericError("non-finite value during gradient check")
        return val

    for p in params:
        p.grad = None
    with Tape() as tape:
        out = f()
        tape.backward(out)
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]

    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        a_flat = a.reshape(-1)
        if max_entries_per_tensor is not None and flat.size > max_entries_per_tensor:
            gen = rng if rng is not None else np.random.default_rng(0)
            entries = gen.choice(flat.size, size=max_entries_per_tensor, replace=False)
        else:
            entries = np.arange(flat.size)
        for i in entries:
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = run()
            flat[i] = orig - eps
            f_minus = run()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            err = abs(float(a_flat[i]) - numeric) / max(1.0, abs(float(a_flat[i])), abs(numeric))
            worst = max(worst, err)
    return worst
