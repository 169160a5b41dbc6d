"""Dense tensors with reverse-mode automatic differentiation.

Values are contiguous numpy arrays, float64 by default (float32 selectable
per tensor).  Every primitive validates shapes, raises on non-finite
results, and records its backward rule on the active :class:`Tape`.
Reductions use a fixed left-to-right accumulation order so that repeated
runs are bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

DEFAULT_DTYPE = np.float64
_FLOAT_DTYPES = (np.float32, np.float64)


class NonFiniteError(FloatingPointError):
    """A forward operation produced NaN or Inf."""


def _check_finite(data: np.ndarray, op: str) -> None:
    if not np.isfinite(data).all():
        raise NonFiniteError(f"{op} produced non-finite values")


class Rng:
    """Deterministic random stream: PCG64 seeded with a 64-bit integer.

    The same seed always yields the same stream, bit for bit.
    """

    algorithm = "pcg64"

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, low: float, high: float, shape, dtype=DEFAULT_DTYPE) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape).astype(dtype, copy=False)

    def random(self, shape) -> np.ndarray:
        return self._gen.random(size=shape)

    def integers(self, low: int, high: int) -> int:
        return int(self._gen.integers(low, high))

    def shuffle(self, items: list) -> None:
        self._gen.shuffle(items)

    def child(self, key: int) -> "Rng":
        """Derive an independent stream; (seed, key) fully determines it."""
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(int(key),))
        return Rng(int(ss.generate_state(1, np.uint64)[0]))


class Tensor:
    """An immutable-by-convention dense array participating in autodiff.

    ``data`` is a contiguous numpy array.  Tensors do not store gradients;
    gradients live in the :class:`Tape` that recorded the computation.
    """

    __slots__ = ("data",)

    def __init__(self, data, dtype=None):
        if dtype is None:
            if isinstance(data, np.ndarray) and data.dtype in _FLOAT_DTYPES:
                dtype = data.dtype
            else:
                dtype = DEFAULT_DTYPE
        arr = np.asarray(data, dtype=dtype)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        _check_finite(arr, "tensor creation")
        self.data = arr

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name})"


def zeros(shape, dtype=DEFAULT_DTYPE) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype))


def _make(data: np.ndarray, op: str) -> Tensor:
    """Wrap a freshly computed numpy result, checking finiteness once."""
    _check_finite(data, op)
    t = Tensor.__new__(Tensor)
    t.data = data
    return t


_TAPE_STACK: list["Tape"] = []


def active_tape() -> "Tape | None":
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tape:
    """Ordered record of primitive operations for reverse-mode gradients.

    Use as a context manager around the forward pass; ``backward(loss)``
    replays the record in exact reverse order.  A tensor that lies on no
    path to the loss gets an exactly-zero gradient.
    """

    def __init__(self):
        self._records: list[tuple[str, Tensor, Callable]] = []
        self._grads: dict[int, np.ndarray] = {}
        self.last_backward_ops: list[str] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        if popped is not self:
            raise RuntimeError("tape context exited out of order")
        return False

    @property
    def operations(self) -> list[str]:
        """Names of recorded primitives, in forward order."""
        return [name for name, _, _ in self._records]

    def _record(self, name: str, out: Tensor, backward: Callable) -> None:
        self._records.append((name, out, backward))

    def _accumulate(self, tensor: Tensor, grad: np.ndarray) -> None:
        slot = self._grads.get(id(tensor))
        if slot is None:
            if grad.shape == tensor.shape:
                self._grads[id(tensor)] = grad.copy()
            else:  # broadcastable contribution (e.g. a row summed over rows)
                slot = np.zeros(tensor.shape, dtype=tensor.dtype)
                slot += grad
                self._grads[id(tensor)] = slot
        else:
            slot += grad

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(tensor) for every tensor on the tape."""
        if loss.shape != ():
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        self._grads = {}
        self._grads[id(loss)] = np.ones((), dtype=loss.dtype)
        self.last_backward_ops = []
        for name, out, bw in reversed(self._records):
            g = self._grads.get(id(out))
            if g is None:
                # output does not influence the loss; its inputs get zero
                continue
            self.last_backward_ops.append(name)
            bw(g, self._accumulate)

    def grad(self, tensor: Tensor) -> np.ndarray:
        """Gradient accumulated for ``tensor`` (zeros if off the loss path)."""
        g = self._grads.get(id(tensor))
        if g is None:
            return np.zeros(tensor.shape, dtype=tensor.dtype)
        return g


def _emit(name: str, out: Tensor, backward: Callable) -> Tensor:
    tape = active_tape()
    if tape is not None:
        tape._record(name, out, backward)
    return out


def _require_same_dtype(op: str, *tensors: Tensor) -> None:
    dtypes = {t.dtype for t in tensors}
    if len(dtypes) > 1:
        raise ValueError(f"{op}: mixed dtypes {sorted(d.name for d in dtypes)}")


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two rank-2 tensors."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul needs matrices, got shapes {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    _require_same_dtype("matmul", a, b)
    out = _make(a.data @ b.data, "matmul")

    def bw(g, acc):
        acc(a, g @ b.data.T)
        acc(b, a.data.T @ g)

    return _emit("matmul", out, bw)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; shapes must match exactly."""
    if a.shape != b.shape:
        raise ValueError(f"add shape mismatch: {a.shape} vs {b.shape}")
    _require_same_dtype("add", a, b)
    out = _make(a.data + b.data, "add")

    def bw(g, acc):
        acc(a, g)
        acc(b, g)

    return _emit("add", out, bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; shapes must match exactly."""
    if a.shape != b.shape:
        raise ValueError(f"mul shape mismatch: {a.shape} vs {b.shape}")
    _require_same_dtype("mul", a, b)
    out = _make(a.data * b.data, "mul")

    def bw(g, acc):
        acc(a, g * b.data)
        acc(b, g * a.data)

    return _emit("mul", out, bw)


def _sigmoid_values(x: np.ndarray) -> np.ndarray:
    # exp may overflow to inf for very negative x; 1/(1+inf) is exactly 0,
    # so the result is correct for every finite input
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid_values(x.data)
    out = _make(s, "sigmoid")

    def bw(g, acc):
        acc(x, g * s * (1.0 - s))

    return _emit("sigmoid", out, bw)


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    out = _make(t, "tanh")

    def bw(g, acc):
        acc(x, g * (1.0 - t * t))

    return _emit("tanh", out, bw)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate tensors along ``axis``; other extents must agree."""
    if len(parts) == 0:
        raise ValueError("concat of an empty list")
    _require_same_dtype("concat", *parts)
    ndim = parts[0].data.ndim
    if not 0 <= axis < max(ndim, 1):
        raise ValueError(f"concat axis {axis} out of range for rank {ndim}")
    for p in parts[1:]:
        if p.data.ndim != ndim:
            raise ValueError("concat rank mismatch")
        for d in range(ndim):
            if d != axis and p.shape[d] != parts[0].shape[d]:
                raise ValueError(
                    f"concat extent mismatch on axis {d}: {p.shape} vs {parts[0].shape}"
                )
    out = _make(np.concatenate([p.data for p in parts], axis=axis), "concat")
    offsets = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def bw(g, acc):
        for part, piece in zip(parts, np.split(g, offsets, axis=axis)):
            acc(part, piece)

    return _emit("concat", out, bw)


def sum_vectors(vs: Sequence[Tensor], zero_shape, dtype=DEFAULT_DTYPE) -> Tensor:
    """Left-to-right sum of equally shaped tensors; [] gives the zero tensor."""
    zero_shape = tuple(zero_shape)
    if not vs:
        return zeros(zero_shape, dtype=dtype)
    for v in vs:
        if v.shape != zero_shape:
            raise ValueError(f"sum_vectors shape mismatch: {v.shape} vs {zero_shape}")
    _require_same_dtype("sum_vectors", *vs)
    acc_data = vs[0].data.copy()
    for v in vs[1:]:
        acc_data += v.data
    out = _make(acc_data, "sum_vectors")

    def bw(g, acc):
        for v in vs:
            acc(v, g)

    return _emit("sum_vectors", out, bw)


def _softmax_values(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


def softmax_cross_entropy(logits: Tensor, gold: int) -> tuple[Tensor, np.ndarray]:
    """Stable softmax over a logit vector plus -log p(gold).

    Returns ``(loss, probs)``: a scalar tensor on the tape and the plain
    probability vector (not differentiable through this return).
    """
    if logits.data.ndim != 1:
        raise ValueError(f"softmax_cross_entropy needs a vector, got {logits.shape}")
    n = logits.shape[0]
    if not 0 <= gold < n:
        raise ValueError(f"gold index {gold} out of range for {n} classes")
    z = logits.data - logits.data.max()
    e = np.exp(z)
    denom = e.sum()
    probs = e / denom
    loss_value = np.log(denom) - z[gold]
    out = Tensor(np.asarray(loss_value, dtype=logits.dtype))
    _check_finite(out.data, "softmax_cross_entropy")

    def bw(g, acc):
        d = probs * g
        d[gold] -= g
        acc(logits, d.astype(logits.dtype, copy=False))

    _emit("softmax_cross_entropy", out, bw)
    return out, probs


def dropout(x: Tensor, rate: float, rng: Rng, training: bool) -> Tensor:
    """Inverted dropout: zero with probability ``rate``, scale survivors.

    Identity (and no tape record) when not training or rate is 0.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    keep = rng.random(x.shape) >= rate
    scale_factor = 1.0 / (1.0 - rate)
    mask = keep.astype(x.dtype) * scale_factor
    out = _make(x.data * mask, "dropout")

    def bw(g, acc):
        acc(x, g * mask)

    return _emit("dropout", out, bw)


def gather_rows(x: Tensor, indices) -> Tensor:
    """Select rows of a matrix; backward scatter-adds into the source."""
    if x.data.ndim != 2:
        raise ValueError(f"gather_rows needs a matrix, got shape {x.shape}")
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise ValueError("gather_rows indices must be one-dimensional")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise ValueError(f"gather_rows index out of range for {x.shape[0]} rows")
    out = _make(x.data[idx], "gather_rows")

    def bw(g, acc):
        gx = np.zeros(x.shape, dtype=x.dtype)
        np.add.at(gx, idx, g)
        acc(x, gx)

    return _emit("gather_rows", out, bw)


def segment_sum(x: Tensor, segment_ids, num_segments: int) -> Tensor:
    """Sum rows into segments, accumulating in row order; empty segments are zero."""
    if x.data.ndim != 2:
        raise ValueError(f"segment_sum needs a matrix, got shape {x.shape}")
    ids = np.asarray(segment_ids, dtype=np.intp)
    if ids.shape != (x.shape[0],):
        raise ValueError("segment_sum needs one segment id per row")
    if ids.size and (ids.min() < 0 or ids.max() >= num_segments):
        raise ValueError(f"segment id out of range for {num_segments} segments")
    out_data = np.zeros((num_segments, x.shape[1]), dtype=x.dtype)
    np.add.at(out_data, ids, x.data)
    out = _make(out_data, "segment_sum")

    def bw(g, acc):
        acc(x, g[ids])

    return _emit("segment_sum", out, bw)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a length-d bias vector to every row of an (n, d) matrix."""
    if x.data.ndim != 2 or b.data.ndim != 1 or x.shape[1] != b.shape[0]:
        raise ValueError(f"add_bias shape mismatch: {x.shape} + {b.shape}")
    _require_same_dtype("add_bias", x, b)
    out = _make(x.data + b.data, "add_bias")

    def bw(g, acc):
        acc(x, g)
        acc(b, g.sum(axis=0))

    return _emit("add_bias", out, bw)


def sum_rows(x: Tensor) -> Tensor:
    """Sum an (n, d) matrix over rows into a (1, d) matrix."""
    if x.data.ndim != 2:
        raise ValueError(f"sum_rows needs a matrix, got shape {x.shape}")
    out = _make(x.data.sum(axis=0, keepdims=True), "sum_rows")

    def bw(g, acc):
        acc(x, g)  # broadcasts over rows

    return _emit("sum_rows", out, bw)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out = _make(x.data.reshape(shape), "reshape")

    def bw(g, acc):
        acc(x, g.reshape(x.shape))

    return _emit("reshape", out, bw)


def transpose(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise ValueError(f"transpose needs a matrix, got shape {x.shape}")
    out = _make(np.ascontiguousarray(x.data.T), "transpose")

    def bw(g, acc):
        acc(x, g.T)

    return _emit("transpose", out, bw)


def scale(x: Tensor, alpha: float) -> Tensor:
    """Multiply by a Python scalar constant (not differentiated w.r.t. alpha)."""
    out = _make(x.data * alpha, "scale")

    def bw(g, acc):
        acc(x, g * alpha)

    return _emit("scale", out, bw)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    """Columns [start, stop) of a matrix; backward pads with zeros."""
    if x.data.ndim != 2:
        raise ValueError(f"slice_cols needs a matrix, got shape {x.shape}")
    if not 0 <= start < stop <= x.shape[1]:
        raise ValueError(f"slice [{start}, {stop}) out of range for {x.shape}")
    out = _make(np.ascontiguousarray(x.data[:, start:stop]), "slice_cols")

    def bw(g, acc):
        gx = np.zeros(x.shape, dtype=x.dtype)
        gx[:, start:stop] = g
        acc(x, gx)

    return _emit("slice_cols", out, bw)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    """Outcome of comparing analytic gradients to central finite differences."""

    max_rel_error: float
    worst_param: str
    worst_index: int
    per_param: dict[str, float] = field(default_factory=dict)
    tolerance: float = 1e-4
    step: float = 1e-5

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        lines = [
            f"grad check {status}: max rel error {self.max_rel_error:.3e} "
            f"(tolerance {self.tolerance:.1e}, step {self.step:.1e}) "
            f"at {self.worst_param}[{self.worst_index}]"
        ]
        for name, err in self.per_param.items():
            lines.append(f"  {name:<24s} {err:.3e}")
        return "\n".join(lines)


def grad_check(
    f: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    step: float = 1e-5,
    tolerance: float = 1e-4,
    rel_floor: float = 1e-6,
) -> GradCheckReport:
    """Compare tape gradients of ``f()`` against central finite differences.

    ``f`` must rebuild the scalar loss from the current parameter values on
    each call and be deterministic (fix any dropout rng inside it).  All
    parameters must be float64; relative error per coordinate is
    |a - n| / max(|a|, |n|, rel_floor).
    """
    for name, p in params.items():
        if p.dtype != np.float64:
            raise ValueError(f"grad_check requires float64 parameters ({name} is {p.dtype})")
    with Tape() as tape:
        loss = f()
    if not isinstance(loss, Tensor) or loss.shape != ():
        raise ValueError("grad_check objective must return a scalar Tensor")
    tape.backward(loss)
    analytic = {name: tape.grad(p).copy() for name, p in params.items()}

    max_err = 0.0
    worst = ("", -1)
    per_param: dict[str, float] = {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        a_flat = analytic[name].reshape(-1)
        param_err = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = float(f().data)
            flat[i] = orig - step
            down = float(f().data)
            flat[i] = orig
            numeric = (up - down) / (2.0 * step)
            err = abs(a_flat[i] - numeric) / max(abs(a_flat[i]), abs(numeric), rel_floor)
            if err > param_err:
                param_err = err
            if err > max_err:
                max_err = err
                worst = (name, i)
        per_param[name] = param_err
    return GradCheckReport(
        max_rel_error=max_err,
        worst_param=worst[0],
        worst_index=worst[1],
        per_param=per_param,
        tolerance=tolerance,
        step=step,
    )
