"""Dense float64 tensors with tape-based reverse-mode differentiation.

A Tape records every primitive applied to tracked tensors, in execution
order, which is automatically a topological order of the computation
graph.  `Tape.backward` (or `forward_backward`) seeds d(loss)/d(loss) = 1
and replays the records once, in reverse, accumulating adjoints into
`Tensor.grad`.

The primitive set is exactly what the models in this package need: matmul
(including batched with a constant left factor for graph filters),
broadcast add/sub/mul, PReLU, concatenate, slicing, reshape, scalar
scaling, and sum/mean reductions.  Everything is float64; there is no
device or dtype story.
"""

from __future__ import annotations

import numpy as np

__all__ = ["Tensor", "Tape", "forward_backward", "prelu", "concat", "matmul_const"]


class Tape:
    """Execution-ordered record of primitives; reusable as a context manager."""

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], object]] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        popped = _TAPE_STACK.pop()
        assert popped is self
        return False

    def record(self, out: "Tensor", parents: tuple["Tensor", ...], backward) -> None:
        pos = len(self._records)
        for p in parents:
            if p._tape is self and p._pos >= pos:
                raise RuntimeError("cycle detected: input recorded after its consumer")
        out._tape = self
        out._pos = pos
        self._records.append((out, parents, backward))

    def __len__(self) -> int:
        return len(self._records)

    def backward(self, loss: "Tensor") -> None:
        """Reverse sweep from a scalar loss; visits each record exactly once."""
        if loss.data.size != 1:
            raise ValueError("backward requires a scalar loss")
        if loss._tape is not self:
            raise ValueError("loss was not recorded on this tape")
        loss.grad = np.ones_like(loss.data)
        for out, parents, backward in reversed(self._records):
            if out.grad is None:
                continue
            backward(out.grad, parents)


_TAPE_STACK: list[Tape] = []


def _current_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tensor:
    """float64 array plus gradient slot; ops record onto the active tape."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_tracked", "_tape", "_pos")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._tracked = requires_grad
        self._tape: Tape | None = None
        self._pos = -1

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        tag = f" '{self.name}'" if self.name else ""
        return f"Tensor{tag}(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g)
        else:
            self.grad += g

    # -- operator sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None):
        return tensor_sum(self, axis)

    def mean(self, axis=None):
        return tensor_mean(self, axis)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(out_data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(out_data)
    tape = _current_tape()
    tracked = any(p._tracked for p in parents)
    out._tracked = tracked
    if tape is not None and tracked:
        tape.record(out, parents, backward)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to `shape` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- primitives ---------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def backward(g, parents):
        pa, pb = parents
        if pa._tracked:
            pa._accumulate(_unbroadcast(g, pa.data.shape))
        if pb._tracked:
            pb._accumulate(_unbroadcast(g, pb.data.shape))

    return _make(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def backward(g, parents):
        pa, pb = parents
        if pa._tracked:
            pa._accumulate(_unbroadcast(g, pa.data.shape))
        if pb._tracked:
            pb._accumulate(_unbroadcast(-g, pb.data.shape))

    return _make(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    a_data, b_data = a.data, b.data

    def backward(g, parents):
        pa, pb = parents
        if pa._tracked:
            pa._accumulate(_unbroadcast(g * b_data, pa.data.shape))
        if pb._tracked:
            pb._accumulate(_unbroadcast(g * a_data, pb.data.shape))

    return _make(a_data * b_data, (a, b), backward)


def scale(a, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)

    def backward(g, parents):
        (pa,) = parents
        if pa._tracked:
            pa._accumulate(c * g)

    return _make(c * a.data, (a,), backward)


def matmul(a, b) -> Tensor:
    """Matrix product with numpy batching rules on the leading axes."""
    a, b = _as_tensor(a), _as_tensor(b)
    a_data, b_data = a.data, b.data
    if a_data.ndim < 2 or b_data.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")

    def backward(g, parents):
        pa, pb = parents
        if pa._tracked:
            ga = np.matmul(g, np.swapaxes(b_data, -1, -2))
            pa._accumulate(_unbroadcast(ga, pa.data.shape))
        if pb._tracked:
            gb = np.matmul(np.swapaxes(a_data, -1, -2), g)
            pb._accumulate(_unbroadcast(gb, pb.data.shape))

    return _make(np.matmul(a_data, b_data), (a, b), backward)


def matmul_const(mat: np.ndarray, x: Tensor) -> Tensor:
    """mat @ x with a constant (non-differentiated) left factor.

    `mat` may be (m, m) or batched (B, m, m) against x of shape
    (..., m, d); used for applying graph filter matrices to features.
    """
    mat = np.asarray(mat, dtype=np.float64)
    x = _as_tensor(x)
    mat_t = np.swapaxes(mat, -1, -2)

    def backward(g, parents):
        (px,) = parents
        if px._tracked:
            px._accumulate(_unbroadcast(np.matmul(mat_t, g), px.data.shape))

    return _make(np.matmul(mat, x.data), (x,), backward)


def prelu(x, slope) -> Tensor:
    """Elementwise x if x >= 0 else slope * x; slope is learnable.

    The kink at 0 belongs to the positive branch (derivative 1 there).
    """
    x, slope = _as_tensor(x), _as_tensor(slope)
    if slope.data.size != 1:
        raise ValueError("prelu slope must be a scalar tensor")
    pos = x.data >= 0
    s = float(slope.data)
    out_data = np.where(pos, x.data, s * x.data)
    x_data = x.data

    def backward(g, parents):
        px, pslope = parents
        if px._tracked:
            px._accumulate(np.where(pos, g, s * g))
        if pslope._tracked:
            gs = np.where(pos, 0.0, x_data * g).sum()
            pslope._accumulate(np.asarray(gs).reshape(pslope.data.shape))

    return _make(out_data, (x, slope), backward)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = tuple(_as_tensor(t) for t in tensors)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g, parents):
        pieces = np.split(g, splits, axis=axis)
        for p, piece in zip(parents, pieces):
            if p._tracked:
                p._accumulate(piece)

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def take(x, key) -> Tensor:
    """Basic slicing / integer-array gather."""
    x = _as_tensor(x)
    x_shape = x.data.shape

    def backward(g, parents):
        (px,) = parents
        if px._tracked:
            full = np.zeros(x_shape)
            np.add.at(full, key, g)
            px._accumulate(full)

    return _make(x.data[key], (x,), backward)


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    old = x.data.shape

    def backward(g, parents):
        (px,) = parents
        if px._tracked:
            px._accumulate(g.reshape(old))

    return _make(x.data.reshape(shape), (x,), backward)


def transpose(x, axes) -> Tensor:
    x = _as_tensor(x)
    inverse = np.argsort(axes)

    def backward(g, parents):
        (px,) = parents
        if px._tracked:
            px._accumulate(g.transpose(inverse))

    return _make(x.data.transpose(axes), (x,), backward)


def tensor_sum(x, axis=None) -> Tensor:
    x = _as_tensor(x)
    x_shape = x.data.shape

    def backward(g, parents):
        (px,) = parents
        if not px._tracked:
            return
        if axis is None:
            px._accumulate(np.broadcast_to(g, x_shape).copy())
        else:
            px._accumulate(np.broadcast_to(np.expand_dims(g, axis), x_shape).copy())

    return _make(x.data.sum(axis=axis), (x,), backward)


def tensor_mean(x, axis=None) -> Tensor:
    x = _as_tensor(x)
    x_shape = x.data.shape
    count = x.data.size if axis is None else x_shape[axis]

    def backward(g, parents):
        (px,) = parents
        if not px._tracked:
            return
        if axis is None:
            px._accumulate(np.broadcast_to(g / count, x_shape).copy())
        else:
            px._accumulate(np.broadcast_to(np.expand_dims(g / count, axis), x_shape).copy())

    return _make(x.data.mean(axis=axis), (x,), backward)


def square(x) -> Tensor:
    x = _as_tensor(x)
    x_data = x.data

    def backward(g, parents):
        (px,) = parents
        if px._tracked:
            px._accumulate(2.0 * x_data * g)

    return _make(x_data * x_data, (x,), backward)


def forward_backward(tape: Tape, loss: Tensor) -> dict[str, Tensor]:
    """Run the reverse sweep; returns the requires_grad tensors seen on the tape.

    Gradients land in `Tensor.grad`; the mapping is keyed by tensor name
    (or a positional label when unnamed).
    """
    tape.backward(loss)
    leaves: dict[str, Tensor] = {}
    seen: set[int] = set()
    for _, parents, _ in tape._records:
        for p in parents:
            if p.requires_grad and id(p) not in seen:
                seen.add(id(p))
                leaves[p.name or f"param_{len(leaves)}"] = p
    return leaves
