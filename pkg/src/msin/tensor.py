"""Dense tensors with tape-based reverse-mode differentiation.

Values are stored as float32 (float64 graphs are used for gradient checking).
Every reduction (matmul, sums, softmax normalization) accumulates in float64
and rounds once to the storage dtype.  Rounding only at op boundaries keeps
results bit-identical under reorderings of mathematically commutative work,
e.g. permuting the rows of a matrix product permutes the output rows exactly.
Elementwise ops run in the storage dtype directly; they are trivially
permutation-equivariant and skipping the round trip keeps them cheap.

Ops are free functions taking the tape as their first argument.  Passing
``tape=None`` runs forward-only, which is how finite differences are taken.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class EngineError(Exception):
    """Base class for tensor-engine failures."""


class ShapeError(EngineError):
    """Operands do not satisfy an op's shape contract."""


class ContractError(EngineError):
    """An API was used outside its contract (e.g. backward on a non-scalar)."""


class DegenerateMaskError(EngineError):
    """A softmax row had no valid entries to normalize over."""


class DeterminismError(EngineError):
    """Two identical forward evaluations disagreed bitwise."""


class Tensor:
    """A named array with an optional gradient buffer.

    ``grad`` stays ``None`` until backward first touches the tensor; it always
    matches ``data`` in shape and dtype once allocated.
    """

    __slots__ = ("data", "grad", "name", "requires_grad")

    def __init__(self, data, name: str | None = None, requires_grad: bool = False,
                 dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if arr.size == 0:
            raise ShapeError("tensors must be non-empty, got shape %r" % (arr.shape,))
        self.data = arr
        self.grad: np.ndarray | None = None
        self.name = name
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = self.name or "tensor"
        return "Tensor(%s, shape=%r, grad=%s)" % (
            tag, self.shape, "set" if self.grad is not None else "none")


def parameter(data, name: str, dtype=np.float32) -> Tensor:
    """A trainable leaf."""
    return Tensor(data, name=name, requires_grad=True, dtype=dtype)


def constant(data, name: str | None = None, dtype=np.float32) -> Tensor:
    """A non-trainable input (window values, masks folded into weights, ...)."""
    return Tensor(data, name=name, requires_grad=False, dtype=dtype)


class Tape:
    """Ordered record of ops for one forward pass.

    Record order is a topological order, so the reverse sweep sees every
    consumer of a tensor before its producer.  Ops whose output never received
    a gradient are skipped.
    """

    def __init__(self):
        self._entries: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __len__(self) -> int:
        return len(self._entries)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward: Callable) -> None:
        self._entries.append((out, inputs, backward))

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``."""
        if loss.size != 1:
            raise ContractError(
                "backward expects a scalar loss, got shape %r" % (loss.shape,))
        loss.grad = np.ones_like(loss.data)
        for out, inputs, fn in reversed(self._entries):
            gout = out.grad
            if gout is None:
                continue
            grads = fn(gout)
            for t, g in zip(inputs, grads):
                if g is None or not t.requires_grad:
                    continue
                g = np.asarray(g, dtype=t.data.dtype).reshape(t.data.shape)
                t.grad = g if t.grad is None else t.grad + g


def _promoted(*tensors: Tensor):
    for t in tensors:
        if t.data.dtype == np.float64:
            return np.float64
    return np.float32


def _emit(tape: Tape | None, data: np.ndarray, inputs: tuple[Tensor, ...],
          backward: Callable) -> Tensor:
    out = Tensor(data)
    out.requires_grad = any(t.requires_grad for t in inputs)
    if tape is not None and out.requires_grad:
        tape.record(out, inputs, backward)
    return out


# ---------------------------------------------------------------------------
# linear algebra


def matmul(tape: Tape | None, a: Tensor, b: Tensor,
           transpose_a: bool = False, transpose_b: bool = False) -> Tensor:
    """Matrix product with optional operand transposes.

    Supports [r,c]x[c,k] -> [r,k], [r,c]x[c] -> [r] and [c]x[c,k] -> [k].
    Rank-1 operands cannot be transposed.
    """
    if (transpose_a and a.ndim != 2) or (transpose_b and b.ndim != 2):
        raise ShapeError("matmul cannot transpose a rank-1 operand")
    A = a.data.astype(np.float64)
    B = b.data.astype(np.float64)
    if transpose_a:
        A = A.T
    if transpose_b:
        B = B.T
    if a.ndim == 2 and b.ndim == 2:
        if A.shape[1] != B.shape[0]:
            raise ShapeError("matmul inner dims differ: %r vs %r" % (A.shape, B.shape))

        def back(g):
            G = g.astype(np.float64)
            gA = G @ B.T
            gB = A.T @ G
            return (gA.T if transpose_a else gA, gB.T if transpose_b else gB)

    elif a.ndim == 2 and b.ndim == 1:
        if A.shape[1] != B.shape[0]:
            raise ShapeError("matmul inner dims differ: %r vs %r" % (A.shape, B.shape))

        def back(g):
            G = g.astype(np.float64)
            gA = np.outer(G, B)
            return (gA.T if transpose_a else gA, A.T @ G)

    elif a.ndim == 1 and b.ndim == 2:
        if A.shape[0] != B.shape[0]:
            raise ShapeError("matmul inner dims differ: %r vs %r" % (A.shape, B.shape))

        def back(g):
            G = g.astype(np.float64)
            gB = np.outer(A, G)
            return (B @ G, gB.T if transpose_b else gB)

    else:
        raise ShapeError("matmul needs at least one rank-2 operand")
    data = np.asarray(A @ B, dtype=_promoted(a, b))
    return _emit(tape, data, (a, b), back)


def outer(tape: Tape | None, a: Tensor, b: Tensor) -> Tensor:
    """Outer product of two vectors: [p] x [q] -> [p,q]."""
    if a.ndim != 1 or b.ndim != 1:
        raise ShapeError("outer expects two vectors, got %r and %r" % (a.shape, b.shape))
    A = a.data.astype(np.float64)
    B = b.data.astype(np.float64)

    def back(g):
        G = g.astype(np.float64)
        return (G @ B, G.T @ A)

    return _emit(tape, np.asarray(np.outer(A, B), dtype=_promoted(a, b)), (a, b), back)


# ---------------------------------------------------------------------------
# elementwise


def add(tape: Tape | None, a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError("add shapes differ: %r vs %r" % (a.shape, b.shape))
    return _emit(tape, a.data + b.data, (a, b), lambda g: (g, g))


def add_bias(tape: Tape | None, m: Tensor, v: Tensor) -> Tensor:
    """Add a vector to every row of a matrix (the engine's only broadcast)."""
    if m.ndim != 2 or v.ndim != 1 or m.shape[1] != v.shape[0]:
        raise ShapeError("add_bias expects [r,c] and [c], got %r and %r"
                         % (m.shape, v.shape))

    def back(g):
        return (g, g.astype(np.float64).sum(axis=0))

    return _emit(tape, m.data + v.data, (m, v), back)


def hadamard(tape: Tape | None, a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError("hadamard shapes differ: %r vs %r" % (a.shape, b.shape))
    return _emit(tape, a.data * b.data, (a, b),
                 lambda g: (g * b.data, g * a.data))


def scale(tape: Tape | None, a: Tensor, alpha: float) -> Tensor:
    alpha = float(alpha)
    return _emit(tape, a.data * alpha, (a,), lambda g: (g * alpha,))


def tanh(tape: Tape | None, x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _emit(tape, out, (x,), lambda g: (g * (1.0 - out * out),))


def sigmoid(tape: Tape | None, x: Tensor) -> Tensor:
    # 0.5*(1+tanh(x/2)) is the logistic function without overflow at either tail.
    out = 0.5 * (np.tanh(0.5 * x.data) + 1.0)
    return _emit(tape, out, (x,), lambda g: (g * out * (1.0 - out),))


def absolute(tape: Tape | None, x: Tensor) -> Tensor:
    return _emit(tape, np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def clip(tape: Tape | None, x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values to [lo, hi]; gradient passes only through unclamped entries."""
    if not lo < hi:
        raise ContractError("clip needs lo < hi, got %r >= %r" % (lo, hi))
    inside = (x.data >= lo) & (x.data <= hi)
    return _emit(tape, np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,))


# ---------------------------------------------------------------------------
# reductions and rearrangement


def sum_all(tape: Tape | None, x: Tensor) -> Tensor:
    total = x.data.astype(np.float64).sum()
    data = np.asarray([total], dtype=_promoted(x))
    return _emit(tape, data, (x,),
                 lambda g: (np.full(x.shape, g[0], dtype=g.dtype),))


def mean_axis(tape: Tape | None, x: Tensor, axis: int) -> Tensor:
    """Mean over one axis; a vector reduces to a single-element tensor."""
    if axis < 0 or axis >= x.ndim:
        raise ShapeError("mean_axis axis %d invalid for shape %r" % (axis, x.shape))
    n = x.shape[axis]
    data = np.asarray(x.data.astype(np.float64).mean(axis=axis), dtype=_promoted(x))

    def back(g):
        gx = np.expand_dims(g, axis) if x.ndim == 2 else g
        return ((np.ones(x.shape, dtype=g.dtype) * gx) / n,)

    return _emit(tape, data, (x,), back)


def concat(tape: Tape | None, parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise ShapeError("concat of zero tensors")
    ndim = parts[0].ndim
    if any(p.ndim != ndim for p in parts):
        raise ShapeError("concat ranks differ")
    if axis < 0 or axis >= ndim:
        raise ShapeError("concat axis %d invalid for rank %d" % (axis, ndim))
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]

    def back(g):
        grads, lo = [], 0
        for s in sizes:
            sl = [slice(None)] * ndim
            sl[axis] = slice(lo, lo + s)
            grads.append(g[tuple(sl)])
            lo += s
        return tuple(grads)

    return _emit(tape, data, tuple(parts), back)


def narrow(tape: Tape | None, x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous slice along one axis."""
    if axis < 0 or axis >= x.ndim:
        raise ShapeError("narrow axis %d invalid for shape %r" % (axis, x.shape))
    if not 0 <= start < stop <= x.shape[axis]:
        raise ShapeError("narrow range [%d,%d) invalid for axis of length %d"
                         % (start, stop, x.shape[axis]))
    sl = [slice(None)] * x.ndim
    sl[axis] = slice(start, stop)
    sl = tuple(sl)

    def back(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        gx[sl] = g
        return (gx,)

    return _emit(tape, x.data[sl].copy(), (x,), back)


def reshape(tape: Tape | None, x: Tensor, shape: tuple[int, ...]) -> Tensor:
    if int(np.prod(shape)) != x.size:
        raise ShapeError("reshape %r -> %r changes element count" % (x.shape, shape))
    return _emit(tape, x.data.reshape(shape).copy(), (x,),
                 lambda g: (g.reshape(x.shape),))


def stack_cols(tape: Tape | None, parts: Sequence[Tensor]) -> Tensor:
    """Stack equal-length vectors as the columns of a matrix: K x [n] -> [n,K]."""
    if not parts:
        raise ShapeError("stack_cols of zero tensors")
    n = parts[0].shape[0]
    if any(p.ndim != 1 or p.shape[0] != n for p in parts):
        raise ShapeError("stack_cols expects equal-length vectors")
    data = np.stack([p.data for p in parts], axis=1)
    return _emit(tape, data, tuple(parts),
                 lambda g: tuple(g[:, j] for j in range(len(parts))))


def row_scale(tape: Tape | None, m: Tensor, v: Tensor) -> Tensor:
    """Scale row i of a matrix by v[i]."""
    if m.ndim != 2 or v.ndim != 1 or m.shape[0] != v.shape[0]:
        raise ShapeError("row_scale expects [r,c] and [r], got %r and %r"
                         % (m.shape, v.shape))
    col = v.data[:, None]

    def back(g):
        return (g * col, (g.astype(np.float64) * m.data).sum(axis=1))

    return _emit(tape, m.data * col, (m, v), back)


def sum_stack(tape: Tape | None, parts: Sequence[Tensor]) -> Tensor:
    """Elementwise sum of same-shape tensors, accumulated in float64."""
    if not parts:
        raise ShapeError("sum_stack of zero tensors")
    shape = parts[0].shape
    if any(p.shape != shape for p in parts):
        raise ShapeError("sum_stack shapes differ")
    total = parts[0].data.astype(np.float64)
    for p in parts[1:]:
        total = total + p.data
    data = np.asarray(total, dtype=_promoted(*parts))
    return _emit(tape, data, tuple(parts), lambda g: (g,) * len(parts))


def take_rows(tape: Tape | None, x: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of a matrix by integer index; backward scatter-adds."""
    ids = np.asarray(ids)
    if x.ndim != 2 or ids.ndim != 1 or not np.issubdtype(ids.dtype, np.integer):
        raise ShapeError("take_rows expects a matrix and integer vector ids")
    if ids.size and (ids.min() < 0 or ids.max() >= x.shape[0]):
        raise ShapeError("take_rows id out of range for %d rows" % x.shape[0])
    ids = ids.copy()

    def back(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        np.add.at(gx, ids, g)
        return (gx,)

    return _emit(tape, x.data[ids].copy(), (x,), back)


# ---------------------------------------------------------------------------
# normalization, regularization helpers, losses


def masked_softmax(tape: Tape | None, logits: Tensor, mask: np.ndarray) -> Tensor:
    """Softmax over valid entries only; invalid entries come out exactly zero.

    Rank-1 input normalizes the whole vector, rank-2 normalizes each row.
    A row with no valid entry raises DegenerateMaskError.
    """
    mask = np.asarray(mask, dtype=bool)
    if logits.ndim not in (1, 2):
        raise ShapeError("masked_softmax expects rank 1 or 2, got %r" % (logits.shape,))
    if mask.shape != logits.shape:
        raise ShapeError("mask shape %r does not match logits %r"
                         % (mask.shape, logits.shape))
    rank1 = logits.ndim == 1
    z = logits.data.astype(np.float64)
    z2 = z[None, :] if rank1 else z
    m2 = mask[None, :] if rank1 else mask
    rows_ok = m2.any(axis=1)
    if not rows_ok.all():
        raise DegenerateMaskError(
            "softmax row %d has no valid entries" % int(np.flatnonzero(~rows_ok)[0]))
    shifted = np.where(m2, z2, -np.inf)
    shifted = shifted - shifted.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p2 = e / e.sum(axis=1, keepdims=True)

    def back(g):
        G = g.astype(np.float64)
        G2 = G[None, :] if rank1 else G
        inner = (G2 * p2).sum(axis=1, keepdims=True)
        gz = p2 * (G2 - inner)
        return (gz[0] if rank1 else gz,)

    data = np.asarray(p2[0] if rank1 else p2, dtype=_promoted(logits))
    return _emit(tape, data, (logits,), back)


def dropout(tape: Tape | None, x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity (and no tape entry) when rate is zero."""
    if not 0.0 <= rate < 1.0:
        raise ContractError("dropout rate must lie in [0,1), got %r" % rate)
    if rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.data.dtype) / (1.0 - rate)
    return _emit(tape, x.data * keep, (x,), lambda g: (g * keep,))


def bce_with_logit(tape: Tape | None, logit: Tensor, target: float) -> Tensor:
    """Binary cross-entropy on a single logit, stable at large |logit|."""
    if logit.size != 1:
        raise ShapeError("bce_with_logit expects a single logit, got %r" % (logit.shape,))
    y = float(target)
    if not 0.0 <= y <= 1.0:
        raise ContractError("bce target must lie in [0,1], got %r" % y)
    z = float(logit.data.astype(np.float64)[0])
    loss = max(z, 0.0) - z * y + np.log1p(np.exp(-abs(z)))
    sig = 0.5 * (np.tanh(0.5 * z) + 1.0)

    def back(g):
        return (np.asarray([g.astype(np.float64)[0] * (sig - y)]),)

    return _emit(tape, np.asarray([loss], dtype=_promoted(logit)), (logit,), back)


# ---------------------------------------------------------------------------
# gradient checking


def grad_check_table(build_loss: Callable[[Tape | None, list[Tensor]], Tensor],
                     params: Sequence[Tensor], h: float = 1e-5) -> dict[str, float]:
    """Worst relative error between tape and central-difference gradients.

    ``build_loss(tape, leaves)`` must rebuild the full forward pass from the
    given leaves and return a scalar.  Leaves are copied to float64 so the
    finite-difference oracle is taken in 64-bit arithmetic.  The function is
    evaluated twice up front; any bitwise disagreement means it is not a pure
    function of the leaves and gradient checking would be meaningless.
    """
    leaves = [Tensor(t.data.astype(np.float64), name=t.name, requires_grad=True)
              for t in params]
    names = [t.name or ("param%d" % i) for i, t in enumerate(params)]

    first = build_loss(None, leaves)
    second = build_loss(None, leaves)
    if first.data.tobytes() != second.data.tobytes():
        raise DeterminismError("two identical forward passes disagree bitwise")

    tape = Tape()
    loss = build_loss(tape, leaves)
    if loss.size != 1:
        raise ContractError("gradient check needs a scalar loss")
    tape.backward(loss)

    def value() -> float:
        return float(build_loss(None, leaves).data[0])

    worst: dict[str, float] = {}
    for name, leaf in zip(names, leaves):
        g = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
        flat = leaf.data.reshape(-1)
        gflat = g.reshape(-1)
        err = 0.0
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + h
            fp = value()
            flat[i] = saved - h
            fm = value()
            flat[i] = saved
            fd = (fp - fm) / (2.0 * h)
            gt = float(gflat[i])
            err = max(err, abs(gt - fd) / max(abs(gt), abs(fd), 1e-8))
        worst[name] = err
    return worst


def grad_check(build_loss: Callable[[Tape | None, list[Tensor]], Tensor],
               params: Sequence[Tensor], h: float = 1e-5) -> float:
    """Maximum relative error across all checked leaves (see grad_check_table)."""
    table = grad_check_table(build_loss, params, h=h)
    return max(table.values()) if table else 0.0
