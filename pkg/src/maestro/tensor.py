"""Dense float64 tensors with reverse-mode automatic differentiation.

The engine is deliberately small. Storage is row-major numpy, the tape is
rebuilt on every forward pass (define-by-run), and each operation carries an
explicit backward rule. Gradients accumulate into leaf tensors, so repeated
backward calls sum until the grads are cleared. Broadcasting is restricted
to scalar-times-tensor and bias addition; everything else must match shapes
exactly, which keeps the backward rules honest.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .errors import ContractViolation, NumericFault

_DEBUG = False


def set_debug(flag: bool) -> None:
    """Validate every op output for finite values (slow; meant for tests)."""
    global _DEBUG
    _DEBUG = bool(flag)


class Tensor:
    """A dense float64 array plus an optional gradient buffer."""

    __slots__ = ("values", "requires_grad", "grad", "_creator")

    def __init__(self, values, requires_grad: bool = False):
        arr = np.array(values, dtype=np.float64, order="C")
        if arr.size and not np.isfinite(arr).all():
            raise NumericFault("tensor created with non-finite values")
        self.values: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._creator: "Node | None" = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        if self.values.size != 1:
            raise ContractViolation("item() requires a single-element tensor")
        return float(self.values.reshape(-1)[0])

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Tensor(shape={self.values.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def _result(values: np.ndarray, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.values = np.ascontiguousarray(values, dtype=np.float64)
    out.requires_grad = False
    out.grad = None
    out._creator = None
    if _DEBUG and out.values.size and not np.isfinite(out.values).all():
        raise NumericFault(f"non-finite values produced by op '{op}'")
    return out


class Node:
    """One recorded operation: inputs, output, and the gradient rule."""

    __slots__ = ("op", "inputs", "output", "grad_fn", "tape")

    def __init__(self, op, inputs, output, grad_fn, tape):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.grad_fn = grad_fn
        self.tape = tape


class Tape:
    """Ordered record of one forward pass; inputs always precede outputs."""

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> bool:
        _TAPES.pop()
        return False


_TAPES: list[Tape] = []


def _record(op: str, inputs: tuple, out: Tensor, grad_fn: Callable) -> Tensor:
    tape = _TAPES[-1] if _TAPES else None
    if tape is None or not any(t.requires_grad for t in inputs):
        return out
    out.requires_grad = True
    node = Node(op, inputs, out, grad_fn, tape)
    out._creator = node
    tape.nodes.append(node)
    return out


def backward(tape: Tape, loss: Tensor) -> None:
    """Accumulate dLoss/dLeaf into every requires_grad leaf reachable from loss."""
    if loss.values.size != 1:
        raise ContractViolation("backward requires a scalar loss")
    if loss._creator is not None and loss._creator.tape is not tape:
        raise ContractViolation("loss was not recorded on this tape")

    pending: dict[int, np.ndarray] = {}

    def send(t: Tensor, g: np.ndarray) -> None:
        if not t.requires_grad:
            return
        if t._creator is None:
            t.grad = g.copy() if t.grad is None else t.grad + g
        elif id(t) in pending:
            pending[id(t)] = pending[id(t)] + g
        else:
            pending[id(t)] = g

    send(loss, np.ones_like(loss.values))
    for node in reversed(tape.nodes):
        g = pending.pop(id(node.output), None)
        if g is None:
            continue
        for t, gi in zip(node.inputs, node.grad_fn(g)):
            if gi is not None:
                send(t, gi)


def zero_grad(tensors: Sequence[Tensor]) -> None:
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# Operations. Each returns a fresh tensor and registers a backward rule.
# ---------------------------------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    if isinstance(b, (int, float)):
        out = _result(a.values + float(b), "add")
        return _record("add", (a,), out, lambda g: (g,))
    if not isinstance(b, Tensor):
        raise ContractViolation("add expects a tensor or scalar")
    if a.values.shape == b.values.shape:
        out = _result(a.values + b.values, "add")
        return _record("add", (a, b), out, lambda g: (g, g))
    # bias add: [.., d] + [d]
    if b.values.ndim == 1 and a.values.ndim >= 1 and a.values.shape[-1] == b.values.shape[0]:
        out = _result(a.values + b.values, "add")
        axes = tuple(range(a.values.ndim - 1))
        return _record("add", (a, b), out, lambda g: (g, g.sum(axis=axes) if axes else g))
    raise ContractViolation(
        f"add shape mismatch: {a.values.shape} vs {b.values.shape}"
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, scale(b, -1.0))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = _result(a.values * c, "scale")
    return _record("scale", (a,), out, lambda g: (g * c,))


def mul(a: Tensor, b) -> Tensor:
    if isinstance(b, (int, float)):
        return scale(a, b)
    if not isinstance(b, Tensor):
        raise ContractViolation("mul expects a tensor or scalar")
    if a.values.shape != b.values.shape:
        raise ContractViolation(
            f"mul shape mismatch: {a.values.shape} vs {b.values.shape}"
        )
    av, bv = a.values, b.values
    out = _result(av * bv, "mul")
    return _record("mul", (a, b), out, lambda g: (g * bv, g * av))


def row_scale(x: Tensor, s: Tensor) -> Tensor:
    """Scale row i of x by s[i]; s has shape [n] or [n, 1]."""
    if x.values.ndim != 2:
        raise ContractViolation("row_scale expects a 2-D tensor")
    col = s.values.reshape(-1, 1)
    if col.shape[0] != x.values.shape[0]:
        raise ContractViolation("row_scale length mismatch")
    xv = x.values
    out = _result(xv * col, "row_scale")

    def grad_fn(g):
        gs = (g * xv).sum(axis=1).reshape(s.values.shape)
        return g * col, gs

    return _record("row_scale", (x, s), out, grad_fn)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.values.ndim != 2 or b.values.ndim != 2:
        raise ContractViolation("matmul expects 2-D tensors")
    if a.values.shape[1] != b.values.shape[0]:
        raise ContractViolation(
            f"matmul inner dims differ: {a.values.shape} @ {b.values.shape}"
        )
    av, bv = a.values, b.values
    out = _result(av @ bv, "matmul")
    return _record("matmul", (a, b), out, lambda g: (g @ bv.T, av.T @ g))


def transpose(a: Tensor) -> Tensor:
    if a.values.ndim != 2:
        raise ContractViolation("transpose expects a 2-D tensor")
    out = _result(a.values.T, "transpose")
    return _record("transpose", (a,), out, lambda g: (g.T,))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    orig = a.values.shape
    out = _result(a.values.reshape(shape), "reshape")
    return _record("reshape", (a,), out, lambda g: (g.reshape(orig),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ContractViolation("concat of zero tensors")
    if axis not in (0, 1):
        raise ContractViolation("concat supports axis 0 or 1")
    parts = [t.values for t in tensors]
    out = _result(np.concatenate(parts, axis=axis), "concat")
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def grad_fn(g):
        if axis == 0:
            return tuple(g[offsets[i]:offsets[i + 1]] for i in range(len(parts)))
        return tuple(g[:, offsets[i]:offsets[i + 1]] for i in range(len(parts)))

    return _record("concat", tuple(tensors), out, grad_fn)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if a.values.ndim != 2:
        raise ContractViolation("slice_cols expects a 2-D tensor")
    av = a.values
    out = _result(av[:, start:stop], "slice_cols")

    def grad_fn(g):
        ga = np.zeros_like(av)
        ga[:, start:stop] = g
        return (ga,)

    return _record("slice_cols", (a,), out, grad_fn)


def gather_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim != 1:
        raise ContractViolation("gather_rows expects a 1-D index array")
    if idx.size and (idx.min() < 0 or idx.max() >= a.values.shape[0]):
        raise ContractViolation("gather_rows index out of range")
    av = a.values
    out = _result(av[idx], "gather_rows")

    def grad_fn(g):
        ga = np.zeros_like(av)
        np.add.at(ga, idx, g)
        return (ga,)

    return _record("gather_rows", (a,), out, grad_fn)


def scatter_rows(base: Tensor, idx: np.ndarray, rows: Tensor) -> Tensor:
    """Copy base and replace rows at idx. Indices must be unique."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim != 1 or len(np.unique(idx)) != idx.size:
        raise ContractViolation("scatter_rows requires unique 1-D indices")
    if rows.values.shape != (idx.size,) + base.values.shape[1:]:
        raise ContractViolation("scatter_rows row-block shape mismatch")
    merged = base.values.copy()
    merged[idx] = rows.values
    out = _result(merged, "scatter_rows")

    def grad_fn(g):
        gb = g.copy()
        gb[idx] = 0.0
        return gb, g[idx]

    return _record("scatter_rows", (base, rows), out, grad_fn)


def repeat_rows(a: Tensor, n: int) -> Tensor:
    if a.values.ndim != 2 or a.values.shape[0] != 1:
        raise ContractViolation("repeat_rows expects a [1, d] tensor")
    out = _result(np.repeat(a.values, n, axis=0), "repeat_rows")
    return _record("repeat_rows", (a,), out, lambda g: (g.sum(axis=0, keepdims=True),))


def mean_rows(a: Tensor) -> Tensor:
    if a.values.ndim != 2:
        raise ContractViolation("mean_rows expects a 2-D tensor")
    n = a.values.shape[0]
    out = _result(a.values.mean(axis=0, keepdims=True), "mean_rows")
    return _record("mean_rows", (a,), out, lambda g: (np.repeat(g, n, axis=0) / n,))


def sum_all(a: Tensor) -> Tensor:
    shape = a.values.shape
    out = _result(np.array([a.values.sum()]), "sum_all")
    return _record("sum_all", (a,), out, lambda g: (np.full(shape, g.reshape(-1)[0]),))


def add_n(tensors: Sequence[Tensor]) -> Tensor:
    if not tensors:
        raise ContractViolation("add_n of zero tensors")
    shape = tensors[0].values.shape
    for t in tensors:
        if t.values.shape != shape:
            raise ContractViolation("add_n shape mismatch")
    total = tensors[0].values.copy()
    for t in tensors[1:]:
        total += t.values
    out = _result(total, "add_n")
    return _record("add_n", tuple(tensors), out, lambda g: tuple(g for _ in tensors))


def sigmoid(a: Tensor) -> Tensor:
    x = a.values
    t = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + t), t / (1.0 + t))
    out = _result(s, "sigmoid")
    return _record("sigmoid", (a,), out, lambda g: (g * s * (1.0 - s),))


def relu(a: Tensor) -> Tensor:
    x = a.values
    out = _result(np.maximum(x, 0.0), "relu")
    return _record("relu", (a,), out, lambda g: (g * (x > 0.0),))


def elu(a: Tensor) -> Tensor:
    x = a.values
    y = np.where(x > 0.0, x, np.expm1(x))
    out = _result(y, "elu")
    return _record("elu", (a,), out, lambda g: (g * np.where(x > 0.0, 1.0, y + 1.0),))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.values - a.values.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)
    out = _result(s, "softmax")

    def grad_fn(g):
        dot = (g * s).sum(axis=axis, keepdims=True)
        return (s * (g - dot),)

    return _record("softmax", (a,), out, grad_fn)


def floor_ste(a: Tensor) -> Tensor:
    """Forward floor; backward passes the gradient through unchanged."""
    out = _result(np.floor(a.values), "floor_ste")
    return _record("floor_ste", (a,), out, lambda g: (g,))


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    x = a.values
    out = _result(np.clip(x, lo, hi), "clamp")
    inside = (x >= lo) & (x <= hi)
    return _record("clamp", (a,), out, lambda g: (g * inside,))


def conv1d_same(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """1-D convolution over axis 0, kernel 3, zero same-padding.

    x is [L, d_in], w is [3, d_in, d_out], b is [d_out].
    """
    if x.values.ndim != 2 or w.values.shape[:1] != (3,):
        raise ContractViolation("conv1d_same expects x [L, d_in] and w [3, d_in, d_out]")
    if w.values.shape[1] != x.values.shape[1] or b.values.shape != (w.values.shape[2],):
        raise ContractViolation("conv1d_same channel mismatch")
    L = x.values.shape[0]
    xpad = np.zeros((L + 2, x.values.shape[1]))
    xpad[1:L + 1] = x.values
    wv = w.values
    y = b.values + sum(xpad[k:k + L] @ wv[k] for k in range(3))
    out = _result(y, "conv1d_same")

    def grad_fn(g):
        gw = np.stack([xpad[k:k + L].T @ g for k in range(3)])
        gxpad = np.zeros_like(xpad)
        for k in range(3):
            gxpad[k:k + L] += g @ wv[k].T
        return gxpad[1:L + 1], gw, g.sum(axis=0)

    return _record("conv1d_same", (x, w, b), out, grad_fn)


def maxpool1d_half(x: Tensor) -> Tensor:
    """Max pool over axis 0, window 3, stride 2, same padding: L -> ceil(L/2).

    Ties route the gradient to the lowest input index.
    """
    if x.values.ndim != 2:
        raise ContractViolation("maxpool1d_half expects a 2-D tensor")
    L, d = x.values.shape
    n_out = (L + 1) // 2
    xpad = np.full((L + 3, d), -np.inf)
    xpad[1:L + 1] = x.values
    win_idx = 2 * np.arange(n_out)[:, None] + np.arange(3)[None, :]
    windows = xpad[win_idx]                      # [n_out, 3, d]
    arg = windows.argmax(axis=1)                 # first max wins ties
    pos = np.clip(win_idx[:, 0][:, None] + arg - 1, 0, L - 1)
    cols = np.broadcast_to(np.arange(d), (n_out, d))
    out = _result(x.values[pos, cols], "maxpool1d_half")

    def grad_fn(g):
        gx = np.zeros_like(x.values)
        np.add.at(gx, (pos, cols), g)
        return (gx,)

    return _record("maxpool1d_half", (x,), out, grad_fn)


def embedding_sum(table: Tensor, ids: np.ndarray) -> Tensor:
    """Sum of embedding rows over the leading axis: ids [D, W] -> [W, d]."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 2:
        raise ContractViolation("embedding_sum expects ids with shape [D, W]")
    if ids.size and (ids.min() < 0 or ids.max() >= table.values.shape[0]):
        raise ContractViolation("embedding id out of range")
    tv = table.values
    out = _result(tv[ids].sum(axis=0), "embedding_sum")

    def grad_fn(g):
        gt = np.zeros_like(tv)
        for row in ids:
            np.add.at(gt, row, g)
        return (gt,)

    return _record("embedding_sum", (table,), out, grad_fn)


def cross_entropy(logits: Tensor, label: int) -> Tensor:
    """Cross-entropy of a single sample; label is 1-based in [1, C].

    Computed through a stable log-sum-exp; the gradient is exactly
    softmax(logits) minus the one-hot target.
    """
    z = logits.values.reshape(-1)
    c = z.size
    if not 1 <= int(label) <= c:
        raise ContractViolation(f"label {label} outside [1, {c}]")
    y = int(label) - 1
    m = z.max()
    e = np.exp(z - m)
    lse = m + math.log(e.sum())
    out = _result(np.array([lse - z[y]]), "cross_entropy")
    p = e / e.sum()

    def grad_fn(g):
        gz = p.copy()
        gz[y] -= 1.0
        return (g.reshape(-1)[0] * gz.reshape(logits.values.shape),)

    return _record("cross_entropy", (logits,), out, grad_fn)


def dropout_mask(shape: tuple[int, ...], rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout mask as a constant tensor."""
    if not 0.0 <= rate < 1.0:
        raise ContractViolation("dropout rate must be in [0, 1)")
    keep = (rng.random(shape) >= rate).astype(np.float64)
    return Tensor(keep / (1.0 - rate))


def finite_diff_check(fn: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    fn must be a pure scalar-valued function of x. The relative error per
    coordinate is |analytic - fd| / max(|analytic|, |fd|, 1e-12). Central
    differences cannot resolve derivatives below their own noise floor
    (roundoff eps*|f|/h plus h^2 truncation), so a coordinate where both
    values sit under that floor counts as an exact zero, not a mismatch; a
    wrong gradient still fails because one side lands above the floor.
    """
    if not isinstance(x, Tensor) or not x.requires_grad:
        raise ContractViolation("finite_diff_check needs a requires_grad tensor")
    saved = x.grad
    x.grad = None
    with Tape() as tape:
        loss = fn(x)
    if loss.values.size != 1:
        raise ContractViolation("finite_diff_check needs a scalar-valued fn")
    backward(tape, loss)
    analytic = np.zeros_like(x.values) if x.grad is None else x.grad.copy()
    x.grad = saved

    flat = x.values.reshape(-1)
    fd = np.zeros(flat.size)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = fn(x).item()
        flat[i] = orig - h
        lo = fn(x).item()
        flat[i] = orig
        fd[i] = (hi - lo) / (2.0 * h)
    a = analytic.reshape(-1)
    if a.size == 0:
        return 0.0
    eps = np.finfo(np.float64).eps
    noise = 8.0 * eps / h * max(1.0, abs(float(loss.values.reshape(-1)[0]))) + h * h
    rel = np.abs(a - fd) / np.maximum(np.maximum(np.abs(a), np.abs(fd)), 1e-12)
    rel[(np.abs(a) < noise) & (np.abs(fd) < noise)] = 0.0
    return float(np.max(rel))
