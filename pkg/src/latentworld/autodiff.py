"""Dense tensor engine with reverse-mode automatic differentiation.

Tensors wrap contiguous numpy arrays (float32 by default; float64 in the
gradient-check shadow mode). Each primitive op links its output tensor to
its inputs through a backward closure; ``backward`` builds the tape — the
reverse topological order of everything reachable from the loss — and
visits each recorded op exactly once.

Broadcasting is deliberately narrow: an elementwise binary op accepts equal
shapes, or one operand whose shape is a trailing suffix of the other's
(leading-batch / trailing-affine). Everything else is an explicit reshape.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .errors import ContractError, NumericError, ShapeError

_GRAD_ENABLED = True

NEG_INF = -1e30  # additive-mask sentinel; softmax turns it into exactly zero weight


class no_grad:
    """Context manager disabling tape recording (teacher/eval/planning paths)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Node:
    """One executed primitive: parent tensors plus the adjoint closure."""

    __slots__ = ("inputs", "backward_fn")

    def __init__(self, inputs: tuple["Tensor", ...], backward_fn: Callable):
        self.inputs = inputs
        self.backward_fn = backward_fn


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node")

    def __init__(self, data: np.ndarray, requires_grad: bool = False, node: Node | None = None):
        self.data = data
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node = node

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # light sugar; the module-level functions are the real API
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    def __rmul__(self, other):
        return scale(self, float(other))

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data, requires_grad: bool = False, dtype=np.float32) -> Tensor:
    arr = np.ascontiguousarray(np.asarray(data, dtype=dtype))
    return Tensor(arr, requires_grad=requires_grad)


def param(data, dtype=None) -> Tensor:
    arr = np.ascontiguousarray(np.asarray(data))
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    return Tensor(arr, requires_grad=True)


def _make(data: np.ndarray, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    track = _GRAD_ENABLED and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=track)
    if track:
        out.node = Node(tuple(inputs), backward_fn)
    return out


class Tape:
    """Topologically ordered record of the primitives reachable from a root.

    ``order`` lists tensors with every input preceding its consumers, so a
    reverse sweep propagates adjoints correctly and touches each op once.
    """

    def __init__(self, root: Tensor):
        self.root = root
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                order.append(t)
                continue
            if id(t) in seen:
                continue
            seen.add(id(t))
            stack.append((t, True))
            if t.node is not None:
                for parent in t.node.inputs:
                    stack.append((parent, False))
        self.order = order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every requires_grad tensor reachable from loss.

    Tensors behind a ``stop_gradient`` boundary receive nothing: the detached
    tensor has no parent links, so the sweep never reaches them.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    tape = Tape(loss)
    adjoint: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for t in reversed(tape.order):
        g = adjoint.pop(id(t), None)
        if g is None:
            continue
        if t.node is None:
            # leaf: materialize the gradient buffer
            if t.requires_grad:
                if t.grad is None:
                    t.grad = g.astype(t.data.dtype, copy=True)
                else:
                    t.grad += g
            continue
        parent_grads = t.node.backward_fn(g)
        for parent, pg in zip(t.node.inputs, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            pg = np.asarray(pg)
            if pg.shape != parent.data.shape:
                raise ShapeError(
                    f"adjoint shape {pg.shape} does not match input shape {parent.data.shape}"
                )
            key = id(parent)
            if key in adjoint:
                adjoint[key] = adjoint[key] + pg
            else:
                adjoint[key] = pg


def stop_gradient(x: Tensor) -> Tensor:
    """Detach: same data, no history; blocks gradient flow into the source."""
    return Tensor(x.data, requires_grad=False)


# ---------------------------------------------------------------------------
# broadcasting helpers (equal shapes, or one shape a trailing suffix)


def _check_suffix(big: tuple[int, ...], small: tuple[int, ...], opname: str) -> None:
    if len(small) > len(big) or (len(small) and big[len(big) - len(small):] != small):
        raise ShapeError(f"{opname}: shapes {big} and {small} are not suffix-compatible")


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over the broadcast leading axes down to ``shape``."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    return g


def _binary_shapes(a: Tensor, b: Tensor, opname: str):
    if a.data.shape == b.data.shape:
        return
    if len(a.data.shape) >= len(b.data.shape):
        _check_suffix(a.data.shape, b.data.shape, opname)
    else:
        _check_suffix(b.data.shape, a.data.shape, opname)


# ---------------------------------------------------------------------------
# elementwise primitives


def add(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "add")
    out = a.data + b.data
    need_a, need_b = a.requires_grad, b.requires_grad

    def bwd(g):
        return (_reduce_to(g, a.data.shape) if need_a else None,
                _reduce_to(g, b.data.shape) if need_b else None)

    return _make(out, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "sub")
    out = a.data - b.data
    need_a, need_b = a.requires_grad, b.requires_grad

    def bwd(g):
        return (_reduce_to(g, a.data.shape) if need_a else None,
                -_reduce_to(g, b.data.shape) if need_b else None)

    return _make(out, (a, b), bwd)


def neg(x: Tensor) -> Tensor:
    return _make(-x.data, (x,), lambda g: (-g,))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "mul")
    out = a.data * b.data
    need_a, need_b = a.requires_grad, b.requires_grad

    def bwd(g):
        return (_reduce_to(g * b.data, a.data.shape) if need_a else None,
                _reduce_to(g * a.data, b.data.shape) if need_b else None)

    return _make(out, (a, b), bwd)


def scale(x: Tensor, s: float) -> Tensor:
    return _make(x.data * s, (x,), lambda g: (g * s,))


def affine_const(x: Tensor, mul_by: float, add_to: float) -> Tensor:
    """y = mul_by * x + add_to with scalar constants."""
    return _make(x.data * mul_by + add_to, (x,), lambda g: (g * mul_by,))


def log(x: Tensor) -> Tensor:
    out = np.log(x.data)

    def bwd(g):
        return (g / x.data,)

    return _make(out, (x,), bwd)


def powf(x: Tensor, p: float) -> Tensor:
    """Elementwise x**p for x >= 0; the derivative at x == 0 is defined as 0."""
    out = np.power(x.data, p)

    def bwd(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            local = p * np.power(x.data, p - 1.0)
        local = np.where(np.isfinite(local), local, 0.0)
        return (g * local,)

    return _make(out, (x,), bwd)


def clamp_min(x: Tensor, floor: float) -> Tensor:
    out = np.maximum(x.data, floor)

    def bwd(g):
        return (g * (x.data > floor),)

    return _make(out, (x,), bwd)


def gelu(x: Tensor) -> Tensor:
    """tanh-approximation GELU, elementwise."""
    out = kernels.gelu_forward(x.data)

    def bwd(g):
        return (kernels.gelu_backward(x.data, g),)

    return _make(out, (x,), bwd)


def rotate_pairs(x: Tensor) -> Tensor:
    """Map each adjacent feature pair (u, v) to (-v, u); the rotary quarter turn."""
    if x.data.shape[-1] % 2:
        raise ShapeError(f"rotate_pairs needs an even last dim, got {x.data.shape}")
    out = np.empty_like(x.data)
    out[..., 0::2] = -x.data[..., 1::2]
    out[..., 1::2] = x.data[..., 0::2]

    def bwd(g):
        gx = np.empty_like(g)
        gx[..., 0::2] = g[..., 1::2]
        gx[..., 1::2] = -g[..., 0::2]
        return (gx,)

    return _make(out, (x,), bwd)


# ---------------------------------------------------------------------------
# shape primitives


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out = np.ascontiguousarray(x.data.reshape(shape))

    def bwd(g):
        return (g.reshape(x.data.shape),)

    return _make(out, (x,), bwd)


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(int(i) for i in np.argsort(axes))
    out = np.ascontiguousarray(x.data.transpose(axes))

    def bwd(g):
        return (np.ascontiguousarray(g.transpose(inv)),)

    return _make(out, (x,), bwd)


def swap_last2(x: Tensor) -> Tensor:
    axes = list(range(x.data.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, axes)


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        slicer = [slice(None)] * g.ndim
        grads = []
        for i in range(len(parts)):
            slicer[axis] = slice(offsets[i], offsets[i + 1])
            grads.append(np.ascontiguousarray(g[tuple(slicer)]))
        return tuple(grads)

    return _make(out, tuple(parts), bwd)


def index_select(x: Tensor, idx, axis: int) -> Tensor:
    """Select rows along ``axis`` by an integer index array (shared over batch)."""
    idx = np.asarray(idx, dtype=np.int64)
    out = np.ascontiguousarray(np.take(x.data, idx, axis=axis))
    unique = np.unique(idx).size == idx.size

    def bwd(g):
        gx = np.zeros_like(x.data)
        key = (slice(None),) * axis + (idx,)
        if unique:
            gx[key] = g  # plain scatter; duplicates would need accumulation
        else:
            np.add.at(gx, key, g)
        return (gx,)

    return _make(out, (x,), bwd)


def expand_leading(x: Tensor, leading: Sequence[int]) -> Tensor:
    """Broadcast-copy x to shape leading + x.shape; backward sums the new axes."""
    leading = tuple(int(n) for n in leading)
    out = np.ascontiguousarray(np.broadcast_to(x.data, leading + x.data.shape))

    def bwd(g):
        return (g.sum(axis=tuple(range(len(leading)))),)

    return _make(out, (x,), bwd)


def gather_rows(x: Tensor, idx) -> Tensor:
    """x: (rows, classes), idx: (rows,) -> picked values (rows,)."""
    idx = np.asarray(idx, dtype=np.int64)
    if x.data.ndim != 2 or idx.shape != (x.data.shape[0],):
        raise ShapeError(f"gather_rows: incompatible shapes {x.data.shape} and {idx.shape}")
    rows = np.arange(x.data.shape[0])
    out = np.ascontiguousarray(x.data[rows, idx])

    def bwd(g):
        gx = np.zeros_like(x.data)
        gx[rows, idx] = g
        return (gx,)

    return _make(out, (x,), bwd)


# ---------------------------------------------------------------------------
# contractions, normalizations, reductions


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product: (..., m, k) @ (k, n) or (..., m, k) @ (..., k, n)."""
    ash, bsh = a.data.shape, b.data.shape
    if a.data.ndim < 2 or b.data.ndim < 2 or ash[-1] != bsh[-2]:
        raise ShapeError(f"matmul: incompatible shapes {ash} and {bsh}")
    if b.data.ndim > 2 and ash[:-2] != bsh[:-2]:
        raise ShapeError(f"matmul: leading dims differ between {ash} and {bsh}")

    if b.data.ndim == 2:
        # shared right operand: one large 2D GEMM beats numpy's batched loop
        a2 = a.data.reshape(-1, ash[-1])
        out = (a2 @ b.data).reshape(ash[:-1] + (bsh[-1],))

        def bwd(g):
            g2 = g.reshape(-1, bsh[-1])
            ga = (g2 @ b.data.T).reshape(ash)
            gb = a2.T @ g2
            return ga, gb

        return _make(out, (a, b), bwd)

    out = np.matmul(a.data, b.data)

    def bwd(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _reduce_to(ga, ash), _reduce_to(gb, bsh)

    return _make(out, (a, b), bwd)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Zero-mean unit-variance normalization over the last dim, then affine."""
    d = x.data.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ShapeError(f"layer_norm: gain/bias {gain.data.shape}/{bias.data.shape} vs dim {d}")
    x2 = np.ascontiguousarray(x.data.reshape(-1, d))
    y2, mean, rstd = kernels.layernorm_forward(x2, gain.data, bias.data, eps)

    def bwd(g):
        g2 = np.ascontiguousarray(g.reshape(-1, d))
        gx2, dgain, dbias = kernels.layernorm_backward(x2, gain.data, mean, rstd, g2)
        return gx2.reshape(x.data.shape), dgain, dbias

    return _make(y2.reshape(x.data.shape), (x, gain, bias), bwd)


def softmax_lastdim(x: Tensor, additive_mask: np.ndarray | None = None) -> Tensor:
    """Row softmax over the last dim, optionally with a constant additive mask.

    The mask (broadcastable suffix of x's shape, NEG_INF at blocked entries)
    is folded in before normalization; blocked entries get exactly zero
    weight and, since y==0 there, exactly zero input gradient.
    """
    d = x.data.shape[-1]
    if additive_mask is None:
        x2 = np.ascontiguousarray(x.data.reshape(-1, d))
        y2 = kernels.softmax_forward(x2)
    else:
        x2 = np.ascontiguousarray((x.data + additive_mask).reshape(-1, d))
        y2 = kernels.softmax_forward_inplace(x2)  # x2 is a private buffer here

    def bwd(g):
        g2 = np.ascontiguousarray(g.reshape(-1, d))
        return (kernels.softmax_backward(y2, g2).reshape(x.data.shape),)

    return _make(y2.reshape(x.data.shape), (x,), bwd)


def sum_all(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum(), dtype=x.data.dtype)

    def bwd(g):
        return (np.broadcast_to(g, x.data.shape).astype(x.data.dtype, copy=True),)

    return _make(out, (x,), bwd)


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    out = np.asarray(x.data.mean(), dtype=x.data.dtype)

    def bwd(g):
        return (np.broadcast_to(g / n, x.data.shape).astype(x.data.dtype, copy=True),)

    return _make(out, (x,), bwd)


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean absolute difference; the subgradient at exactly zero residual is 0."""
    if pred.data.shape != target.data.shape:
        raise ShapeError(f"l1_loss: shapes {pred.data.shape} and {target.data.shape} differ")
    diff = pred.data - target.data
    n = diff.size
    out = np.asarray(np.abs(diff).mean(), dtype=pred.data.dtype)

    def bwd(g):
        s = np.sign(diff) * (g / n)  # sign(0) == 0: bounded, deterministic
        return s, -s

    return _make(out, (pred, target), bwd)


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    if pred.data.shape != target.data.shape:
        raise ShapeError(f"mse_loss: shapes {pred.data.shape} and {target.data.shape} differ")
    diff = pred.data - target.data
    n = diff.size
    out = np.asarray((diff * diff).mean(), dtype=pred.data.dtype)

    def bwd(g):
        s = (2.0 / n) * diff * g
        return s, -s

    return _make(out, (pred, target), bwd)


# ---------------------------------------------------------------------------
# attention


def attention(q: Tensor, k: Tensor, v: Tensor, additive_mask: Tensor | None = None) -> Tensor:
    """softmax(q kᵀ / sqrt(d) + mask) v over the last two dims (per head).

    Masked positions use the NEG_INF sentinel and receive exactly zero
    attention weight.
    """
    for name, t in (("q", q), ("k", k), ("v", v)):
        if not np.isfinite(t.data).all():
            raise NumericError(f"attention: non-finite values in {name}")
    d = q.data.shape[-1]
    if k.data.shape[-1] != d:
        raise ShapeError(f"attention: q/k head dims differ: {q.data.shape} vs {k.data.shape}")
    if v.data.shape[-2] != k.data.shape[-2]:
        raise ShapeError(f"attention: k/v lengths differ: {k.data.shape} vs {v.data.shape}")
    # scale q rather than the much larger score matrix
    scores = matmul(scale(q, 1.0 / math.sqrt(d)), swap_last2(k))
    mask_arr = None if additive_mask is None else additive_mask.data
    weights = softmax_lastdim(scores, mask_arr)
    return matmul(weights, v)


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-3) -> float:
    """Max relative error between reverse-mode and central differences.

    Runs in whatever dtype ``x`` carries; pass float64 tensors (and build the
    model under test in float64) for the shadow-mode check — 32-bit finite
    differences are unreliable. The relative error uses the elementwise
    denominator max(|g|, 1e-6).
    """
    leaf = Tensor(x.data.copy(), requires_grad=True)
    loss = f(leaf)
    if loss.data.size != 1:
        raise ContractError("grad_check expects a scalar-valued function")
    backward(loss)
    g_rev = np.zeros_like(leaf.data) if leaf.grad is None else leaf.grad.copy()

    g_fd = np.zeros_like(leaf.data)
    flat = leaf.data.reshape(-1)
    fd_flat = g_fd.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(f(Tensor(leaf.data)).data)
            flat[i] = orig - eps
            dn = float(f(Tensor(leaf.data)).data)
            flat[i] = orig
            fd_flat[i] = (up - dn) / (2.0 * eps)

    denom = np.maximum(np.maximum(np.abs(g_fd), np.abs(g_rev)), 1e-6)
    return float(np.max(np.abs(g_rev - g_fd) / denom))
