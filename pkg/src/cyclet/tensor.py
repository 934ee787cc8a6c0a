"""Dense float64 tensors with define-by-run reverse-mode autodiff.

Every op builds its output eagerly and, when any input requires a gradient,
attaches a backward closure plus references to its inputs.  ``backward`` then
orders the reachable graph into a :class:`Tape` and replays it in reverse.
"""
from __future__ import annotations

import itertools
import math
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "Tensor", "Tape", "ShapeError", "NonFiniteError",
    "tensor", "conv2d", "upsample_nearest", "relu", "leaky_relu", "tanh",
    "sigmoid", "softplus", "elementwise_activation", "instance_norm",
    "add", "mul", "scale", "sum_", "mean", "mean_abs_diff", "mean_square_to",
    "weighted_sum", "stop_gradient", "backward", "finite_diff_gradient",
    "set_debug",
]

_DEBUG = False
_ids = itertools.count(1)
_kink_log: list | None = None


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible; names the offending dimension."""


class NonFiniteError(FloatingPointError):
    pass


class record_kinks:
    """Context manager collecting the branch pattern of every kinked op.

    relu / leaky_relu record their positive masks and mean_abs_diff its sign
    pattern; two evaluations with equal logs are on the same smooth piece.
    """

    def __enter__(self) -> list:
        global _kink_log
        self._prev = _kink_log
        _kink_log = []
        return _kink_log

    def __exit__(self, *exc) -> None:
        global _kink_log
        _kink_log = self._prev


def _note_kink(pattern: np.ndarray) -> None:
    if _kink_log is not None:
        _kink_log.append(np.packbits(pattern).tobytes())


def set_debug(flag: bool) -> None:
    """Enable finiteness checks on every forward op."""
    global _DEBUG
    _DEBUG = bool(flag)


class Tensor:
    """N-d float64 array node.

    ``grad`` has the same shape as ``data`` and is allocated lazily (zeros).
    ``tape_id`` is ``None`` for leaves and the producing op's id otherwise.
    """

    __slots__ = ("data", "_grad", "requires_grad", "parents", "backward_fn", "tape_id", "op_name")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr if arr.flags.c_contiguous else np.ascontiguousarray(arr)
        self._grad = None
        self.requires_grad = requires_grad
        self.parents: tuple[Tensor, ...] = ()
        self.backward_fn = None
        self.tape_id = None
        self.op_name = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def values(self) -> np.ndarray:
        return self.data.reshape(-1)

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.data)
        return self._grad

    @grad.setter
    def grad(self, value) -> None:
        self._grad = np.asarray(value, dtype=np.float64).reshape(self.data.shape)

    def zero_grad(self) -> None:
        self._grad = None

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return stop_gradient(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op_name})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__


def tensor(values, shape: Sequence[int] | None = None, requires_grad: bool = False) -> Tensor:
    arr = np.asarray(values, dtype=np.float64)
    if shape is not None:
        arr = arr.reshape(shape)
    return Tensor(arr, requires_grad=requires_grad)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward_fn, name: str) -> Tensor:
    out = Tensor(data)
    if _DEBUG and not np.all(np.isfinite(out.data)):
        if all(np.all(np.isfinite(p.data)) for p in parents):
            raise NonFiniteError(f"{name} produced non-finite values from finite inputs")
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.backward_fn = backward_fn
        out.tape_id = next(_ids)
        out.op_name = name
    return out


class Tape:
    """Topologically ordered ops reachable from a root tensor."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_root(cls, root: Tensor) -> "Tape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into the ``grad`` of every reachable leaf."""
    if loss.data.size != 1 or loss.data.ndim != 0:
        raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    tape = Tape.from_root(loss)
    adjoint: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = adjoint.pop(id(node), None)
        if g is None:
            continue
        if node.backward_fn is None:
            node.grad += g
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in adjoint:
                adjoint[key] = adjoint[key] + pg
            else:
                adjoint[key] = pg


# ---------------------------------------------------------------- elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: shape {a.shape} vs {b.shape}")
    return _result(a.data + b.data, (a, b), lambda g: (g, g), "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul: shape {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data
    return _result(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def scale(a: Tensor, c: float) -> Tensor:
    return _result(a.data * c, (a,), lambda g: (g * c,), "scale")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    _note_kink(mask)
    return _result(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    pos = x.data > 0
    _note_kink(pos)
    factor = np.where(pos, 1.0, slope)
    return _result(x.data * factor, (x,), lambda g: (g * factor,), "leaky_relu")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _result(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def _sigmoid(v: np.ndarray) -> np.ndarray:
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.data)
    return _result(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def softplus(x: Tensor) -> Tensor:
    """log(1 + exp(x)), computed stably."""
    y = np.logaddexp(0.0, x.data)
    s = _sigmoid(x.data)
    return _result(y, (x,), lambda g: (g * s,), "softplus")


def elementwise_activation(x: Tensor, kind: str, slope: float = 0.2) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "leaky_relu":
        return leaky_relu(x, slope)
    if kind == "tanh":
        return tanh(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation {kind!r}")


# ------------------------------------------------------------------ reductions


def sum_(x: Tensor) -> Tensor:
    shape = x.shape
    return _result(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum")


def mean(x: Tensor) -> Tensor:
    shape, n = x.shape, x.size
    return _result(np.asarray(x.data.mean()), (x,), lambda g: (np.full(shape, g / n),), "mean")


def mean_abs_diff(a: Tensor, b: Tensor) -> Tensor:
    """Mean of |a - b| over all elements; subgradient 0 at ties."""
    if a.shape != b.shape:
        raise ShapeError(f"mean_abs_diff: shape {a.shape} vs {b.shape}")
    diff = a.data - b.data
    n = diff.size
    sign = np.sign(diff)
    _note_kink(np.concatenate([(sign > 0).ravel(), (sign < 0).ravel()]))

    def back(g):
        ga = g * sign / n
        return ga, -ga

    return _result(np.asarray(np.abs(diff).mean()), (a, b), back, "mean_abs_diff")


def mean_square_to(a: Tensor, target: float) -> Tensor:
    """Mean of (a - target)^2."""
    diff = a.data - target
    n = diff.size
    return _result(np.asarray((diff * diff).mean()), (a,), lambda g: (g * 2.0 * diff / n,), "mean_square_to")


def weighted_sum(terms: Iterable[tuple[float, Tensor]]) -> Tensor:
    """Sum of coefficient * scalar tensor."""
    terms = [(float(c), t) for c, t in terms]
    if not terms:
        raise ValueError("weighted_sum needs at least one term")
    for i, (_, t) in enumerate(terms):
        if t.data.ndim != 0:
            raise ShapeError(f"weighted_sum: term {i} has shape {t.shape}, expected scalar")
    total = 0.0
    for c, t in terms:
        total = total + c * t.data
    coeffs = [c for c, _ in terms]
    return _result(np.asarray(total, dtype=np.float64), [t for _, t in terms],
                   lambda g: tuple(g * c for c in coeffs), "weighted_sum")


def stop_gradient(t: Tensor) -> Tensor:
    """Same values, no path back to ``t``."""
    return Tensor(t.data)


# ------------------------------------------------------------------- image ops


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """2-d cross-correlation over NCHW input with floor output sizing."""
    if x.data.ndim != 4:
        raise ShapeError(f"conv2d: input must be 4-d (B,C,H,W), got {x.shape}")
    if kernel.data.ndim != 4:
        raise ShapeError(f"conv2d: kernel must be 4-d (Cout,Cin,Kh,Kw), got {kernel.shape}")
    B, C, H, W = x.shape
    O, Ck, KH, KW = kernel.shape
    if Ck != C:
        raise ShapeError(f"conv2d: input channels {C} != kernel Cin {Ck}")
    if bias.shape != (O,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != (Cout,)=({O},)")
    if KH % 2 == 0 or KW % 2 == 0:
        raise ShapeError(f"conv2d: kernel height/width must be odd, got {KH}x{KW}")
    if stride < 1 or pad < 0:
        raise ValueError(f"conv2d: need stride >= 1 and pad >= 0, got {stride}, {pad}")
    Hp, Wp = H + 2 * pad, W + 2 * pad
    if Hp < KH:
        raise ShapeError(f"conv2d: padded height {Hp} smaller than kernel height {KH}")
    if Wp < KW:
        raise ShapeError(f"conv2d: padded width {Wp} smaller than kernel width {KW}")
    Ho = (Hp - KH) // stride + 1
    Wo = (Wp - KW) // stride + 1

    # channel-major (C, B, H, W) keeps the im2col matrix and the scatter contiguous
    xp = np.zeros((C, B, Hp, Wp))
    xp[:, :, pad:pad + H, pad:pad + W] = x.data.transpose(1, 0, 2, 3)
    win = sliding_window_view(xp, (KH, KW), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :Ho, :Wo]
    cols = win.transpose(0, 4, 5, 1, 2, 3).reshape(C * KH * KW, B * Ho * Wo)
    wmat = kernel.data.reshape(O, C * KH * KW)
    out = (wmat @ cols).reshape(O, B, Ho, Wo).transpose(1, 0, 2, 3) + bias.data[None, :, None, None]

    def back(g):
        g_om = g.transpose(1, 0, 2, 3).reshape(O, B * Ho * Wo)
        gx = gk = gb = None
        if kernel.requires_grad:
            gk = (g_om @ cols.T).reshape(O, C, KH, KW)
        if bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        if x.requires_grad:
            dcols = (wmat.T @ g_om).reshape(C, KH, KW, B, Ho, Wo)
            gxp = np.zeros((C, B, Hp, Wp))
            for i in range(KH):
                for j in range(KW):
                    gxp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += dcols[:, i, j]
            gx = gxp[:, :, pad:pad + H, pad:pad + W].transpose(1, 0, 2, 3)
        return gx, gk, gb

    return _result(np.ascontiguousarray(out), (x, kernel, bias), back, "conv2d")


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    if factor < 1:
        raise ValueError(f"upsample factor must be >= 1, got {factor}")
    if x.data.ndim != 4:
        raise ShapeError(f"upsample_nearest: input must be 4-d, got {x.shape}")
    if factor == 1:
        return _result(x.data.copy(), (x,), lambda g: (g,), "upsample_nearest")
    B, C, H, W = x.shape
    out = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)

    def back(g):
        return (g.reshape(B, C, H, factor, W, factor).sum(axis=(3, 5)),)

    return _result(out, (x,), back, "upsample_nearest")


def instance_norm(x: Tensor, gain: Tensor, shift: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-(sample, channel) plane standardisation followed by affine gain/shift."""
    if x.data.ndim != 4:
        raise ShapeError(f"instance_norm: input must be 4-d, got {x.shape}")
    B, C, H, W = x.shape
    n = H * W
    if n < 2:
        raise ShapeError(f"instance_norm: plane H*W = {H}*{W} < 2, variance undefined")
    if eps <= 0:
        raise ValueError("instance_norm: eps must be > 0")
    if gain.shape != (C,):
        raise ShapeError(f"instance_norm: gain shape {gain.shape} != ({C},)")
    if shift.shape != (C,):
        raise ShapeError(f"instance_norm: shift shape {shift.shape} != ({C},)")
    mu = x.data.mean(axis=(2, 3), keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=(2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data[None, :, None, None]
    out = xhat * gd + shift.data[None, :, None, None]

    def back(g):
        gx = None
        if x.requires_grad:
            dxhat = g * gd
            s1 = dxhat.sum(axis=(2, 3), keepdims=True)
            s2 = (dxhat * xhat).sum(axis=(2, 3), keepdims=True)
            gx = inv / n * (n * dxhat - s1 - xhat * s2)
        ggain = (g * xhat).sum(axis=(0, 2, 3)) if gain.requires_grad else None
        gshift = g.sum(axis=(0, 2, 3)) if shift.requires_grad else None
        return gx, ggain, gshift

    return _result(out, (x, gain, shift), back, "instance_norm")


# -------------------------------------------------------------------- oracles


def finite_diff_gradient(f: Callable[[Tensor], Tensor | float], x: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f`` wrt every element of ``x``.

    ``x.data`` is perturbed in place and restored exactly afterwards.
    """
    if h <= 0:
        raise ValueError("h must be > 0")
    flat = x.data.reshape(-1)
    out = np.zeros(flat.size)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = _scalar(f(x))
        flat[i] = orig - h
        fm = _scalar(f(x))
        flat[i] = orig
        out[i] = (fp - fm) / (2.0 * h)
    return out.reshape(x.shape)


def _scalar(v) -> float:
    if isinstance(v, Tensor):
        return v.item()
    return float(v)


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> tuple[float, int]:
    """Largest |a-n| / max(|a|, |n|, floor) and its flat index."""
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    if a.size == 0:
        return 0.0, -1
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    err = np.abs(a - n) / denom
    idx = int(np.argmax(err))
    val = float(err[idx])
    return (val if math.isfinite(val) else math.inf), idx
