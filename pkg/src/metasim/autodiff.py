"""Dense float64 tensors with reverse-mode gradients on an explicit tape.

Everything is numpy underneath; the tape records each primitive in
application order and replays it backwards, so a value's gradient is
only read after every consumer has contributed. Tensors are immutable
once built and a tape belongs to a single training step.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class DimensionError(ValueError):
    """Shapes passed to an operation do not line up."""


class Tensor:
    """Immutable row-major float64 array, optionally tracked by a tape."""

    __slots__ = ("data", "_tape")

    def __init__(self, data):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim and not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self._tape = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __float__(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, data={self.data!r})"

    # Convenience arithmetic; the named functions below do the work.
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, i):
        return row(self, i)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class GradTape:
    """Ordered record of applied primitives plus value -> gradient map.

    A tape is single-use: watch parameters, build a scalar, call
    ``backward``, then read gradients with ``grad``. Independent tapes
    may run concurrently; one tape must stay on one thread.
    """

    __slots__ = ("_records", "_grads", "_watched")

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._grads: dict[int, np.ndarray] = {}
        self._watched: list[Tensor] = []

    def watch(self, t: Tensor) -> Tensor:
        """Track ``t`` so operations on it are recorded here."""
        t._tape = self
        self._watched.append(t)
        return t

    def backward(self, out: Tensor) -> None:
        """Accumulate gradients of the scalar ``out`` w.r.t. tracked values."""
        if out.data.size != 1:
            raise ValueError(
                f"backward requires a scalar output, got shape {out.data.shape}"
            )
        grads = self._grads
        grads.clear()
        grads[id(out)] = np.ones_like(out.data)
        for rec_out, inputs, grad_fn in reversed(self._records):
            g = grads.get(id(rec_out))
            if g is None:
                continue
            for t, gi in zip(inputs, grad_fn(g)):
                if gi is None or t._tape is not self:
                    continue
                acc = grads.get(id(t))
                grads[id(t)] = gi if acc is None else acc + gi

    def grad(self, t: Tensor) -> np.ndarray:
        """Gradient for ``t``; zero if the output never depended on it."""
        g = self._grads.get(id(t))
        return np.zeros_like(t.data) if g is None else g

    def release(self) -> None:
        """Detach watched tensors so later ops on them are untracked."""
        for t in self._watched:
            if t._tape is self:
                t._tape = None


def backward(tape: GradTape, out: Tensor) -> None:
    tape.backward(out)


def _record(out_data: np.ndarray, inputs: tuple[Tensor, ...], grad_fn) -> Tensor:
    tape = None
    for t in inputs:
        tp = t._tape
        if tp is not None:
            if tape is None:
                tape = tp
            elif tape is not tp:
                raise ValueError("operation mixes tensors from different tapes")
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out._tape = tape
    if tape is not None:
        tape._records.append((out, inputs, grad_fn))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise / structural primitives


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data
    return _record(out, (a, b), lambda g: (
        _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data
    return _record(out, (a, b), lambda g: (
        _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data
    return _record(out, (a, b), lambda g: (
        _unbroadcast(g * b.data, a.data.shape),
        _unbroadcast(g * a.data, b.data.shape)))


def scale(a: Tensor, c: float) -> Tensor:
    return _record(a.data * c, (a,), lambda g: (g * c,))


def shift(a: Tensor, c: float) -> Tensor:
    return _record(a.data + c, (a,), lambda g: (g,))


def relu(x: Tensor) -> Tensor:
    """Elementwise max(0, x); the subgradient at 0 is taken as 0."""
    out = np.maximum(x.data, 0.0)
    return _record(out, (x,), lambda g: (g * (x.data > 0.0),))


def hinge(d: Tensor, margin: float) -> Tensor:
    """Elementwise max(0, margin - d); zero gradient on the flat side."""
    if margin <= 0.0:
        raise ValueError(f"margin must be positive, got {margin}")
    out = np.maximum(margin - d.data, 0.0)
    return _record(out, (d,), lambda g: (-g * (d.data < margin),))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Standard matrix product of two 2-d tensors."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            f"matmul shapes do not agree: {a.data.shape} x {b.data.shape}"
        )
    out = a.data @ b.data
    return _record(out, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {a.data.shape}")
    return _record(np.ascontiguousarray(a.data.T), (a,),
                   lambda g: (np.ascontiguousarray(g.T),))


def total(x: Tensor) -> Tensor:
    """Sum of all entries as a scalar."""
    out = np.asarray(x.data.sum())
    return _record(out, (x,), lambda g: (np.broadcast_to(g, x.data.shape),))


def mean(x: Tensor) -> Tensor:
    """Mean of all entries as a scalar."""
    n = x.data.size
    if n == 0:
        raise ValueError("mean of an empty tensor")
    out = np.asarray(x.data.mean())
    return _record(out, (x,),
                   lambda g: (np.broadcast_to(g / n, x.data.shape),))


def stack(parts: Sequence[Tensor]) -> Tensor:
    """Stack equal-shape tensors along a new leading axis."""
    if not parts:
        raise ValueError("stack of an empty sequence")
    shape0 = parts[0].data.shape
    for p in parts:
        if p.data.shape != shape0:
            raise DimensionError(
                f"stack shapes differ: {shape0} vs {p.data.shape}")
    out = np.stack([p.data for p in parts])
    return _record(out, tuple(parts), lambda g: tuple(g[k] for k in range(len(parts))))


def row(t: Tensor, i: int) -> Tensor:
    """Row ``i`` of a matrix (or entry ``i`` of a vector)."""

    def grad_fn(g):
        z = np.zeros_like(t.data)
        z[i] = g
        return (z,)

    return _record(np.array(t.data[i]) if t.data.ndim == 1 else t.data[i].copy(),
                   (t,), grad_fn)


# ---------------------------------------------------------------------------
# geometry primitives


def l2_normalize(x: Tensor, eps: float = 1e-12) -> Tensor:
    """x / max(||x||, eps), per row for matrices.

    The eps guard makes the zero vector map to itself instead of
    erroring; on the guard branch the denominator is constant.
    """
    if eps <= 0.0:
        raise ValueError(f"eps must be positive, got {eps}")
    if x.data.ndim == 1:
        n = float(np.linalg.norm(x.data))
        denom = max(n, eps)
        y = x.data / denom

        def grad_fn(g):
            if n < eps:
                return (g / denom,)
            return ((g - y * (y @ g)) / n,)

        return _record(y, (x,), grad_fn)
    if x.data.ndim == 2:
        norms = np.linalg.norm(x.data, axis=1, keepdims=True)
        denom = np.maximum(norms, eps)
        y = x.data / denom

        def grad_fn2(g):
            proj = (y * g).sum(axis=1, keepdims=True)
            gx = (g - y * proj) / denom
            # rows under the guard get the constant-denominator gradient
            guarded = norms < eps
            if guarded.any():
                gx = np.where(guarded, g / denom, gx)
            return (gx,)

        return _record(y, (x,), grad_fn2)
    raise DimensionError(f"l2_normalize expects a vector or matrix, got {x.data.shape}")


def euclidean_distance(a: Tensor, b: Tensor) -> Tensor:
    """||a - b|| for two equal-length vectors, as a scalar tensor.

    Differentiable away from a == b; at coincidence the gradient is 0.
    """
    if a.data.shape != b.data.shape or a.data.ndim != 1:
        raise DimensionError(
            f"euclidean_distance needs equal-length vectors, got "
            f"{a.data.shape} and {b.data.shape}"
        )
    diff = a.data - b.data
    d = float(np.linalg.norm(diff))

    def grad_fn(g):
        if d == 0.0:
            z = np.zeros_like(diff)
            return (z, z)
        u = (g / d) * diff
        return (u, -u)

    return _record(np.asarray(d), (a, b), grad_fn)


def cosine_similarity(a: Tensor, b: Tensor) -> Tensor:
    """a.b / (||a|| ||b||); both arguments must be nonzero vectors."""
    if a.data.shape != b.data.shape or a.data.ndim != 1:
        raise DimensionError(
            f"cosine_similarity needs equal-length vectors, got "
            f"{a.data.shape} and {b.data.shape}"
        )
    na = float(np.linalg.norm(a.data))
    nb = float(np.linalg.norm(b.data))
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine_similarity is undefined for zero-norm vectors")
    c = float(a.data @ b.data) / (na * nb)

    def grad_fn(g):
        gf = float(g)
        ga = gf * (b.data / (na * nb) - c * a.data / (na * na))
        gb = gf * (a.data / (na * nb) - c * b.data / (nb * nb))
        return (ga, gb)

    return _record(np.asarray(c), (a, b), grad_fn)


def pair_diff_norms(f: Tensor, i_idx: np.ndarray, j_idx: np.ndarray) -> Tensor:
    """||f[i_p] - f[j_p]|| for each pair p, over rows of a matrix.

    Fused form of per-pair euclidean_distance; zero-distance pairs get
    zero gradient, matching the scalar op.
    """
    if f.data.ndim != 2:
        raise DimensionError(f"pair_diff_norms expects a matrix, got {f.data.shape}")
    i_idx = np.asarray(i_idx, dtype=np.intp)
    j_idx = np.asarray(j_idx, dtype=np.intp)
    if i_idx.shape != j_idx.shape or i_idx.ndim != 1:
        raise DimensionError("pair index arrays must be equal-length vectors")
    diff = f.data[i_idx] - f.data[j_idx]
    d = np.linalg.norm(diff, axis=1)

    def grad_fn(g):
        safe = np.where(d > 0.0, d, 1.0)
        u = diff * (g / safe * (d > 0.0))[:, None]
        gf = np.zeros_like(f.data)
        np.add.at(gf, i_idx, u)
        np.add.at(gf, j_idx, -u)
        return (gf,)

    return _record(d, (f,), grad_fn)


def pairwise_distances(a: Tensor, b: Tensor) -> Tensor:
    """Matrix of ||a_i - b_j|| for all row pairs."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[1]:
        raise DimensionError(
            f"pairwise_distances needs matrices with one width, got "
            f"{a.data.shape} and {b.data.shape}"
        )
    diff = a.data[:, None, :] - b.data[None, :, :]
    d = np.sqrt((diff * diff).sum(axis=2))

    def grad_fn(g):
        safe = np.where(d > 0.0, d, 1.0)
        w = (g / safe * (d > 0.0))[:, :, None] * diff
        return (w.sum(axis=1), -w.sum(axis=0))

    return _record(d, (a, b), grad_fn)


# ---------------------------------------------------------------------------
# gradient checking


def finite_diff_check(fn, params: Sequence[Tensor], h: float = 1e-5) -> float:
    """Max relative disagreement between tape gradients and central differences.

    ``fn`` must be a pure function of the given parameter list returning a
    scalar tensor. Returns max over every parameter entry of
    |analytic - central| / max(1, |central|).
    """
    if h <= 0.0:
        raise ValueError(f"h must be positive, got {h}")
    params = list(params)
    tape = GradTape()
    for p in params:
        tape.watch(p)
    out = fn(params)
    tape.backward(out)
    analytic = [tape.grad(p).copy() for p in params]
    tape.release()

    base = [Tensor(p.data) for p in params]
    worst = 0.0
    for k, p in enumerate(params):
        arr = p.data
        for idx in np.ndindex(arr.shape):
            plus = arr.copy()
            plus[idx] += h
            minus = arr.copy()
            minus[idx] -= h
            trial = list(base)
            trial[k] = Tensor(plus)
            lp = float(fn(trial).data)
            trial[k] = Tensor(minus)
            lm = float(fn(trial).data)
            central = (lp - lm) / (2.0 * h)
            err = abs(float(analytic[k][idx]) - central) / max(1.0, abs(central))
            if err > worst:
                worst = err
    return worst
