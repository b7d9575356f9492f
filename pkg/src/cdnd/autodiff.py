"""A small reverse-mode differentiation engine over float64 numpy arrays.

Only the operations the models and losses need are provided. Each op builds a
node holding its inputs and a closure that maps the upstream gradient to input
gradients; :meth:`Tensor.backward` walks the graph in reverse topological order.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

SVD_SWEEPS = 100
SVD_TOL = 1e-14
SMALL_SIGMA = 1e-10


class ShapeError(ValueError):
    pass


class NumericFailure(ArithmeticError):
    def __init__(self, message: str, payload=None):
        super().__init__(message)
        self.payload = payload


class Tensor:
    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad", "op", "name")

    def __init__(self, value, requires_grad: bool = False, name: str = ""):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.parents: tuple[Tensor, ...] = ()
        self.backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.requires_grad = requires_grad
        self.op = "leaf"
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.shape})"

    def zero_grad(self):
        self.grad = None

    def backward(self, seed: np.ndarray | float | None = None) -> None:
        if seed is None:
            if self.value.size != 1:
                raise ShapeError("backward() without a seed needs a scalar output")
            seed = np.ones_like(self.value)
        order = _topological(self)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(seed, dtype=np.float64) * np.ones_like(self.value)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.backward_fn is None:
                if node.requires_grad:
                    node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None or not _needs_grad(parent):
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg

    # operator sugar
    def __add__(self, other):
        return add(self, _wrap(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _needs_grad(t: Tensor) -> bool:
    return t.requires_grad or t.backward_fn is not None


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node.parents):
            if id(p) not in seen:
                stack.append((p, False))
    return order


def make_node(value, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    out = Tensor(value)
    if any(_needs_grad(p) for p in parents):
        out.parents = tuple(parents)
        out.backward_fn = backward_fn
    out.op = op
    return out


def _same_shape(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# -- elementwise ------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape == b.shape:
        return make_node(a.value + b.value, (a, b), lambda g: (g, g), "add")
    # row-wise bias: (r, c) + (c,)
    if a.value.ndim == 2 and b.value.ndim == 1 and a.shape[1] == b.shape[0]:
        return make_node(a.value + b.value, (a, b), lambda g: (g, g.sum(axis=0)), "add_bias")
    if b.value.size == 1 and a.value.ndim >= b.value.ndim:
        return make_node(a.value + b.value, (a, b), lambda g: (g, np.sum(g).reshape(b.shape)), "add_scalar")
    if a.value.size == 1:
        return add(b, a)
    raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}")


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, scale(b, -1.0))


def scale(a: Tensor, c: float) -> Tensor:
    return make_node(a.value * c, (a,), lambda g: (g * c,), "scale")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    return make_node(a.value * b.value, (a, b), lambda g: (g * b.value, g * a.value), "mul")


def relu(a: Tensor) -> Tensor:
    mask = a.value > 0
    return make_node(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,), "relu")


def log(a: Tensor) -> Tensor:
    if np.any(a.value <= 0):
        raise NumericFailure("log of a non-positive value", a.value)
    return make_node(np.log(a.value), (a,), lambda g: (g / a.value,), "log")


def exp(a: Tensor) -> Tensor:
    v = np.exp(a.value)
    return make_node(v, (a,), lambda g: (g * v,), "exp")


def square(a: Tensor) -> Tensor:
    return make_node(a.value ** 2, (a,), lambda g: (2.0 * g * a.value,), "square")


# -- reductions and reshaping ---------------------------------------------------------


def total(a: Tensor) -> Tensor:
    return make_node(np.sum(a.value), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),), "sum")


def mean(a: Tensor) -> Tensor:
    n = a.value.size
    return make_node(np.mean(a.value), (a,), lambda g: (np.full(a.shape, float(g) / n),), "mean")


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    return make_node(a.value.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ShapeError("concat_rows: nothing to concatenate")
    cols = {p.shape[1:] for p in parts}
    if len(cols) != 1:
        raise ShapeError(f"concat_rows: trailing shapes differ {cols}")
    splits = np.cumsum([p.shape[0] for p in parts])[:-1]
    return make_node(np.concatenate([p.value for p in parts], axis=0), tuple(parts),
                     lambda g: tuple(np.split(g, splits, axis=0)), "concat_rows")


def pick(a: Tensor, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """Gather ``a[rows[i], cols[i]]`` into a vector."""
    rows = np.asarray(rows)
    cols = np.asarray(cols)

    def back(g):
        out = np.zeros_like(a.value)
        np.add.at(out, (rows, cols), g)
        return (out,)

    return make_node(a.value[rows, cols], (a,), back, "pick")


def max_pool_points(a: Tensor, groups: int) -> Tensor:
    """Max over points: ``(groups * n, F) -> (groups, F)``; gradient to the first argmax."""
    rows, feat = a.shape
    if rows % groups:
        raise ShapeError(f"max_pool_points: {rows} rows do not split into {groups} groups")
    n = rows // groups
    v = a.value.reshape(groups, n, feat)
    arg = np.argmax(v, axis=1)  # first occurrence -> lowest point index
    out = np.take_along_axis(v, arg[:, None, :], axis=1)[:, 0, :]

    def back(g):
        grad = np.zeros_like(v)
        np.put_along_axis(grad, arg[:, None, :], g[:, None, :], axis=1)
        return (grad.reshape(rows, feat),)

    return make_node(out, (a,), back, "max_pool")


# -- linear algebra ----------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return make_node(a.value @ b.value, (a, b), lambda g: (g @ b.value.T, a.value.T @ g), "matmul")


def softmax_rows(a: Tensor) -> Tensor:
    if a.value.ndim != 2:
        raise ShapeError("softmax_rows expects a matrix")
    z = a.value - a.value.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)

    def back(g):
        return (p * (g - np.sum(g * p, axis=1, keepdims=True)),)

    return make_node(p, (a,), back, "softmax")


def gradient_reverse(a: Tensor, lam: float = 1.0) -> Tensor:
    """Identity forward; multiplies the upstream gradient by ``-lam`` on the way back."""
    if not np.isfinite(lam):
        raise NumericFailure("gradient reversal coefficient must be finite", lam)
    return make_node(a.value, (a,), lambda g: (-lam * g,), "grl")


def jacobi_svd(a: np.ndarray, sweeps: int = SVD_SWEEPS) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thin SVD ``a = U diag(s) V^T`` by one-sided Jacobi rotations.

    Returns ``U`` (b, r), ``s`` (r,) descending and ``V`` (K, r), r = min(b, K).
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or min(a.shape) < 1:
        raise ShapeError(f"jacobi_svd expects a non-empty matrix, got {a.shape}")
    if a.shape[0] < a.shape[1]:
        v, s, u = jacobi_svd(a.T, sweeps)
        return u, s, v

    work = a.copy()
    cols = work.shape[1]
    v = np.eye(cols)
    floor = (1e-15 * np.linalg.norm(a)) ** 2  # columns at rounding-noise level are treated as zero
    for _ in range(sweeps):
        rotated = False
        for i in range(cols - 1):
            for j in range(i + 1, cols):
                x, y = work[:, i], work[:, j]
                alpha = x @ x
                beta = y @ y
                gamma = x @ y
                if gamma == 0.0 or abs(gamma) <= SVD_TOL * np.sqrt(alpha * beta) or min(alpha, beta) <= floor:
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = np.copysign(1.0, zeta) / (abs(zeta) + np.hypot(1.0, zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s_ = c * t
                wi, wj = work[:, i].copy(), work[:, j].copy()
                work[:, i] = c * wi - s_ * wj
                work[:, j] = s_ * wi + c * wj
                vi, vj = v[:, i].copy(), v[:, j].copy()
                v[:, i] = c * vi - s_ * vj
                v[:, j] = s_ * vi + c * vj
        if not rotated:
            break
    else:
        raise NumericFailure(f"Jacobi SVD did not converge in {sweeps} sweeps", a)

    sigma = np.linalg.norm(work, axis=0)
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    work = work[:, order]
    v = v[:, order]
    u = np.zeros_like(work)
    big = sigma > SMALL_SIGMA * max(sigma[0], 1.0)
    u[:, big] = work[:, big] / sigma[big]
    if not big.all():
        u = _complete_basis(u, big)
    return u, sigma, v


def _complete_basis(u: np.ndarray, filled: np.ndarray) -> np.ndarray:
    """Fill the columns of ``u`` not in ``filled`` with an orthonormal completion."""
    basis = [u[:, j] for j in np.flatnonzero(filled)]
    candidates = iter(np.eye(u.shape[0]))
    for j in np.flatnonzero(~filled):
        for e in candidates:
            w = e - sum((b @ e) * b for b in basis) if basis else e.copy()
            for b in basis:  # second pass for numerical orthogonality
                w = w - (b @ w) * b
            nrm = np.linalg.norm(w)
            if nrm > 1e-8:
                u[:, j] = w / nrm
                basis.append(u[:, j])
                break
    return u


def nuclear_norm(a: Tensor) -> Tensor:
    """Sum of singular values; backward uses ``U V^T`` over non-negligible singular values."""
    if a.value.ndim != 2:
        raise ShapeError("nuclear_norm expects a matrix")
    u, s, v = jacobi_svd(a.value)
    keep = s > SMALL_SIGMA
    sub_grad = u[:, keep] @ v[:, keep].T
    return make_node(np.sum(s), (a,), lambda g: (float(g) * sub_grad,), "nuclear_norm")


def frobenius_norm(a: Tensor) -> Tensor:
    f = float(np.sqrt(np.sum(a.value ** 2)))
    return make_node(f, (a,), lambda g: (float(g) * a.value / f if f > 0 else np.zeros_like(a.value),), "fro")


# -- verification -------------------------------------------------------------------------


def finite_difference_check(f: Callable[[Tensor], Tensor], point, step: float = 1e-5) -> float:
    """Max relative error between central differences and the tape gradient of scalar ``f``."""
    x0 = np.array(point, dtype=np.float64)
    x = Tensor(x0.copy(), requires_grad=True)
    out = f(x)
    if not np.isfinite(out.value).all():
        raise NumericFailure("function is not finite at the check point", x0)
    out.backward()
    tape = np.zeros_like(x0) if x.grad is None else x.grad

    numeric = np.zeros_like(x0)
    flat = numeric.reshape(-1)
    for i in range(x0.size):
        plus = x0.copy().reshape(-1)
        minus = x0.copy().reshape(-1)
        plus[i] += step
        minus[i] -= step
        fp = f(Tensor(plus.reshape(x0.shape))).value
        fm = f(Tensor(minus.reshape(x0.shape))).value
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericFailure("function is not finite near the check point", x0)
        flat[i] = (fp - fm) / (2.0 * step)
    denom = np.maximum(np.abs(tape), 1e-8)
    return float(np.max(np.abs(numeric - tape) / denom)) if x0.size else 0.0
