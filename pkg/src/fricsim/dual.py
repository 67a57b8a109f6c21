"""Forward-mode automatic differentiation with array-valued dual numbers.

A :class:`Dual` carries a real part ``re`` and a tangent part ``eps`` with the
algebra ``(a + b eps)(c + d eps) = ac + (ad + bc) eps``, ``eps^2 = 0``.  Both
parts are numpy arrays of the same shape, so a single Dual propagates one
directional derivative through vectorized physics kernels.  Every kernel in
this package is written against the small generic-math API below (``where``,
``sqrt``, ``matmul``, ...) which dispatches on ndarray-vs-Dual; the same code
path therefore serves plain evaluation and Jacobian-vector products.

Branching convention: comparisons look only at the real part, so a dual
evaluation always takes the same branch as the real evaluation at the same
point.  ``maximum``/``minimum`` break derivative ties toward their first
argument.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Dual", "is_dual", "value", "tangent", "where", "maximum", "minimum",
    "sqrt", "log", "asum", "dot_last", "stack_last", "matmul", "swap_last2",
    "det3", "inv3", "cross_last", "norm_last", "zeros", "concat",
    "scatter_add", "jvp", "derivative",
]

_GUARD = 1e-300  # additive guard used by norm_last; below any physical scale


def _arr(x):
    return np.asarray(x, dtype=float)


class Dual:
    """Array-valued dual number: real part ``re``, tangent part ``eps``."""

    __slots__ = ("re", "eps")
    # Keep numpy from consuming us in mixed expressions; it then defers to the
    # reflected operators below.
    __array_ufunc__ = None

    def __init__(self, re, eps):
        re = _arr(re)
        eps = _arr(eps)
        if eps.shape != re.shape:
            eps = np.broadcast_to(eps, re.shape)
        self.re = re
        self.eps = eps

    # -- container protocol -------------------------------------------------
    @property
    def shape(self):
        return self.re.shape

    @property
    def ndim(self):
        return self.re.ndim

    @property
    def size(self):
        return self.re.size

    def __len__(self):
        return len(self.re)

    def __getitem__(self, key):
        return Dual(self.re[key], self.eps[key])

    def reshape(self, *shape):
        return Dual(self.re.reshape(*shape), self.eps.reshape(*shape))

    def ravel(self):
        return Dual(self.re.ravel(), self.eps.ravel())

    def sum(self, axis=None):
        return Dual(self.re.sum(axis=axis), self.eps.sum(axis=axis))

    def __repr__(self):
        return f"Dual(re={self.re!r}, eps={self.eps!r})"

    # -- arithmetic ----------------------------------------------------------
    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.re + other.re, self.eps + other.eps)
        return Dual(self.re + other, self.eps + np.zeros_like(_arr(other)))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual):
            return Dual(self.re - other.re, self.eps - other.eps)
        return Dual(self.re - other, self.eps + np.zeros_like(_arr(other)))

    def __rsub__(self, other):
        return Dual(other - self.re, np.zeros_like(_arr(other)) - self.eps)

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(self.re * other.re,
                        self.eps * other.re + self.re * other.eps)
        other = _arr(other)
        return Dual(self.re * other, self.eps * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            inv = 1.0 / other.re
            return Dual(self.re * inv,
                        (self.eps - self.re * inv * other.eps) * inv)
        inv = 1.0 / _arr(other)
        return Dual(self.re * inv, self.eps * inv)

    def __rtruediv__(self, other):
        other = _arr(other)
        inv = 1.0 / self.re
        val = other * inv
        return Dual(val, -val * inv * self.eps)

    def __neg__(self):
        return Dual(-self.re, -self.eps)

    def __pow__(self, p):
        if not np.isscalar(p):
            raise TypeError("Dual ** only supports scalar real exponents")
        if p == 2:
            return Dual(self.re * self.re, 2.0 * self.re * self.eps)
        val = self.re ** p
        return Dual(val, p * self.re ** (p - 1.0) * self.eps)

    # -- comparisons: real parts only ---------------------------------------
    def _other_re(self, other):
        return other.re if isinstance(other, Dual) else _arr(other)

    def __lt__(self, other):
        return self.re < self._other_re(other)

    def __le__(self, other):
        return self.re <= self._other_re(other)

    def __gt__(self, other):
        return self.re > self._other_re(other)

    def __ge__(self, other):
        return self.re >= self._other_re(other)

    def __eq__(self, other):  # noqa: D105 - value comparison, like ndarray
        return self.re == self._other_re(other)

    def __ne__(self, other):
        return self.re != self._other_re(other)

    __hash__ = None


def is_dual(x) -> bool:
    return isinstance(x, Dual)


def value(x):
    """Real part of ``x`` (identity for plain arrays)."""
    return x.re if isinstance(x, Dual) else _arr(x)


def tangent(x):
    """Tangent part of ``x`` (zeros for plain arrays)."""
    if isinstance(x, Dual):
        return np.broadcast_to(x.eps, x.re.shape)
    return np.zeros_like(_arr(x))


def _coerce_pair(a, b):
    """Promote a real operand to a zero-tangent Dual when the other is Dual."""
    da, db = isinstance(a, Dual), isinstance(b, Dual)
    if da and not db:
        b = Dual(_arr(b), np.zeros_like(_arr(b)))
    elif db and not da:
        a = Dual(_arr(a), np.zeros_like(_arr(a)))
    return a, b


def where(cond, a, b):
    cond = np.asarray(cond)
    a, b = _coerce_pair(a, b)
    if isinstance(a, Dual):
        return Dual(np.where(cond, a.re, b.re), np.where(cond, a.eps, b.eps))
    return np.where(cond, a, b)


def maximum(a, b):
    """Elementwise max; derivative ties break toward the first argument."""
    return where(value(b) > value(a), b, a)


def minimum(a, b):
    """Elementwise min; derivative ties break toward the first argument."""
    return where(value(b) < value(a), b, a)


def sqrt(x):
    if isinstance(x, Dual):
        root = np.sqrt(x.re)
        return Dual(root, 0.5 * x.eps / root)
    return np.sqrt(x)


def log(x):
    if isinstance(x, Dual):
        with np.errstate(invalid="ignore", divide="ignore"):
            return Dual(np.log(x.re), x.eps / x.re)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.log(x)


def asum(x, axis=None):
    if isinstance(x, Dual):
        return x.sum(axis=axis)
    return np.sum(x, axis=axis)


def dot_last(a, b):
    """Inner product over the last axis."""
    return asum(a * b, axis=-1)


def stack_last(parts):
    """Stack scalars-per-item into a new trailing axis (generic np.stack)."""
    if any(isinstance(p, Dual) for p in parts):
        parts = [p if isinstance(p, Dual) else Dual(_arr(p), np.zeros_like(_arr(p)))
                 for p in parts]
        return Dual(np.stack([p.re for p in parts], axis=-1),
                    np.stack([p.eps for p in parts], axis=-1))
    return np.stack(parts, axis=-1)


def concat(parts):
    if any(isinstance(p, Dual) for p in parts):
        parts = [p if isinstance(p, Dual) else Dual(_arr(p), np.zeros_like(_arr(p)))
                 for p in parts]
        return Dual(np.concatenate([p.re for p in parts]),
                    np.concatenate([p.eps for p in parts]))
    return np.concatenate(parts)


def matmul(a, b):
    """Batched matrix product with exact product rule for dual operands."""
    da, db = isinstance(a, Dual), isinstance(b, Dual)
    if not da and not db:
        return a @ b
    if da and db:
        return Dual(a.re @ b.re, a.eps @ b.re + a.re @ b.eps)
    if da:
        return Dual(a.re @ b, a.eps @ b)
    return Dual(a @ b.re, a @ b.eps)


def swap_last2(a):
    if isinstance(a, Dual):
        return Dual(np.swapaxes(a.re, -1, -2), np.swapaxes(a.eps, -1, -2))
    return np.swapaxes(a, -1, -2)


def det3(m):
    """Determinant of (..., 3, 3) via cofactors; generic over Dual."""
    a, b, c = m[..., 0, 0], m[..., 0, 1], m[..., 0, 2]
    d, e, f = m[..., 1, 0], m[..., 1, 1], m[..., 1, 2]
    g, h, i = m[..., 2, 0], m[..., 2, 1], m[..., 2, 2]
    return a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g)


def inv3(m):
    """Inverse of (..., 3, 3) via the adjugate; generic over Dual."""
    a, b, c = m[..., 0, 0], m[..., 0, 1], m[..., 0, 2]
    d, e, f = m[..., 1, 0], m[..., 1, 1], m[..., 1, 2]
    g, h, i = m[..., 2, 0], m[..., 2, 1], m[..., 2, 2]
    det = a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g)
    # Columns of the adjugate; stack_last([c0, c1, c2])[..., i, j] = c_j[..., i].
    cols = [
        stack_last([e * i - f * h, f * g - d * i, d * h - e * g]),
        stack_last([c * h - b * i, a * i - c * g, b * g - a * h]),
        stack_last([b * f - c * e, c * d - a * f, a * e - b * d]),
    ]
    adj = stack_last(cols)
    if isinstance(adj, Dual):
        det = det if isinstance(det, Dual) else Dual(det, np.zeros_like(det))
        return Dual(adj.re / det.re[..., None, None],
                    (adj.eps * det.re[..., None, None]
                     - adj.re * det.eps[..., None, None])
                    / det.re[..., None, None] ** 2)
    return adj / det[..., None, None]


def cross_last(a, b):
    """Cross product over the last axis (length 3); generic over Dual."""
    ax, ay, az = a[..., 0], a[..., 1], a[..., 2]
    bx, by, bz = b[..., 0], b[..., 1], b[..., 2]
    return stack_last([ay * bz - az * by, az * bx - ax * bz, ax * by - ay * bx])


def norm_last(a):
    """Euclidean norm over the last axis, guarded so the dual derivative at
    zero is zero instead of NaN (values are unchanged at any physical scale)."""
    return sqrt(dot_last(a, a) + _GUARD)


def zeros(shape, like):
    """Zero array matching the scalar type of ``like`` (writable)."""
    if isinstance(like, Dual):
        return Dual(np.zeros(shape), np.zeros(shape))
    return np.zeros(shape)


def scatter_add(target, index, values):
    """Unbuffered ``target[index] += values`` over the first axis."""
    target, values = _coerce_pair(target, values)
    if isinstance(target, Dual):
        np.add.at(target.re, index, values.re)
        np.add.at(target.eps, index, values.eps)
    else:
        np.add.at(target, index, values)
    return target


def jvp(fn, x, p):
    """Jacobian-vector product of ``fn`` at ``x`` in direction ``p``.

    ``fn`` must accept a Dual argument; the directional derivative is the
    tangent part of ``fn(x + eps*p)``, exact to machine precision on smooth
    branches.
    """
    x = _arr(x)
    p = np.broadcast_to(_arr(p), x.shape)
    out = fn(Dual(x, p))
    if isinstance(out, Dual):
        return np.array(np.broadcast_to(out.eps, np.shape(out.re)), dtype=float)
    return np.zeros_like(_arr(out))


def derivative(fn, x: float) -> float:
    """Scalar derivative d fn / dx via a unit-tangent dual."""
    out = fn(Dual(np.asarray(float(x)), np.asarray(1.0)))
    return float(out.eps) if isinstance(out, Dual) else 0.0
