"""Polynomial observables built from linear pairings and integrated Wick powers.

An observable is an expression tree over three primitives:

* ``pair(f)``    -- ``<phi, f>`` for a fixed test function ``f``,
* ``wickint(k)`` -- ``int :phi^k:``,
* ``const(c)``,

closed under ``+``, ``*`` and non-negative integer powers. Because the
primitives are polynomial in the field, ``F(w + t v)`` at a constant ``w`` is
a polynomial in ``t`` and can be expanded exactly (see :meth:`Observable.series`).
"""

from __future__ import annotations

from math import comb

import numpy as np

from .field import SpectralField, default_grid_size, project, to_grid
from .renorm import wick_means


class Observable:
    __slots__ = ("op", "args")

    def __init__(self, op, *args):
        self.op = op
        self.args = args

    # -- algebra ---------------------------------------------------------

    def __add__(self, other):
        return Observable("add", self, _lift(other))

    __radd__ = __add__

    def __mul__(self, other):
        return Observable("mul", self, _lift(other))

    __rmul__ = __mul__

    def __neg__(self):
        return Observable("mul", const(-1.0), self)

    def __sub__(self, other):
        return self + (-_lift(other))

    def __rsub__(self, other):
        return _lift(other) + (-self)

    def __pow__(self, n):
        if int(n) != n or n < 0:
            raise ValueError("only non-negative integer powers are supported")
        return Observable("pow", self, int(n))

    def __repr__(self):
        if self.op == "const":
            return f"const({self.args[0]!r})"
        if self.op == "pair":
            return "pair(f)"
        if self.op == "wick":
            return f"wickint({self.args[0]})"
        if self.op == "pow":
            return f"({self.args[0]!r})**{self.args[1]}"
        sym = " + " if self.op == "add" else " * "
        return "(" + sym.join(repr(a) for a in self.args) + ")"

    # -- structure -------------------------------------------------------

    @property
    def degree(self):
        """Polynomial degree in the field."""
        op, a = self.op, self.args
        if op == "const":
            return 0
        if op == "pair":
            return 1
        if op == "wick":
            return a[0]
        if op == "add":
            return max(a[0].degree, a[1].degree)
        if op == "mul":
            return a[0].degree + a[1].degree
        return a[0].degree * a[1]

    def max_wick(self):
        op, a = self.op, self.args
        if op == "wick":
            return a[0]
        if op in ("add", "mul"):
            return max(a[0].max_wick(), a[1].max_wick())
        if op == "pow":
            return a[0].max_wick()
        return 0

    # -- evaluation ------------------------------------------------------

    def evaluate(self, psi: SpectralField, eps: float = 1.0, sigma: float = 0.0, M=None):
        """Value at ``phi = sqrt(eps) psi``.

        Wick primitives use variance ``eps * sigma`` in ``phi`` (equivalently
        ``sigma`` for ``psi``, rescaled by ``eps^(k/2)``).
        """
        ctx = _Context(psi, sigma, M)
        return np.asarray(self._eval(ctx, float(eps)))[()]

    def _eval(self, ctx, eps):
        op, a = self.op, self.args
        if op == "const":
            return a[0] * np.ones(ctx.batch_shape)
        if op == "pair":
            return np.sqrt(eps) * ctx.pair(a[0])
        if op == "wick":
            k = a[0]
            return eps ** (k / 2.0) * ctx.wick(k)
        if op == "add":
            return a[0]._eval(ctx, eps) + a[1]._eval(ctx, eps)
        if op == "mul":
            return a[0]._eval(ctx, eps) * a[1]._eval(ctx, eps)
        return a[0]._eval(ctx, eps) ** a[1]

    def series(self, w: float, v: SpectralField, sigma: float, order: int, M=None):
        """Coefficients of ``t -> F(w + t v)`` up to ``t^order``.

        Wick primitives of the shifted field use variance ``t^2 sigma`` so that
        ``:(w + t v)^k: = sum_l C(k, l) w^(k-l) t^l :v^l:`` holds exactly.
        Returns an array of shape ``batch + (order + 1,)``.
        """
        ctx = _Context(v, sigma, M)
        return self._series(ctx, float(w), int(order))

    def _series(self, ctx, w, order):
        op, a = self.op, self.args
        out = np.zeros(ctx.batch_shape + (order + 1,))
        if op == "const":
            out[..., 0] = a[0]
        elif op == "pair":
            f = a[0]
            out[..., 0] = w * f.coeffs[..., f.N, f.N].real
            if order >= 1:
                out[..., 1] = ctx.pair(f)
        elif op == "wick":
            k = a[0]
            for l in range(min(k, order) + 1):
                out[..., l] = comb(k, l) * w ** (k - l) * ctx.wick(l)
        elif op == "add":
            out = a[0]._series(ctx, w, order) + a[1]._series(ctx, w, order)
        elif op == "mul":
            out = series_mul(a[0]._series(ctx, w, order), a[1]._series(ctx, w, order))
        else:
            base = a[0]._series(ctx, w, order)
            out[..., 0] = 1.0
            for _ in range(a[1]):
                out = series_mul(out, base)
        return out


def series_mul(p, q):
    """Truncated product of power series stored along the last axis."""
    order = p.shape[-1] - 1
    out = np.zeros(np.broadcast_shapes(p.shape, q.shape))
    for i in range(order + 1):
        out[..., i:] += p[..., i:i + 1] * q[..., :order + 1 - i]
    return out


def series_exp(e):
    """``exp`` of a power series with zero constant term, truncated."""
    order = e.shape[-1] - 1
    y = np.zeros(e.shape)
    y[..., 0] = 1.0
    for n in range(1, order + 1):
        acc = 0.0
        for j in range(1, n + 1):
            acc = acc + j * e[..., j] * y[..., n - j]
        y[..., n] = acc / n
    return y


class _Context:
    """Caches primitive values for one batch of fields."""

    def __init__(self, psi, sigma, M):
        self.psi = psi
        self.sigma = float(sigma)
        self.M = M
        self.batch_shape = psi.batch_shape
        self._pairs = {}
        self._means = None

    def pair(self, f):
        key = id(f)
        if key not in self._pairs:
            N = min(self.psi.N, f.N)
            a = project(self.psi, N).coeffs
            b = project(f, N).coeffs
            self._pairs[key] = (a * np.conj(b)).sum(axis=(-2, -1)).real
        return self._pairs[key]

    def wick(self, k):
        if k == 0:
            return np.ones(self.batch_shape)
        if self._means is None:
            M = default_grid_size(self.psi.N) if self.M is None else self.M
            self._means = wick_means(to_grid(self.psi, M).values, self.sigma)
        return self._means[..., k - 1]


def _lift(x):
    return x if isinstance(x, Observable) else const(x)


def const(c):
    return Observable("const", float(c))


def pair(f: SpectralField):
    return Observable("pair", f)


def wickint(k):
    if k not in (1, 2, 3, 4):
        raise ValueError("wickint supports k = 1..4")
    return Observable("wick", int(k))


def mean_pairing(N=0):
    """``pair(f)`` with ``f = 1``, i.e. the spatial mean of the field."""
    return pair(SpectralField.constant(N, 1.0))
