"""Wick renormalisation: tadpoles, Hermite polynomials, Wick powers, potential.

Wick powers use the variance-parameter Hermite polynomials

    H_2(x; s) = x^2 - s,  H_3(x; s) = x^3 - 3 s x,  H_4(x; s) = x^4 - 6 s x^2 + 3 s^2.

Frequency sums run over the Euclidean ball ``|n| <= N`` with
``<n>^2 = 1 + |n|^2`` for the free field and ``2 + |n|^2`` for the Hessian
Gaussian at a well.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import kernels
from .field import GridField, SpectralField, default_grid_size, project, to_grid

LIMIT_CUTOFF = 2000  # partial sum used as the N -> infinity value of d


# ---------------------------------------------------------------------------
# lattice sums over the ball


def _cancel_term(x):
    """``x - log(1 + x)`` without cancellation for small ``x``."""
    x = np.asarray(x, dtype=float)
    small = x < 1e-3
    xs = np.where(small, x, 0.0)
    series = xs * xs * (0.5 - xs * (1.0 / 3.0 - xs * (0.25 - xs * (0.2 - xs / 6.0))))
    return np.where(small, series, x - np.log1p(np.where(small, 0.0, x)))


_TERMS = {
    "c": lambda r: 1.0 / (1.0 + r),
    "cw": lambda r: 1.0 / (2.0 + r),
    "d": lambda r: 1.0 / ((1.0 + r) * (2.0 + r)),
    "logfred": lambda r: np.log1p(1.0 / (1.0 + r)),
    "cancel": lambda r: _cancel_term(1.0 / (1.0 + r)),
    "inv_sq": lambda r: 1.0 / (1.0 + r) ** 2,
}


def _split(a):
    c = 134217729.0 * a  # 2^27 + 1
    h = c - (c - a)
    return h, a - h


def _two_prod(a, b):
    """Error-free product: ``a * b = p + e`` exactly."""
    p = a * b
    ah, al = _split(a)
    bh, bl = _split(b)
    return p, ((ah * bh - p) + ah * bl + al * bh) + al * bl


def _table_size(nmax):
    size = 64
    while size < nmax:
        size *= 2
    return size


@lru_cache(maxsize=4)
def _shell_counts(size):
    return kernels.shell_counts(size)


@lru_cache(maxsize=32)
def _ball_sums(name, size):
    counts = _shell_counts(size)
    r = np.arange(counts.shape[0], dtype=float)
    hi, lo = _two_prod(counts.astype(float), _TERMS[name](r))
    cum = kernels.dd_cumsum(hi, lo)
    ns = np.arange(size + 1)
    return cum[ns * ns]


def ball_sum(name, N):
    """Partial sum over ``|n| <= N`` of one of the tabulated lattice terms.

    ``name`` is one of ``c``, ``cw``, ``d``, ``logfred``, ``cancel``,
    ``inv_sq``. Sums are compensated and accumulated shell by shell in
    increasing ``|n|^2``, so values are reproducible bit for bit.
    """
    N = int(N)
    if N < 0:
        raise ValueError("cutoff must be non-negative")
    return float(_ball_sums(name, _table_size(N))[N])


def inv_sq_tail_bound(N):
    """Certified upper bound on ``sum_{|n| > N} (1 + |n|^2)^-2``.

    Each lattice point is dominated by the integral of
    ``(1 + (|x| - r)^2)^-2`` over its unit cell (``r = sqrt(2)/2``), which
    gives a closed form for ``N >= 2``; smaller ``N`` add the finite shells
    up to radius 2 explicitly.
    """
    N = int(N)
    if N < 2:
        return ball_sum("inv_sq", 2) - ball_sum("inv_sq", N) + inv_sq_tail_bound(2)
    r = math.sqrt(0.5)
    S = N - 2.0 * r
    radial = 0.5 / (1.0 + S * S)
    offset = r * 0.5 * (math.pi / 2.0 - math.atan(S) - S / (1.0 + S * S))
    return 2.0 * math.pi * (radial + offset)


# ---------------------------------------------------------------------------
# Wick constants


@dataclass(frozen=True)
class WickConstants:
    N: int
    c_N: float
    c_wN: float
    d_N: float


def wick_constants(N: int) -> WickConstants:
    """Tadpoles ``c_N``, ``c_{w,N}`` and their (convergent) difference ``d_N``.

    ``d_N`` is summed directly from ``1/((1+|n|^2)(2+|n|^2))`` rather than
    as a difference of two divergent sums.
    """
    return WickConstants(int(N), ball_sum("c", N), ball_sum("cw", N), ball_sum("d", N))


def d_limit():
    """Limit-mode value of ``c - c_w`` and its certified truncation error."""
    return ball_sum("d", LIMIT_CUTOFF), inv_sq_tail_bound(LIMIT_CUTOFF)


# ---------------------------------------------------------------------------
# Hermite polynomials and Wick powers


def hermite(k, x, sigma):
    """Hermite polynomial ``H_k(x; sigma)`` for ``k <= 4``."""
    if k not in (0, 1, 2, 3, 4):
        raise ValueError(f"unsupported Hermite degree {k}")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    x = np.asarray(x, dtype=float)
    if k == 0:
        return np.ones_like(x)[()]
    if k == 1:
        return x[()]
    x2 = x * x
    if k == 2:
        return (x2 - sigma)[()]
    if k == 3:
        return (x * (x2 - 3.0 * sigma))[()]
    return (x2 * x2 - 6.0 * sigma * x2 + 3.0 * sigma * sigma)[()]


@dataclass(frozen=True)
class WickBundle:
    """Pointwise enhanced data ``(v, :v^2:, :v^3:, :v^4:)`` with its variance."""

    v: np.ndarray
    p2: np.ndarray
    p3: np.ndarray
    p4: np.ndarray
    sigma: float

    def power(self, k):
        return {0: np.ones_like(self.v), 1: self.v, 2: self.p2, 3: self.p3, 4: self.p4}[k]

    def integral(self, k):
        """Grid mean of ``:v^k:`` (exact quadrature for alias-free grids)."""
        return self.power(k).mean(axis=(-2, -1))


def _values(v):
    if isinstance(v, GridField):
        return v.values
    if isinstance(v, SpectralField):
        return to_grid(v).values
    return np.asarray(v, dtype=float)


def wick_powers(v, sigma: float) -> WickBundle:
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    x = _values(v)
    return WickBundle(x, hermite(2, x, sigma), hermite(3, x, sigma), hermite(4, x, sigma), float(sigma))


def convert_reference(b: WickBundle, d: float) -> WickBundle:
    """Re-centre Wick powers from variance ``sigma`` to ``sigma - d``.

    Uses the shift identities ``H_2(x; s-d) = H_2(x; s) + d``,
    ``H_3(x; s-d) = H_3(x; s) + 3 d x`` and
    ``H_4(x; s-d) = H_4(x; s) + 6 d H_2(x; s-d) - 3 d^2``.
    """
    new_sigma = b.sigma - d
    if new_sigma < 0:
        raise ValueError(f"converted variance {new_sigma} is negative")
    p2 = b.p2 + d
    p3 = b.p3 + 3.0 * d * b.v
    p4 = b.p4 + 6.0 * d * p2 - 3.0 * d * d
    return WickBundle(b.v, p2, p3, p4, new_sigma)


def wick_means(v, sigma):
    """Batch of grid means ``(int v, int :v^2:, int :v^3:, int :v^4:)``.

    ``v`` has shape ``(..., M, M)``; returns ``(..., 4)``. Runs through the
    compiled kernel.
    """
    x = _values(v)
    lead = x.shape[:-2]
    flat = np.ascontiguousarray(x.reshape((-1, x.shape[-2] * x.shape[-1])))
    return kernels.wick_integrals(flat, float(sigma)).reshape(lead + (4,))


# ---------------------------------------------------------------------------
# potential and the re-centred functionals


@dataclass(frozen=True)
class PotentialValue:
    v1: np.ndarray
    v2: np.ndarray

    @property
    def total(self):
        return self.v1 + self.v2


def potential_V(phi: SpectralField, N: int, sigma: float, M: int | None = None) -> PotentialValue:
    """Renormalised double-well potential at cutoff ``N``.

    ``V_1 = 1/4 int :phi^4: - 1/2 int :phi^2: + 1/4`` and
    ``V_2 = -1/2 int :phi^2:`` with Wick variance ``sigma``.
    """
    phiN = project(phi, N)
    M = default_grid_size(phiN.N) if M is None else int(M)
    if M < 4 * phiN.N + 1:
        raise ValueError(f"grid size M={M} too small for exact quartic quadrature at N={phiN.N}")
    m = wick_means(to_grid(phiN, M).values, sigma)
    v1 = 0.25 * m[..., 3] - 0.5 * m[..., 1] + 0.25
    v2 = -0.5 * m[..., 1]
    return PotentialValue(v1[()], v2[()])


def h3_h4(b: WickBundle, d: float, w: int | None = None):
    """``(H3, H4)`` for a bundle Wick-ordered under the Hessian Gaussian.

    ``H4 = int :v^4:_w - 6 d int :v^2:_w`` and ``H3 = int :v^3:_w - 3 d int v``.
    ``w`` is accepted for signature symmetry; neither functional depends on it.
    """
    return h3_h4_from_means(np.stack([b.integral(1), b.integral(2), b.integral(3), b.integral(4)], axis=-1), d)


def h3_h4_from_means(means, d):
    means = np.asarray(means)
    H4 = means[..., 3] - 6.0 * d * means[..., 1]
    H3 = means[..., 2] - 3.0 * d * means[..., 0]
    return H3[()], H4[()]


def model_norm(b: WickBundle, eta: float = 0.5, N: int | None = None):
    """Homogeneous norm of the enhanced data set.

    ``|v|_{C^-eta} + |:v^2:|^(1/2) + |:v^3:|^(1/3) + |:v^4:|^(1/4)``, each term
    measured with the sharp-shell proxy norm. Higher powers are resolved up
    to their own spectral support ``k N`` when ``N`` is given.
    """
    from .field import cminus_norm, to_spectral

    M = b.v.shape[-1]
    nmax = (M - 2) // 2
    total = 0.0
    for k, arr in ((1, b.v), (2, b.p2), (3, b.p3), (4, b.p4)):
        Nk = nmax if N is None else min(nmax, k * N)
        spec = to_spectral(arr, Nk)
        total = total + cminus_norm(spec, eta, M) ** (1.0 / k)
    return total
