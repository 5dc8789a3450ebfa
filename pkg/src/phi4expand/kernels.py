"""Hot numeric kernels with numba and pure-numpy implementations.

Every kernel exists twice: ``<name>_numba`` (compiled with ``@njit``) and
``<name>_numpy`` (vectorised numpy). The public ``<name>`` alias is bound at
import time according to :data:`phi4expand._accel.USE_NUMBA`. Both variants
agree to rounding; the benchmark in ``benchmarks/bench_kernels.py`` times them
against each other.
"""

import math

import numpy as np

from ._accel import USE_NUMBA, njit

__all__ = [
    "shell_counts",
    "dd_cumsum",
    "wick_integrals",
    "exp_euler_update",
]


# ---------------------------------------------------------------------------
# lattice shell counts: counts[r2] = #{n in Z^2 : |n|^2 = r2}, r2 <= nmax^2


@njit(cache=True)
def shell_counts_numba(nmax):
    rmax = nmax * nmax
    counts = np.zeros(rmax + 1, dtype=np.int64)
    for n1 in range(-nmax, nmax + 1):
        rem = rmax - n1 * n1
        m = int(math.sqrt(rem)) if rem > 0 else 0
        # float sqrt may be off by one near perfect squares
        while (m + 1) * (m + 1) <= rem:
            m += 1
        while m * m > rem:
            m -= 1
        for n2 in range(-m, m + 1):
            counts[n1 * n1 + n2 * n2] += 1
    return counts


def shell_counts_numpy(nmax):
    nmax = int(nmax)
    rmax = nmax * nmax
    n1 = np.arange(nmax + 1, dtype=np.int64)
    rows = []
    weights = []
    for a in n1:
        m = math.isqrt(rmax - int(a) * int(a))
        b = np.arange(m + 1, dtype=np.int64)
        rows.append(a * a + b * b)
        # quadrant multiplicity: axes count twice, interior four times
        w = np.where(b == 0, 2.0, 4.0) if a > 0 else np.where(b == 0, 1.0, 2.0)
        weights.append(w)
    r = np.concatenate(rows)
    w = np.concatenate(weights)
    return np.rint(np.bincount(r, weights=w, minlength=rmax + 1)).astype(np.int64)


# ---------------------------------------------------------------------------
# compensated cumulative sum


@njit(cache=True)
def dd_cumsum_numba(x, xlo):
    # running double-double sum (TwoSum + renormalise); hi is the rounded total
    out = np.empty(x.shape[0], dtype=np.float64)
    hi = 0.0
    lo = 0.0
    for i in range(x.shape[0]):
        s = hi + x[i]
        bb = s - hi
        e = (hi - (s - bb)) + (x[i] - bb)
        e += lo + xlo[i]
        hi = s + e
        lo = e - (hi - s)
        out[i] = hi
    return out


def _two_sum(a, b):
    s = a + b
    bb = s - a
    return s, (a - (s - bb)) + (b - bb)


def _dd_scan(hi, lo):
    # Hillis-Steele prefix scan in double-double arithmetic along the last axis
    n = hi.shape[-1]
    step = 1
    while step < n:
        s, e = _two_sum(hi[..., step:], hi[..., :-step])
        e = e + (lo[..., step:] + lo[..., :-step])
        h = s + e
        lo[..., step:] = e - (h - s)
        hi[..., step:] = h
        step *= 2
    return hi, lo


def dd_cumsum_numpy(x, xlo, block=1024):
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    nb = -(-n // block)
    pad = nb * block - n
    hi, lo = _two_sum(np.pad(x, (0, pad)), np.pad(np.asarray(xlo, dtype=np.float64), (0, pad)))
    hi, lo = _dd_scan(hi.reshape(nb, block), lo.reshape(nb, block))
    # exclusive prefix of the block totals, carried in as a double-double
    ch, cl = _dd_scan(hi[:, -1].copy(), lo[:, -1].copy())
    ch = np.concatenate(([0.0], ch[:-1]))[:, None]
    cl = np.concatenate(([0.0], cl[:-1]))[:, None]
    s, e = _two_sum(hi, ch)
    e = e + (lo + cl)
    return (s + e).reshape(-1)[:n]


# ---------------------------------------------------------------------------
# grid means of v, H2, H3, H4 for a batch of flattened grids


@njit(cache=True)
def wick_integrals_numba(v, sigma):
    nb, npts = v.shape
    out = np.zeros((nb, 4), dtype=np.float64)
    s3 = 3.0 * sigma
    s6 = 6.0 * sigma
    s33 = 3.0 * sigma * sigma
    for b in range(nb):
        a1 = 0.0
        a2 = 0.0
        a3 = 0.0
        a4 = 0.0
        for p in range(npts):
            x = v[b, p]
            x2 = x * x
            a1 += x
            a2 += x2 - sigma
            a3 += x2 * x - s3 * x
            a4 += x2 * x2 - s6 * x2 + s33
        out[b, 0] = a1 / npts
        out[b, 1] = a2 / npts
        out[b, 2] = a3 / npts
        out[b, 3] = a4 / npts
    return out


def wick_integrals_numpy(v, sigma):
    v = np.asarray(v, dtype=np.float64)
    x2 = v * v
    out = np.empty((v.shape[0], 4), dtype=np.float64)
    out[:, 0] = v.mean(axis=1)
    out[:, 1] = x2.mean(axis=1) - sigma
    out[:, 2] = (x2 * v).mean(axis=1) - 3.0 * sigma * out[:, 0]
    out[:, 3] = (x2 * x2).mean(axis=1) - 6.0 * sigma * (out[:, 1] + sigma) + 3.0 * sigma**2
    return out


# ---------------------------------------------------------------------------
# one exponential-Euler step per Fourier mode (in place on psi_hat)


@njit(cache=True)
def exp_euler_update_numba(psi_hat, forcing, noise, decay, phi1, amp):
    nb, nk = psi_hat.shape
    for b in range(nb):
        for k in range(nk):
            psi_hat[b, k] = decay[k] * psi_hat[b, k] + phi1[k] * forcing[b, k] + amp[k] * noise[b, k]
    return psi_hat


def exp_euler_update_numpy(psi_hat, forcing, noise, decay, phi1, amp):
    psi_hat *= decay
    psi_hat += phi1 * forcing
    psi_hat += amp * noise
    return psi_hat


if USE_NUMBA:
    shell_counts = shell_counts_numba
    dd_cumsum = dd_cumsum_numba
    wick_integrals = wick_integrals_numba
    exp_euler_update = exp_euler_update_numba
else:
    shell_counts = shell_counts_numpy
    dd_cumsum = dd_cumsum_numpy
    wick_integrals = wick_integrals_numpy
    exp_euler_update = exp_euler_update_numpy
