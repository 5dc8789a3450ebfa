"""Low-temperature expansion around the two wells.

For a well ``w`` and ``v ~ mu_{w,N}`` the density of the truncated measure
is ``theta_N(w) G(w, sqrt(eps) v)`` with

    G(w, t v) = F(w + t v) exp(-t^2/4 H4(v) - t w H3(v)).

Since ``F`` is a polynomial observable, ``G`` is an entire function of ``t``
whose Taylor coefficients ``q_j = Q_j / j!`` come out of exact truncated
series arithmetic. The expansion coefficients are

    a_j = sum_w theta(w) E_{mu_w}[q_j(w, .)].
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .determinant import theta_limit, theta_re, weights_b
from .field import ReferenceMeasure, RngStream, SpectralField, sample_gaussian, to_grid
from .observable import Observable, series_exp, series_mul
from .renorm import d_limit, h3_h4_from_means, wick_constants, wick_means
from .sampler import (
    ChainConfig,
    EstimateWithError,
    langevin_chain,
    series_estimate,
    weighted_draws,
    well_distance,
)

WELLS = (1, -1)


@dataclass(frozen=True)
class WellConstants:
    """Wick data needed around a well at cutoff ``N``.

    ``d`` is ``c_N - c_{w,N}`` at the cutoff (``mode="cutoff"``) or its
    ``N -> infinity`` value (``mode="limit"``).
    """

    N: int
    c_N: float
    c_wN: float
    d: float
    mode: str

    @classmethod
    def build(cls, N, mode="cutoff"):
        k = wick_constants(N)
        if mode == "cutoff":
            d = k.d_N
        elif mode == "limit":
            d = d_limit()[0]
        else:
            raise ValueError(f"unknown d mode {mode!r}")
        return cls(int(N), k.c_N, k.c_wN, d, mode)


def _exponent_series(v, w, consts, order, M=None):
    """Series in ``t`` of ``-t w H3 - t^2/4 H4`` (zero constant term)."""
    means = wick_means(to_grid(v, M).values, consts.c_wN)
    H3, H4 = h3_h4_from_means(means, consts.d)
    e = np.zeros(v.batch_shape + (order + 1,))
    if order >= 1:
        e[..., 1] = -w * H3
    if order >= 2:
        e[..., 2] = -0.25 * H4
    return e


def density_G(F: Observable, w: int, v: SpectralField, eps: float, N: int, d_mode="cutoff", M=None):
    """``G(w, sqrt(eps) v)`` for fluctuations ``v`` drawn under ``mu_{w,N}``."""
    consts = WellConstants.build(N, d_mode)
    t = math.sqrt(eps)
    poly = F.series(w, v, consts.c_N, F.degree, M)
    Fv = np.polynomial.polynomial.polyval(t, np.moveaxis(poly, -1, 0))
    means = wick_means(to_grid(v, M).values, consts.c_wN)
    H3, H4 = h3_h4_from_means(means, consts.d)
    return (Fv * np.exp(-0.25 * eps * H4 - t * w * H3))[()]


@dataclass(frozen=True)
class FormalSeries:
    k: int
    q: np.ndarray

    def evaluate(self, t):
        return np.polynomial.polynomial.polyval(t, np.moveaxis(self.q, -1, 0))[()]


def taylor_Q(F: Observable, w: int, v: SpectralField, k: int, N: int, d_mode="cutoff", M=None,
             det_factor=False) -> FormalSeries:
    """Truncated Taylor series of ``t -> G(w, t v)`` through order ``k``.

    With ``det_factor`` the series also carries ``exp(-3 t^2 d^2 / 4)``, the
    temperature dependence of the renormalised determinant, so that the
    coefficients pair with ``theta`` at ``eps = 0``.
    """
    if k < 0:
        raise ValueError("order must be non-negative")
    consts = WellConstants.build(N, d_mode)
    e = _exponent_series(v, w, consts, k, M)
    if det_factor and k >= 2:
        e[..., 2] -= 0.75 * consts.d ** 2
    q = series_mul(F.series(w, v, consts.c_N, k, M), series_exp(e))
    return FormalSeries(k, q)


@dataclass
class CoefficientTable:
    k: int
    a: np.ndarray
    stderr: np.ndarray
    per_well: dict
    theta: dict
    n_mc: int
    d_mode: str
    flagged: bool = False

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["j", "a_j", "stderr", "well_plus", "well_minus"])
            for j in range(self.k + 1):
                out.writerow([j, f"{self.a[j]:.17g}", f"{self.stderr[j]:.17g}",
                              f"{self.per_well[1][j]:.17g}", f"{self.per_well[-1][j]:.17g}"])


def coefficients_a(F: Observable, k: int, N: int, n_mc: int, rng, theta=None, d_mode="cutoff",
                   det_factor=True, exponent=True, M=None, chunk=2048) -> CoefficientTable:
    """Monte Carlo expansion coefficients ``a_0 .. a_k``.

    ``theta`` maps ``w`` to the determinant; by default the eps = 0
    determinant at the cutoff (``d_mode="cutoff"``) or in the limit. All
    orders share one set of ``mu_w`` draws per well. ``exponent=False``
    drops the interaction from ``G`` (pure Gaussian check).
    """
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    consts = WellConstants.build(N, d_mode)
    if theta is None:
        res = theta_re(N, 1, 0.0) if d_mode == "cutoff" else theta_limit(1, 0.0)
        theta = {1: res.theta, -1: res.theta}
    a = np.zeros(k + 1)
    var = np.zeros(k + 1)
    per_well = {}
    for w in WELLS:
        s1 = np.zeros(k + 1)
        s2 = np.zeros(k + 1)
        done = 0
        while done < n_mc:
            m = min(chunk, n_mc - done)
            v = sample_gaussian(ReferenceMeasure.mu_w(w), N, gen, size=m)
            poly = F.series(w, v, consts.c_N, k, M)
            if exponent:
                e = _exponent_series(v, w, consts, k, M)
                if det_factor and k >= 2:
                    e[..., 2] -= 0.75 * consts.d ** 2
                q = series_mul(poly, series_exp(e))
            else:
                q = poly
            s1 += q.sum(axis=0)
            s2 += (q * q).sum(axis=0)
            done += m
        mean = s1 / n_mc
        v_hat = np.maximum(s2 / n_mc - mean * mean, 0.0) * n_mc / max(n_mc - 1, 1)
        # q_0 = F(w) for every draw; keep it exact
        mean[0], v_hat[0] = q[0, 0], 0.0
        per_well[w] = theta[w] * mean
        a += theta[w] * mean
        var += theta[w] ** 2 * v_hat / n_mc
    return CoefficientTable(k, a, np.sqrt(var), per_well, dict(theta), n_mc, d_mode)


# ---------------------------------------------------------------------------
# remainder order


@dataclass
class ExpansionReport:
    k: int
    eps: np.ndarray
    I: np.ndarray
    I_se: np.ndarray
    expansion: np.ndarray
    expansion_se: np.ndarray
    remainder: np.ndarray
    ess: np.ndarray
    slope: float
    inconclusive: bool
    coefficients: CoefficientTable = field(repr=False, default=None)

    @property
    def budget(self):
        return np.sqrt(self.I_se ** 2 + self.expansion_se ** 2)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["eps", "I", "expansion", "remainder", "I_stderr"])
            for row in zip(self.eps, self.I, self.expansion, self.remainder, self.I_se):
                out.writerow([f"{x:.17g}" for x in row])


@dataclass
class IntegralEstimates:
    """``I(eps)`` for several observables from one set of weighted draws."""

    eps: np.ndarray
    values: np.ndarray  # (n_obs, n_eps)
    stderr: np.ndarray
    ess: np.ndarray
    acceptance: np.ndarray


def estimate_integrals(Fs, eps_grid, N: int, n_is: int, rng, proposal="ais", ais_options=None):
    """Estimate ``int F exp(-V_N/eps) dmu_eps`` for each ``F`` in ``Fs``.

    All observables are evaluated on the same draws at each ``eps``.
    """
    root = rng if isinstance(rng, RngStream) else RngStream(int(rng))
    eps_grid = np.asarray(eps_grid, dtype=float)
    vals = np.zeros((len(Fs), eps_grid.size))
    ses = np.zeros_like(vals)
    ess = np.zeros(eps_grid.size)
    acc = np.full(eps_grid.size, np.nan)
    for i, eps in enumerate(eps_grid):
        draws = weighted_draws(None, eps, N, n_is, root.substream(f"I/{eps!r}"), proposal=proposal,
                               ais_options=ais_options, keep_fields=True)
        for m, F in enumerate(Fs):
            vals[m, i], ses[m, i] = draws.integral_of(F)
        ess[i] = draws.kish_ess()
        acc[i] = draws.acceptance
    return IntegralEstimates(eps_grid, vals, ses, ess, acc)


def loglog_slope(eps, remainder):
    x = np.log(np.asarray(eps, dtype=float))
    y = np.log(np.asarray(remainder, dtype=float))
    return float(np.polyfit(x, y, 1)[0])


def verify_expansion(F: Observable, k: int, eps_grid, N: int, n_mc: int, rng, n_is=1000,
                     proposal="ais", coefficients=None, integrals=None, ais_options=None) -> ExpansionReport:
    """Compare ``I(eps)`` with ``sum_{j<=k} a_j eps^(j/2)`` along ``eps_grid``.

    ``I(eps)`` comes from the exact importance samplers unless ``integrals``
    (a pair of arrays ``(I, I_stderr)``) is supplied. The report carries the
    fitted log-log slope of the remainder and is flagged inconclusive when
    the Monte Carlo budget is not small against the remainder.
    """
    eps_grid = np.asarray(eps_grid, dtype=float)
    if np.any(np.diff(eps_grid) >= 0):
        raise ValueError("eps_grid must be strictly decreasing")
    if rng is None and (coefficients is None or integrals is None):
        raise ValueError("rng is required unless coefficients and integrals are supplied")
    root = rng if isinstance(rng, RngStream) or rng is None else RngStream(int(rng))
    table = coefficients or coefficients_a(F, k, N, n_mc, root.substream("coeffs"))
    if integrals is None:
        est = estimate_integrals([F], eps_grid, N, n_is, root, proposal, ais_options)
        I, I_se, ess = est.values[0], est.stderr[0], est.ess
    else:
        I, I_se = (np.asarray(x, dtype=float) for x in integrals)
        ess = np.full(eps_grid.size, np.nan)
    powers = np.sqrt(eps_grid)[:, None] ** np.arange(k + 1)[None, :]
    expn = powers @ table.a[: k + 1]
    expn_se = np.sqrt((powers ** 2) @ (table.stderr[: k + 1] ** 2))
    rem = np.abs(I - expn)
    budget = np.sqrt(I_se ** 2 + expn_se ** 2)
    slope = loglog_slope(eps_grid, rem)
    return ExpansionReport(k, eps_grid, I, I_se, expn, expn_se, rem, np.asarray(ess), slope,
                           bool(np.any(budget > 0.5 * rem)), table)


# ---------------------------------------------------------------------------
# law of large numbers and central limit theorem


def observable_at_wells(F: Observable, N: int = 0):
    """``F(w)`` at the constant fields ``w = +-1``."""
    zero = SpectralField.zeros(max(N, 0))
    return {w: float(F.series(w, zero, 0.0, 0)[0]) for w in WELLS}


def lln_weights(d_mode="limit"):
    th = theta_limit(1, 0.0) if d_mode == "limit" else theta_re(8, 1, 0.0)
    return weights_b(th.theta, th.theta)


@dataclass
class WellStatistics:
    """Per-temperature statistics of chain output around the wells."""

    eps: float
    occupancy_plus: EstimateWithError
    counts: dict
    far_fraction: EstimateWithError
    mode_variance: dict
    gibbs_mean: EstimateWithError | None
    flagged: bool


def nearest_well(phi: SpectralField, eta=0.5):
    """Closest well in the proxy norm with no distance cut (ties go to +1)."""
    return np.where(well_distance(phi, 1, eta) <= well_distance(phi, -1, eta), 1, -1)


def well_statistics(batch, delta=0.3, eta=0.5, modes=((0, 0), (1, 0), (1, 1)), F=None, assign="pi"):
    """Occupancy, far-from-wells mass and fluctuation variances of a chain batch.

    Occupancy counts the nearest well of every sample. The fluctuation
    ``(phi - w) / sqrt(eps)`` is centred within each well and uses the
    samples with ``pi(phi) = w`` (``assign="pi"``) or all samples split by
    nearest well (``assign="nearest"``).
    """
    eps = batch.eps
    phi = batch.phi()
    n_chains = phi.coeffs.shape[0]
    dp, dm = well_distance(phi, 1, eta), well_distance(phi, -1, eta)
    near = np.where(dp <= dm, 1, -1)
    pi = np.where(np.minimum(dp, dm) < delta, near, 0)
    labels = {"pi": pi, "nearest": near}[assign]
    plus = (near == 1).mean(axis=1)
    occ = EstimateWithError(float(plus.mean()), float(plus.std(ddof=1) / np.sqrt(n_chains)), float(n_chains))
    far_est = series_estimate((np.minimum(dp, dm) >= delta).astype(float))
    counts = {w: int((labels == w).sum()) for w in WELLS}
    variances = {}
    for n in modes:
        tot, cnt = 0.0, 0
        for w in WELLS:
            sel = labels == w
            if sel.sum() < 2:
                continue
            vhat = (phi.mode(*n)[sel] - (w if n == (0, 0) else 0.0)) / np.sqrt(eps)
            tot += float(np.sum(np.abs(vhat - vhat.mean()) ** 2))
            cnt += vhat.size
        variances[n] = tot / cnt if cnt else float("nan")
    gm = None
    if F is not None:
        vals = F.evaluate(batch.psi, eps, wick_constants(batch.psi.N).c_N)
        gm = series_estimate(vals)
    return WellStatistics(eps, occ, counts, far_est, variances, gm, min(counts.values()) < 10)


@dataclass
class LLNCLTReport:
    target: float
    weights: object
    stats: list
    gibbs: list

    def mode_targets(self, modes=((0, 0), (1, 0), (1, 1))):
        return {n: 1.0 / (2.0 + n[0] ** 2 + n[1] ** 2) for n in modes}


def lln_clt_experiment(F: Observable, eps_grid, N: int, chain: dict, rng, delta=0.3, eta=0.5,
                       n_is=0, modes=((0, 0), (1, 0), (1, 1)), assign="pi") -> LLNCLTReport:
    """Run chains along ``eps_grid`` and collect LLN/CLT statistics.

    ``chain`` holds :class:`ChainConfig` fields other than ``N``, ``eps`` and
    ``seed``. With ``n_is > 0`` the normalised ``<F>`` is also estimated with
    the two-well importance sampler.
    """
    root = rng if isinstance(rng, RngStream) else RngStream(int(rng))
    b = lln_weights()
    fw = observable_at_wells(F, N)
    target = sum(b[w] * fw[w] for w in WELLS)
    stats, gibbs = [], []
    for i, eps in enumerate(eps_grid):
        seed = root.substream(f"chain/{i}").seed
        cfg = ChainConfig(N=N, eps=float(eps), seed=seed, **chain)
        batch = langevin_chain(cfg)
        stats.append(well_statistics(batch, delta, eta, modes, F, assign))
        if n_is:
            draws = weighted_draws(F, float(eps), N, n_is, root.substream(f"is/{i}"), proposal="wells")
            r, se = draws.ratio()
            gibbs.append(EstimateWithError(float(r), float(se), draws.kish_ess()))
    return LLNCLTReport(target, b, stats, gibbs)
