"""Samplers for the truncated Phi^4_2 measure at low temperature.

All sampling works in the rescaled variable ``psi = phi / sqrt(eps)``. Under
the free field ``psi ~ mu`` the Wick variance is the eps-independent tadpole
``c_N``.

Two exact importance samplers target the unnormalised measure
``exp(-V_N(phi)/eps) mu_eps(dphi)``:

``free``
    draws ``psi ~ mu`` and weights by ``exp(-V_N(sqrt(eps) psi)/eps)``.
    Exact but degenerate once ``eps`` is small.
``wells``
    draws ``phi = w + sqrt(eps) v`` with ``v ~ mu_{w,N}`` for ``w = +-1``
    (stratified half and half). The density of the target with respect to
    each component is ``theta_N(w) exp(-eps/4 H4 - sqrt(eps) w H3)``, so the
    mixture weight is known in closed form.

:func:`langevin_chain` integrates the renormalised Langevin dynamics with an
exponential-Euler scheme.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import fft as sfft
from scipy.special import logsumexp

from . import kernels
from .determinant import theta_re
from .field import (
    ReferenceMeasure,
    RngStream,
    SpectralField,
    ball_mask,
    cminus_norm,
    default_grid_size,
    sample_gaussian,
    standard_complex_noise,
    to_grid,
    to_spectral,
)
from .observable import Observable
from .renorm import h3_h4_from_means, potential_V, wick_constants, wick_means

MAX_REJECT_FRACTION = 0.01
LOW_ESS = 10.0


class EstimateWithError(NamedTuple):
    value: float
    std_error: float
    ess: float
    flagged: bool = False


class LowAcceptanceError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# observables at rescaled fields


def observable_eval(F: Observable, psi: SpectralField, eps: float, sigma: float, M=None):
    """Evaluate ``F`` at ``phi = sqrt(eps) psi`` with Wick variance ``eps*sigma``."""
    return F.evaluate(psi, eps, sigma, M)


# ---------------------------------------------------------------------------
# well exponent shared with the expansion module


def well_exponent(means, w, eps, d):
    """``-eps/4 H4 - sqrt(eps) w H3`` from grid Wick means under ``mu_w``."""
    H3, H4 = h3_h4_from_means(means, d)
    return -0.25 * eps * H4 - np.sqrt(eps) * w * H3


# ---------------------------------------------------------------------------
# importance reweighting


@dataclass
class WeightedDraws:
    """Per-draw observable values and log-weights, grouped by stratum."""

    f: list = field(default_factory=list)
    logw: list = field(default_factory=list)
    prob: list = field(default_factory=list)
    rejected: int = 0
    total: int = 0
    acceptance: float = float("nan")
    fields: list = field(default_factory=list)
    eps: float = float("nan")

    def add_stratum(self, f, logw, p, psi=None):
        ok = np.isfinite(logw) & np.isfinite(f)
        self.rejected += int((~ok).sum())
        self.total += int(ok.size)
        self.f.append(np.asarray(f)[ok])
        self.logw.append(np.asarray(logw)[ok])
        self.prob.append(float(p))
        if psi is not None:
            self.fields.append(SpectralField(psi.N, psi.coeffs[ok]))

    def integral_of(self, F: Observable):
        """``int F`` re-using stored draws (requires ``keep_fields``)."""
        if len(self.fields) != len(self.f):
            raise ValueError("draws were generated without keep_fields")
        c_N = wick_constants(self.fields[0].N).c_N
        saved = self.f
        self.f = [F.evaluate(psi, self.eps, c_N) for psi in self.fields]
        try:
            return self.integral(True)
        finally:
            self.f = saved

    def check(self):
        if self.total and self.rejected > MAX_REJECT_FRACTION * self.total:
            raise LowAcceptanceError(f"{self.rejected} of {self.total} draws had non-finite weights")

    def _scaled(self):
        shift = max(float(lw.max()) for lw in self.logw if lw.size)
        return shift, [np.exp(lw - shift) for lw in self.logw]

    def integral(self, use_f=True):
        shift, ws = self._scaled()
        val = 0.0
        var = 0.0
        for f, w, p in zip(self.f, ws, self.prob):
            y = f * w if use_f else w
            val += p * y.mean()
            var += p * p * y.var(ddof=1) / y.size if y.size > 1 else 0.0
        scale = np.exp(shift)
        return val * scale, np.sqrt(var) * scale

    def kish_ess(self):
        _, ws = self._scaled()
        w = np.concatenate([p * wi / wi.size for p, wi in zip(self.prob, ws)])
        return float(w.sum() ** 2 / (w * w).sum())

    def ratio(self):
        """Self-normalised mean ``I/Z`` with a delta-method standard error."""
        shift, ws = self._scaled()
        Z = sum(p * w.mean() for w, p in zip(ws, self.prob))
        I = sum(p * (f * w).mean() for f, w, p in zip(self.f, ws, self.prob))
        r = I / Z
        var = 0.0
        for f, w, p in zip(self.f, ws, self.prob):
            e = w * (f - r)
            var += p * p * e.var(ddof=1) / e.size
        return r, np.sqrt(var) / Z


def _chunks(n, size):
    done = 0
    while done < n:
        m = min(size, n - done)
        yield m
        done += m


def weighted_draws(F, eps, N, n, rng, proposal="free", interaction=True, M=None, chunk=2048,
                   F_variant="phi", ais_options=None, keep_fields=False):
    """Draw ``n`` weighted samples and return a :class:`WeightedDraws`.

    ``F_variant="phi"`` evaluates ``F(phi)``; ``"fluct"`` evaluates ``F`` at
    the centred fluctuation ``(phi - w)/sqrt(eps)`` around the proposal well
    (only meaningful for ``proposal="wells"``). With ``keep_fields`` the
    draws are stored so that :meth:`WeightedDraws.integral_of` can evaluate
    further observables on them.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    M = default_grid_size(N) if M is None else M
    k = wick_constants(N)
    out = WeightedDraws()
    if proposal == "free":
        fs, lws, keep = [], [], []
        for m in _chunks(n, chunk):
            psi = sample_gaussian(ReferenceMeasure.mu(), N, gen, size=m)
            if keep_fields:
                keep.append(psi.coeffs)
            fs.append(F.evaluate(psi, eps, k.c_N, M) if F is not None else np.ones(m))
            if interaction:
                pot = potential_V(psi.scaled(np.sqrt(eps)), N, eps * k.c_N, M)
                lws.append(-pot.total / eps)
            else:
                lws.append(np.zeros(m))
        out.add_stratum(np.concatenate(fs), np.concatenate(lws), 1.0,
                        SpectralField(N, np.concatenate(keep)) if keep_fields else None)
    elif proposal == "ais":
        if not interaction:
            raise ValueError("annealing needs the interaction")
        out = ais_draws(F, eps, N, n, gen, M=M, keep_fields=keep_fields, **(ais_options or {}))
    elif proposal == "wells":
        if not interaction:
            raise ValueError("the wells proposal needs the interaction")
        log_theta = theta_re(N, 1, eps).log_theta
        half = [n - n // 2, n // 2]
        for w, nw in zip((1, -1), half):
            fs, lws, keep = [], [], []
            for m in _chunks(nw, chunk):
                v = sample_gaussian(ReferenceMeasure.mu_w(w), N, gen, size=m)
                vg = to_grid(v, M).values
                own = well_exponent(wick_means(vg, k.c_wN), w, eps, k.d_N)
                other = well_exponent(wick_means(vg + 2.0 * w / np.sqrt(eps), k.c_wN), -w, eps, k.d_N)
                # log of the target density against the equal-weight mixture
                lws.append(np.log(2.0) - logsumexp(np.stack([-(log_theta + own), -(log_theta + other)]), axis=0))
                if keep_fields:
                    keep.append((v + w / np.sqrt(eps)).coeffs)
                if F is None:
                    fs.append(np.ones(m))
                elif F_variant == "fluct":
                    fs.append(F.evaluate(v, 1.0, k.c_wN, M))
                else:
                    psi = v + w / np.sqrt(eps)
                    fs.append(F.evaluate(psi, eps, k.c_N, M))
            out.add_stratum(np.concatenate(fs), np.concatenate(lws), 0.5,
                            SpectralField(N, np.concatenate(keep)) if keep_fields else None)
    else:
        raise ValueError(f"unknown proposal {proposal!r}")
    out.eps = float(eps)
    out.check()
    return out


class _SpectralDrift:
    """Grid evaluation of ``U(psi) = V_N(sqrt(eps) psi)/eps`` and ``-grad U``."""

    def __init__(self, N, eps, M):
        self.N, self.eps, self.M = N, eps, M
        self.side = 2 * N + 1
        self.mask = ball_mask(N)
        self.idx = np.arange(-N, N + 1) % M
        self.c_N = wick_constants(N).c_N
        self.lin = 2.0 + 3.0 * eps * self.c_N

    def __call__(self, psi):
        """``psi`` has shape ``(B, side, side)``; returns ``(U, R)``."""
        full = np.zeros((psi.shape[0], self.M, self.M), dtype=np.complex128)
        full[:, self.idx[:, None], self.idx[None, :]] = psi
        x = sfft.ifft2(full, axes=(-2, -1), norm="forward").real
        m = wick_means(x, self.c_N)
        U = 0.25 * self.eps * m[:, 3] - m[:, 1] + 0.25 / self.eps
        r = x * (self.lin - self.eps * x * x)
        R = sfft.fft2(r, axes=(-2, -1), norm="forward")[:, self.idx[:, None], self.idx[None, :]]
        return U, np.where(self.mask, R, 0.0)


def ais_draws(F, eps, N, n, rng, n_temps=1000, h=0.1, M=None, schedule_power=4.0, keep_fields=False):
    """Annealed importance sampling from the free field to the truncated measure.

    Intermediate targets ``exp(-beta V_N(sqrt(eps) psi)/eps) mu(dpsi)`` with a
    polynomial schedule ``beta_k = (k/K)^p``. Each temperature applies one
    Metropolis-adjusted exponential-Euler move, whose Gaussian part is the
    exact Ornstein-Uhlenbeck transition of ``mu``. Weights are exact, so the
    estimate of ``Z`` is unbiased for any schedule.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    M = default_grid_size(N) if M is None else M
    drift = _SpectralDrift(N, eps, M)
    mask = drift.mask
    lam = np.where(mask, 1.0 + np.add.outer(np.arange(-N, N + 1) ** 2, np.arange(-N, N + 1) ** 2), 1.0)
    decay = np.where(mask, np.exp(-lam * h), 0.0)
    phi1 = np.where(mask, -np.expm1(-lam * h) / lam, 0.0)
    var = np.where(mask, -np.expm1(-2.0 * lam * h) / lam, 1.0)
    amp = np.where(mask, np.sqrt(var), 0.0)

    def log_q(to, frm, R, beta):
        d = to - (decay * frm + beta * phi1 * R)
        return -(np.abs(d) ** 2 / (2.0 * var)).sum(axis=(-2, -1), where=mask)

    def log_gauss(psi):
        return -0.5 * (lam * np.abs(psi) ** 2).sum(axis=(-2, -1), where=mask)

    psi = sample_gaussian(ReferenceMeasure.mu(), N, gen, size=n).coeffs.copy()
    U, R = drift(psi)
    logw = np.zeros(n)
    betas = (np.arange(n_temps + 1) / n_temps) ** schedule_power
    accepted = 0
    for k in range(1, n_temps + 1):
        b0, b1 = betas[k - 1], betas[k]
        logw -= (b1 - b0) * U
        prop = decay * psi + b1 * phi1 * R + amp * standard_complex_noise(gen, N, n)
        Up, Rp = drift(prop)
        log_a = (log_gauss(prop) - b1 * Up) - (log_gauss(psi) - b1 * U)
        log_a += log_q(psi, prop, Rp, b1) - log_q(prop, psi, R, b1)
        acc = np.log(gen.random(n)) < log_a
        accepted += int(acc.sum())
        psi[acc] = prop[acc]
        U[acc] = Up[acc]
        R[acc] = Rp[acc]
    psi = 0.5 * (psi + np.conj(psi[..., ::-1, ::-1]))
    f = np.ones(n) if F is None else F.evaluate(SpectralField(N, psi), eps, drift.c_N, M)
    out = WeightedDraws()
    out.add_stratum(f, logw, 1.0, SpectralField(N, psi) if keep_fields else None)
    out.eps = float(eps)
    out.acceptance = accepted / (n * n_temps)
    out.check()
    return out


def reweight_estimate(F: Observable | None, eps: float, N: int, n: int, rng, proposal="free",
                      interaction=True, M=None):
    """Estimate ``I = int F exp(-V_N/eps) dmu_eps`` and ``Z`` (``F = 1``).

    Returns ``(I, Z)`` as :class:`EstimateWithError`; the ESS is Kish's
    effective sample size of the weights.
    """
    draws = weighted_draws(F, eps, N, n, rng, proposal, interaction, M)
    ess = draws.kish_ess()
    iv, ise = draws.integral(True)
    zv, zse = draws.integral(False)
    flag = ess < LOW_ESS
    return EstimateWithError(iv, ise, ess, flag), EstimateWithError(zv, zse, ess, flag)


def gibbs_mean(F: Observable, eps: float, N: int, n: int, rng, proposal="wells", M=None):
    """Self-normalised estimate of ``<F>`` under the truncated measure."""
    draws = weighted_draws(F, eps, N, n, rng, proposal, True, M)
    r, se = draws.ratio()
    ess = draws.kish_ess()
    return EstimateWithError(float(r), float(se), ess, ess < LOW_ESS)


# ---------------------------------------------------------------------------
# Langevin dynamics


@dataclass(frozen=True)
class ChainConfig:
    """Configuration of a batch of independent Langevin chains.

    ``n_burnin`` steps are discarded, then ``n_steps`` steps are run and every
    ``thin``-th state is kept. ``init`` is ``None`` (zero field), a float
    (constant ``psi``) or ``"gaussian"`` (a free-field draw).
    """

    N: int
    eps: float
    dt: float
    n_steps: int
    n_burnin: int = 0
    thin: int = 1
    seed: int = 0
    M: int | None = None
    n_chains: int = 1
    stream_id: int = 0
    interaction: bool = True
    noise: bool = True
    init: object = None

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.dt * (1 + self.N * self.N) > 2.0:
            raise ValueError("dt * (1 + N^2) must not exceed 2")
        if self.n_steps < 1 or self.n_burnin < 0 or self.thin < 1 or self.n_chains < 1:
            raise ValueError("invalid step counts")
        if self.M is not None and self.M < 4 * self.N + 1:
            raise ValueError(f"grid size M={self.M} too small for the cubic drift at N={self.N}")

    @property
    def grid(self):
        return default_grid_size(self.N) if self.M is None else self.M

    @property
    def n_kept(self):
        return self.n_steps // self.thin


@dataclass
class SampleBatch:
    """Kept states ``psi`` (rescaled variable) with weights and provenance.

    ``psi.coeffs`` has shape ``(n_chains, n_kept, 2N+1, 2N+1)`` for chain
    output and ``(n, 2N+1, 2N+1)`` for weighted draws.
    """

    psi: SpectralField
    weights: np.ndarray
    provenance: dict

    @property
    def eps(self):
        return self.provenance["eps"]

    def phi(self):
        return self.psi.scaled(np.sqrt(self.eps))


class _ChainNoise:
    """Per-chain noise streams drawn in blocks of steps."""

    def __init__(self, cfg, block=256):
        self.N = cfg.N
        self.gens = [RngStream(cfg.seed, cfg.stream_id + c).generator() for c in range(cfg.n_chains)]
        self.block = block
        self.buf = None
        self.pos = block

    def next(self):
        if self.pos >= self.block:
            self.buf = np.stack([standard_complex_noise(g, self.N, self.block) for g in self.gens], axis=1)
            self.pos = 0
        out = self.buf[self.pos]
        self.pos += 1
        return out


def _initial_state(cfg):
    side = 2 * cfg.N + 1
    psi = np.zeros((cfg.n_chains, side, side), dtype=np.complex128)
    if cfg.init is None:
        return psi
    if isinstance(cfg.init, str):
        if cfg.init != "gaussian":
            raise ValueError(f"unknown init {cfg.init!r}")
        for c in range(cfg.n_chains):
            gen = RngStream(cfg.seed, cfg.stream_id + c).substream("init").generator()
            psi[c] = sample_gaussian(ReferenceMeasure.mu(), cfg.N, gen).coeffs
        return psi
    psi[:, cfg.N, cfg.N] = float(cfg.init)
    return psi


def langevin_chain(cfg: ChainConfig) -> SampleBatch:
    """Run the spectral exponential-Euler Langevin scheme.

    Per mode, ``dpsi_n = -lambda_n psi_n dt + R_n(psi) dt + sqrt(2) dW_n`` with
    ``lambda_n = 1 + |n|^2`` integrated exactly and the remainder

        R(psi) = 2 psi - eps P_N(psi^3 - 3 c_N psi)

    (the gradient of ``V_N(sqrt(eps) psi)/eps``) held fixed over the step.
    """
    N, M = cfg.N, cfg.grid
    side = 2 * N + 1
    mask = ball_mask(N)
    lam = np.where(mask, 1.0 + np.add.outer(np.arange(-N, N + 1) ** 2, np.arange(-N, N + 1) ** 2), 1.0)
    decay = np.where(mask, np.exp(-lam * cfg.dt), 0.0).ravel().astype(np.complex128)
    phi1 = np.where(mask, -np.expm1(-lam * cfg.dt) / lam, 0.0).ravel().astype(np.complex128)
    amp = np.where(mask, np.sqrt(-np.expm1(-2.0 * lam * cfg.dt) / lam), 0.0).ravel().astype(np.complex128)
    if not cfg.noise:
        amp = np.zeros_like(amp)
    c_N = wick_constants(N).c_N
    lin = 2.0 + 3.0 * cfg.eps * c_N
    idx = np.arange(-N, N + 1) % M

    psi = _initial_state(cfg).reshape(cfg.n_chains, side * side)
    noise = _ChainNoise(cfg)
    zero_forcing = np.zeros_like(psi)
    kept = np.empty((cfg.n_chains, cfg.n_kept, side, side), dtype=np.complex128)
    total = cfg.n_burnin + cfg.n_steps
    k = 0
    for step in range(total):
        if cfg.interaction:
            full = np.zeros((cfg.n_chains, M, M), dtype=np.complex128)
            full[:, idx[:, None], idx[None, :]] = psi.reshape(cfg.n_chains, side, side)
            x = sfft.ifft2(full, axes=(-2, -1), norm="forward").real
            r = x * (lin - cfg.eps * x * x)
            forcing = sfft.fft2(r, axes=(-2, -1), norm="forward")[:, idx[:, None], idx[None, :]]
            forcing = np.where(mask, forcing, 0.0).reshape(cfg.n_chains, side * side)
        else:
            forcing = zero_forcing
        g = noise.next().reshape(cfg.n_chains, side * side) if cfg.noise else zero_forcing
        kernels.exp_euler_update(psi, np.ascontiguousarray(forcing), np.ascontiguousarray(g), decay, phi1, amp)
        if not np.all(np.isfinite(psi)):
            raise FloatingPointError(f"non-finite field at step {step}")
        if step >= cfg.n_burnin and (step - cfg.n_burnin + 1) % cfg.thin == 0 and k < cfg.n_kept:
            kept[:, k] = psi.reshape(cfg.n_chains, side, side)
            k += 1
    # enforce exact Hermitian symmetry against rounding drift
    kept = 0.5 * (kept + np.conj(kept[..., ::-1, ::-1]))
    prov = asdict(cfg)
    prov["init"] = repr(cfg.init)
    return SampleBatch(SpectralField(N, kept), np.ones(kept.shape[:2]), prov)


# ---------------------------------------------------------------------------
# projection onto the wells


def well_distance(phi: SpectralField, w, eta=0.5, M=None):
    return cminus_norm(phi - float(w), eta, M)


def projection_pi(phi, delta: float, eta: float = 0.5, M=None):
    """Nearest well within ``delta`` in the proxy norm, else 0 (ties go to +1)."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    if not isinstance(phi, SpectralField):
        vals = phi.values if hasattr(phi, "values") else np.asarray(phi)
        phi = to_spectral(vals, (vals.shape[-1] - 2) // 2)
    dp = well_distance(phi, 1, eta, M)
    dm = well_distance(phi, -1, eta, M)
    out = np.where(dp <= dm, 1, -1)
    out = np.where(np.minimum(dp, dm) < delta, out, 0)
    return out[()] if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# MCMC diagnostics


def autocorr_time(x, c=5.0):
    """Integrated autocorrelation time with Sokal's adaptive window."""
    x = np.asarray(x, dtype=float)
    n = x.size
    y = x - x.mean()
    var = y @ y / n
    if var == 0:
        return np.inf
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(y, nfft)
    acf = np.fft.irfft(f * np.conj(f), nfft)[:n] / (n * var)
    tau = 2.0 * np.cumsum(acf) - 1.0
    window = np.arange(n) >= c * tau
    m = int(np.argmax(window)) if window.any() else n - 1
    return max(float(tau[m]), 1e-12)


def batch_means_se(x, n_batches=20):
    x = np.asarray(x, dtype=float)
    b = x.size // n_batches
    if b < 1:
        return float(x.std(ddof=1) / np.sqrt(x.size)) if x.size > 1 else 0.0
    means = x[: b * n_batches].reshape(n_batches, b).mean(axis=1)
    return float(means.std(ddof=1) / np.sqrt(n_batches))


def series_estimate(x):
    """Mean, batch-means standard error and autocorrelation ESS of a series.

    A 2-D input is read as ``(chains, time)``; chains are pooled with ESS
    summed and the standard error taken from the chain means when there are
    at least 10 chains.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    n_chains, n = x.shape
    value = float(x.mean())
    if np.all(x == x.flat[0]):
        return EstimateWithError(value, 0.0, 0.0, True)
    ess = 0.0
    for row in x:
        tau = autocorr_time(row)
        ess += n / tau if np.isfinite(tau) else 0.0
    ess = min(ess, float(x.size))
    if n_chains >= 10:
        se = float(x.mean(axis=1).std(ddof=1) / np.sqrt(n_chains))
    else:
        se = float(np.sqrt(sum(batch_means_se(r) ** 2 for r in x)) / n_chains)
    return EstimateWithError(value, se, ess, ess < LOW_ESS)


def diagnostics(batch, F: Observable | None = None) -> EstimateWithError:
    """Estimate ``<F>`` from a chain batch (or a raw series when ``F`` is None)."""
    if F is None:
        return series_estimate(batch)
    psi = batch.psi
    vals = F.evaluate(psi, batch.eps, wick_constants(psi.N).c_N, batch.provenance.get("M"))
    return series_estimate(vals)
