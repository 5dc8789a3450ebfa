import numpy as np
import pytest
from scipy.integrate import trapezoid

from phi4expand.field import ReferenceMeasure, RngStream, SpectralField, sample_gaussian
from phi4expand.observable import const, pair
from phi4expand.sampler import (
    ChainConfig,
    LowAcceptanceError,
    WeightedDraws,
    diagnostics,
    langevin_chain,
    projection_pi,
    reweight_estimate,
    series_estimate,
    weighted_draws,
)


# --- importance reweighting ------------------------------------------------


def test_no_interaction_gives_unit_partition_function():
    I, Z = reweight_estimate(None, 0.3, 3, 500, RngStream(1), interaction=False)
    assert Z.value == 1.0 and Z.std_error == 0.0


def test_no_interaction_odd_moment_vanishes():
    f = SpectralField.from_modes(3, {(0, 0): 1.0, (1, 2): 0.5})
    I, _ = reweight_estimate(pair(f), 0.3, 3, 20_000, RngStream(2), interaction=False)
    assert abs(I.value) < 4 * I.std_error


def _quadrature_Z(eps, n_a=401, n_r=301, L=7.0, R=4.0):
    """Independent oracle for ``Z`` at N = 1.

    The cutoff-1 field is ``a + 2 r1 cos(x1 + t1) + 2 r2 cos(x2 + t2)``, i.e.
    five real coordinates. Its spatial moments do not depend on the phases,
    which integrate out exactly, leaving a trapezoid rule in ``(a, r1, r2)``
    with closed-form ``int psi^2`` and ``int psi^4``.
    """
    c = 3.0  # c_1
    a = np.linspace(-L, L, n_a)
    r = np.linspace(0.0, R, n_r)
    pa = np.exp(-a * a / 2) / np.sqrt(2 * np.pi)
    pr = 4 * r * np.exp(-2 * r * r)  # modulus law for E|z|^2 = 1/2
    R1, R2 = r[:, None] ** 2, r[None, :] ** 2
    w = pr[:, None] * pr[None, :]
    rows = []
    for ai in a:
        A = ai * ai
        m2 = A + 2 * R1 + 2 * R2
        m4 = A * A + 12 * A * (R1 + R2) + 6 * R1 * R1 + 6 * R2 * R2 + 24 * R1 * R2
        U = 0.25 * eps * (m4 - 6 * c * m2 + 3 * c * c) - (m2 - c) + 0.25 / eps
        rows.append(trapezoid(trapezoid(np.exp(-U) * w, r, axis=1), r))
    return trapezoid(np.array(rows) * pa, a)


def test_reweighting_matches_quadrature_oracle_N1():
    eps = 0.5
    oracle = _quadrature_Z(eps)
    assert _quadrature_Z(eps, 801, 601, 9.0, 5.0) == pytest.approx(oracle, rel=1e-3)
    _, Z = reweight_estimate(None, eps, 1, 200_000, RngStream(3))
    assert abs(Z.value - oracle) < 3 * Z.std_error


def test_wells_and_ais_proposals_match_oracle_N1():
    eps = 0.5
    oracle = _quadrature_Z(eps)
    for proposal, n in (("wells", 100_000), ("ais", 2000)):
        d = weighted_draws(None, eps, 1, n, RngStream(4), proposal=proposal)
        z, se = d.integral(False)
        assert abs(z - oracle) < 4 * se, proposal


def test_stored_fields_reproduce_direct_integral():
    f = SpectralField.constant(2, 1.0)
    F = pair(f) ** 2
    a = weighted_draws(F, 0.5, 2, 300, RngStream(5), proposal="wells")
    b = weighted_draws(None, 0.5, 2, 300, RngStream(5), proposal="wells", keep_fields=True)
    assert b.integral_of(F) == pytest.approx(a.integral(True), rel=1e-12)
    with pytest.raises(ValueError):
        a.integral_of(F)


def test_too_many_rejects_abort():
    d = WeightedDraws()
    d.add_stratum(np.ones(100), np.r_[np.full(98, 0.0), np.inf, np.nan], 1.0)
    assert d.rejected == 2
    with pytest.raises(LowAcceptanceError):
        d.check()


def test_eps_must_be_positive():
    with pytest.raises(ValueError):
        weighted_draws(None, 0.0, 1, 10, RngStream(0))


# --- Langevin --------------------------------------------------------------


def test_ou_mode_variances():
    cfg = ChainConfig(N=3, eps=0.5, dt=0.05, n_steps=20_000, n_burnin=200, thin=5, n_chains=12, seed=6,
                      interaction=False)
    batch = langevin_chain(cfg)
    for n in [(0, 0), (1, 0), (1, 1), (2, 1), (3, 0)]:
        x = np.abs(batch.psi.mode(*n)) ** 2
        est = series_estimate(x)
        target = 1 / (1 + n[0] ** 2 + n[1] ** 2)
        assert abs(est.value - target) < 4 * est.std_error, n


def test_deterministic_flow_N0_fixed_point():
    cfg = ChainConfig(N=0, eps=1.0, dt=0.05, n_steps=4000, noise=False, init=0.1)
    psi = langevin_chain(cfg).psi.mode(0, 0)[0, -1].real
    assert psi == pytest.approx(2.0, abs=1e-6)


def test_chains_are_bit_reproducible():
    cfg = ChainConfig(N=4, eps=0.2, dt=0.02, n_steps=300, thin=7, n_chains=3, seed=8, init="gaussian")
    a, b = langevin_chain(cfg), langevin_chain(cfg)
    np.testing.assert_array_equal(a.psi.coeffs, b.psi.coeffs)
    assert a.psi.is_hermitian()
    assert a.psi.coeffs.shape == (3, 300 // 7, 9, 9)


@pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
def test_chain_reports_blow_up_step():
    cfg = ChainConfig(N=0, eps=1.0, dt=1.0, n_steps=50, noise=False, init=1e6)
    with pytest.raises(FloatingPointError, match="step"):
        langevin_chain(cfg)


def test_chain_config_validation():
    with pytest.raises(ValueError):
        ChainConfig(N=8, eps=0.1, dt=0.1, n_steps=10)
    with pytest.raises(ValueError):
        ChainConfig(N=4, eps=0.1, dt=0.01, n_steps=10, M=12)
    with pytest.raises(ValueError):
        ChainConfig(N=1, eps=0.0, dt=0.01, n_steps=10)


# --- projection ------------------------------------------------------------


def test_projection_examples():
    assert projection_pi(SpectralField.constant(3, 1.0), 0.01) == 1
    assert projection_pi(SpectralField.zeros(3), 0.5) == 0
    noise = sample_gaussian(ReferenceMeasure.mu(), 3, RngStream(9)).scaled(0.01)
    assert projection_pi(noise - 1.0, 0.5) == -1
    with pytest.raises(ValueError):
        projection_pi(SpectralField.zeros(1), 0.0)


def test_projection_tie_goes_plus():
    # a field equidistant from both wells but within delta of each
    assert projection_pi(SpectralField.zeros(0), 1.5) == 1


# --- diagnostics -----------------------------------------------------------


def test_iid_ess():
    x = np.random.default_rng(10).normal(size=20_000)
    est = series_estimate(x)
    assert est.ess == pytest.approx(x.size, rel=0.1)


def test_ar1_ess():
    rho, n = 0.9, 200_000
    gen = np.random.default_rng(11)
    e = gen.normal(size=n)
    x = np.empty(n)
    x[0] = e[0]
    for i in range(1, n):
        x[i] = rho * x[i - 1] + e[i]
    est = series_estimate(x)
    assert est.ess / n == pytest.approx((1 - rho) / (1 + rho), rel=0.2)


def test_constant_series_flagged():
    est = series_estimate(np.full(500, 2.0))
    assert est.std_error == 0.0 and est.flagged


def test_diagnostics_on_batch():
    cfg = ChainConfig(N=2, eps=0.5, dt=0.05, n_steps=400, n_chains=2, seed=1)
    est = diagnostics(langevin_chain(cfg), const(1.0))
    assert est.value == 1.0 and est.flagged
