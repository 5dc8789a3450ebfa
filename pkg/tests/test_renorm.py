import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phi4expand.field import ReferenceMeasure, RngStream, SpectralField, sample_gaussian, to_grid
from phi4expand.renorm import (
    LIMIT_CUTOFF,
    ball_sum,
    convert_reference,
    d_limit,
    h3_h4,
    hermite,
    inv_sq_tail_bound,
    model_norm,
    potential_V,
    wick_constants,
    wick_means,
    wick_powers,
)


def direct_sum(N, f):
    return math.fsum(f(a * a + b * b) for a in range(-N, N + 1) for b in range(-N, N + 1) if a * a + b * b <= N * N)


# --- hermite ---------------------------------------------------------------


def test_hermite_examples():
    assert hermite(2, 0.0, 0.7) == pytest.approx(-0.7)
    assert hermite(3, 1.0, 1.0) == pytest.approx(-2.0)
    x = np.linspace(-2, 2, 7)
    np.testing.assert_allclose(hermite(4, x, 0.0), x ** 4)


def test_hermite_rejects_bad_input():
    with pytest.raises(ValueError):
        hermite(5, 1.0, 1.0)
    with pytest.raises(ValueError):
        hermite(2, 1.0, -0.1)


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_hermite_gaussian_mean_zero(k):
    x = np.random.default_rng(k).normal(0.0, np.sqrt(1.7), 200_000)
    h = hermite(k, x, 1.7)
    assert abs(h.mean()) < 4 * h.std() / np.sqrt(x.size)


# --- constants -------------------------------------------------------------


def test_constants_small_N():
    k0 = wick_constants(0)
    assert (k0.c_N, k0.c_wN, k0.d_N) == (1.0, 0.5, 0.5)
    k1 = wick_constants(1)
    assert k1.c_N == pytest.approx(3.0)
    assert k1.c_wN == pytest.approx(11 / 6)
    assert k1.d_N == pytest.approx(7 / 6)


@pytest.mark.parametrize("N", [2, 5, 17, 40])
def test_constants_match_direct_summation(N):
    k = wick_constants(N)
    assert k.c_N == direct_sum(N, lambda r: 1 / (1 + r))
    assert k.c_wN == direct_sum(N, lambda r: 1 / (2 + r))
    assert k.d_N == direct_sum(N, lambda r: 1 / ((1 + r) * (2 + r)))


def test_log_divergence_rate():
    diff = wick_constants(2048).c_N - wick_constants(1024).c_N
    assert diff == pytest.approx(2 * math.pi * math.log(2), rel=0.01)


def test_monotonicity():
    ks = [wick_constants(n) for n in range(12)]
    for a, b in zip(ks, ks[1:]):
        assert b.c_N > a.c_N and b.c_wN > a.c_wN and b.d_N > a.d_N


def test_d_limit_tail_certified():
    d, tail = d_limit()
    assert tail < 1e-6
    assert d >= wick_constants(LIMIT_CUTOFF).d_N
    # tail bound dominates the observed increment to a much larger cutoff
    assert ball_sum("d", 4096) - d <= tail


@pytest.mark.parametrize("N", [0, 1, 2, 3, 10, 64])
def test_inv_sq_tail_bound_is_an_upper_bound(N):
    assert ball_sum("inv_sq", 4096) - ball_sum("inv_sq", N) <= inv_sq_tail_bound(N)


# --- Wick powers and conversion -------------------------------------------


def test_wick_powers_at_zero():
    c = wick_constants(3).c_N
    b = wick_powers(np.zeros((8, 8)), c)
    np.testing.assert_allclose(b.p2, -c)
    np.testing.assert_allclose(b.p3, 0.0)
    np.testing.assert_allclose(b.p4, 3 * c * c)


def test_wick_powers_sigma_zero_are_plain_powers():
    v = np.random.default_rng(0).normal(size=(6, 6))
    b = wick_powers(v, 0.0)
    for k in range(5):
        np.testing.assert_allclose(b.power(k), v ** k)


def test_wick_square_has_zero_mean_under_mu():
    N = 4
    c = wick_constants(N).c_N
    psi = sample_gaussian(ReferenceMeasure.mu(), N, RngStream(1), size=20_000)
    m = wick_means(to_grid(psi).values, c)[:, 1]
    assert abs(m.mean()) < 4 * m.std() / np.sqrt(m.size)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), sigma=st.floats(0.0, 5.0), frac=st.floats(0.0, 1.0))
def test_convert_reference_matches_recomputation(seed, sigma, frac):
    v = np.random.default_rng(seed).normal(0, 2, size=(8, 8))
    d = frac * sigma
    conv = convert_reference(wick_powers(v, sigma), d)
    direct = wick_powers(v, sigma - d)
    for k in (2, 3, 4):
        np.testing.assert_allclose(conv.power(k), direct.power(k), rtol=1e-12, atol=1e-12 * (1 + sigma) ** 2)
    assert conv.sigma == pytest.approx(sigma - d)


def test_convert_reference_examples():
    v = np.full((4, 4), 1.0)
    b = wick_powers(v, 1.0)
    np.testing.assert_allclose(b.p2, 0.0)
    np.testing.assert_allclose(convert_reference(b, 1.0).p2, 1.0)
    same = convert_reference(b, 0.0)
    np.testing.assert_array_equal(same.p4, b.p4)
    with pytest.raises(ValueError):
        convert_reference(b, 1.5)


def test_hermite_orthogonality_two_points():
    # covariance of H_k(phi(x)) and H_l(phi(y)) is delta_kl k! C(x - y)^k
    N, M = 2, 8
    c = wick_constants(N).c_N
    n = 100_000
    psi = sample_gaussian(ReferenceMeasure.mu(), N, RngStream(21), size=n)
    g = to_grid(psi, M).values
    x, y = g[:, 0, 0], g[:, 1, 0]
    n1 = np.arange(-N, N + 1)[:, None]
    n2 = np.arange(-N, N + 1)[None, :]
    r = n1 ** 2 + n2 ** 2
    C = np.sum(np.where(r <= N * N, np.cos(2 * np.pi * n1 / M) / (1 + r), 0.0))
    for k in range(1, 5):
        for l in range(1, 5):
            prod = hermite(k, x, c) * hermite(l, y, c)
            target = math.factorial(k) * C ** k if k == l else 0.0
            assert abs(prod.mean() - target) < 4 * prod.std() / np.sqrt(n), (k, l)


# --- potential -------------------------------------------------------------


def test_potential_constant_one():
    p = potential_V(SpectralField.constant(2, 1.0), 2, 0.0)
    assert p.v1 == pytest.approx(0.0, abs=1e-14)
    assert p.v2 == pytest.approx(-0.5)
    assert p.total == pytest.approx(-0.5)


def test_potential_zero_field_N0():
    p = potential_V(SpectralField.zeros(0), 0, 1.0)
    assert p.v1 == pytest.approx(1.5)
    assert p.v2 == pytest.approx(0.5)


def test_potential_rejects_small_grid():
    with pytest.raises(ValueError):
        potential_V(SpectralField.zeros(4), 4, 1.0, M=12)


def test_partition_function_stable_in_N():
    # E_mu exp(-V_N) at small cutoffs: finite and slowly varying
    vals = []
    for N in (1, 2, 4, 8):
        c = wick_constants(N).c_N
        psi = sample_gaussian(ReferenceMeasure.mu(), N, RngStream(N), size=4000)
        z = np.exp(-potential_V(psi, N, c).total)
        assert np.all(np.isfinite(z))
        vals.append(z.mean())
    assert max(vals) / min(vals) < 1.5


@pytest.mark.parametrize("w", [1, -1])
@pytest.mark.parametrize("eps", [0.05, 0.3, 1.0])
def test_rescaling_identity(w, eps):
    # (1/eps) V(w + sqrt(eps) v) + 1/(2 eps) + (w/sqrt(eps)) int v
    #   = (eps/4) int :v^4: + sqrt(eps) w int :v^3: + 1/2 int v^2 - c_N / 2
    N = 6
    c = wick_constants(N).c_N
    v = sample_gaussian(ReferenceMeasure.mu(), N, RngStream(7), size=16)
    phi = v.scaled(np.sqrt(eps)) + float(w)
    lhs = potential_V(phi, N, eps * c).total / eps + 0.5 / eps + w / np.sqrt(eps) * v.mode(0, 0).real
    g = to_grid(v).values
    m = wick_means(g, c)
    rhs = 0.25 * eps * m[:, 3] + np.sqrt(eps) * w * m[:, 2] + 0.5 * (g * g).mean(axis=(-2, -1)) - 0.5 * c
    np.testing.assert_allclose(lhs, rhs, rtol=1e-8, atol=1e-8)


# --- h3/h4 and model norm --------------------------------------------------


def test_h3_h4_zero_field_N0():
    k = wick_constants(0)
    H3, H4 = h3_h4(wick_powers(np.zeros((4, 4)), k.c_wN), k.d_N)
    assert H3 == pytest.approx(0.0)
    assert H4 == pytest.approx(2.25)


def test_h3_h4_mean_zero_under_mu_w():
    N = 4
    k = wick_constants(N)
    v = sample_gaussian(ReferenceMeasure.mu_w(1), N, RngStream(2), size=20_000)
    H3, H4 = h3_h4(wick_powers(to_grid(v).values, k.c_wN), k.d_N)
    for h in (H3, H4):
        assert abs(h.mean()) < 4 * h.std() / np.sqrt(h.size)


def test_model_norm_zero_and_homogeneity():
    assert model_norm(wick_powers(np.zeros((12, 12)), 0.0)) == 0.0
    v = to_grid(sample_gaussian(ReferenceMeasure.mu(), 2, RngStream(4)), 12).values
    a = model_norm(wick_powers(v, 0.0), N=2)
    b = model_norm(wick_powers(2 * v, 0.0), N=2)
    assert b == pytest.approx(2 * a, rel=1e-12)


def test_model_norm_tail_decays():
    N = 16
    k = wick_constants(N)
    v = sample_gaussian(ReferenceMeasure.mu_w(1), N, RngStream(5), size=2000)
    norms = model_norm(wick_powers(to_grid(v).values, k.c_wN), N=N)
    ts = np.quantile(norms, [0.5, 0.9, 0.99])
    tails = np.array([(norms > t).mean() for t in ts])
    # log tail falls at least linearly in t^2 over the observed range
    slopes = np.diff(np.log(tails)) / np.diff(ts ** 2)
    assert np.all(slopes < 0)
