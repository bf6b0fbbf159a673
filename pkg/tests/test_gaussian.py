import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from pinlab.gaussian import (
    WalkState, bridge_moments, conditional_variances, conditioned_bm_cov, excursion_area_moments,
    local_limit_density, phi_of_t, rescaled_endpoints, sample_bridge, sample_conditioned_ibm,
    sample_free_path, verify_local_limit, yz_moments, zz_cov,
)
from pinlab.model import PotentialSpec

from test_model import quartic_potential


def brute_zz(i, j):
    return sum(Fraction((i - k + 1) * (j - k + 1)) for k in range(1, i + 1))


# -- moments ------------------------------------------------------------------


def test_yz_moments_examples():
    m = yz_moments(1, WalkState())
    assert (m.varY, m.varZ, m.covYZ) == (1.0, 1.0, 1.0)
    assert yz_moments(3, WalkState()).varZ == 14.0
    m = yz_moments(5, WalkState(0.5, -1.0, 2.0))
    assert m.meanY == 0.5 and m.meanZ == -1.0 + 2.5
    with pytest.raises(ValueError):
        yz_moments(0, WalkState())


def test_zz_cov_examples():
    assert zz_cov(1, 1, 2.5) == 2.5
    assert zz_cov(2, 3) == 8.0
    with pytest.raises(ValueError):
        zz_cov(3, 2)


def test_moments_match_brute_force_exactly():
    for n in range(1, 51):
        m = yz_moments(n, WalkState())
        assert m.varZ == float(brute_zz(n, n))
        assert m.covYZ == float(sum(Fraction(n - k + 1) for k in range(1, n + 1)))
        assert m.varY == n
        for j in range(n, 51, 7):
            assert zz_cov(n, j) == float(brute_zz(n, j))


@given(st.integers(1, 60), st.floats(0.1, 5))
def test_moment_invariants(n, s2):
    m = yz_moments(n, WalkState(0, 0, s2))
    assert m.varY >= 0 and m.varZ >= 0 and m.covYZ ** 2 <= m.varY * m.varZ


# -- free paths ---------------------------------------------------------------


def test_free_path_gaussian_moments(rng):
    Y, Z = sample_free_path(3, WalkState(), PotentialSpec.gaussian(), rng, size=100_000)
    assert np.allclose(np.diff(Z, axis=1), Y[:, 1:])
    assert np.var(Z[:, 3]) == pytest.approx(14.0, rel=0.02)
    assert np.cov(Y[:, 3], Z[:, 3])[0, 1] == pytest.approx(6.0, rel=0.02)
    z = Z[:, 3] / 3 ** 1.5
    assert abs(z.mean()) < 3 * z.std() / math.sqrt(z.size)


def test_free_path_tabulated_steps(rng):
    pot = quartic_potential()
    Y, Z = sample_free_path(4, WalkState(), pot, rng, size=100_000)
    X = np.diff(Y, axis=1)
    assert np.var(X) == pytest.approx(pot.sigma2, rel=0.02)
    assert np.allclose(np.diff(Z, axis=1), Y[:, 1:])


# -- bridges ------------------------------------------------------------------


def test_bridge_fully_pinned(rng):
    Z = sample_bridge(2, WalkState(), pins=[(1, 0.7), (2, 0.0)], rng=rng)
    assert Z[0] == 0.7 and Z[1] == 0.0


def test_bridge_midpoint_variance(rng):
    n = 200
    Z = sample_bridge(n, WalkState(), terminal=(0.0, 0.0), rng=rng, size=100_000)
    assert np.abs(Z[:, -1]).max() < 1e-9
    assert np.var(Z[:, n // 2 - 1]) / n ** 3 == pytest.approx(1 / 192, rel=0.03)


def test_bridge_inconsistent_constraints(rng):
    with pytest.raises(ValueError):
        sample_bridge(3, WalkState(), pins=[(2, 0.0), (2, 1.0)], rng=rng)
    with pytest.raises(ValueError):
        sample_bridge(4, WalkState(), pins=[(9, 0.0)], rng=rng)


def test_bridge_covariance_matches_conditioning():
    rng = np.random.default_rng(11)
    for _ in range(3):
        n = int(rng.integers(8, 33))
        sites = sorted(rng.choice(np.arange(1, n), size=3, replace=False))
        pins = [(int(p), float(rng.normal())) for p in sites]
        state = WalkState(float(rng.normal()), float(rng.normal()), 1.3)
        mean, cov = bridge_moments(n, state, pins, (0.0, 0.0))
        Z = sample_bridge(n, state, pins, (0.0, 0.0), rng, size=100_000)
        emp = np.cov(Z, rowvar=False)
        d = np.abs(np.diag(cov))  # pinned sites carry round-off of either sign
        se = np.sqrt((cov ** 2 + np.outer(d, d)) / Z.shape[0])
        assert np.all(np.abs(emp - cov) <= 3 * se + 1e-9)
        assert np.all(np.abs(Z.mean(axis=0) - mean) <= 4 * np.sqrt(d / Z.shape[0]) + 1e-9)


@given(st.integers(2, 32), st.data())
def test_brascamp_lieb_bound(n, data):
    pins = data.draw(st.lists(st.integers(1, n), max_size=n // 2, unique=True))
    s2 = data.draw(st.sampled_from([0.5, 1.0, 2.0]))
    var = conditional_variances(n, pins, s2)
    k = np.arange(1, n + 1)
    bound = s2 * k * (k + 1) * (2 * k + 1) / 6.0
    assert np.all(var <= bound * (1 + 1e-12))


def test_brascamp_lieb_equality_without_pins():
    var = conditional_variances(20, [], 1.0)
    k = np.arange(1, 21)
    assert np.array_equal(var, k * (k + 1) * (2 * k + 1) / 6.0)


def test_excursion_area_moments_match_conditioning():
    for l, a, b in [(3, 0.0, 0.5), (10, 1.0, -2.0), (40, -0.3, 0.7)]:
        n = l - 1
        # Z under P^{(-a,0)} given Z_{l-1} = b and Z_l = 0
        mean, cov = bridge_moments(l, WalkState(-a, 0.0, 1.7), pins=[(n, b), (l, 0.0)])
        m, v = excursion_area_moments(l, a, b, 1.7)
        assert m == pytest.approx(mean[:n].sum(), abs=1e-9)
        assert v == pytest.approx(cov[:n, :n].sum(), rel=1e-9, abs=1e-9)


# -- local limit --------------------------------------------------------------


def test_local_limit_density_examples():
    assert local_limit_density(0, 0) == pytest.approx(math.sqrt(3) / math.pi, abs=1e-15)
    assert local_limit_density(0.3, -0.7) == pytest.approx(local_limit_density(-0.3, 0.7))
    mass, _ = integrate.dblquad(lambda z, y: float(local_limit_density(y, z)), -12, 12, -6, 6,
                                epsabs=1e-12, epsrel=1e-12)
    assert abs(mass - 1) < 1e-8


def test_local_limit_density_covariance():
    def mom(f):
        v, _ = integrate.dblquad(lambda z, y: f(y, z) * float(local_limit_density(y, z)), -12, 12, -6, 6,
                                 epsabs=1e-12)
        return v
    assert mom(lambda y, z: y * y) == pytest.approx(1.0, abs=1e-8)
    assert mom(lambda y, z: y * z) == pytest.approx(0.5, abs=1e-8)
    assert mom(lambda y, z: z * z) == pytest.approx(1 / 3, abs=1e-8)


def test_rescaled_endpoint_covariance(rng):
    d = rescaled_endpoints(50, PotentialSpec.gaussian(2.0), rng, 200_000)
    c = np.cov(d, rowvar=False)
    assert np.allclose(c, [[1, 0.5], [0.5, 1 / 3]], rtol=0.02 + 1 / 50)


@pytest.mark.parametrize("pot", [PotentialSpec.gaussian(), quartic_potential()], ids=["gauss", "quartic"])
def test_local_limit_discrepancy_decreases(pot):
    rng = np.random.default_rng(2)
    d = [verify_local_limit(n, 2 * 10 ** 6, pot, rng) for n in (16, 64, 256)]
    assert d[0] > d[1] > d[2]


def test_local_limit_symmetry(rng):
    pot = PotentialSpec.gaussian()
    data = rescaled_endpoints(32, pot, rng, 200_000)
    a = verify_local_limit(32, data, pot)
    b = verify_local_limit(32, -data, pot)
    assert abs(a - b) < 0.01


def test_local_limit_rejects_small_input(rng):
    with pytest.raises(ValueError):
        verify_local_limit(5, 10 ** 4, PotentialSpec.gaussian(), rng)
    with pytest.raises(ValueError):
        verify_local_limit(20, 100, PotentialSpec.gaussian(), rng)


# -- conditioned Brownian motion -------------------------------------------


def test_conditioned_bm_cov():
    A, cond = conditioned_bm_cov()
    assert np.array_equal(A, [[1 / 20, 1 / 8, 1 / 6], [1 / 8, 1 / 3, 1 / 2], [1 / 6, 1 / 2, 1]])
    assert cond == pytest.approx(1 / 720, abs=1e-12)
    np.linalg.cholesky(A)


def test_phi_of_t():
    assert phi_of_t(0.0) == 0.5
    assert phi_of_t(1 / math.sqrt(720)) == pytest.approx(0.158655253931457, abs=1e-12)
    t = np.linspace(-0.1, 0.1, 11)
    assert np.allclose(phi_of_t(t) + phi_of_t(-t), 1.0)


def test_conditioned_ibm_variances(rng):
    _, I = sample_conditioned_ibm([0.5], rng, 100_000)
    assert np.var(I[:, 0]) == pytest.approx(1 / 192, rel=0.03)
    grid = np.arange(1, 512) / 512
    _, I = sample_conditioned_ibm(grid, rng, 20_000)
    area = I.sum(axis=1) / 512  # trapezoid with zero endpoints
    assert np.var(area) == pytest.approx(1 / 720, rel=0.03)
    se = I.std(axis=0) / math.sqrt(I.shape[0])
    assert np.all(np.abs(I.mean(axis=0)) < 4.5 * se)


def test_conditioned_ibm_bad_grid(rng):
    with pytest.raises(ValueError):
        sample_conditioned_ibm([0.5, 0.2], rng)
    with pytest.raises(ValueError):
        sample_conditioned_ibm([0.0, 0.5], rng)
