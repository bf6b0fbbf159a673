import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from pinlab.renewal import (
    StepLaw, fit_inverse_t, gap_statistics, law_tables, mean_step, running_max_gap, sample_conditioned_renewal,
    sample_renewal, synthetic_q, verify_gap_bounds, write_gap_csv,
)
from pinlab.transfer import renewal_tables


# -- step laws ----------------------------------------------------------------


def test_synthetic_geometric():
    law = synthetic_q("geometric", {"p": 0.5}, 40)
    assert law.q[1] == 0.5 and law.q[2] == 0.25
    assert law.total == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ValueError):
        synthetic_q("geometric", {"p": 0.0}, 10)


def test_synthetic_critical_power():
    for C in (0.3, 6 / math.pi ** 2, None):
        law = synthetic_q("critical-power", {} if C is None else {"C": C}, 1000)
        assert law.total == pytest.approx(1.0, abs=1e-14)
        assert law.q[10] == pytest.approx((C or 1 / (math.pi ** 2 / 6 - 1)) / 100)
    with pytest.raises(ValueError):
        synthetic_q("critical-power", {"C": 2.0}, 10)
    assert mean_step(synthetic_q("critical-power", {}, 100)) == math.inf


def test_synthetic_exponential():
    G = 0.7
    law = synthetic_q("exponential", {"G": G}, 400)
    p = -math.expm1(-G)
    assert mean_step(law) == pytest.approx(1 / p, abs=1e-10)
    assert law.q[3] / law.q[2] == pytest.approx(math.exp(-G))
    with pytest.raises(ValueError):
        synthetic_q("exponential", {"G": -1.0}, 10)
    with pytest.raises(ValueError):
        synthetic_q("cauchy", {}, 10)


# -- free renewal ------------------------------------------------------------


def test_sample_renewal_examples(rng):
    q = np.zeros(4)
    q[1] = 1.0
    chi, iota = sample_renewal(q, 50, rng)
    assert np.array_equal(chi, np.arange(51)) and iota == 50
    q = np.array([0.0, 0.0, 0.5])  # defective: terminates with probability 1/2 per step
    chi, _ = sample_renewal(q, 10 ** 6, rng)
    assert chi[-1] < 200 and np.all(np.diff(chi) == 2)


def test_geometric_density(rng):
    p, N = 0.3, 10 ** 5
    law = synthetic_q("geometric", {"p": p}, 200)
    iota = [sample_renewal(law, N, rng, chunk=4096)[1] for _ in range(1000)]
    assert np.mean(iota) / N == pytest.approx(p, rel=0.02)


def test_critical_power_density(rng):
    N = 2 ** 16
    law = synthetic_q("critical-power", {}, N)
    C = 1 / (math.pi ** 2 / 6 - 1)
    iota = [sample_renewal(law, N, rng)[1] for _ in range(300)]
    assert abs(np.mean(iota) * math.log(N) / N * C - 1) < 0.15


def test_renewal_mass_matches_simulation():
    rng = np.random.default_rng(21)
    q = np.zeros(11)
    q[1:] = rng.random(10)
    q /= q.sum()
    u = renewal_tables(q, 64).u
    reps = 10 ** 6
    hits = np.zeros(65)
    for _ in range(reps):
        chi, _ = sample_renewal(q, 64, rng, chunk=32)
        hits[chi] += 1
    est = hits / reps
    se = np.sqrt(u * (1 - u) / reps)
    assert np.all(np.abs(est[1:] - u[1:]) < 3 * se[1:] + 1e-12)


def test_critical_u_asymptotic():
    law = synthetic_q("critical-power", {}, 2 ** 14)
    tab = renewal_tables(law.q)
    n = 2 ** 14
    assert 0.9 <= tab.u[n] * tab.C_eps * math.log(n) <= 1.1


# -- conditioned renewal -------------------------------------------------------


def test_conditioned_examples(rng):
    q = np.zeros(30)
    q[1] = 1.0
    chi = sample_conditioned_renewal(q, renewal_tables(q).u, 20, rng)
    assert np.array_equal(chi, np.arange(22))
    law = synthetic_q("critical-power", {}, 600)
    tab = law_tables(law, 500)
    for _ in range(50):
        chi = sample_conditioned_renewal(law, tab.u, 500, rng)
        assert chi[0] == 0 and chi[-1] == 501 and np.all(np.diff(chi) > 0)
    with pytest.raises(ValueError):
        sample_conditioned_renewal(law, tab.u, 700, rng)


@pytest.mark.parametrize("N", [5, 12, 20])
def test_conditioned_geometric_chi_square(N):
    rng = np.random.default_rng(N)
    p = 0.35
    law = synthetic_q("geometric", {"p": p}, N + 1)
    u = renewal_tables(law.q, N + 1).u
    reps = 20_000
    first = np.empty(reps, dtype=int)
    iota = np.empty(reps, dtype=int)
    for r in range(reps):
        chi = sample_conditioned_renewal(law, u, N, rng)
        first[r] = chi[1]
        iota[r] = chi.size - 2
    # first gap by enumeration: q(j) u(N + 1 - j) / u(N + 1), u(0) = 1 and u = p elsewhere ...
    j = np.arange(1, N + 2)
    pf = law.q[j] * u[N + 1 - j] / u[N + 1]
    assert pf.sum() == pytest.approx(1.0, abs=1e-12)
    obs = np.bincount(first, minlength=N + 2)[1:]
    assert stats.chisquare(obs, pf * reps).pvalue > 0.01
    # ... and the interior points are independent Bernoulli(p)
    pb = stats.binom.pmf(np.arange(N + 1), N, p)
    obs = np.bincount(iota, minlength=N + 1)
    keep = pb * reps >= 5
    f_exp, f_obs = pb[keep] * reps, obs[keep]
    if not keep.all():  # pool the sparse cells
        f_exp, f_obs = np.append(f_exp, pb[~keep].sum() * reps), np.append(f_obs, obs[~keep].sum())
    assert stats.chisquare(f_obs, f_exp * f_obs.sum() / f_exp.sum()).pvalue > 0.01


# -- gap statistics ----------------------------------------------------------


def test_gap_examples():
    assert gap_statistics([0, 3, 4, 10], 10) == (6, 3, 4)
    assert gap_statistics(np.arange(11), 10)[0] == 1
    assert gap_statistics([0, 15], 10) == (11, 0, 0)


@given(st.lists(st.integers(1, 40), min_size=1, max_size=60))
def test_running_max_monotone(steps):
    chi = np.concatenate(([0], np.cumsum(steps)))
    rm = running_max_gap(chi)
    assert np.all(np.diff(rm) >= 0)
    for k in range(1, chi.size):
        assert rm[k - 1] == gap_statistics(chi[:k + 1], int(chi[k]))[0]


def test_verify_gap_bounds_shape(tmp_path):
    rng = np.random.default_rng(3)
    law = synthetic_q("critical-power", {}, 4200)
    rows = verify_gap_bounds("critical", law, [1024, 4096], [0.05, 1, 2, 4, 8, 16], 400, rng)
    for N in (1024, 4096):
        est = [r["estimate"] for r in rows if r["N"] == N]
        assert np.all(np.diff(est) <= 0) and est[0] > 0.9
        c1, _ = fit_inverse_t([r for r in rows if r["t_or_c"] >= 1], N)
        assert c1 > 0
    rows_e = verify_gap_bounds("exponential", synthetic_q("exponential", {"G": 0.5}, 4097), [4096], [3.0], 400, rng)
    assert rows_e[0]["estimate"] <= 0.05
    with pytest.raises(ValueError):
        verify_gap_bounds("weird", law, [10], [1.0], 1, rng)
    p = tmp_path / "g.csv"
    write_gap_csv(p, rows)
    assert p.read_text().splitlines()[0] == "regime,N,t_or_c,estimate,stderr,replicas"


def test_fit_inverse_t_exact():
    rows = [{"N": 8, "t_or_c": t, "estimate": 0.6 / t + 0.05} for t in (1, 2, 4, 8)]
    c1, a = fit_inverse_t(rows, 8)
    assert c1 == pytest.approx(0.6) and a == pytest.approx(0.05)


def test_steplaw_overflow(rng):
    law = StepLaw(np.array([0.0, 0.5]), 0.5, "power")
    x = law.draw_overflow(rng, 10_000)
    assert x.min() >= 2
    with pytest.raises(ValueError):
        StepLaw(np.array([0.0, 0.5]), 0.5, "none").draw_overflow(rng, 3)
