"""Acceptance suite: one test and one status line per criterion.

Statistical criteria run the CLI experiments at full scale with fixed seeds.
Run with ``pytest tests/test_acceptance.py -v``; the status lines are
collected at the end of the terminal report.
"""

import hashlib
import io
from fractions import Fraction

import numpy as np
import pytest

from pinlab import levy
from pinlab.cli import run_experiment
from pinlab.gaussian import WalkState, conditional_variances, yz_moments, zz_cov
from pinlab.transfer import w_kernel

pytestmark = pytest.mark.acceptance


def experiment(cache, tmp_path, **cfg):
    """Run one experiment; returns (all passed, PASS/FAIL lines)."""
    out = io.StringIO()
    cfg.setdefault("out", str(tmp_path / cfg["experiment"]))
    code = run_experiment({"cache_dir": str(cache.dir), **cfg}, stream=out)
    return code == 0, out.getvalue().strip().splitlines()


def detail(lines):
    bad = [s for s in lines if s.startswith("FAIL")]
    shown = bad or lines
    return "; ".join(s.split(": ", 1)[1] for s in shown)


def test_criterion_01_constants(cache, tmp_path, acceptance):
    ok, lines = experiment(cache, tmp_path, experiment="constants", seed=1)
    cl = levy.c_L_constant(1.0)
    ok_cl = abs(cl - 0.11283) < 5e-6
    msg = f"{sum(s.startswith('PASS') for s in lines)}/{len(lines)} constant checks; c_L(1) = {cl:.6f}"
    assert acceptance(1, ok and ok_cl, msg if ok else detail(lines)), lines


def test_criterion_02_gaussian_oracle(pot, acceptance):
    worst_int = 0
    for n in range(1, 51):
        m = yz_moments(n, WalkState())
        exact = sum(Fraction((n - k + 1) ** 2) for k in range(1, n + 1))
        worst_int = max(worst_int, abs(Fraction(m.varZ) - exact))
        worst_int = max(worst_int, abs(Fraction(m.covYZ) - sum(Fraction(k) for k in range(1, n + 1))))
        for j in range(n, 51):
            ref = sum(Fraction((n - k + 1) * (j - k + 1)) for k in range(1, n + 1))
            worst_int = max(worst_int, abs(Fraction(zz_cov(n, j)) - ref))
    X, Y = np.meshgrid(np.linspace(-4, 4, 81), np.linspace(-4, 4, 81))
    err = float(np.max(np.abs(w_kernel(2, X, Y, pot) - np.exp(-pot.V(X + Y) - pot.V(2 * Y)))))
    ok = worst_int == 0 and err < 1e-10
    assert acceptance(2, ok, f"moment mismatch {float(worst_int)}; w_2 max error {err:.2e}")


def test_criterion_03_brascamp_lieb(acceptance):
    rng = np.random.default_rng(3)
    worst = -np.inf
    for _ in range(200):
        n = int(rng.integers(2, 33))
        pins = rng.choice(np.arange(1, n + 1), size=int(rng.integers(0, n // 2 + 1)), replace=False)
        s2 = float(rng.choice([0.5, 1.0, 2.0]))
        k = np.arange(1, n + 1)
        bound = s2 * k * (k + 1) * (2 * k + 1) / 6.0
        worst = max(worst, float(np.max(conditional_variances(n, pins, s2) / bound)))
    k = np.arange(1, 33)
    equal = np.array_equal(conditional_variances(32, [], 1.0), k * (k + 1) * (2 * k + 1) / 6.0)
    ok = worst <= 1 + 1e-12 and equal
    assert acceptance(3, ok, f"max Var/bound over 200 pin sets {worst:.12f}; equality at empty pins {equal}")


def test_criterion_04_small_n_oracle(cache, tmp_path, acceptance):
    ok, lines = experiment(cache, tmp_path, experiment="small-n-oracle", replicas=100_000, seed=4, method="hit")
    worst = max(float(s.rsplit(": ", 1)[1].split()[0]) for s in lines)
    assert acceptance(4, ok, f"max TV {worst:.4f} over {len(lines)} (eps, N) cells" if ok else detail(lines)), lines


def test_criterion_05_eigenproblem(cache, tmp_path, acceptance):
    ok, lines = experiment(cache, tmp_path, experiment="eigenproblem", seed=5)
    assert acceptance(5, ok, detail(lines)), lines


def test_criterion_06_free_scaling(cache, tmp_path, acceptance):
    ok, lines = experiment(cache, tmp_path, experiment="scaling", eps=[0.0], N=[64, 128, 256, 512, 1024, 2048, 4096],
                           replicas=1000, seed=6)
    assert acceptance(6, ok, detail(lines)), lines


def test_criterion_07_delocalized(cache, tmp_path, acceptance):
    ok, lines = experiment(cache, tmp_path, experiment="scaling", eps_rel=[0.5], N=[1024], replicas=1000, seed=7)
    assert acceptance(7, ok, detail(lines)), lines


def test_criterion_08_localized(cache, tmp_path, acceptance):
    ok, lines = experiment(cache, tmp_path, experiment="scaling", eps_rel=[2.0], N=[2 ** k for k in range(10, 17)],
                           replicas=1000, seed=8)
    assert acceptance(8, ok, detail(lines)), lines


def test_criterion_09_critical_bracket(cache, tmp_path, acceptance):
    ok, lines = experiment(cache, tmp_path, experiment="scaling", eps_rel=[1.0], N=[2 ** 10, 2 ** 12, 2 ** 14, 2 ** 16],
                           replicas=1000, seed=9)
    assert acceptance(9, ok, detail(lines)), lines


def test_criterion_10_renewal_gaps(cache, tmp_path, acceptance):
    ok, lines = experiment(cache, tmp_path, experiment="renewal-gaps", replicas=4000, seed=10)
    assert acceptance(10, ok, detail(lines)), lines


def test_criterion_11_area_law(cache, tmp_path, acceptance):
    ok, lines = experiment(cache, tmp_path, experiment="area-law", N=[512], replicas=10_000, unconditional=10 ** 6,
                           seed=11)
    assert acceptance(11, ok, detail(lines)), lines


def test_criterion_12_critical_measure(cache, tmp_path, acceptance):
    ok, lines = experiment(cache, tmp_path, experiment="critical-measure", N=[2 ** 16], replicas=10_000, seed=12)
    assert acceptance(12, ok, detail(lines)), lines


def test_criterion_13_determinism(cache, tmp_path, acceptance):
    digests = set()
    for i, threads in enumerate((1, 2, 4)):
        for exp, extra in (("scaling", {"eps_rel": [0.5, 1.0, 2.0], "N": [256, 1024]}),
                           ("small-n-oracle", {"N": [5], "method": "hit"})):
            out = tmp_path / f"{exp}-{i}"
            experiment(cache, tmp_path, experiment=exp, replicas=2500, seed=13, threads=threads, out=str(out), **extra)
            digests.add((exp, hashlib.md5((out / "results.csv").read_bytes()).hexdigest()))
    ok = len(digests) == 2
    assert acceptance(13, ok, f"{len(digests)} distinct results.csv digests for 2 experiments at threads 1, 2, 4")
