import math
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pinlab import kernels
from pinlab.renewal import synthetic_q
from pinlab.transfer import GridSpec, kernel_tables, markov_kernel, renewal_tables

PY = kernels.backend_module("python")
try:
    CY = kernels.backend_module("cython")
except ImportError:  # pragma: no cover
    CY = None

needs_cy = pytest.mark.skipif(CY is None, reason="compiled extension not built")


@pytest.fixture(scope="module")
def small(pot):
    k = markov_kernel(1.0, GridSpec(8.0, 12), pot, N_max=512)
    H = 96
    tab = kernel_tables(k, H, hit_N=H - 1)
    return dict(
        kernel=k, tab=tab, H=H,
        M=np.ascontiguousarray(k.block(0, H + 1, tilt=True, hat=True)),
        K=np.ascontiguousarray(k.block(0, H + 1)),
        g=np.ascontiguousarray(tab.g), h=np.ascontiguousarray(tab.h),
    )


def test_backend_selection():
    assert kernels.BACKEND in ("python", "cython")
    with pytest.raises(ValueError):
        kernels.backend_module("fortran")
    code = "import pinlab.kernels as k; print(k.BACKEND)"
    out = subprocess.run([sys.executable, "-c", code], env={"PINLAB_PURE_PYTHON": "1", "PATH": ""},
                         capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_renewal_mass_examples():
    q = synthetic_q("geometric", {"p": 0.25}, 50).q
    assert np.allclose(kernels.renewal_mass(q, 40, PY)[1:], 0.25)


@needs_cy
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 300))
def test_renewal_mass_backends(seed, n):
    q = np.random.default_rng(seed).random(80)
    q[0] = 0
    q /= q.sum() * 1.1
    assert np.array_equal(kernels.renewal_mass(q, n, PY), kernels.renewal_mass(q, n, CY))


@needs_cy
@settings(max_examples=40)
@given(st.integers(0, 2 ** 32 - 1), st.integers(2, 400), st.sampled_from(["critical-power", "geometric"]))
def test_conditioned_renewal_backends(seed, R, kind):
    law = synthetic_q(kind, {"p": 0.3}, 512)
    tab = renewal_tables(law.q, 512)
    Q = np.cumsum(law.q)
    a = kernels.conditioned_renewal(law.q, Q, tab.u, R, np.random.default_rng(seed), PY)
    b = kernels.conditioned_renewal(law.q, Q, tab.u, R, np.random.default_rng(seed), CY)
    assert np.array_equal(a, b)
    assert a[-1] == R and np.all(np.diff(a) > 0)


@needs_cy
@settings(max_examples=40)
@given(st.integers(0, 2 ** 32 - 1), st.integers(3, 200))
def test_fill_excursions_backends(seed, N):
    rng = np.random.default_rng(seed)
    inner = np.sort(rng.choice(np.arange(1, N), size=min(5, N - 1), replace=False))
    taus = np.concatenate(([0], inner, [N, N + 1])).astype(np.int64)
    Js = np.where(np.diff(np.concatenate(([-5], taus))) == 1, 0.0, rng.normal(size=taus.size))
    Js[0] = 0.0
    a = kernels.fill_excursions(taus, Js, 1.3, N, np.random.default_rng(seed), PY)
    b = kernels.fill_excursions(taus, Js, 1.3, N, np.random.default_rng(seed), CY)
    assert np.array_equal(a, b)
    assert np.all(a[taus + 1] == 0.0)


@needs_cy
@given(st.integers(0, 2 ** 32 - 1), st.lists(st.integers(1, 96), min_size=1, max_size=30))
def test_sample_blocks_backends(small, seed, lengths):
    r0 = np.array(lengths, dtype=np.int64)
    r0 = r0[r0 != 2]  # no block has length 2
    if r0.size == 0:
        return
    z = np.zeros_like(r0)
    a = kernels.sample_blocks(z, z, r0, small["g"], small["M"], np.random.default_rng(seed), PY)
    b = kernels.sample_blocks(z, z, r0, small["g"], small["M"], np.random.default_rng(seed), CY)
    for x, y in zip(a, b):
        assert np.array_equal(x, y)
    taus, sts, off = a
    for i, r in enumerate(r0):
        seg = taus[off[i]:off[i + 1]]
        assert seg[-1] == r and sts[off[i + 1] - 1] == 0
        assert np.all(np.diff(np.concatenate(([0], seg)))[:-1] >= 2)


@needs_cy
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 95))
def test_sample_hit_chain_backends(small, seed, R):
    a = kernels.sample_hit_chain(small["K"], small["h"], R, np.random.default_rng(seed), PY)
    b = kernels.sample_hit_chain(small["K"], small["h"], R, np.random.default_rng(seed), CY)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    assert a[0][-1] == R and a[1][-1] == 0


def test_buffer_growth_is_transparent(small):
    """A short initial buffer yields the same draw as a long one."""
    law = synthetic_q("critical-power", {}, 2048)
    tab = renewal_tables(law.q, 2048)
    Q = np.cumsum(law.q)
    out = []
    for guess in (16, 100_000):
        rng = np.random.default_rng(3)
        buf = rng.random(guess)
        res = np.empty(2050, dtype=np.int64)
        while kernels._impl.conditioned_renewal(law.q, Q, tab.u, 2000, buf, res) < 0:
            buf = np.concatenate((buf, rng.random(buf.size)))
        out.append(res[:int(np.argmax(res < 0))].copy())
    assert np.array_equal(out[0], out[1])


def test_conditioned_renewal_zero_mass():
    q = np.zeros(10)
    q[2] = 1.0
    u = renewal_tables(q, 9).u
    with pytest.raises(FloatingPointError):
        kernels.conditioned_renewal(q, np.cumsum(q), u, 7, np.random.default_rng(0))
