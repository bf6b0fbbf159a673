import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from pinlab.convolution import scalar_renewal, solve_renewal_direct, solve_renewal_system


def random_block(seed, S, L):
    rng = np.random.default_rng(seed)
    M = rng.random((L, S, S)) / (S * np.arange(1, L + 1)[:, None, None] ** 2)

    def blk(l0, l1, rows):
        out = np.zeros((l1 - l0, S, S))
        hi = min(l1, L + 1)
        if hi > l0:
            out[:hi - l0] = M[l0 - 1:hi - 1]
        return out if rows is None else out[:, rows]
    return blk


@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 4), st.integers(1, 300), st.sampled_from([2, 4, 16, 32]))
def test_fast_solver_matches_direct(seed, S, R, base):
    blk = random_block(seed, S, R)
    B = np.random.default_rng(seed + 1).random((R, S))
    fast = solve_renewal_system(blk, B, base=base)
    slow = solve_renewal_direct(blk, B)
    assert np.allclose(fast, slow, rtol=1e-10, atol=1e-13)


def test_row_chunked_path_matches():
    blk = random_block(7, 5, 400)
    B = np.random.default_rng(8).random((400, 5))
    a = solve_renewal_system(blk, B, base=8)
    b = solve_renewal_system(blk, B, base=8, cache_bytes=0, chunk_bytes=1)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-15)


def direct_u(q, n):
    u = np.zeros(n + 1)
    u[0] = 1.0
    for k in range(1, n + 1):
        j = np.arange(1, min(k, q.size - 1) + 1)
        u[k] = np.dot(q[j], u[k - j])
    return u


@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 500))
def test_scalar_renewal(seed, n):
    q = np.random.default_rng(seed).random(60)
    q[0] = 0.0
    q /= q.sum()
    assert np.allclose(scalar_renewal(q, n), direct_u(q, n), rtol=1e-10, atol=1e-13)


def test_scalar_renewal_examples():
    q = np.zeros(5)
    q[1] = 1.0
    assert np.allclose(scalar_renewal(q, 100), 1.0)
    q = np.zeros(3)
    q[2] = 1.0
    u = scalar_renewal(q, 9)
    assert np.allclose(u, [1, 0, 1, 0, 1, 0, 1, 0, 1, 0], atol=1e-14)
