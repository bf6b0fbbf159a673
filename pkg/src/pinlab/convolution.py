"""Online solver for matrix renewal equations.

Solves ``H[r] = B[r] + sum_{l=1}^{r} M_l @ H[r - l]`` for r = 0..R-1 by
divide and conquer: the left half of every interval is finished first and
its contribution to the right half is added with one FFT convolution, so the
total cost is O(S^2 R log^2 R) instead of O(S^2 R^2).
"""

from __future__ import annotations

import numpy as np
from numpy.fft import irfft, rfft


def solve_renewal_system(kernel_block, B, base: int = 32, cache_bytes: int = 2 ** 28,
                         chunk_bytes: int = 2 ** 26):
    """Return H of shape (R, S).

    ``kernel_block(l0, l1, rows)`` must return M_l[rows, :] for l in [l0, l1)
    as an array of shape (l1 - l0, len(rows), S); ``rows=None`` means all rows.
    """
    B = np.asarray(B, dtype=float)
    R, S = B.shape
    H = B.copy()
    if R <= 1:
        return H
    nb = min(base, R - 1)
    Mbase = kernel_block(1, nb + 1, None)  # lag k stored at k - 1
    cache = {}
    all_rows = np.arange(S)

    def kernel_fft(P, rows):
        M = np.zeros((P, rows.size, S))
        M[1:] = kernel_block(1, P, rows)
        return rfft(M, axis=0)

    def add_cross(lo, mid, hi):
        P = hi - lo
        Hf = rfft(H[lo:mid], n=P, axis=0)[..., None]  # (P//2+1, S, 1)
        full_bytes = (P // 2 + 1) * S * S * 16
        if full_bytes <= cache_bytes:
            Mf = cache.get(P)
            if Mf is None:
                Mf = kernel_fft(P, all_rows)
                cache[P] = Mf
            out = irfft(np.matmul(Mf, Hf)[..., 0], n=P, axis=0)
            H[mid:hi] += out[mid - lo:P]
            return
        step = max(1, chunk_bytes // (P * S * 8))
        for r0 in range(0, S, step):
            rows = all_rows[r0:r0 + step]
            Mf = kernel_fft(P, rows)
            out = irfft(np.matmul(Mf, Hf)[..., 0], n=P, axis=0)
            H[mid:hi, rows] += out[mid - lo:P]

    def direct(lo, hi):
        for r in range(lo + 1, hi):
            k = r - lo
            H[r] += np.einsum("kij,kj->i", Mbase[k - 1::-1], H[lo:r])

    def rec(lo, hi):
        if hi - lo <= base:
            direct(lo, hi)
            return
        mid = (lo + hi) // 2
        rec(lo, mid)
        add_cross(lo, mid, hi)
        rec(mid, hi)

    rec(0, R)
    return H


def solve_renewal_direct(kernel_block, B):
    """Reference O(R^2) solver, for tests."""
    B = np.asarray(B, dtype=float)
    R, S = B.shape
    H = B.copy()
    if R <= 1:
        return H
    M = kernel_block(1, R, None)
    for r in range(1, R):
        H[r] += np.einsum("kij,kj->i", M[r - 1::-1], H[:r])
    return H


def scalar_renewal(q, n: int, base: int = 64):
    """u(0..n) with u(0) = 1 and u(k) = sum_j q(j) u(k - j), via the fast solver."""
    q = np.asarray(q, dtype=float)

    def blk(l0, l1, rows):
        out = np.zeros((l1 - l0, 1, 1))
        hi = min(l1, q.size)
        if hi > l0:
            out[:hi - l0, 0, 0] = q[l0:hi]
        return out

    B = np.zeros((n + 1, 1))
    B[0, 0] = 1.0
    return solve_renewal_system(blk, B, base=base)[:, 0]
