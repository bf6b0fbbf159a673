"""Exact small-N contact-set laws, used as ground truth for the samplers.

For N <= 7 every contact set A in {1..N-1} is enumerated.  Under the
Gaussian potential the weight of A is eps^|A| times the density at 0 of
(Z_i), i in A + {N, N+1}, for the integrated walk started from (0, 0).
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from .gaussian import zz_cov
from .transfer import DiscreteKernel

ENUM_LIMIT = 12


def _subsets(N):
    inner = range(1, N)
    for k in range(N):
        for A in itertools.combinations(inner, k):
            yield A


def contact_set_weight(A, N: int, eps: float, sigma2: float = 1.0) -> float:
    idx = np.array(sorted(set(A) | {N, N + 1}))
    C = zz_cov(np.minimum.outer(idx, idx), np.maximum.outer(idx, idx), sigma2)
    sign, logdet = np.linalg.slogdet(C)
    if sign <= 0:
        raise ValueError("singular covariance")
    dens = math.exp(-0.5 * logdet - 0.5 * idx.size * math.log(2 * math.pi))
    return eps ** len(A) * dens


def enumerate_contact_law(N: int, eps: float, sigma2: float = 1.0) -> dict:
    """Exact law of the interior contact set under P_{eps,N}."""
    if N > ENUM_LIMIT:
        raise ValueError(f"enumeration limited to N <= {ENUM_LIMIT}")
    w = {A: contact_set_weight(A, N, eps, sigma2) for A in _subsets(N)}
    Z = sum(w.values())
    return {A: v / Z for A, v in w.items()}


def kernel_contact_law(kernel: DiscreteKernel, N: int) -> dict:
    """Contact-set law implied by the discretized Markov renewal kernel.

    For tau = (0, t_1, ..., N, N+1) the probability is the product of kernel
    matrices along the gaps, read off at the atom, divided by the total.
    """
    K = kernel.block(0, N + 2)
    out = {}
    for A in _subsets(N):
        pts = (0,) + A + (N, N + 1)
        row = np.zeros(kernel.S)
        row[0] = 1.0
        for t0, t1 in zip(pts[:-1], pts[1:]):
            row = row @ K[t1 - t0]
        out[A] = float(row[0])
    Z = sum(out.values())
    return {A: v / Z for A, v in out.items()}


def total_variation(p: dict, q: dict) -> float:
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)


def empirical_law(sets) -> dict:
    out = {}
    n = 0
    for A in sets:
        A = tuple(A)
        out[A] = out.get(A, 0) + 1
        n += 1
    return {A: c / n for A, c in out.items()}


def interior_contacts(tau, N: int) -> tuple:
    return tuple(int(t) for t in tau if 1 <= t <= N - 1)


def _block_contact_sets(n: int):
    """Inner contact sets T of a chi-block of length n: T in {2..n-3}, no two adjacent."""
    def rec(start, cur):
        yield tuple(cur)
        for s in range(start, n - 2):
            yield from rec(s + 2, cur + [s])
    yield from rec(2, [])


def block_law(n: int, eps: float, sigma2: float = 1.0):
    """Exact (q(n), Var(A_1 | chi_1 = n)) at F = 0 by enumerating inner contacts.

    A block restarts from (0, 0), so its weight is eps^{|T|+2} times the
    density at 0 of Z on T + {n-1, n}; given T the area is Gaussian.
    """
    if n < 1 or n > 2 * ENUM_LIMIT:
        raise ValueError("block enumeration needs 1 <= n <= 24")
    if n == 1:
        return eps / math.sqrt(2 * math.pi * sigma2), 0.0
    if n == 2:
        return 0.0, 0.0  # site 1 in tau would close the block at 1
    sites = np.arange(1, n + 1)
    C = zz_cov(np.minimum.outer(sites, sites), np.maximum.outer(sites, sites), sigma2)
    tot = 0.0
    acc = 0.0
    for T in _block_contact_sets(n):
        P = np.array(T + (n - 1, n)) - 1
        Cpp = C[np.ix_(P, P)]
        _, logdet = np.linalg.slogdet(Cpp)
        w = eps ** (len(T) + 2) * math.exp(-0.5 * logdet - 0.5 * P.size * math.log(2 * math.pi))
        cA = C[:, P].sum(axis=0)
        tot += w
        acc += w * (C.sum() - cA @ np.linalg.solve(Cpp, cA))
    return tot, acc / tot
