"""Exact Gaussian machinery for the integrated random walk.

Under P^{(a,b)} the walk is Y_i = a + X_1 + ... + X_i and the integrated walk
Z_i = b + Y_1 + ... + Y_i, so Z_i = b + i a + sum_k (i - k + 1) X_k.
Bridges are sampled by conditioning a free path on linear constraints
(Matheron's rule), which is exact and costs O(n p) for p constraints.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np
from scipy import linalg, special

from .model import PotentialSpec

SQRT3_OVER_PI = math.sqrt(3.0) / math.pi
COND_IBM_AREA_VAR = 1.0 / 720.0


@dataclass(frozen=True)
class WalkState:
    a: float = 0.0
    b: float = 0.0
    sigma2: float = 1.0

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")


@dataclass(frozen=True)
class GaussianMoments:
    meanY: float
    meanZ: float
    varY: float
    varZ: float
    covYZ: float


def yz_moments(n: int, state: WalkState) -> GaussianMoments:
    if n < 1:
        raise ValueError("n must be >= 1")
    s2 = state.sigma2
    return GaussianMoments(
        meanY=state.a,
        meanZ=state.b + n * state.a,
        varY=s2 * n,
        varZ=s2 * n * (n + 1) * (2 * n + 1) / 6.0,
        covYZ=s2 * n * (n + 1) / 2.0,
    )


def zz_cov(i, j, sigma2: float = 1.0):
    """Cov(Z_i, Z_j) for 1 <= i <= j (vectorized over arrays)."""
    i = np.asarray(i, dtype=float)
    j = np.asarray(j, dtype=float)
    if np.any(i > j) or np.any(i < 1):
        raise ValueError("zz_cov requires 1 <= i <= j")
    out = sigma2 * (i * (i + 1) * (2 * i + 1) / 6.0 + (j - i) * i * (i + 1) / 2.0)
    return float(out) if out.ndim == 0 else out


def _zz(i, j, sigma2):
    """Symmetric Cov(Z_i, Z_j) for any i, j >= 0 (Z_0 deterministic)."""
    lo = np.minimum(i, j).astype(float)
    hi = np.maximum(i, j).astype(float)
    return sigma2 * (lo * (lo + 1) * (2 * lo + 1) / 6.0 + (hi - lo) * lo * (lo + 1) / 2.0)


def _zy(i, j, sigma2):
    """Cov(Z_i, Y_j)."""
    i = np.asarray(i, dtype=float)
    j = np.asarray(j, dtype=float)
    lo = np.minimum(i, j)
    return sigma2 * (lo * (i + 1) - lo * (lo + 1) / 2.0)


def _yy(i, j, sigma2):
    return sigma2 * np.minimum(i, j).astype(float)


def _step_sampler(pot: PotentialSpec):
    if pot.kind == "gaussian":
        sd = pot.sigma
        return lambda rng, shape: sd * rng.standard_normal(shape)
    x = np.linspace(pot.grid[0], pot.grid[-1], 4096)
    dens = pot.density(x)
    cdf = np.concatenate(([0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(x))))
    if abs(cdf[-1] - 1.0) > 1e-4:  # resampling error only; PotentialSpec checks 1e-8
        raise ValueError("tabulated density is not normalized")
    cdf /= cdf[-1]
    return lambda rng, shape: np.interp(rng.random(shape), cdf, x)


def sample_free_path(n: int, state: WalkState, pot: PotentialSpec, rng, size=None):
    """Free walk of n steps.

    Returns ``(Y, Z)`` with index 0..n (Y_0 = a, Z_0 = b); with ``size`` the
    arrays gain a leading replica axis.
    """
    shape = (n,) if size is None else (size, n)
    X = _step_sampler(pot)(rng, shape)
    Y = state.a + np.cumsum(X, axis=-1)
    Z = state.b + np.cumsum(Y, axis=-1)
    lead = np.full(shape[:-1] + (1,), 0.0)
    return (np.concatenate((lead + state.a, Y), axis=-1),
            np.concatenate((lead + state.b, Z), axis=-1))


def _constraint_system(n, pins, terminal, state):
    """Return (kinds, idx, values, means) describing the linear constraints."""
    kinds, idx, vals = [], [], []
    for p, v in pins:
        if not 1 <= p <= n:
            raise ValueError(f"pin index {p} outside 1..{n}")
        kinds.append("z")
        idx.append(int(p))
        vals.append(float(v))
    if terminal is not None:
        if n < 2:
            raise ValueError("terminal pair needs n >= 2")
        kinds += ["y", "z"]
        idx += [n, n]
        vals += [float(terminal[0]), float(terminal[1])]
    kinds = np.array(kinds)
    idx = np.array(idx, dtype=np.int64)
    vals = np.array(vals, dtype=float)
    means = np.where(kinds == "y", state.a, state.b + idx * state.a) if idx.size else vals
    return kinds, idx, vals, means


def _constraint_covariances(n, kinds, idx, sigma2):
    sites = np.arange(1, n + 1)
    isy = kinds == "y"
    cross = np.where(isy[None, :], _zy(sites[:, None], idx[None, :], sigma2),
                     _zz(sites[:, None], idx[None, :], sigma2))
    ii, jj = idx[:, None], idx[None, :]
    cc = np.where(isy[:, None] & isy[None, :], _yy(ii, jj, sigma2),
                  np.where(isy[:, None], _zy(jj, ii, sigma2),
                           np.where(isy[None, :], _zy(ii, jj, sigma2), _zz(ii, jj, sigma2))))
    return cross, cc


def _solve_psd(cc, rhs):
    """Solve cc x = rhs with Cholesky, adding 1e-12 relative jitter if needed."""
    scale = np.max(np.abs(np.diag(cc)))
    for jitter in (0.0, 1e-12):
        try:
            c = linalg.cho_factor(cc + jitter * scale * np.eye(cc.shape[0]), lower=True)
            return linalg.cho_solve(c, rhs)
        except linalg.LinAlgError:
            continue
    raise ValueError("constraint set is rank deficient")


def bridge_moments(n: int, state: WalkState, pins=(), terminal=None):
    """Analytic conditional mean and covariance of (Z_1..Z_n) given constraints."""
    kinds, idx, vals, means = _constraint_system(n, pins, terminal, state)
    sites = np.arange(1, n + 1)
    mean = state.b + sites * state.a
    cov = _zz(sites[:, None], sites[None, :], state.sigma2)
    if idx.size == 0:
        return mean, cov
    cross, cc = _constraint_covariances(n, kinds, idx, state.sigma2)
    _check_rank(cc)
    gain = _solve_psd(cc, cross.T).T
    return mean + gain @ (vals - means), cov - gain @ cross.T


def _check_rank(cc):
    w = np.linalg.eigvalsh(cc)
    if w[0] <= 1e-13 * max(w[-1], 1.0):
        raise ValueError("constraint set is rank deficient or inconsistent")


def sample_bridge(n: int, state: WalkState, pins: Sequence = (), terminal=None, rng=None,
                  size=None):
    """Exact sample of (Z_1, ..., Z_n) given Z-pins and an optional (Y_n, Z_n) pair.

    Constrained coordinates are set to their exact values.
    """
    kinds, idx, vals, means = _constraint_system(n, pins, terminal, state)
    reps = 1 if size is None else size
    X = np.sqrt(state.sigma2) * rng.standard_normal((reps, n))
    Y = state.a + np.cumsum(X, axis=1)
    Z = state.b + np.cumsum(Y, axis=1)
    if idx.size:
        cross, cc = _constraint_covariances(n, kinds, idx, state.sigma2)
        _check_rank(cc)
        free = np.where(kinds == "y", Y[:, idx - 1], Z[:, idx - 1])
        coef = _solve_psd(cc, (vals[None, :] - free).T)  # (p, reps)
        Z = Z + (cross @ coef).T
        resid = np.where(kinds == "y",
                         np.diff(np.concatenate((np.full((reps, 1), state.b), Z), axis=1),
                                 axis=1)[:, idx - 1],
                         Z[:, idx - 1]) - vals
        tol = 1e-9 * max(1.0, float(np.max(np.abs(Z))))
        if np.max(np.abs(resid)) > tol:
            raise ValueError("constraint residual above tolerance; inconsistent constraints")
        zmask = kinds == "z"
        Z[:, idx[zmask] - 1] = vals[zmask]
    return Z[0] if size is None else Z


def conditional_variances(n: int, pin_sites: Sequence[int], sigma2: float = 1.0,
                          terminal: bool = False):
    """Var(Z_k | Z_p = 0 for p in pins) for k = 1..n, by exact linear algebra."""
    pins = [(p, 0.0) for p in pin_sites]
    _, cov = bridge_moments(n, WalkState(0.0, 0.0, sigma2), pins,
                            (0.0, 0.0) if terminal else None)
    return np.clip(np.diag(cov), 0.0, None)


def local_limit_density(y, z):
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    return SQRT3_OVER_PI * np.exp(-2.0 * y * y - 6.0 * z * z + 6.0 * y * z)


def _draw_endpoints(n, pot, rng, count):
    if pot.kind == "gaussian":
        m = yz_moments(n, WalkState(0.0, 0.0, pot.sigma2))
        cov = np.array([[m.varY, m.covYZ], [m.covYZ, m.varZ]])
        return rng.multivariate_normal(np.zeros(2), cov, size=count, method="cholesky")
    out = np.empty((count, 2))
    step = _step_sampler(pot)
    chunk = max(1, 2_000_000 // n)
    for s in range(0, count, chunk):
        k = min(chunk, count - s)
        X = step(rng, (k, n))
        Y = np.cumsum(X, axis=1)
        out[s:s + k, 0] = Y[:, -1]
        out[s:s + k, 1] = Y.sum(axis=1)
    return out


def rescaled_endpoints(n: int, pot: PotentialSpec, rng, count: int) -> np.ndarray:
    """Samples of (Y_n/(sigma sqrt n), Z_n/(sigma n^{3/2})) under P^{(0,0)}."""
    yz = _draw_endpoints(n, pot, rng, count)
    return yz / np.array([pot.sigma * math.sqrt(n), pot.sigma * n ** 1.5])


def verify_local_limit(n: int, samples, pot: PotentialSpec, rng=None, bins=(10, 10),
                       box=((-2.0, 2.0), (-1.0, 1.0))) -> float:
    """Max abs gap between a histogram of rescaled (Y_n, Z_n) and the limit g.

    ``samples`` is either a sample count (drawn here) or an array of rescaled
    pairs.  Each histogram cell is compared with the exact cell average of g.
    """
    if n < 10:
        raise ValueError("n must be >= 10")
    if np.isscalar(samples):
        if samples < 10_000:
            raise ValueError("need at least 10^4 samples")
        data = rescaled_endpoints(n, pot, rng, int(samples))
    else:
        data = np.asarray(samples, dtype=float)
        if data.shape[0] < 10_000:
            raise ValueError("need at least 10^4 samples")
    (y0, y1), (z0, z1) = box
    hist, ye, ze = np.histogram2d(data[:, 0], data[:, 1], bins=bins, range=box)
    area = (ye[1] - ye[0]) * (ze[1] - ze[0])
    emp = hist / (data.shape[0] * area)
    ref = _cell_average_g(ye, ze)
    return float(np.max(np.abs(emp - ref)))


def _cell_average_g(ye, ze, order=12):
    t, w = np.polynomial.legendre.leggauss(order)
    out = np.empty((ye.size - 1, ze.size - 1))
    for a in range(ye.size - 1):
        yy = 0.5 * (ye[a + 1] - ye[a]) * t + 0.5 * (ye[a + 1] + ye[a])
        for b in range(ze.size - 1):
            zz = 0.5 * (ze[b + 1] - ze[b]) * t + 0.5 * (ze[b + 1] + ze[b])
            out[a, b] = 0.25 * w @ local_limit_density(yy[:, None], zz[None, :]) @ w
    return out


def conditioned_bm_cov():
    """Covariance of (int_0^1 I, I_1, B_1) for Brownian B and I = int B, and
    the conditional variance of the first entry given (I_1, B_1) = (0, 0)."""
    F = Fraction
    A = [[F(1, 20), F(1, 8), F(1, 6)],
         [F(1, 8), F(1, 3), F(1, 2)],
         [F(1, 6), F(1, 2), F(1, 1)]]
    Af = np.array([[float(v) for v in row] for row in A])
    inv = np.linalg.inv(Af)
    return Af, 1.0 / inv[0, 0]


def phi_of_t(t):
    """P(N(0, 1/720) > t)."""
    return 0.5 * special.erfc(np.asarray(t, dtype=float) * math.sqrt(360.0))


def _bi_cov(s, t):
    """Joint covariance blocks for Brownian motion B and I_t = int_0^t B."""
    s = np.asarray(s, dtype=float)[:, None]
    t = np.asarray(t, dtype=float)[None, :]
    lo = np.minimum(s, t)
    hi = np.maximum(s, t)
    bb = lo
    ii = lo * lo * hi / 2.0 - lo ** 3 / 6.0
    # Cov(I_s, B_t) = int_0^s min(u, t) du
    ib = np.where(s <= t, s * s / 2.0, s * t - t * t / 2.0)
    return bb, ib, ii


def sample_conditioned_ibm(grid, rng, size=None):
    """Exact sample of (B_t, I_t) at grid points given (B_1, I_1) = (0, 0)."""
    g = np.asarray(grid, dtype=float)
    if g.ndim != 1 or g.size == 0 or np.any(np.diff(g) <= 0) or g[0] <= 0 or g[-1] >= 1:
        raise ValueError("grid must be sorted inside (0, 1)")
    pts = np.concatenate((g, [1.0]))
    bb, ib, ii = _bi_cov(pts, pts)
    k = pts.size
    cov = np.block([[bb, ib.T], [ib, ii]])  # order (B_pts, I_pts)
    reps = 1 if size is None else size
    chol = np.linalg.cholesky(cov + 1e-14 * np.eye(2 * k))
    free = rng.standard_normal((reps, 2 * k)) @ chol.T
    c_idx = np.array([k - 1, 2 * k - 1])
    cc = cov[np.ix_(c_idx, c_idx)]
    cross = cov[:, c_idx]
    corr = (cross @ np.linalg.solve(cc, -free[:, c_idx].T)).T
    out = free + corr
    B = out[:, :k - 1]
    Ihat = out[:, k:2 * k - 1]
    if size is None:
        return B[0], Ihat[0]
    return B, Ihat


def excursion_area_moments(l, a, b, sigma2: float = 1.0):
    """Mean and variance of sum_{i=1}^{l-1} Z_i under P^{(-a,0)}(. | Z_{l-1}=b, Z_l=0)."""
    l = np.asarray(l, dtype=float)
    mean = (-np.asarray(a) * (l - 1) * (l - 2) + np.asarray(b) * (l + 1) * (l + 2)) / 12.0
    var = sigma2 * l * (l * l - 1) * (l * l - 4) / 720.0
    return mean, np.clip(var, 0.0, None)
