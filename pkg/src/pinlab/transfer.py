"""Discretized Markov renewal kernel, transfer operator and renewal tables.

The J-axis is discretized as an atom at 0 (state index 0) plus ``m``
Gauss-Legendre nodes on [-R, R] (state indices 1..m).  Jumps of length 1 go
to the atom, longer jumps go to the nodes, whose columns carry the
quadrature weights.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import integrate, optimize

from .convolution import scalar_renewal, solve_renewal_system
from .model import PotentialSpec
from . import kernels

log = logging.getLogger("pinlab")

CACHE_VERSION = 5
DIRECT_RENEWAL_LIMIT = 8192
TAIL_CONST = math.sqrt(3.0) / math.pi  # n^2 w_n(x, y) -> TAIL_CONST / sigma^2


@dataclass(frozen=True)
class GridSpec:
    R: float = 8.0
    m: int = 64

    def __post_init__(self):
        if not self.R > 0 or self.m < 2:
            raise ValueError("grid needs R > 0 and m >= 2")

    @classmethod
    def default(cls, sigma: float = 1.0) -> "GridSpec":
        return cls(8.0 * sigma, 64)

    @cached_property
    def _gl(self):
        t, w = np.polynomial.legendre.leggauss(self.m)
        return self.R * t, self.R * w

    @property
    def nodes(self) -> np.ndarray:
        return self._gl[0]

    @property
    def weights(self) -> np.ndarray:
        return self._gl[1]

    @property
    def states(self) -> np.ndarray:
        """J values of all states: atom first, then the nodes."""
        return np.concatenate(([0.0], self.nodes))

    @property
    def size(self) -> int:
        return self.m + 1


def _require_gaussian(pot: PotentialSpec):
    if pot.kind != "gaussian":
        raise ValueError("kernel machinery needs a Gaussian potential")


def w_block(ns, xs, ys, sigma2: float) -> np.ndarray:
    """w_n(x, y) for n >= 2 on the product grid, shape (len(ns), len(xs), len(ys)).

    Uses the (Y_n, Z_n) parametrization, which avoids cancellation for
    large n.
    """
    n = np.asarray(ns, dtype=float)[:, None, None]
    x = np.asarray(xs, dtype=float)[None, :, None]
    y = np.asarray(ys, dtype=float)[None, None, :]
    num = 2.0 * n * n * (x * x + x * y + y * y) - 3.0 * n * (x * x - y * y) + (x - y) ** 2
    nn1 = n * n - 1.0
    expo = -num / (sigma2 * n * nn1)
    norm = 1.0 / (2.0 * math.pi * sigma2 * n * np.sqrt(nn1 / 12.0))
    return norm * np.exp(expo)


def w_kernel(n: int, x, y, pot: PotentialSpec):
    """Base kernel: joint density of (Z_{n-1}, Z_n) at (y, 0) under P^{(-x,0)}.

    For n = 1 this is the coefficient e^{-V(x)} of the Dirac mass at y = 0.
    """
    _require_gaussian(pot)
    if n < 1:
        raise ValueError("n must be >= 1")
    x = np.asarray(x, dtype=float)
    if n == 1:
        out = np.exp(-pot.V(x))
        return float(out) if out.ndim == 0 else out
    y = np.asarray(y, dtype=float)
    xb, yb = np.broadcast_arrays(x, y)
    n_f = float(n)
    num = 2 * n_f ** 2 * (xb ** 2 + xb * yb + yb ** 2) - 3 * n_f * (xb ** 2 - yb ** 2) + (xb - yb) ** 2
    nn1 = n_f * n_f - 1.0
    out = np.exp(-num / (pot.sigma2 * n_f * nn1)) / (
        2.0 * math.pi * pot.sigma2 * n_f * math.sqrt(nn1 / 12.0))
    return float(out) if out.ndim == 0 else out


def _tail_integral(delta: float, c: np.ndarray, T: float) -> np.ndarray:
    """int_T^inf exp(-delta t - c/t) t^{-2} dt, elementwise in c >= 0."""
    c = np.asarray(c, dtype=float)
    if delta == 0.0:
        small = c * (1.0 / T) < 1e-8
        safe = np.where(small, 1.0, c)
        return np.where(small, 1.0 / T - c / (2 * T * T), -np.expm1(-safe / T) / safe)
    if delta * T > 50:
        return np.zeros_like(c)
    flat = c.ravel()

    def f(s):  # s = 1/t
        return np.exp(-delta / s - flat * s) if s > 0 else np.zeros_like(flat)

    val, _ = integrate.quad_vec(f, 0.0, 1.0 / T, epsabs=1e-16, epsrel=1e-12)
    return val.reshape(c.shape)


class TransferOperator:
    """The base operator G^delta over atom + nodes, with caching."""

    def __init__(self, grid: GridSpec, pot: PotentialSpec, N_max: int = 2 ** 14, chunk: int = 256):
        _require_gaussian(pot)
        self.grid = grid
        self.pot = pot
        self.N_max = int(N_max)
        self.chunk = chunk
        self._G = {}
        self._eig = {}

    @property
    def S(self):
        return self.grid.size

    def W(self, n: int) -> np.ndarray:
        """Quadrature-weighted base kernel matrix for a single n."""
        S = self.S
        out = np.zeros((S, S))
        st = self.grid.states
        if n == 1:
            out[:, 0] = np.exp(-self.pot.V(st))
        else:
            out[:, 1:] = w_block([n], st, self.grid.nodes, self.pot.sigma2)[0] * self.grid.weights
        return out

    def tail_matrix(self, delta: float) -> np.ndarray:
        st = self.grid.states
        y = self.grid.nodes
        s2 = self.pot.sigma2
        c = 2.0 * (st[:, None] ** 2 + st[:, None] * y[None, :] + y[None, :] ** 2) / s2
        T = self.N_max + 0.5
        out = np.zeros((self.S, self.S))
        out[:, 1:] = TAIL_CONST / s2 * _tail_integral(delta, c, T) * self.grid.weights
        return out

    def G(self, delta: float) -> np.ndarray:
        if delta < 0:
            raise ValueError("delta must be >= 0")
        key = float(delta)
        if key in self._G:
            return self._G[key]
        st = self.grid.states
        S = self.S
        G = np.zeros((S, S))
        G[:, 0] = math.exp(-delta) * np.exp(-self.pot.V(st))
        n_stop = self.N_max if delta == 0 else min(self.N_max, int(math.ceil(46.0 / delta)) + 1)
        acc = np.zeros((S, S - 1))
        for n0 in range(2, n_stop + 1, self.chunk):
            ns = np.arange(n0, min(n0 + self.chunk, n_stop + 1))
            wts = np.exp(-delta * ns)
            acc += np.tensordot(wts, w_block(ns, st, self.grid.nodes, self.pot.sigma2), axes=1)
        G[:, 1:] = acc * self.grid.weights
        if n_stop == self.N_max:
            G += self.tail_matrix(delta)
        if len(self._G) > 64:
            self._G.clear()
        self._G[key] = G
        return G

    def eigen(self, delta: float):
        key = float(delta)
        if key not in self._eig:
            self._eig[key] = leading_eigen(self.G(delta))
        return self._eig[key]

    def lam(self, delta: float) -> float:
        return self.eigen(delta)[0]

    @cached_property
    def eps_c(self) -> float:
        return 1.0 / self.lam(0.0)

    def free_energy(self, eps: float) -> float:
        if not eps > 0:
            raise ValueError("eps must be positive")
        if eps <= self.eps_c:
            return 0.0
        f = lambda d: eps * self.lam(d) - 1.0
        hi = 0.05
        samples = [(0.0, f(0.0))]
        while f(hi) > 0:
            samples.append((hi, f(hi)))
            hi *= 2.0
            if hi > 1e4:
                raise RuntimeError(f"free energy bracketing failed: {samples}")
        return optimize.brentq(f, 0.0, hi, xtol=1e-13, rtol=4 * np.finfo(float).eps, maxiter=200)


def build_operator(delta: float, grid: GridSpec, pot: PotentialSpec, N_max: int = 2 ** 14):
    return TransferOperator(grid, pot, N_max).G(delta)


def leading_eigen(G, tol: float = 1e-12, maxiter: int = 100_000, v0=None):
    """Perron eigenpair by power iteration, normalized so v[0] = 1."""
    G = np.asarray(G, dtype=float)
    if np.any(G < 0):
        raise ValueError("operator must be nonnegative")
    if v0 is None:
        w, V = np.linalg.eig(G)
        k = int(np.argmax(w.real))
        v = np.abs(V[:, k].real)
        if not np.all(v > 0):
            v = np.ones(G.shape[0])
    else:
        v = np.asarray(v0, dtype=float).copy()
    v = v / v[0]
    lam = 0.0
    for _ in range(maxiter):
        gv = G @ v
        lam = gv[0]
        nv = gv / lam
        if np.max(np.abs(nv - v)) <= tol * np.max(np.abs(nv)):
            v = nv
            break
        v = nv
    else:
        raise RuntimeError("power iteration did not converge")
    if not np.all(v > 0):
        raise RuntimeError("eigenvector is not positive; operator reducible?")
    lam = float((G @ v)[0] / v[0])
    return lam, v


def critical_epsilon(grid: GridSpec, pot: PotentialSpec, N_max: int = 2 ** 14) -> float:
    return TransferOperator(grid, pot, N_max).eps_c


def free_energy(eps: float, grid: GridSpec, pot: PotentialSpec, N_max: int = 2 ** 14) -> float:
    return TransferOperator(grid, pot, N_max).free_energy(eps)


@dataclass
class DiscreteKernel:
    """K(x, dy, n) = eps e^{-F n} v(y)/v(x) w_n(x, y) dy on atom + nodes."""

    eps: float
    F: float
    v: np.ndarray
    eps_c: float
    lam: float
    grid: GridSpec
    sigma2: float
    N_max: int
    _op: Optional[TransferOperator] = field(default=None, repr=False, compare=False)

    @property
    def S(self) -> int:
        return self.grid.size

    @property
    def states(self) -> np.ndarray:
        return self.grid.states

    @property
    def pot(self) -> PotentialSpec:
        return PotentialSpec.gaussian(math.sqrt(self.sigma2))

    @property
    def mass(self) -> float:
        return min(self.eps / self.eps_c, 1.0)

    def W(self, n: int) -> np.ndarray:
        return self.block(n, n + 1, base=True)[0]

    def block(self, l0: int, l1: int, rows=None, *, tilt: bool = False, hat: bool = False,
              base: bool = False) -> np.ndarray:
        """Kernel matrices for jump lengths l0 <= l < l1, shape (l1-l0, rows, S).

        ``tilt`` drops the e^{-F l} factor, ``hat`` removes length-1 jumps and
        ``base`` returns the plain quadrature-weighted w_n.
        """
        st = self.states
        xs = st if rows is None else st[rows]
        S = self.S
        out = np.zeros((l1 - l0, xs.size, S))
        ls = np.arange(l0, l1)
        s2 = self.sigma2
        if l0 <= 1 < l1 and not hat:
            out[1 - l0, :, 0] = np.exp(-0.5 * xs * xs / s2) / math.sqrt(2 * math.pi * s2)
        big = ls[ls >= 2]
        if big.size:
            out[big - l0, :, 1:] = w_block(big, xs, self.grid.nodes, s2) * self.grid.weights
        if base:
            return out
        vrow = self.v if rows is None else self.v[rows]
        out *= self.eps * self.v[None, None, :] / vrow[None, :, None]
        if not tilt and self.F > 0:
            out *= np.exp(-self.F * ls)[:, None, None]
        return out

    def K(self, n: int) -> np.ndarray:
        return self.block(n, n + 1)[0]

    def tail_matrix(self) -> np.ndarray:
        op = self._op or TransferOperator(self.grid, self.pot, self.N_max)
        T = op.tail_matrix(self.F)
        return self.eps * T * self.v[None, :] / self.v[:, None]

    def row_mass(self, chunk: int = 512) -> np.ndarray:
        """Total outgoing mass per state, summed to N_max plus the analytic tail."""
        tot = np.zeros(self.S)
        n_stop = self.N_max if self.F == 0 else min(self.N_max, int(46.0 / self.F) + 2)
        for l0 in range(1, n_stop + 1, chunk):
            tot += self.block(l0, min(l0 + chunk, n_stop + 1)).sum(axis=(0, 2))
        if n_stop == self.N_max:
            tot += self.tail_matrix().sum(axis=1)
        return tot

    def asymptotic_ratio(self, n: int) -> np.ndarray:
        """K(n) n^2 e^{F n} divided by its separable limit, on node columns."""
        Kn = self.block(n, n + 1, tilt=True)[0][:, 1:] / self.grid.weights
        lim = self.eps * TAIL_CONST / self.sigma2 * self.v[None, 1:] / self.v[:, None]
        return Kn * n * n / lim


def markov_kernel(eps: float, grid: Optional[GridSpec] = None, pot: Optional[PotentialSpec] = None,
                  N_max: int = 2 ** 14, operator: Optional[TransferOperator] = None) -> DiscreteKernel:
    pot = pot or PotentialSpec.gaussian()
    grid = grid or GridSpec.default(pot.sigma)
    op = operator or TransferOperator(grid, pot, N_max)
    F = op.free_energy(eps)
    lam, v = op.eigen(F)
    return DiscreteKernel(float(eps), float(F), v, op.eps_c, lam, grid, pot.sigma2, op.N_max, op)


# ---------------------------------------------------------------------------
# renewal tables


@dataclass
class RenewalTables:
    """Step law q of chi, renewal mass u and optional hitting tables.

    ``g`` holds the tilted block tables e^{F r} hhat(x, r) used to sample a
    chi-block of given length; ``h`` the full hitting tables h(x, r).
    """

    q: np.ndarray
    u: np.ndarray
    U: np.ndarray
    C_eps: float
    F: float = 0.0
    g: Optional[np.ndarray] = None
    h: Optional[np.ndarray] = None

    @property
    def limit(self) -> int:
        return self.q.size - 1

    @property
    def mean_gap(self) -> float:
        n = np.arange(self.q.size)
        return float(np.sum(n * self.q))


def tail_constant(q, F: float = 0.0) -> float:
    q = np.asarray(q, dtype=float)
    L = q.size - 1
    n = np.arange(max(1, (3 * L) // 4), L + 1)
    with np.errstate(over="ignore"):
        vals = n.astype(float) ** 2 * np.exp(F * n) * q[n]
    return float(np.median(vals))


def renewal_tables(q, N_limit: Optional[int] = None, F: float = 0.0) -> RenewalTables:
    """u by the renewal recursion (u(0) = 1), U its prefix sums, C_eps."""
    q = np.asarray(q, dtype=float).copy()
    if q.ndim != 1 or q.size < 2:
        raise ValueError("q must be a 1-d table indexed from 0")
    q[0] = 0.0
    if np.any(q < 0):
        raise ValueError("q must be nonnegative")
    n = q.size - 1 if N_limit is None else int(N_limit)
    if n <= DIRECT_RENEWAL_LIMIT:
        u = kernels.renewal_mass(q, n)
    else:
        u = np.clip(scalar_renewal(q, n), 0.0, None)
    return RenewalTables(q=q, u=u, U=np.cumsum(u), C_eps=tail_constant(q, F), F=F)


def block_tables(kernel: DiscreteKernel, R: int, base: int = 32) -> np.ndarray:
    """Tilted chi-block tables g(r, x) = e^{F r} P_x(first adjacent pair closes at r).

    A block is a chain of jumps of length >= 2 followed by one length-1 jump
    to the atom.  Shape (R + 1, S); row r = 0 is zero.
    """
    S = kernel.S
    B = np.zeros((R + 1, S))
    if R >= 1:
        st = kernel.states
        B[1] = kernel.eps * np.exp(-0.5 * st * st / kernel.sigma2) / math.sqrt(
            2 * math.pi * kernel.sigma2) * kernel.v[0] / kernel.v

    def blk(l0, l1, rows):
        return kernel.block(l0, l1, rows, tilt=True, hat=True)

    return solve_renewal_system(blk, B, base=base)


def step_law_q(kernel: DiscreteKernel, N_max: Optional[int] = None, g=None) -> np.ndarray:
    """q(n) = P(chi_1 = n) for n = 0..N_max (q(0) = 0)."""
    L = kernel.N_max if N_max is None else int(N_max)
    if g is None:
        g = block_tables(kernel, L)
    n = np.arange(g.shape[0])
    q = np.exp(-kernel.F * n) * g[:, 0]
    q[0] = 0.0
    return q[:L + 1]


def hit_tables(kernel: DiscreteKernel, N: int, limit: int = 2 ** 16, base: int = 32) -> np.ndarray:
    """h(r, x) = P_x(tau visits r with J = 0) for r = 0..N+1, shape (N + 2, S)."""
    if N + 1 > limit:
        raise ValueError(f"N = {N} exceeds the hit-table limit {limit}")
    S = kernel.S
    B = np.zeros((N + 2, S))
    B[0, 0] = 1.0

    def blk(l0, l1, rows):
        return kernel.block(l0, l1, rows)

    return solve_renewal_system(blk, B, base=base)


def kernel_tables(kernel: DiscreteKernel, R: int, hit_N: Optional[int] = None,
                  trim: float = 1e-22) -> RenewalTables:
    """Block tables, q, u and (optionally) hit tables for horizons up to R.

    When q has exponentially small mass beyond some length (localized
    regime) the tables are cut there; lengths with relative weight below
    ``trim`` never occur in practice.
    """
    probe = min(R, 4096)
    L = R  # block tables are needed up to L; u always reaches R
    g = block_tables(kernel, probe)
    if probe < R:
        q = step_law_q(kernel, probe, g)
        if kernel.F > 0 and q[-1] < trim * q.max():
            L = probe
        else:
            g = block_tables(kernel, R)
    q = step_law_q(kernel, L, g)
    if kernel.F > 0:
        cut = np.flatnonzero(q > trim * q.max())
        top = max(int(cut[-1]) if cut.size else 1, 3)
        q = q[:top + 1]
        g = g[:top + 1]
    tab = renewal_tables(q, R, F=kernel.F)
    tab.g = g
    if hit_N is not None:
        tab.h = hit_tables(kernel, hit_N)
    return tab


# ---------------------------------------------------------------------------
# binary cache


def _hash(params: dict) -> str:
    blob = json.dumps(params, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:24]


def default_cache_dir() -> Path:
    env = os.environ.get("PINLAB_CACHE_DIR")
    return Path(env) if env else Path.home() / ".cache" / "pinlab"


class KernelCache:
    """Disk cache for eigen data and renewal tables keyed by parameter hash."""

    def __init__(self, cache_dir=None):
        self.dir = Path(cache_dir) if cache_dir is not None else default_cache_dir()
        self.dir.mkdir(parents=True, exist_ok=True)
        self._ops = {}

    def _path(self, params):
        return self.dir / f"{params['kind']}-{_hash(params)}.npz"

    def _load(self, params):
        path = self._path(params)
        if not path.exists():
            self._note_stale(params)
            return None
        with np.load(path, allow_pickle=False) as data:
            header = json.loads(str(data["header"]))
            if header != params:
                log.warning("cache entry %s does not match its key; rebuilding", path.name)
                return None
            return {k: data[k] for k in data.files if k != "header"}

    def _note_stale(self, params):
        """Warn when an entry with the same key exists from another cache version."""
        want = {k: v for k, v in params.items() if k != "version"}
        for other in self.dir.glob(f"{params['kind']}-*.npz"):
            try:
                with np.load(other, allow_pickle=False) as data:
                    header = json.loads(str(data["header"]))
            except (OSError, ValueError, KeyError):
                continue
            if header.get("version") != params["version"] and \
                    {k: v for k, v in header.items() if k != "version"} == want:
                log.warning("cache entry %s has version %s (current %s); rebuilding", other.name,
                            header.get("version"), params["version"])
                return

    def _save(self, params, **arrays):
        path = self._path(params)
        tmp = path.with_name(path.stem + f".{os.getpid()}.tmp.npz")
        np.savez(tmp, header=np.array(json.dumps(params, sort_keys=True)), **arrays)
        os.replace(tmp, path)

    @staticmethod
    def _base(grid, pot, N_max):
        return {"version": CACHE_VERSION, "sigma2": repr(float(pot.sigma2)), "R": repr(float(grid.R)),
                "m": int(grid.m), "N_max": int(N_max)}

    def operator(self, grid, pot, N_max):
        key = (grid, pot.sigma2, N_max)
        if key not in self._ops:
            self._ops[key] = TransferOperator(grid, pot, N_max)
        return self._ops[key]

    def eps_c(self, grid, pot, N_max) -> float:
        params = dict(self._base(grid, pot, N_max), kind="epsc")
        hit = self._load(params)
        if hit is not None:
            return float(hit["eps_c"])
        val = self.operator(grid, pot, N_max).eps_c
        self._save(params, eps_c=np.array(val))
        return val

    def kernel(self, eps, grid=None, pot=None, N_max=2 ** 14) -> DiscreteKernel:
        pot = pot or PotentialSpec.gaussian()
        grid = grid or GridSpec.default(pot.sigma)
        params = dict(self._base(grid, pot, N_max), kind="kernel", eps=repr(float(eps)))
        hit = self._load(params)
        if hit is not None:
            return DiscreteKernel(float(eps), float(hit["F"]), hit["v"], float(hit["eps_c"]),
                                  float(hit["lam"]), grid, pot.sigma2, N_max)
        op = self.operator(grid, pot, N_max)
        k = markov_kernel(eps, grid, pot, N_max, operator=op)
        self._save(params, F=np.array(k.F), v=k.v, eps_c=np.array(k.eps_c), lam=np.array(k.lam))
        return k

    def tables(self, kernel: DiscreteKernel, R: int, hit_N: Optional[int] = None) -> RenewalTables:
        params = dict(self._base(kernel.grid, kernel.pot, kernel.N_max), kind="tables",
                      eps=repr(float(kernel.eps)), horizon=int(R),
                      hit=-1 if hit_N is None else int(hit_N))
        hit = self._load(params)
        if hit is not None:
            tab = RenewalTables(hit["q"], hit["u"], hit["U"], float(hit["C_eps"]), float(hit["F"]),
                                hit["g"], hit["h"] if "h" in hit else None)
            return tab
        tab = kernel_tables(kernel, R, hit_N)
        arrays = dict(q=tab.q, u=tab.u, U=tab.U, C_eps=np.array(tab.C_eps), F=np.array(tab.F), g=tab.g)
        if tab.h is not None:
            arrays["h"] = tab.h
        self._save(params, **arrays)
        return tab
