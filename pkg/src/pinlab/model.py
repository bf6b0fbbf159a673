"""Field configurations, contact structure and rescaled observables.

A field of volume ``N`` is stored as a length ``N + 3`` array holding
``phi_{-1}, phi_0, ..., phi_{N+1}``; array position ``i + 1`` carries site
``i``.  Pinned sites are literal ``0.0`` values, so contact detection uses
exact equality.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import integrate

OFFSET = 1  # array index of site i is i + OFFSET

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


def fmt_float(x: float) -> str:
    """Format a float with 17 significant digits (round-trip exact)."""
    return format(float(x), ".17g")


@dataclass(frozen=True)
class PotentialSpec:
    """Potential V with e^{-V} a probability density.

    ``kind`` is ``"gaussian"`` (V(x) = x^2/(2 sigma2) + log sqrt(2 pi sigma2))
    or ``"tabulated-convex"``, given by V sampled on a symmetric grid and
    linearly interpolated, +inf outside the grid.
    """

    kind: str = "gaussian"
    sigma2: float = 1.0
    gamma: float = 1.0
    grid: Optional[np.ndarray] = None
    values: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in ("gaussian", "tabulated-convex"):
            raise ValueError(f"unknown potential kind {self.kind!r}")
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")
        if self.kind == "gaussian" and self.gamma != 1.0 / self.sigma2:
            raise ValueError("gaussian potential requires gamma = 1/sigma2")

    @classmethod
    def gaussian(cls, sigma: float = 1.0) -> "PotentialSpec":
        s2 = float(sigma) ** 2
        return cls("gaussian", s2, 1.0 / s2)

    @classmethod
    def tabulated(cls, grid, values) -> "PotentialSpec":
        """Build a tabulated convex potential from samples on a symmetric grid."""
        x = np.asarray(grid, dtype=float)
        v = np.asarray(values, dtype=float)
        if x.ndim != 1 or x.shape != v.shape or x.size < 5:
            raise ValueError("grid and values must be 1-d arrays of equal length")
        if np.any(np.diff(x) <= 0):
            raise ValueError("grid must be increasing")
        if not np.allclose(x, -x[::-1], atol=1e-12) or not np.allclose(v, v[::-1], atol=1e-12):
            raise ValueError("tabulated potential must be symmetric")
        dens = np.exp(-v)
        mass = integrate.trapezoid(dens, x)
        if abs(mass - 1.0) > 1e-8:
            raise ValueError(f"e^-V integrates to {mass:.12g}, not 1")
        s2 = integrate.trapezoid(x * x * dens, x)
        h = np.diff(x)
        slopes = np.diff(v) / h
        curv = np.diff(slopes) / (0.5 * (h[1:] + h[:-1]))
        finite = curv[np.isfinite(curv)]
        gamma = float(finite.min()) if finite.size else 0.0
        if gamma <= 0:
            raise ValueError("tabulated potential is not uniformly convex")
        return cls("tabulated-convex", float(s2), gamma, x.copy(), v.copy())

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)

    def V(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "gaussian":
            return 0.5 * x * x / self.sigma2 + 0.5 * math.log(2.0 * math.pi * self.sigma2)
        out = np.interp(x, self.grid, self.values)
        return np.where((x < self.grid[0]) | (x > self.grid[-1]), np.inf, out)

    def density(self, x):
        return np.exp(-self.V(x))


@dataclass(frozen=True)
class ContactStructure:
    tau: tuple
    chi: tuple
    J: tuple
    ell_N: int
    iota_N: int
    Delta_N: int
    delta_N: int

    def to_json(self) -> str:
        return json.dumps({
            "tau": list(self.tau), "chi": list(self.chi),
            "J": [fmt_float(v) for v in self.J],
            "ell_N": self.ell_N, "iota_N": self.iota_N,
            "Delta_N": self.Delta_N, "delta_N": self.delta_N,
        })

    @classmethod
    def from_json(cls, text: str) -> "ContactStructure":
        d = json.loads(text)
        return cls(tuple(d["tau"]), tuple(d["chi"]), tuple(float(v) for v in d["J"]),
                   d["ell_N"], d["iota_N"], d["Delta_N"], d["delta_N"])


@dataclass(frozen=True)
class FieldPath:
    """Field phi_{-1..N+1} with pinned boundary values.

    ``contacts`` optionally stores the (tau, J) chain produced by a sampler so
    that :func:`contact_structure` does not have to rediscover it.
    """

    N: int
    values: np.ndarray
    contacts: Optional[tuple] = field(default=None, compare=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if self.N < 2:
            raise ValueError("N must be at least 2")
        if vals.shape != (self.N + 3,):
            raise ValueError(f"expected {self.N + 3} values, got {vals.shape}")
        if vals[0] != 0.0 or vals[1] != 0.0 or vals[-2] != 0.0 or vals[-1] != 0.0:
            raise ValueError("boundary values must be exactly zero")
        vals = vals.copy()
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_interior(cls, interior, contacts=None) -> "FieldPath":
        """Build from phi_1..phi_{N-1}."""
        inner = np.asarray(interior, dtype=float)
        N = inner.size + 1
        vals = np.zeros(N + 3)
        vals[2:N + 1] = inner
        return cls(N, vals, contacts)

    def phi(self, i):
        return self.values[np.asarray(i) + OFFSET]

    @property
    def sites(self) -> np.ndarray:
        return self.values[OFFSET:self.N + 1 + OFFSET]  # phi_0..phi_N


def discrete_laplacian(fp: FieldPath, n: int) -> float:
    if not -1 < n < fp.N + 1:
        raise IndexError(f"Laplacian index {n} outside (-1, {fp.N + 1})")
    v = fp.values
    k = n + OFFSET
    return float(v[k + 1] + v[k - 1] - 2.0 * v[k])


def hamiltonian(fp: FieldPath, pot: PotentialSpec) -> float:
    """Sum of V(Laplacian) over n = 0..N."""
    v = fp.values
    lap = v[2:] + v[:-2] - 2.0 * v[1:-1]
    return float(np.sum(pot.V(lap)))


def _max_gap(points: np.ndarray) -> int:
    return int(np.max(np.diff(points))) if points.size > 1 else 0


def contact_structure(fp: FieldPath) -> ContactStructure:
    """Contact epochs tau (sites 0..N+1 where phi vanishes) and derived data.

    N and N+1 always belong to tau because of the boundary condition.
    """
    N = fp.N
    if fp.contacts is not None:
        tau = np.asarray(fp.contacts[0], dtype=np.int64)
    else:
        tau = np.flatnonzero(fp.values[OFFSET:N + 2 + OFFSET] == 0.0).astype(np.int64)
    tau_set = np.zeros(N + 3, dtype=bool)
    tau_set[tau + 1] = True
    tau_set[0] = True  # site -1 is pinned
    prev = tau_set[tau]  # is tau - 1 a contact
    chi = tau[prev]
    J = fp.values[tau - 1 + OFFSET]
    J[0] = 0.0
    in_N = tau[(tau >= 1) & (tau <= N)]
    ell = int(in_N.size)
    chi_N = chi[chi <= N]
    iota = int(chi_N.size - 1)
    Delta = _max_gap(tau[tau <= N])
    delta = _max_gap(chi_N) if iota >= 1 else N + 1
    return ContactStructure(tuple(int(t) for t in tau), tuple(int(c) for c in chi),
                            tuple(float(j) for j in J), ell, iota, Delta, delta)


def rescale_hat(fp: FieldPath, pot: PotentialSpec, t: float) -> float:
    """Linearly interpolated field at macroscopic time t, scaled by sigma N^{3/2}."""
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    N = fp.N
    s = N * t
    k = min(int(math.floor(s)), N)
    frac = s - k
    a = fp.phi(k)
    b = fp.phi(k + 1) if k < N else 0.0
    return float((a + frac * (b - a)) / (pot.sigma * N ** 1.5))


class MuMeasure:
    """Signed measure with step density (log N)^{5/2} N^{-3/2} phi_{floor(Nt)}.

    floor(Nt) is clamped to [0, N]; the last cell [1 - 1/N, 1] carries
    phi_{N-1} and t = 1 itself has no mass.
    """

    def __init__(self, fp: FieldPath):
        N = fp.N
        self.N = N
        self.scale = math.log(N) ** 2.5 / N ** 1.5
        cells = np.array(fp.values[OFFSET:N + 1 + OFFSET])  # phi_0..phi_N
        self._cells = cells
        self._pre = np.concatenate(([0.0], np.cumsum(cells)))
        self._pre_abs = np.concatenate(([0.0], np.cumsum(np.abs(cells))))

    def _cum(self, t, pre, cells):
        t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
        s = self.N * t
        k = np.minimum(np.floor(s).astype(np.int64), self.N)
        return self.scale * (pre[k] + (s - k) * cells[k]) / self.N

    def cumulative(self, t):
        """nu([0, t])."""
        return self._cum(t, self._pre, self._cells)

    def interval(self, a, b):
        """nu((a, b])."""
        return self.cumulative(b) - self.cumulative(a)

    def abs_interval(self, a, b):
        """|nu|((a, b])."""
        c = np.abs(self._cells)
        return self._cum(b, self._pre_abs, c) - self._cum(a, self._pre_abs, c)

    def total_variation(self):
        return float(self.abs_interval(0.0, 1.0))


def mu_measure(fp: FieldPath) -> MuMeasure:
    return MuMeasure(fp)


@dataclass(frozen=True)
class ExcursionAreas:
    A: np.ndarray
    Atilde: np.ndarray
    S: np.ndarray
    Stilde: np.ndarray


def excursion_areas(fp: FieldPath, cs: ContactStructure) -> ExcursionAreas:
    """Signed and absolute areas of the complete chi-blocks inside [0, N]."""
    chi = np.asarray(cs.chi, dtype=np.int64)
    chi = chi[chi <= fp.N]
    if chi.size < 2:
        empty = np.zeros(0)
        return ExcursionAreas(empty, empty, empty, empty)
    vals = fp.values
    pre = np.concatenate(([0.0], np.cumsum(vals[OFFSET:fp.N + 1 + OFFSET])))
    pre_abs = np.concatenate(([0.0], np.cumsum(np.abs(vals[OFFSET:fp.N + 1 + OFFSET]))))
    # sum over sites chi_{k-1}+1 .. chi_k  ->  pre[chi_k + 1] - pre[chi_{k-1} + 1]
    A = pre[chi[1:] + 1] - pre[chi[:-1] + 1]
    At = pre_abs[chi[1:] + 1] - pre_abs[chi[:-1] + 1]
    return ExcursionAreas(A, At, np.cumsum(A), np.cumsum(At))


def write_field_csv(path, fp: FieldPath) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "value"])
        for i, v in enumerate(fp.values):
            w.writerow([i - OFFSET, fmt_float(v)])


def read_field_csv(path) -> FieldPath:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if rows[0] != ["index", "value"]:
        raise ValueError("bad header")
    idx = np.array([int(r[0]) for r in rows[1:]])
    vals = np.array([float(r[1]) for r in rows[1:]])
    if idx[0] != -1 or np.any(np.diff(idx) != 1):
        raise ValueError("indices must run -1..N+1 consecutively")
    return FieldPath(int(idx[-1]) - 1, vals)


def area_blocks_from_chain(tau: Sequence[int], N: int) -> np.ndarray:
    """chi points implied by a tau chain (helper for samplers)."""
    tau = np.asarray(tau)
    mask = np.concatenate(([True], np.diff(tau) == 1))
    return tau[mask]
