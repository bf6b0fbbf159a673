"""Samplers for the finite-volume pinning law and its infinite-volume limit.

The finite-volume sampler splits the contact chain at the adjacent-contact
epochs chi.  Those form a renewal with step law q, so conditioning on
N + 1 in chi only touches the renewal, and the pieces in between (blocks)
are independent given their lengths.  Each block is a chain of jumps of
length >= 2 closed by one length-1 jump; it is sampled backwards-weighted by
the block tables g.  Excursions between consecutive contacts are filled
with exact Gaussian bridges.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .gaussian import excursion_area_moments
from .model import (OFFSET, ContactStructure, FieldPath, PotentialSpec, contact_structure,
                    excursion_areas, fmt_float, mu_measure)
from .transfer import DiscreteKernel, RenewalTables

HIT_LIMIT = 2048
BLOCK_BATCH = 50_000


def sample_excursion(l: int, a: float, b: float, pot: PotentialSpec, rng, size=None):
    """Interior Z_1..Z_{l-1} under P^{(-a,0)} given Z_{l-1} = b and Z_l = 0."""
    if pot.kind != "gaussian":
        raise ValueError("excursions need a Gaussian potential")
    if l < 1:
        raise ValueError("excursion length must be >= 1")
    if l == 1:
        if b != 0.0:
            raise ValueError("a length-1 excursion must end at b = 0")
        shape = (0,) if size is None else (size, 0)
        return np.zeros(shape)
    reps = 1 if size is None else int(size)
    if l == 2:
        out = np.full((reps, 1), float(b))
        return out[0] if size is None else out
    sigma = pot.sigma
    Y = -a + sigma * np.cumsum(rng.standard_normal((reps, l)), axis=1)
    Z = np.cumsum(Y, axis=1)
    r1 = -b - Y[:, -1]
    r2 = -Z[:, -1]
    lf = float(l)
    C = lf * (lf + 1) / 2
    V = lf * (lf + 1) * (2 * lf + 1) / 6
    D = lf * lf * (lf * lf - 1) / 12
    a1 = (V * r1 - C * r2) / D
    a2 = (-C * r1 + lf * r2) / D
    i = np.arange(1, l, dtype=float)
    c1 = i * (i + 1) / 2
    c2 = i * (i + 1) * (2 * i + 1) / 6 + (lf - i) * c1
    out = Z[:, :l - 1] + c1 * a1[:, None] + c2 * a2[:, None]
    out[:, -1] = b
    return out[0] if size is None else out


def _excursion_prefix(l: int, a: float, b: float, k: int, sigma: float, rng) -> np.ndarray:
    """First k interior values of a length-l excursion (k < l - 1), without sampling the rest."""
    Y = -a + sigma * np.cumsum(rng.standard_normal(k))
    Z = np.cumsum(Y)
    m = float(l - k)
    cov = sigma * sigma * np.array([[m, m * (m + 1) / 2], [m * (m + 1) / 2, m * (m + 1) * (2 * m + 1) / 6]])
    d = np.linalg.cholesky(cov) @ rng.standard_normal(2)
    Yl = Y[-1] + d[0]
    Zl = Z[-1] + m * Y[-1] + d[1]
    lf = float(l)
    C = lf * (lf + 1) / 2
    V = lf * (lf + 1) * (2 * lf + 1) / 6
    D = lf * lf * (lf * lf - 1) / 12
    r1, r2 = -b - Yl, -Zl
    a1 = (V * r1 - C * r2) / D
    a2 = (-C * r1 + lf * r2) / D
    i = np.arange(1, k + 1, dtype=float)
    c1 = i * (i + 1) / 2
    c2 = i * (i + 1) * (2 * i + 1) / 6 + (lf - i) * c1
    return Z + c1 * a1 + c2 * a2


def sample_free_pinning_path(N: int, pot: PotentialSpec, rng) -> FieldPath:
    """P_{0,N}: the integrated-walk bridge with (Z_N, Z_{N+1}) = (0, 0)."""
    inner = sample_excursion(N + 1, 0.0, 0.0, pot, rng)
    vals = np.zeros(N + 3)
    vals[2:N + 1] = inner[:N - 1]
    tau = (0, N, N + 1)
    return FieldPath(N, vals, (tau, (0.0, 0.0, 0.0)))


class PathSampler:
    """Prepared sampling data for one kernel.

    ``cache_len`` bounds the jump lengths whose kernel matrices are kept in
    memory; longer jumps inside very long blocks are handled step by step.
    """

    def __init__(self, kernel: DiscreteKernel, tables: RenewalTables, cache_len: int = 4096):
        if tables.g is None:
            raise ValueError("tables need block tables g")
        self.kernel = kernel
        self.tables = tables
        self.sigma = math.sqrt(kernel.sigma2)
        self.q = np.ascontiguousarray(tables.q)
        self.Q = np.cumsum(self.q)
        self.u = np.ascontiguousarray(tables.u)
        self.g = np.ascontiguousarray(tables.g)
        self.horizon = self.g.shape[0] - 1
        self.Lc = min(int(cache_len), self.horizon)
        self.M = np.ascontiguousarray(kernel.block(0, self.Lc + 1, tilt=True, hat=True))
        self.states = kernel.states
        self._K = None

    @property
    def max_N(self) -> int:
        return self.u.size - 2

    # -- chi renewal ---------------------------------------------------

    def chi_points(self, N: int, rng) -> np.ndarray:
        """chi points in (0, N + 1] given N + 1 in chi."""
        if N > self.max_N:
            raise ValueError(f"tables cover N <= {self.max_N}")
        return kernels.conditioned_renewal(self.q, self.Q, self.u, N + 1, rng)

    # -- blocks --------------------------------------------------------

    def _long_step(self, x: int, r: int, rng):
        Lc = self.Lc
        top = min(Lc, r - 1)
        ls = np.arange(2, top + 1)
        w = self.M[2:top + 1, x, 1:] * self.g[r - ls, 1:]
        if r - 1 > Lc:
            ls2 = np.arange(Lc + 1, r)
            w2 = self.kernel.block(Lc + 1, r, rows=[x], tilt=True, hat=True)[:, 0, 1:] * self.g[r - ls2, 1:]
            w = np.concatenate((w, w2))
        c = np.cumsum(w.ravel())
        if not c[-1] > 0:
            raise FloatingPointError("block table underflow")
        k = min(int(np.searchsorted(c, rng.random() * c[-1], side="left")), c.size - 1)
        l_idx, y = divmod(k, self.kernel.S - 1)
        return int(l_idx + 2), int(y + 1)

    def inner_chains(self, starts, lengths, rng):
        """(tau, state) chains inside blocks; returns arrays and per-block offsets."""
        starts = np.asarray(starts, dtype=np.int64)
        lengths = np.asarray(lengths, dtype=np.int64)
        if lengths.size and lengths.max() > self.horizon:
            raise ValueError(f"block length {lengths.max()} beyond table horizon {self.horizon}")
        pos0 = starts.copy()
        x0 = np.zeros_like(starts)
        r0 = lengths.copy()
        prefix = {}
        for i in np.flatnonzero(lengths > self.Lc + 1):
            pos, x, r = int(starts[i]), 0, int(lengths[i])
            steps = []
            while r > self.Lc + 1:
                l, y = self._long_step(x, r, rng)
                pos += l
                r -= l
                x = y
                steps.append((pos, y))
            prefix[int(i)] = steps
            pos0[i], x0[i], r0[i] = pos, x, r
        taus, sts, off = kernels.sample_blocks(pos0, x0, r0, self.g, self.M, rng)
        if prefix:
            pt, ps, offs = [], [], [0]
            for i in range(starts.size):
                seg_t = taus[off[i]:off[i + 1]]
                seg_s = sts[off[i]:off[i + 1]]
                if i in prefix:
                    arr = np.array(prefix[i], dtype=np.int64).reshape(-1, 2)
                    seg_t = np.concatenate((arr[:, 0], seg_t))
                    seg_s = np.concatenate((arr[:, 1], seg_s))
                pt.append(seg_t)
                ps.append(seg_s)
                offs.append(offs[-1] + seg_t.size)
            taus = np.concatenate(pt)
            sts = np.concatenate(ps)
            off = np.asarray(offs, dtype=np.int64)
        return taus, sts, off

    # -- contact chains ------------------------------------------------

    def contact_chain(self, N: int, rng, method: str = "blocks"):
        """(tau, J) under P_eps(. | N, N+1 in tau), tau including 0."""
        if method == "hit":
            return self._hit_chain(N, rng)
        chi = self.chi_points(N, rng)
        starts = np.concatenate(([0], chi[:-1]))
        taus, sts, _ = self.inner_chains(starts, np.diff(np.concatenate(([0], chi))), rng)
        tau = np.concatenate(([0], taus))
        J = np.concatenate(([0.0], self.states[sts]))
        return tau, J

    def _hit_chain(self, N: int, rng):
        h = self.tables.h
        if h is None or h.shape[0] < N + 2:
            raise ValueError("hit tables do not reach N + 1")
        if self._K is None or self._K.shape[0] < N + 2:
            self._K = np.ascontiguousarray(self.kernel.block(0, h.shape[0]))
        h = np.ascontiguousarray(h)
        if not h[N + 1, 0] > 0:
            raise FloatingPointError("h(0, N+1) underflowed")
        taus, sts = kernels.sample_hit_chain(self._K, h, N + 1, rng)
        return np.concatenate(([0], taus)), np.concatenate(([0.0], self.states[sts]))

    def path(self, N: int, rng, method: str = "blocks") -> FieldPath:
        tau, J = self.contact_chain(N, rng, method)
        phi = kernels.fill_excursions(tau, J, self.sigma, N, rng)
        return FieldPath(N, phi, (tuple(int(t) for t in tau), tuple(float(j) for j in J)))

    # -- block areas ---------------------------------------------------

    def block_areas(self, lengths, rng, absolute: bool = False):
        """Signed areas of independent blocks of the given lengths.

        Excursion areas are drawn from their exact Gaussian law given the
        contact chain.  Blocks beyond the table horizon use the large-n law
        sigma n^{5/2} N(0, 1/720).  With ``absolute`` the blocks are filled
        in full and (A, Atilde) is returned.
        """
        lengths = np.asarray(lengths, dtype=np.int64)
        A = np.zeros(lengths.size)
        At = np.zeros(lengths.size) if absolute else None
        big = lengths > self.horizon
        if np.any(big):
            nb = lengths[big].astype(float)
            A[big] = self.sigma * nb ** 2.5 * rng.standard_normal(nb.size) / math.sqrt(720.0)
            if absolute:
                At[big] = np.nan
        idx = np.flatnonzero(~big)
        for c0 in range(0, idx.size, BLOCK_BATCH):
            sel = idx[c0:c0 + BLOCK_BATCH]
            ln = lengths[sel]
            starts = np.zeros(sel.size, dtype=np.int64)
            taus, sts, off = self.inner_chains(starts, ln, rng)
            prev_t = np.concatenate(([0], taus[:-1]))
            prev_s = np.concatenate(([0], sts[:-1]))
            prev_t[off[:-1]] = 0
            prev_s[off[:-1]] = 0
            l = taus - prev_t
            a = self.states[prev_s]
            b = self.states[sts]
            if not absolute:
                mean, var = excursion_area_moments(l, a, b, self.kernel.sigma2)
                area = mean + np.sqrt(var) * rng.standard_normal(l.size)
                A[sel] = np.add.reduceat(area, off[:-1]) if l.size else 0.0
                continue
            for j, i in enumerate(sel):
                s, e = off[j], off[j + 1]
                tau = np.concatenate(([0], taus[s:e]))
                J = np.concatenate(([0.0], b[s:e]))
                phi = kernels.fill_excursions(tau, J, self.sigma, max(int(ln[j]), 2), rng)
                seg = phi[OFFSET + 1:OFFSET + ln[j] + 1]
                A[i] = seg.sum()
                At[i] = np.abs(seg).sum()
        return (A, At) if absolute else A

    def sample_chi1(self, size: int, rng) -> np.ndarray:
        """Unconditional first-block lengths; mass beyond the table goes to a 1/n^2 tail."""
        Qt = self.Q[-1]
        U = rng.random(size)
        n = np.searchsorted(self.Q, U, side="left").astype(np.int64)
        over = U > Qt
        if np.any(over):
            if self.kernel.F > 0:
                raise FloatingPointError("defective q in the localized regime")
            # q(n) ~ C/n^2 beyond the horizon: P(chi_1 > t | chi_1 > H) = H / t
            if self.kernel.eps < self.kernel.eps_c * (1 - 1e-12):
                n[over] = -1  # never closes
            else:
                V = rng.random(int(over.sum()))
                n[over] = np.ceil(self.horizon / np.maximum(V, 1e-300)).astype(np.int64)
        return n


def sample_contact_chain(kernel: DiscreteKernel, tables: RenewalTables, N: int, rng,
                         method: str = "auto", sampler: Optional[PathSampler] = None):
    sampler = sampler or PathSampler(kernel, tables)
    if method == "auto":
        method = "hit" if (tables.h is not None and tables.h.shape[0] >= N + 2) else "blocks"
    return sampler.contact_chain(N, rng, method)


def sample_pinning_path(eps: float, N: int, kernel: Optional[DiscreteKernel], tables: Optional[RenewalTables],
                        pot: PotentialSpec, rng, sampler: Optional[PathSampler] = None,
                        method: str = "blocks") -> FieldPath:
    """One field under P_{eps,N}; eps = 0 takes the free bridge."""
    if eps == 0.0:
        return sample_free_pinning_path(N, pot, rng)
    if kernel is None or not math.isclose(kernel.eps, eps, rel_tol=1e-12):
        raise ValueError("kernel was built for a different eps")
    sampler = sampler or PathSampler(kernel, tables)
    return sampler.path(N, rng, method)


# ---------------------------------------------------------------------------
# infinite volume


@dataclass
class InfinitePrefix:
    """phi_{-1..N} under P_eps together with the contacts in [0, N]."""

    N: int
    values: np.ndarray
    tau: np.ndarray
    J: np.ndarray
    terminated: bool
    steps: int

    @property
    def chi(self) -> np.ndarray:
        t = self.tau
        return t[np.concatenate(([True], np.diff(t) == 1))]

    @property
    def iota_N(self) -> int:
        return int(np.count_nonzero((self.chi >= 1) & (self.chi <= self.N)))


class InfiniteVolumeSampler:
    """Unconditioned (tau, J) chain, run until it passes N or terminates."""

    def __init__(self, kernel: DiscreteKernel, table_len: int = 4096):
        self.kernel = kernel
        self.Lt = int(table_len)
        S = kernel.S
        mass = np.zeros((S, self.Lt + 1))
        for l0 in range(1, self.Lt + 1, 512):
            l1 = min(l0 + 512, self.Lt + 1)
            mass[:, l0:l1] = kernel.block(l0, l1).sum(axis=2).T
        self.cum = np.cumsum(mass, axis=1)
        self.total = kernel.row_mass()
        self.tail = np.clip(self.total - self.cum[:, -1], 0.0, None)
        self.defective = kernel.eps < kernel.eps_c * (1 - 1e-12)
        self.sigma = math.sqrt(kernel.sigma2)

    def step(self, x: int, rng):
        """(l, y) for one jump from state x, or None if the chain terminates."""
        tot = self.total[x]
        U = rng.random()
        if self.defective:
            if U >= tot:
                return None
            t = U
        else:
            t = U * tot
        row = self.cum[x]
        if t < row[-1]:
            l = int(np.searchsorted(row, t, side="right"))
            l = max(l, 1)
        else:
            l = self._tail_length(rng)
        if l == 1:
            return 1, 0
        w = self.kernel.block(l, l + 1, rows=[x])[0, 0, 1:]
        c = np.cumsum(w)
        y = int(min(np.searchsorted(c, rng.random() * c[-1], side="left"), c.size - 1)) + 1
        return l, y

    def _tail_length(self, rng):
        F = self.kernel.F
        while True:
            l = int(math.ceil(self.Lt / max(rng.random(), 1e-300)))
            if F == 0.0 or rng.random() < math.exp(-F * (l - self.Lt)):
                return max(l, self.Lt + 1)

    def chain(self, N: int, rng):
        pos, x = 0, 0
        taus, sts = [0], [0]
        terminated = False
        while pos <= N:
            st = self.step(x, rng)
            if st is None:
                terminated = True
                break
            l, y = st
            pos += l
            x = y
            taus.append(pos)
            sts.append(y)
        return np.asarray(taus, dtype=np.int64), np.asarray(sts, dtype=np.int64), terminated

    def prefix(self, N: int, rng) -> InfinitePrefix:
        taus, sts, terminated = self.chain(N, rng)
        J = self.kernel.states[sts]
        vals = np.zeros(N + 2)  # phi_{-1..N}
        inside = taus <= N
        tin, Jin = taus[inside], J[inside]
        if tin.size >= 2:
            phi = kernels.fill_excursions(tin, Jin, self.sigma, max(int(tin[-1]), 2), rng)
            vals[:tin[-1] + 2] = phi[:tin[-1] + 2]
        last = int(tin[-1])
        k = N - last
        if k > 0:
            if terminated:
                Y = -Jin[-1] + self.sigma * np.cumsum(rng.standard_normal(k))
                vals[last + 2:] = np.cumsum(Y)
            else:
                l = int(taus[inside.sum()] - last)
                b = float(J[inside.sum()])
                if k >= l - 1:
                    vals[last + 2:last + l + 1] = sample_excursion(l, Jin[-1], b, PotentialSpec.gaussian(self.sigma), rng)[:k]
                else:
                    vals[last + 2:] = _excursion_prefix(l, Jin[-1], b, k, self.sigma, rng)
        return InfinitePrefix(N, vals, tin, Jin, terminated, int(taus.size - 1))


def sample_infinite_volume_prefix(eps: float, N: int, kernel: DiscreteKernel, pot: PotentialSpec, rng,
                                  sampler: Optional[InfiniteVolumeSampler] = None) -> InfinitePrefix:
    if not math.isclose(kernel.eps, eps, rel_tol=1e-12):
        raise ValueError("kernel was built for a different eps")
    sampler = sampler or InfiniteVolumeSampler(kernel)
    return sampler.prefix(N, rng)


# ---------------------------------------------------------------------------
# batch output

SUMMARY_COLUMNS = ["replica", "N", "ell_N", "iota_N", "Delta_N", "delta_N", "max_abs_phi", "S", "Stilde"]


def path_summary(fp: FieldPath, breakpoints: Sequence[float] = ()) -> dict:
    cs = contact_structure(fp)
    ea = excursion_areas(fp, cs)
    row = {
        "N": fp.N, "ell_N": cs.ell_N, "iota_N": cs.iota_N, "Delta_N": cs.Delta_N,
        "delta_N": cs.delta_N, "max_abs_phi": float(np.max(np.abs(fp.values))),
        "S": float(ea.S[-1]) if ea.S.size else 0.0,
        "Stilde": float(ea.Stilde[-1]) if ea.Stilde.size else 0.0,
    }
    if len(breakpoints):
        mu = mu_measure(fp)
        edges = np.concatenate(([0.0], np.asarray(breakpoints, dtype=float)))
        for j in range(len(breakpoints)):
            row[f"mu_{j}"] = float(mu.interval(edges[j], edges[j + 1]))
        row["mu_tv"] = mu.total_variation()
    return row


def write_batch_csv(path, rows: Sequence[dict]) -> None:
    if not rows:
        raise ValueError("no rows")
    cols = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([fmt_float(r[c]) if isinstance(r[c], float) else r[c] for c in cols])
