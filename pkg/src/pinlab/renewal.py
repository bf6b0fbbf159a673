"""Plain renewal processes: synthetic step laws, free and conditioned sampling, gap statistics."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import polygamma

from . import kernels
from .model import fmt_float
from .transfer import RenewalTables, renewal_tables

ZETA2 = math.pi ** 2 / 6.0


@dataclass
class StepLaw:
    """Step law tabulated on 0..N_max plus an overflow bucket for longer steps.

    ``kind`` selects how overflow steps are drawn: "power" (P(n > t) ~ N_max/t),
    "geometric" (N_max + geometric) or "none" (the mass means termination).
    """

    q: np.ndarray
    overflow: float = 0.0
    kind: str = "none"
    rate: float = 0.0

    @property
    def N_max(self) -> int:
        return self.q.size - 1

    @property
    def total(self) -> float:
        return float(self.q.sum() + self.overflow)

    def draw_overflow(self, rng, size: int) -> np.ndarray:
        if self.kind == "power":
            U = rng.random(size)
            return np.maximum(np.ceil(self.N_max / np.maximum(U, 1e-300)), self.N_max + 1).astype(np.int64)
        if self.kind == "geometric":
            return self.N_max + rng.geometric(-math.expm1(-self.rate), size).astype(np.int64)
        raise ValueError("defective law has no overflow steps")


def _as_law(q) -> StepLaw:
    if isinstance(q, StepLaw):
        return q
    q = np.asarray(q, dtype=float).copy()
    q[0] = 0.0
    if np.any(q < 0) or q.sum() > 1 + 1e-9:
        raise ValueError("q must be a sub-probability on 1..N_max")
    return StepLaw(q, max(0.0, 1.0 - q.sum()), "none")


def synthetic_q(kind: str, params: dict, N_max: int) -> StepLaw:
    """Synthetic step laws for the three regimes.

    critical-power: q(n) = C/n^2 for n >= 2 and q(1) = 1 - C(zeta(2) - 1), so the
    law is proper; mass beyond N_max goes to the overflow bucket.  The default
    C = 1/(zeta(2) - 1) leaves q(1) = 0, which makes u(n) C log n approach 1
    fastest (the second-order term is q(1)/C + Euler's gamma).
    exponential: q(n) = (1 - e^{-G}) e^{-G(n-1)}, i.e. q(n) proportional to e^{-Gn}.
    geometric: q(n) = p(1 - p)^{n-1}.
    """
    n = np.arange(N_max + 1, dtype=float)
    q = np.zeros(N_max + 1)
    if kind == "critical-power":
        C = float(params.get("C", 1.0 / (ZETA2 - 1.0)))
        head = 1.0 - C * (ZETA2 - 1.0)
        if not C > 0 or head < 0:
            raise ValueError("critical-power needs 0 < C <= 1/(zeta(2) - 1)")
        q[2:] = C / n[2:] ** 2
        q[1] = head
        # exact tail: sum_{n > N_max} 1/n^2 = polygamma(1, N_max + 1)
        over = C * float(polygamma(1, N_max + 1))
        return StepLaw(q, over, "power")
    if kind == "exponential":
        G = float(params["G"])
        if not G > 0:
            raise ValueError("rate G must be positive")
        p = -math.expm1(-G)
        q[1:] = p * np.exp(-G * (n[1:] - 1))
        return StepLaw(q, math.exp(-G * N_max), "geometric", G)
    if kind == "geometric":
        p = float(params["p"])
        if not 0 < p <= 1:
            raise ValueError("p must lie in (0, 1]")
        q[1:] = p * (1 - p) ** (n[1:] - 1)
        G = -math.log1p(-p) if p < 1 else math.inf
        return StepLaw(q, (1 - p) ** N_max, "geometric" if p < 1 else "none", G)
    raise ValueError(f"unknown kind {kind!r}")


def mean_step(law: StepLaw) -> float:
    """E[chi_1] including the overflow bucket in closed form where available."""
    law = _as_law(law)
    n = np.arange(law.q.size)
    head = float(np.sum(n * law.q))
    if law.overflow == 0:
        return head
    if law.kind == "geometric":
        p = -math.expm1(-law.rate)
        return head + law.overflow * (law.N_max + 1.0 / p)
    return math.inf


def sample_renewal(q, N: int, rng, chunk: int = 256):
    """Renewal points in [0, N] (0 included) and iota_N.

    A defective law terminates with the missing mass.
    """
    law = _as_law(q)
    cdf = np.cumsum(law.q)
    pts = [np.zeros(1, dtype=np.int64)]
    pos = 0
    while True:
        U = rng.random(chunk)
        steps = np.searchsorted(cdf, U, side="right").astype(np.int64)
        over = steps > law.N_max
        stop = chunk
        if np.any(over):
            if law.kind == "none":
                stop = int(np.argmax(over))
            else:
                steps[over] = law.draw_overflow(rng, int(over.sum()))
        path = pos + np.cumsum(steps[:stop])
        keep = path[path <= N]
        pts.append(keep)
        if keep.size < stop or stop < chunk:
            break
        pos = int(path[-1])
    chi = np.concatenate(pts)
    return chi, int(chi.size - 1)


def sample_conditioned_renewal(q, u, N: int, rng) -> np.ndarray:
    """Points in [0, N+1] given that N+1 is a renewal point."""
    law = _as_law(q)
    if law.N_max < N + 1:
        raise ValueError("q table must reach N + 1")
    qq = np.ascontiguousarray(law.q)
    pts = kernels.conditioned_renewal(qq, np.cumsum(qq), u, N + 1, rng)
    return np.concatenate(([0], pts))


def gap_statistics(chi, N: int):
    """(delta_N, iota_N, start of the largest gap); delta_N = N+1 when no point lies in (0, N]."""
    chi = np.asarray(chi, dtype=np.int64)
    inside = chi[chi <= N]
    iota = int(np.count_nonzero(inside >= 1))
    if iota == 0:
        return N + 1, 0, 0
    gaps = np.diff(inside)
    k = int(np.argmax(gaps))
    return int(gaps[k]), iota, int(inside[k])


def running_max_gap(chi) -> np.ndarray:
    """delta after each point, i.e. the max gap as the horizon grows."""
    gaps = np.diff(np.asarray(chi, dtype=np.int64))
    return np.maximum.accumulate(gaps)


def law_tables(law: StepLaw, N: int) -> RenewalTables:
    return renewal_tables(law.q, N + 1)


GAP_COLUMNS = ["regime", "N", "t_or_c", "estimate", "stderr", "replicas"]


def verify_gap_bounds(regime: str, q, N_list: Sequence[int], t_list: Sequence[float], replicas: int,
                      rng, tables: Optional[dict] = None) -> list:
    """Estimate P(delta_N >= threshold | N+1 in chi) on an (N, t) lattice.

    Critical thresholds are t N / log N, exponential ones c log N.
    """
    if regime not in ("critical", "exponential"):
        raise ValueError("regime must be 'critical' or 'exponential'")
    law = _as_law(q)
    rows = []
    for N in N_list:
        tab = (tables or {}).get(N) or law_tables(law, N)
        deltas = np.empty(replicas, dtype=np.int64)
        for r in range(replicas):
            chi = sample_conditioned_renewal(law, tab.u, N, rng)
            deltas[r] = gap_statistics(chi, N)[0]
        for t in t_list:
            thr = t * N / math.log(N) if regime == "critical" else t * math.log(N)
            p = float(np.mean(deltas >= thr))
            rows.append({"regime": regime, "N": int(N), "t_or_c": float(t), "estimate": p,
                         "stderr": math.sqrt(max(p * (1 - p), 1e-300) / replicas), "replicas": replicas})
    return rows


def fit_inverse_t(rows: Sequence[dict], N: int):
    """Least-squares fit of estimate = c1/t + a_N for one N; returns (c1, a_N)."""
    sel = [r for r in rows if r["N"] == N]
    x = np.array([1.0 / r["t_or_c"] for r in sel])
    y = np.array([r["estimate"] for r in sel])
    A = np.column_stack((x, np.ones_like(x)))
    (c1, aN), *_ = np.linalg.lstsq(A, y, rcond=None)
    return float(c1), float(aN)


def write_gap_csv(path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GAP_COLUMNS)
        for r in rows:
            w.writerow([r["regime"], r["N"], fmt_float(r["t_or_c"]), fmt_float(r["estimate"]),
                        fmt_float(r["stderr"]), r["replicas"]])
