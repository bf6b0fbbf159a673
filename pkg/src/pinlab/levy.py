"""Index-2/5 stable laws, the atomic measure dL and finite signed measures on [0, 1].

Two normalizations of the symmetric stable process are in use.  Under the
"tail" convention P(L_1 > x) ~ c_L x^{-2/5}, i.e. the Levy density is
(2/5) c_L |y|^{-7/5}.  Under the "levy-measure" convention the density is
c_L |y|^{-7/5} itself, so tails are 5/2 times heavier.  Tail is the default.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import integrate, special, stats

from .gaussian import sample_conditioned_ibm
from .model import fmt_float

ALPHA = 0.4
CONVENTIONS = ("tail", "levy-measure")


def c_L_constant(sigma: float = 1.0) -> float:
    """Closed form 3 sqrt(10) / (sqrt(pi) 360^{7/10}) Gamma(7/10) sigma^{2/5}."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    return 3.0 * math.sqrt(10.0) / (math.sqrt(math.pi) * 360.0 ** 0.7) * math.gamma(0.7) * sigma ** 0.4


def c_L_integral(sigma: float = 1.0) -> float:
    """Same constant as (6 sqrt(10)/sqrt(pi)) sigma^{2/5} int_0^inf s^{2/5} e^{-360 s^2} ds."""
    val, _ = integrate.quad(lambda s: s ** 0.4 * math.exp(-360.0 * s * s), 0.0, np.inf,
                            epsabs=1e-15, epsrel=1e-13, limit=200)
    return 6.0 * math.sqrt(10.0) / math.sqrt(math.pi) * sigma ** 0.4 * val


def tail_factor(alpha: float = ALPHA) -> float:
    """C_alpha with P(|X| > x) ~ C_alpha s^alpha x^{-alpha} for X ~ S_alpha(s, 0, 0)."""
    return (1.0 - alpha) / (math.gamma(2.0 - alpha) * math.cos(math.pi * alpha / 2.0))


def stable_scale(c_tail: float, alpha: float = ALPHA) -> float:
    """Scale s of a symmetric stable law with P(X > x) ~ c_tail x^{-alpha}."""
    return (2.0 * c_tail / tail_factor(alpha)) ** (1.0 / alpha)


def levy_to_tail(c: float, convention: str, alpha: float = ALPHA) -> float:
    """One-sided tail constant implied by a constant c given in either convention."""
    if convention == "tail":
        return c
    if convention == "levy-measure":
        return c / alpha
    raise ValueError(f"unknown convention {convention!r}")


def sample_stable_symmetric(alpha: float = ALPHA, scale: float = 1.0, rng=None, size=None):
    """Chambers-Mallows-Stuck draw of S_alpha(scale, 0, 0)."""
    if not scale > 0:
        raise ValueError("scale must be positive")
    V = rng.uniform(-math.pi / 2, math.pi / 2, size)
    W = rng.standard_exponential(size)
    X = (np.sin(alpha * V) / np.cos(V) ** (1.0 / alpha)
         * (np.cos((1.0 - alpha) * V) / W) ** ((1.0 - alpha) / alpha))
    return scale * X


def subordinator_scale(C_tilde: float, alpha: float = ALPHA) -> float:
    """Scale for :func:`sample_subordinator` giving P(X > x) ~ C_tilde x^{-alpha}."""
    return (C_tilde * math.gamma(1.0 - alpha)) ** (1.0 / alpha)


def sample_subordinator(alpha: float = ALPHA, scale: float = 1.0, rng=None, size=None):
    """Positive stable draw with Laplace transform exp(-(scale lambda)^alpha) (Kanter)."""
    if not 0 < alpha < 1:
        raise ValueError("subordinators need 0 < alpha < 1")
    if not scale > 0:
        raise ValueError("scale must be positive")
    U = rng.random(size)
    W = rng.standard_exponential(size)
    pu = np.pi * U
    A = (np.sin(alpha * pu) / np.sin(pu)) ** (1.0 / (1.0 - alpha)) * np.sin((1.0 - alpha) * pu) / np.sin(alpha * pu)
    return scale * (A / W) ** ((1.0 - alpha) / alpha)


def estimate_C_tilde(C_eps: float, sigma: float, rng, samples: int = 20000, grid: int = 512):
    """C_tilde = sigma^{2/5} C_eps E[(int_0^1 |I_hat|)^{2/5}] by Monte Carlo; returns (value, stderr)."""
    t = (np.arange(1, grid) / grid)
    vals = np.empty(samples)
    chunk = 2000
    for s in range(0, samples, chunk):
        m = min(chunk, samples - s)
        _, I = sample_conditioned_ibm(t, rng, m)
        vals[s:s + m] = (np.abs(I).sum(axis=1) / grid) ** 0.4
    f = sigma ** 0.4 * C_eps
    return float(f * vals.mean()), float(f * vals.std(ddof=1) / math.sqrt(samples))


def c_L_moment_form(sigma: float = 1.0) -> float:
    """sigma^{2/5} E[(G^+)^{2/5}] with G ~ N(0, 1/720); equals c_L."""
    s = 1.0 / math.sqrt(720.0)
    return sigma ** 0.4 * 0.5 * s ** 0.4 * 2 ** 0.2 * math.gamma(0.7) / math.sqrt(math.pi)


# ---------------------------------------------------------------------------
# atomic signed measures


@dataclass(frozen=True)
class AtomicSignedMeasure:
    positions: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.positions, dtype=float)
        y = np.asarray(self.masses, dtype=float)
        if x.shape != y.shape or x.ndim != 1:
            raise ValueError("positions and masses must be 1-d of equal length")
        if x.size and (x.min() < 0 or x.max() > 1):
            raise ValueError("positions must lie in [0, 1]")
        order = np.argsort(x, kind="stable")
        x, y = x[order], y[order]
        x.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "positions", x)
        object.__setattr__(self, "masses", y)
        object.__setattr__(self, "_pre", np.concatenate(([0.0], np.cumsum(y))))
        object.__setattr__(self, "_pre_abs", np.concatenate(([0.0], np.cumsum(np.abs(y)))))

    def cumulative(self, t):
        """nu([0, t])."""
        return self._pre[np.searchsorted(self.positions, t, side="right")]

    def interval(self, a, b):
        """nu((a, b])."""
        return self.cumulative(b) - self.cumulative(a)

    def abs_interval(self, a, b):
        k = np.searchsorted(self.positions, [a, b], side="right")
        return self._pre_abs[k[1]] - self._pre_abs[k[0]]

    def total_variation(self) -> float:
        return float(self._pre_abs[-1])

    def total(self) -> float:
        return float(self._pre[-1])

    def jordan(self):
        """(nu+, nu-) as atomic measures with disjoint supports."""
        pos = self.masses > 0
        neg = self.masses < 0
        return (AtomicSignedMeasure(self.positions[pos], self.masses[pos]),
                AtomicSignedMeasure(self.positions[neg], -self.masses[neg]))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["position", "mass"])
            for x, y in zip(self.positions, self.masses):
                w.writerow([fmt_float(x), fmt_float(y)])

    @classmethod
    def from_csv(cls, path) -> "AtomicSignedMeasure":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1])


def dL_intensity(eta: float, c: float, convention: str = "tail") -> float:
    """Mean number of atoms with |y| > eta on [0, 1]."""
    c_tail = levy_to_tail(c, convention)
    # density per side (2/5) c_tail y^{-7/5}; integral over y > eta is c_tail eta^{-2/5}
    return 2.0 * c_tail * eta ** (-ALPHA)


def dL_truncation_bias(eta: float, c: float, convention: str = "tail") -> float:
    """E[sum of |y| over the discarded atoms |y| <= eta]."""
    c_tail = levy_to_tail(c, convention)
    return 2.0 * ALPHA * c_tail * eta ** (1 - ALPHA) / (1 - ALPHA)


def dL_mass_moment(eta: float, cap: float, c: float, convention: str = "tail") -> float:
    """E[sum |y| 1{eta < |y| <= cap}] by quadrature of the intensity."""
    c_tail = levy_to_tail(c, convention)
    val, _ = integrate.quad(lambda y: y * ALPHA * c_tail * y ** (-1 - ALPHA), eta, cap, epsrel=1e-12, limit=200)
    return 2.0 * val


def sample_dL(eta: float, sigma: float = 1.0, rng=None, convention: str = "tail",
              c: float | None = None) -> AtomicSignedMeasure:
    """Poisson atoms (x_i, y_i) on [0, 1] x {|y| > eta} for the measure dL."""
    if not eta > 0:
        raise ValueError("eta must be positive")
    c = c_L_constant(sigma) if c is None else c
    n = rng.poisson(dL_intensity(eta, c, convention))
    x = rng.random(n)
    mag = eta * rng.random(n) ** (-1.0 / ALPHA)
    sign = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    return AtomicSignedMeasure(x, sign * mag)


def finite_dim_marginals(nu, breakpoints: Sequence[float]) -> np.ndarray:
    """Increments nu((0, a_1]], nu((a_1, a_2]], ... for any measure with ``interval``."""
    a = np.asarray(breakpoints, dtype=float)
    if a.ndim != 1 or a.size == 0:
        raise ValueError("need at least one breakpoint")
    if np.any(np.diff(a) <= 0):
        raise ValueError("breakpoints must be strictly increasing")
    if a[0] <= 0 or a[-1] > 1:
        raise ValueError("breakpoints must lie in (0, 1]")
    edges = np.concatenate(([0.0], a))
    return np.array([float(nu.interval(edges[i], edges[i + 1])) for i in range(a.size)])


def stable_increments(breakpoints: Sequence[float], c_tail: float, rng, size: int) -> np.ndarray:
    """Samples of (L_{a1}, L_{a2} - L_{a1}, ...) for the tail-normalized process."""
    a = np.concatenate(([0.0], np.asarray(breakpoints, dtype=float)))
    s = stable_scale(c_tail)
    cols = [np.diff(a)[i] ** 2.5 * sample_stable_symmetric(ALPHA, s, rng, size) for i in range(a.size - 1)]
    return np.column_stack(cols)


def ks_distance(a, b) -> float:
    """Two-sample KS statistic, or one-sample against a callable CDF."""
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        raise ValueError("empty sample")
    if callable(b) or isinstance(b, str):
        return float(stats.kstest(a, b).statistic)
    b = np.asarray(b, dtype=float)
    if b.size == 0:
        raise ValueError("empty sample")
    return float(stats.ks_2samp(a, b).statistic)
