"""Command-line experiment runner.

A run is described by a JSON config (validated against
``config_schema.json``); command-line flags override config fields.  Each
run writes ``results.csv``, ``summary.json`` and optionally ``paths/*.csv``
into the output directory and prints one PASS/FAIL line per check.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np
from scipy import integrate

from . import analysis, gaussian, levy, oracle, renewal
from .model import PotentialSpec, fmt_float, write_field_csv
from .parallel import map_replicas, seed_stream
from .sampler import PathSampler
from .transfer import GridSpec, KernelCache

__all__ = ["ExperimentConfig", "ConfigError", "run_experiment", "seed_stream", "main"]

log = logging.getLogger("pinlab")

EXPERIMENTS = ("eigenproblem", "scaling", "critical-measure", "renewal-gaps", "area-law", "constants",
               "small-n-oracle")
HORIZON = 2 ** 16 + 1
CHUNK = 1000

_DEFAULTS = {
    "eigenproblem": {"eps_rel": [0.5, 1.0, 2.0]},
    "scaling": {"eps_rel": [1.0], "N": [64, 256, 1024, 4096]},
    "critical-measure": {"eps_rel": [1.0], "N": [4096]},
    "renewal-gaps": {"N": [2 ** 10, 2 ** 12, 2 ** 14, 2 ** 16]},
    "area-law": {"eps_rel": [1.0], "N": [16, 64, 512]},
    "constants": {},
    "small-n-oracle": {"eps_rel": [0.5, 1.0, 2.0], "N": [3, 4, 5, 6, 7]},
}


class ConfigError(ValueError):
    pass


def _schema():
    return json.loads((Path(__file__).with_name("config_schema.json")).read_text())


def _as_list(v):
    if v is None:
        return None
    return list(v) if isinstance(v, (list, tuple)) else [v]


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int
    eps: Optional[list] = None
    eps_rel: Optional[list] = None
    N: Optional[list] = None
    replicas: int = 1000
    sigma: float = 1.0
    grid: dict = field(default_factory=dict)
    N_max: int = 2 ** 14
    breakpoints: list = field(default_factory=lambda: [0.25, 0.5, 0.75, 1.0])
    t: Optional[list] = None
    unconditional: int = 0
    synthetic: dict = field(default_factory=dict)
    method: str = "blocks"
    tolerances: dict = field(default_factory=dict)
    out: str = "pinlab-out"
    cache_dir: Optional[str] = None
    threads: int = 1
    paths: bool = False

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        """Validate against the schema; errors name the offending field path."""
        validator = jsonschema.Draft202012Validator(_schema())
        errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
        if errors:
            e = errors[0]
            where = "/".join(str(p) for p in e.absolute_path) or "<root>"
            raise ConfigError(f"config error at {where}: {e.message}")
        d = dict(data)
        for k in ("eps", "eps_rel", "N"):
            d[k] = _as_list(d.get(k))
        defaults = _DEFAULTS[d["experiment"]]
        if d["eps"] is None and d["eps_rel"] is None and "eps_rel" in defaults:
            d["eps_rel"] = list(defaults["eps_rel"])
        if d["N"] is None and "N" in defaults:
            d["N"] = list(defaults["N"])
        return cls(**d)

    @property
    def tol(self) -> dict:
        return {**analysis.TOLERANCES, **self.tolerances}

    def grid_spec(self) -> GridSpec:
        g = GridSpec.default(self.sigma)
        return GridSpec(float(self.grid.get("R", g.R)), int(self.grid.get("m", g.m)))

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


class Run:
    """Shared state of one run: config, cache, output sink and checks."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.pot = PotentialSpec.gaussian(cfg.sigma)
        self.grid = cfg.grid_spec()
        self.out = Path(cfg.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.cache = KernelCache(cfg.cache_dir)
        self.checks = []
        self.summary = {}
        self._eps_c = None

    @property
    def eps_c(self) -> float:
        if self._eps_c is None:
            self._eps_c = self.cache.eps_c(self.grid, self.pot, self.cfg.N_max)
        return self._eps_c

    def eps_values(self) -> list:
        """(label, eps) pairs; relative values need eps_c."""
        if self.cfg.eps is not None:
            return [(fmt_float(e), float(e)) for e in self.cfg.eps]
        return [(f"{fmt_float(r)}*eps_c", float(r) * self.eps_c if r else 0.0) for r in self.cfg.eps_rel or []]

    def regime(self, eps: float) -> str:
        if eps == 0:
            return "free"
        r = eps / self.eps_c
        if abs(r - 1) < 1e-9:
            return "critical"
        return "delocalized" if r < 1 else "localized"

    def sampler(self, eps: float, horizon: int, hit_N: Optional[int] = None) -> PathSampler:
        k = self.cache.kernel(eps, self.grid, self.pot, self.cfg.N_max)
        return PathSampler(k, self.cache.tables(k, horizon, hit_N))

    def check(self, name: str, ok: bool, detail: str):
        self.checks.append({"name": name, "pass": bool(ok), "detail": detail})

    def path_sink(self, tag: str):
        if not self.cfg.paths:
            return None
        d = self.out / "paths"
        d.mkdir(exist_ok=True)

        def sink(i, fp):
            write_field_csv(d / f"{tag}_r{i:06d}.csv", fp)
        return sink


def write_rows(path: Path, rows: list, columns: Optional[list] = None) -> None:
    """CSV with header, LF endings and 17 significant digits for floats."""
    cols = columns or (list(rows[0].keys()) if rows else [])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_cell(r.get(c, "")) for c in cols])


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return fmt_float(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    if isinstance(o, (np.floating, float)):
        f = float(o)
        return f if math.isfinite(f) else repr(f)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, np.bool_):
        return bool(o)
    return o


# ---------------------------------------------------------------------------
# experiments


def exp_constants(run: Run) -> list:
    sigma = run.cfg.sigma
    rows = []

    def add(name, value, target, tol):
        err = abs(value - target)
        rows.append({"quantity": name, "value": float(value), "target": float(target), "abs_error": float(err)})
        run.check(name, err <= tol, f"{fmt_float(value)} vs {fmt_float(target)} (tol {tol:g})")

    A, cond = gaussian.conditioned_bm_cov()
    exact = [[Fraction(1, 20), Fraction(1, 8), Fraction(1, 6)],
             [Fraction(1, 8), Fraction(1, 3), Fraction(1, 2)],
             [Fraction(1, 6), Fraction(1, 2), Fraction(1, 1)]]
    for i in range(3):
        for j in range(3):
            add(f"A[{i},{j}]", A[i, j], float(exact[i][j]), 0.0)
    add("conditional variance", cond, 1.0 / 720.0, 1e-12)
    add("c_L closed vs quadrature", levy.c_L_constant(sigma), levy.c_L_integral(sigma), 1e-10)
    add("c_L moment form", levy.c_L_moment_form(sigma), levy.c_L_constant(sigma), 1e-12)
    add("g(0,0)", float(gaussian.local_limit_density(0.0, 0.0)), math.sqrt(3) / math.pi, 1e-12)
    mass, _ = integrate.dblquad(lambda z, y: float(gaussian.local_limit_density(y, z)), -12, 12, -6, 6,
                                epsabs=1e-12, epsrel=1e-12)
    add("integral of g", mass, 1.0, 1e-8)
    add("Phi(0)", float(gaussian.phi_of_t(0.0)), 0.5, 1e-15)
    return rows


def exp_eigenproblem(run: Run) -> list:
    cfg, tol = run.cfg, run.cfg.tol
    rows = []
    base = run.eps_c
    g2 = GridSpec(run.grid.R, 2 * run.grid.m)
    variants = {"base": base,
                "grid_m_doubled": run.cache.eps_c(g2, run.pot, cfg.N_max),
                "N_max_doubled": run.cache.eps_c(run.grid, run.pot, 2 * cfg.N_max)}
    for name, val in variants.items():
        rows.append({"quantity": "eps_c", "eps": "", "variant": name, "value": val})
    drift = max(abs(v / base - 1) for v in variants.values())
    run.check("eps_c stable under doubling", drift < tol.get("eps_c_drift", 5e-3), f"max relative drift {drift:.3e}")
    for label, eps in run.eps_values():
        if eps == 0:
            continue
        k = run.cache.kernel(eps, run.grid, run.pot, cfg.N_max)
        mass = k.row_mass()
        target = min(eps / k.eps_c, 1.0)
        dev = float(np.max(np.abs(mass - target)))
        rows.append({"quantity": "F", "eps": label, "variant": "base", "value": k.F})
        rows.append({"quantity": "lambda(F)", "eps": label, "variant": "base", "value": k.lam})
        rows.append({"quantity": "row_mass_max_dev", "eps": label, "variant": "base", "value": dev})
        run.check(f"row mass eps={label}", dev < tol.get("row_mass", 1e-3), f"max |mass - {target:.6g}| = {dev:.3e}")
        if k.F > 0:
            r = abs(eps * k.lam - 1)
            rows.append({"quantity": "eps*lambda-1", "eps": label, "variant": "base", "value": r})
            run.check(f"eps lambda(F) = 1 at eps={label}", r < tol.get("eigen", 1e-8), f"|eps lambda - 1| = {r:.3e}")
    run.summary["eps_c"] = variants
    return rows


def exp_scaling(run: Run) -> list:
    cfg, tol = run.cfg, run.cfg.tol
    Ns = sorted(int(n) for n in cfg.N)
    rows = []
    for j, (label, eps) in enumerate(run.eps_values()):
        reg = run.regime(eps)
        smp = None if eps == 0 else run.sampler(eps, max(Ns) + 1)
        rr = []
        for N in Ns:
            for r in analysis.regime_rows(smp, N, cfg.replicas, cfg.seed, (j, N), cfg.threads, method=cfg.method,
                                          pot=run.pot, sink=run.path_sink(f"eps{j}_N{N}")):
                rr.append({"eps": label, "regime": reg, **r})
        rows.extend(rr)
        s = analysis.regime_summary(rr, Ns, tol["crit_K"])
        run.summary[label] = {"regime": reg, **s}
        if reg == "free" and "slope" in s:
            sl = s["slope"]["slope"]
            run.check(f"free slope eps={label}", abs(sl - 1.5) <= tol["slope"], f"slope {sl:.4f} (1.5 +- {tol['slope']})")
        elif reg == "delocalized":
            for N in Ns:
                f = s["per_N"][N]["boundary_only"]
                run.check(f"boundary-only contacts eps={label} N={N}", f > tol["deloc_fraction"],
                          f"fraction {f:.4f} (> {tol['deloc_fraction']})")
        elif reg == "localized" and len(Ns) >= 2:
            r = s["loc_ratio"]
            run.check(f"(log N)^2 boxing eps={label}", r < tol["loc_ratio"], f"q90 ratio {r:.3f} (< {tol['loc_ratio']})")
        elif reg == "critical":
            for N in Ns:
                f = s["per_N"][N]["bracket"]
                run.check(f"critical bracket N={N}", f >= tol["crit_fraction"],
                          f"fraction {f:.4f} (>= {tol['crit_fraction']}); below {s['per_N'][N]['below_bracket']:.3f}")
    return rows


def exp_critical_measure(run: Run) -> list:
    cfg, tol = run.cfg, run.cfg.tol
    N = int(max(cfg.N))
    label, eps = run.eps_values()[0]
    smp = run.sampler(eps, N + 1)
    res = analysis.critical_measure_experiment(smp, N, cfg.breakpoints, cfg.replicas, cfg.seed, cfg.threads,
                                               method=cfg.method, sink=run.path_sink(f"N{N}"))
    k = len(cfg.breakpoints)
    rows = [{"eps": label, "N": N, "replica": i, **{f"mu_{j}": float(res["increments"][i, j]) for j in range(k)},
             "mu_tv": float(res["tv"][i])} for i in range(cfg.replicas)]
    for j, d in enumerate(res["ks"]):
        run.check(f"KS increment {j}", d <= tol["measure_ks"], f"{d:.4f} (<= {tol['measure_ks']})")
    rho, se = res["rank_corr"], res["corr_se"]
    worst = max((abs(rho[a, b]) / se for a in range(k) for b in range(a + 1, k)), default=0.0)
    run.check("disjoint increments uncorrelated", worst <= 3.0, f"max |rho|/se = {worst:.2f} (<= 3)")
    curve = [p for _, p in res["tightness"]]
    mono = all(b <= a for a, b in zip(curve, curve[1:])) and curve[-1] < curve[0]
    run.check("tightness curve decreasing", mono, " ".join(f"{p:.4f}" for p in curve))
    run.summary.update(ks=res["ks"], rank_corr=rho, corr_se=se, tightness=res["tightness"], sign_p=res["sign_p"],
                       c_L=levy.c_L_constant(run.cfg.sigma))
    return rows


def exp_renewal_gaps(run: Run) -> list:
    cfg, tol = run.cfg, run.cfg.tol
    Ns = sorted(int(n) for n in cfg.N)
    syn = cfg.synthetic
    t_list = sorted(set(cfg.t or [0.05, 1.0, 2.0, 4.0, 8.0, 16.0]))
    crit = renewal.synthetic_q("critical-power", {"C": syn["C"]} if "C" in syn else {}, 2 * max(Ns) + 2)
    G = float(syn.get("G", 0.5))
    c = float(syn.get("c", 1.5 / G))
    expo = renewal.synthetic_q("exponential", {"G": G}, 2 * max(Ns) + 2)
    rows = []
    for j, N in enumerate(Ns):
        rows += renewal.verify_gap_bounds("critical", crit, [N], t_list, cfg.replicas, seed_stream(cfg.seed, (0, j)))
        rows += renewal.verify_gap_bounds("exponential", expo, [N], [c], cfg.replicas, seed_stream(cfg.seed, (1, j)))
    crit_rows = [r for r in rows if r["regime"] == "critical"]
    fit_rows = [r for r in crit_rows if r["t_or_c"] >= 1.0]
    fits = {N: renewal.fit_inverse_t(fit_rows, N) for N in Ns} if len({r["t_or_c"] for r in fit_rows}) >= 2 else {}
    if fits:
        a = [fits[N][1] for N in Ns]
        run.check("c1/t + a_N fit: c1 > 0", all(fits[N][0] > 0 for N in Ns),
                  " ".join(f"{fits[N][0]:.4f}" for N in Ns))
        run.check("a_N decreasing in N", all(y < x for x, y in zip(a, a[1:])), " ".join(f"{v:.4f}" for v in a))
    Nbig = Ns[-1]
    low = [r for r in crit_rows if r["N"] == Nbig and r["t_or_c"] == min(t_list)]
    if low:
        p = low[0]["estimate"]
        run.check(f"P(delta >= {min(t_list)} N/log N) at N={Nbig}", p >= tol.get("gap_lower", 0.95),
                  f"{p:.4f} (>= {tol.get('gap_lower', 0.95)})")
    p = [r for r in rows if r["regime"] == "exponential" and r["N"] == Nbig][0]["estimate"]
    run.check(f"P(delta >= {c:.3g} log N) exponential at N={Nbig}", p <= tol.get("gap_upper", 0.05),
              f"{p:.4f} (<= {tol.get('gap_upper', 0.05)}, G={G})")
    run.summary["fits"] = {N: {"c1": v[0], "a_N": v[1]} for N, v in fits.items()}
    return rows


def exp_area_law(run: Run) -> list:
    cfg, tol = run.cfg, run.cfg.tol
    label, eps = run.eps_values()[0]
    ns = sorted(int(n) for n in cfg.N)
    smp = run.sampler(eps, max(max(ns) + 1, HORIZON))
    res = analysis.area_law_experiment(smp, ns, cfg.replicas, seed_stream(cfg.seed, 0), cfg.unconditional)
    rows = []
    for n in ns:
        A = res["conditional"][n]
        rows += [{"kind": "conditional", "n": n, "replica": i, "value": float(a)} for i, a in enumerate(A)]
        run.check(f"conditional KS n={n}", res["ks"][n] <= tol["area_ks"],
                  f"{res['ks'][n]:.4f} (<= {tol['area_ks']}); std*sqrt(720) {np.std(A) * math.sqrt(720):.3f}")
    if cfg.unconditional:
        rows += [{"kind": "unconditional", "n": int(n), "replica": i, "value": float(a)}
                 for i, (n, a) in enumerate(zip(res["chi1"], res["A1"]))]
        h = res["hill"]
        run.check("Hill index of |A_1|", abs(h - 0.4) <= tol["hill"], f"{h:.4f} (0.4 +- {tol['hill']})")
        run.summary["hill"] = h
        run.summary["plateau"] = res["plateau"]
    run.summary["ks"] = res["ks"]
    return rows


def exp_small_n(run: Run) -> list:
    cfg, tol = run.cfg, run.cfg.tol
    Ns = sorted(int(n) for n in cfg.N)
    if max(Ns) > oracle.ENUM_LIMIT:
        raise ConfigError(f"config error at N: enumeration is limited to N <= {oracle.ENUM_LIMIT}")
    rows = []
    for j, (label, eps) in enumerate(run.eps_values()):
        smp = run.sampler(eps, max(Ns) + 1, hit_N=max(Ns))
        for N in Ns:
            exact = oracle.enumerate_contact_law(N, eps, run.pot.sigma2)

            def draw(c, rng, N=N):
                m = min(CHUNK, cfg.replicas - c * CHUNK)
                return [oracle.interior_contacts(smp.contact_chain(N, rng, "hit")[0], N) for _ in range(m)]

            chunks = -(-cfg.replicas // CHUNK)
            sets = [s for part in map_replicas(draw, chunks, cfg.seed, cfg.threads, key=(j, N)) for s in part]
            emp = oracle.empirical_law(sets)
            tv = oracle.total_variation(emp, exact)
            for A in sorted(set(exact) | set(emp), key=lambda a: (len(a), a)):
                rows.append({"eps": label, "N": N, "contacts": " ".join(map(str, A)),
                             "empirical": float(emp.get(A, 0.0)), "exact": float(exact.get(A, 0.0))})
            run.check(f"contact law TV eps={label} N={N}", tv < tol.get("small_n_tv", 0.03),
                      f"{tv:.4f} (< {tol.get('small_n_tv', 0.03)})")
    return rows


DISPATCH = {
    "constants": exp_constants,
    "eigenproblem": exp_eigenproblem,
    "scaling": exp_scaling,
    "critical-measure": exp_critical_measure,
    "renewal-gaps": exp_renewal_gaps,
    "area-law": exp_area_law,
    "small-n-oracle": exp_small_n,
}


def run_experiment(config, stream=None) -> int:
    """Run one experiment; returns 0 if every check passed and 1 otherwise."""
    cfg = config if isinstance(config, ExperimentConfig) else ExperimentConfig.from_dict(config)
    stream = sys.stdout if stream is None else stream
    run = Run(cfg)
    rows = DISPATCH[cfg.experiment](run)
    write_rows(run.out / "results.csv", rows)
    summary = {"config": cfg.to_dict(), "checks": run.checks, "estimates": run.summary}
    (run.out / "summary.json").write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n")
    for c in run.checks:
        print(f"{'PASS' if c['pass'] else 'FAIL'} {cfg.experiment}: {c['name']}: {c['detail']}", file=stream)
    return 0 if all(c["pass"] for c in run.checks) else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pinlab", description="Pinning-model experiments with Laplacian interaction.")
    p.add_argument("--config", help="JSON config file; flags override its fields")
    p.add_argument("--experiment", choices=EXPERIMENTS)
    p.add_argument("--eps", type=float, nargs="+", help="absolute pinning strengths")
    p.add_argument("--eps-rel", type=float, nargs="+", help="pinning strengths in units of eps_c")
    p.add_argument("--n", type=int, nargs="+", dest="N", help="system size(s), or block lengths for area-law")
    p.add_argument("--replicas", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--grid-r", type=float)
    p.add_argument("--grid-m", type=int)
    p.add_argument("--nmax", type=int, dest="N_max")
    p.add_argument("--breakpoints", type=float, nargs="+")
    p.add_argument("--unconditional", type=int)
    p.add_argument("--method", choices=("blocks", "hit"))
    p.add_argument("--out")
    p.add_argument("--cache-dir")
    p.add_argument("--threads", type=int)
    p.add_argument("--paths", action="store_true", default=None, help="write every sampled path")
    return p


def config_from_args(args) -> dict:
    data = json.loads(Path(args.config).read_text()) if args.config else {}
    for key in ("experiment", "N", "replicas", "seed", "N_max", "breakpoints", "unconditional", "method",
                "out", "cache_dir", "threads", "paths"):
        v = getattr(args, key)
        if v is not None:
            data[key] = v
    if args.eps is not None:
        data["eps"] = args.eps
        data.pop("eps_rel", None)
    if args.eps_rel is not None:
        data["eps_rel"] = args.eps_rel
        data.pop("eps", None)
    if args.grid_r is not None or args.grid_m is not None:
        g = dict(data.get("grid", {}))
        if args.grid_r is not None:
            g["R"] = args.grid_r
        if args.grid_m is not None:
            g["m"] = args.grid_m
        data["grid"] = g
    return data


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = ExperimentConfig.from_dict(config_from_args(args))
    except (ConfigError, OSError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    try:
        return run_experiment(cfg)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (FloatingPointError, np.linalg.LinAlgError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
