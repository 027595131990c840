"""Command-line front end: ``homogbench --config FILE [--out DIR] [--dry-run] [--threads N]``.

Exit codes: 0 success, 2 a checked property fell out of its band, 1 malformed
config or solver failure.  Outputs are collected in memory and written only
once the experiment has finished.
"""

from __future__ import annotations

import argparse
import io
import math
import sys
import traceback
from pathlib import Path

import numpy as np

from .bvp import DomainGrid, Whole, bump, norms_on_region, solve_perturbed
from .cell import residual, solve_corrector
from .coefficients import builtin
from .config import ExperimentConfig, parse_config
from .effective import average, effective_limit, homogenize
from .errors import HomogBenchError, ParseError, ValidationError
from .rates import (
    KAPPA_RULES,
    csv_text,
    dat_text,
    excess_decay,
    fixed_lambda_sweep,
    json_text,
    lipschitz_monitor,
    output_name,
    regime_rho,
    regime_sweep,
    sp_rate_sweep,
)
from .torus import PeriodicField, dump_pfgrid

SLOPE_SLACK = 0.1
SP_THEORY = {"dirichlet_L2": 1.0, "dirichlet_H1": 0.5, "periodic_L2": 2.0, "periodic_H1": 1.0}
SHARP_MODES = ("dirichlet_L2",)
LIPSCHITZ_SPREAD = 3.0
EXCESS_ALPHA = 0.3


class Outputs:
    """Buffered output files, flushed in one go."""

    def __init__(self):
        self.files: dict[str, bytes] = {}

    def text(self, name: str, content: str) -> None:
        self.files[name] = content.encode("utf-8")

    def data(self, name: str, content: bytes) -> None:
        self.files[name] = content

    def pfgrid(self, name: str, field: PeriodicField, sidecar: dict) -> None:
        buf = io.BytesIO()
        dump_pfgrid(field, buf)
        self.data(name, buf.getvalue())
        self.text(name + ".json", json_text(sidecar))

    def flush(self, out_dir: Path) -> list[Path]:
        out_dir.mkdir(parents=True, exist_ok=True)
        written = []
        for name in sorted(self.files):
            path = out_dir / name
            path.write_bytes(self.files[name])
            written.append(path)
        return written


def _safe(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "._-" else "_" for ch in name).strip("_")


def _coefficient(cfg: ExperimentConfig):
    probe = builtin(cfg.coeff, 8)
    n = cfg.n or (256 if probe.d == 1 else 64)
    return builtin(cfg.coeff, n)


def _slope_check(checks, label, slope, theory, sharp=False):
    lo = theory - SLOPE_SLACK
    hi = theory + SLOPE_SLACK if sharp else math.inf
    ok = lo <= slope <= hi
    checks.append({"check": label, "value": slope, "low": lo, "high": hi, "passed": ok})


def _opt(value, default):
    return default if value is None else value


# ---------------------------------------------------------------- experiments

def _run_cell(cfg, out, checks, threads):
    A = _coefficient(cfg)
    tol = _opt(cfg.tol, 1e-9)
    rows = []
    for lam in cfg.lam:
        bundle = solve_corrector(A, lam, tol, workers=threads)
        res = residual(A, lam, bundle)
        name = output_name("cell", A.name, "lam", lam)
        out.pfgrid(name + ".pfgrid", bundle.field(),
                   {"lambda": lam, "tol": tol, "residual": bundle.residual, "check_residual": res,
                    "iterations": bundle.iterations, "n": bundle.n, "d": bundle.d, "m": bundle.m})
        rows.append([lam, bundle.iterations, res, bundle.h1, bundle.hess, bundle.third])
        checks.append({"check": f"residual lam={lam!r}", "value": res, "low": 0.0,
                       "high": 10 * tol, "passed": res <= 10 * tol})
    header = ["lambda", "iterations", "residual", "h1", "hess", "third"]
    out.text(f"cell_{_safe(A.name)}.csv", csv_text(header, rows))
    return {"coeff": A.name, "n": A.n, "rows": [dict(zip(header, r)) for r in rows]}


def _run_effective(cfg, out, checks, threads):
    A = _coefficient(cfg)
    tol = _opt(cfg.tol, 1e-9)
    tensors = []
    if cfg.lam:
        tensors += [homogenize(A, lam, tol) for lam in cfg.lam]
    if cfg.rho is not None:
        tensors.append(effective_limit(A, cfg.rho, tol))
    if not tensors:
        tensors = [homogenize(A, 0.0, tol), average(A)]
    header = ["lambda", "provenance", "nu_min", "nu_max", "symmetric", "elliptic"]
    size = tensors[0].values.size
    header += [f"a{k}" for k in range(size)]
    rows = []
    for T in tensors:
        cert = T.certification
        rows.append([T.lam, T.provenance, cert.nu_min, cert.nu_max, cert.symmetric, cert.elliptic]
                    + [float(v) for v in T.values.ravel()])
        checks.append({"check": f"certification lam={T.lam!r}", "value": cert.nu_min,
                       "low": cert.nu1, "high": cert.nu2, "passed": cert.passed})
    out.text(f"effective_{_safe(A.name)}.csv", csv_text(header, rows))
    return {"coeff": A.name, "tensors": [T.to_json() for T in tensors]}


def _run_solve(cfg, out, checks, threads):
    A = _coefficient(cfg)
    if len(cfg.kappa) not in (1, len(cfg.eps)):
        raise ValueError("kappa must have one entry or as many entries as eps")
    kappas = cfg.kappa * len(cfg.eps) if len(cfg.kappa) == 1 else cfg.kappa
    ratio = _opt(cfg.ratio, 4.0)
    rows = []
    for eps, kappa in zip(cfg.eps, kappas):
        grid = DomainGrid(A.d, cfg.grid) if cfg.grid else DomainGrid.for_scales(A.d, eps, kappa, ratio)
        u = solve_perturbed(A, eps, kappa, bump(A.d), None, grid, tol=_opt(cfg.tol, 1e-8), ratio=ratio)
        name = output_name("solve", A.name, "eps", eps)
        out.pfgrid(name + ".pfgrid", PeriodicField(u.values, A.d),
                   {"grid": grid.to_json(), "eps": eps, "kappa": kappa, "bc": u.bc, "m": u.m})
        rows.append([eps, kappa, grid.N, norms_on_region(u, Whole(), "L2"),
                     norms_on_region(u, Whole(), "H1_seminorm")])
    header = ["eps", "kappa", "N", "L2", "H1_seminorm"]
    out.text(f"solve_{_safe(A.name)}.csv", csv_text(header, rows))
    return {"coeff": A.name, "rows": [dict(zip(header, r)) for r in rows]}


def _run_regime(cfg, out, checks, threads):
    A = _coefficient(cfg)
    rep = regime_sweep(A, cfg.gamma, cfg.eps, ratio=_opt(cfg.ratio, 4.0),
                       cell_tol=_opt(cfg.cell_tol, 1e-10), kappa_rule=cfg.kappa_rule,
                       workers=threads, min_points=_opt(cfg.min_points, 4))
    header = ["eps", "kappa", "lambda", "N", "error", "bound", "ratio"]
    rows = [[r[k] for k in header] for r in rep.rows()]
    base = output_name("regime", A.name, "g", cfg.gamma)
    out.text(base + ".csv", csv_text(header, rows))
    out.text(base + ".dat", dat_text(header, rows))
    _slope_check(checks, "slope", rep.rate.slope, rep.exponent, sharp=cfg.gamma == 1)
    checks.append({"check": "branch bound", "value": rep.c_fit, "passed": rep.bound_ok})
    return rep.to_json()


def _run_sp(cfg, out, checks, threads):
    friedman = cfg.coeff.upper() == "FRIEDMAN" or (
        cfg.mode.startswith("dirichlet") and "coeff" not in cfg.explicit)
    A = None if friedman else _coefficient(cfg)
    rep = sp_rate_sweep(A, cfg.lam, cfg.mode, n=_opt(cfg.n, 256), ratio=_opt(cfg.ratio, 4.0),
                        tol=_opt(cfg.tol, 1e-12), min_points=_opt(cfg.min_points, 4))
    header = ["lambda", "error"]
    rows = list(zip(rep.params, rep.values))
    base = f"sp_{'friedman' if A is None else _safe(A.name)}_{cfg.mode}"
    out.text(base + ".csv", csv_text(header, rows))
    out.text(base + ".dat", dat_text(header, rows))
    _slope_check(checks, "slope", rep.slope, SP_THEORY[cfg.mode], sharp=cfg.mode in SHARP_MODES)
    return rep.to_json()


def _run_expansion(cfg, out, checks, threads):
    A = _coefficient(cfg)
    payload = []
    for lam in cfg.lam:
        l2, h1 = fixed_lambda_sweep(A, lam, cfg.eps, ratio=_opt(cfg.ratio, 4.0),
                                    cell_tol=_opt(cfg.cell_tol, 1e-10), workers=threads,
                                    min_points=_opt(cfg.min_points, 4))
        header = ["eps", "L2", "grad_w"]
        rows = [[e, a, b] for e, a, b in zip(l2.params, l2.values, h1.values)]
        base = output_name("expansion", A.name, "lam", lam)
        out.text(base + ".csv", csv_text(header, rows))
        out.text(base + ".dat", dat_text(header, rows))
        _slope_check(checks, f"L2 slope lam={lam!r}", l2.slope, 1.0)
        _slope_check(checks, f"grad_w slope lam={lam!r}", h1.slope, 0.5)
        payload.append({"lambda": lam, "L2": l2.to_json(), "grad_w": h1.to_json()})
    return {"coeff": A.name, "sweeps": payload}


def _run_excess(cfg, out, checks, threads):
    A = _coefficient(cfg)
    payload = []
    kappas = cfg.kappa or cfg.eps
    if len(kappas) != len(cfg.eps):
        raise ValueError("kappa must have as many entries as eps")
    for eps, kappa in zip(cfg.eps, kappas):
        grid = DomainGrid(A.d, cfg.grid) if cfg.grid else DomainGrid.for_scales(
            A.d, eps, kappa, _opt(cfg.ratio, 4.0))
        center = cfg.center or (0.5,)
        radii = cfg.radii or _dyadic_between(eps, 0.25)
        u = solve_perturbed(A, eps, kappa, bump(A.d), None, grid)
        bundle = solve_corrector(A, kappa / eps, _opt(cfg.cell_tol, 1e-10), workers=threads)
        rep = excess_decay(u, bundle, eps, center, radii)
        header = ["r", "excess", "normalized"]
        rows = list(zip(rep.radii, rep.excess, rep.normalized))
        out.text(output_name("excess", A.name, "eps", eps) + ".csv", csv_text(header, rows))
        checks.append({"check": f"monotone eps={eps!r}", "value": rep.monotone, "passed": rep.monotone})
        checks.append({"check": f"alpha eps={eps!r}", "value": rep.alpha, "low": EXCESS_ALPHA,
                       "passed": rep.alpha >= EXCESS_ALPHA})
        payload.append({"eps": eps, "kappa": kappa, "N": grid.N, **rep.to_json()})
    return {"coeff": A.name, "runs": payload}


def _dyadic_between(lo, hi):
    radii, r = [], hi
    while r >= lo * (1 - 1e-12):
        radii.append(r)
        r /= 2
    return sorted(radii)


def _run_lipschitz(cfg, out, checks, threads):
    A = _coefficient(cfg)
    grid = DomainGrid(A.d, cfg.grid) if cfg.grid else None
    rows = lipschitz_monitor(A, cfg.eps, cfg.kappa_rules or tuple(KAPPA_RULES),
                             ratio=_opt(cfg.ratio, 4.0), center=cfg.center or 0.5,
                             R=_opt(cfg.R, 0.25), p=_opt(cfg.p, 4.0), grid=grid, workers=threads)
    header = ["eps", "rule", "kappa", "N", "Q", "Q_pt"]
    table = [[getattr(r, k) for k in header] for r in rows]
    out.text(f"lipschitz_{_safe(A.name)}.csv", csv_text(header, table))
    qs = [r.Q for r in rows]
    spread = max(qs) / min(qs)
    checks.append({"check": "Q spread", "value": spread, "high": LIPSCHITZ_SPREAD,
                   "passed": spread <= LIPSCHITZ_SPREAD})
    return {"coeff": A.name, "spread": spread, "Q_min": min(qs), "Q_max": max(qs),
            "rows": [dict(zip(header, t)) for t in table]}


RUNNERS = {
    "cell": _run_cell,
    "effective": _run_effective,
    "solve": _run_solve,
    "regime": _run_regime,
    "sp": _run_sp,
    "expansion": _run_expansion,
    "excess": _run_excess,
    "lipschitz": _run_lipschitz,
}


# ---------------------------------------------------------------- planning

def _memory(d: int, N: int) -> int:
    """Rough peak bytes of one direct solve (sparse factor dominates in 2-D)."""
    if d == 1:
        return 80 * (N + 4)
    return int(12 * 33 * N * N * max(math.log2(N), 1.0))


def plan(cfg: ExperimentConfig) -> list[dict]:
    """Grids and solve counts the experiment will use, without solving anything."""
    exp = cfg.experiment
    ratio = _opt(cfg.ratio, 4.0)
    steps = []
    if exp in ("cell", "effective"):
        probe = builtin(cfg.coeff, 8)
        n = cfg.n or (256 if probe.d == 1 else 64)
        lams = cfg.lam or ((cfg.rho,) if cfg.rho is not None else (0.0,))
        for lam in lams:
            steps.append({"step": f"cell problem lam={lam!r}", "d": probe.d, "n": n, "solves": 1,
                          "bytes": 8 * probe.m ** 2 * probe.d * n ** probe.d * 12})
        return steps
    if exp == "sp":
        for lam in cfg.lam:
            if cfg.mode.startswith("periodic"):
                n = _opt(cfg.n, 256)
                steps.append({"step": f"periodic lam={lam!r}", "d": 1, "n": n, "solves": 1,
                              "bytes": 8 * n * 12})
            else:
                N = DomainGrid.for_scales(1, 1.0, lam, ratio).N
                steps.append({"step": f"dirichlet lam={lam!r}", "d": 1, "N": N, "solves": 2,
                              "bytes": _memory(1, N)})
        return steps
    d = builtin(cfg.coeff, 8).d
    if exp == "regime":
        rho = regime_rho(cfg.gamma)
        pairs = []
        for e in cfg.eps:
            k = rho * e + e * e if cfg.kappa_rule == "shifted" and 0 < rho < math.inf else e ** cfg.gamma
            pairs.append((e, k, 2))
    elif exp == "expansion":
        pairs = [(e, lam * e, 2) for lam in cfg.lam for e in cfg.eps]
    elif exp == "lipschitz":
        rules = cfg.kappa_rules or tuple(KAPPA_RULES)
        pairs = [(e, KAPPA_RULES[r](e), 1) for e in cfg.eps for r in rules]
    else:
        kappas = cfg.kappa or cfg.eps
        if len(kappas) == 1:
            kappas = kappas * len(cfg.eps)
        pairs = [(e, k, 1) for e, k in zip(cfg.eps, kappas)]
    for e, k, solves in pairs:
        N = cfg.grid or DomainGrid.for_scales(d, e, k, ratio).N
        steps.append({"step": f"eps={e!r} kappa={k!r}", "d": d, "N": N, "solves": solves,
                      "bytes": _memory(d, N)})
    return steps


def format_plan(cfg: ExperimentConfig, steps: list[dict]) -> str:
    lines = [f"experiment {cfg.experiment} on {cfg.coeff}"]
    for s in steps:
        size = f"n={s['n']}" if "n" in s else f"N={s['N']}"
        lines.append(f"  {s['step']}: d={s['d']} {size} solves={s['solves']} "
                     f"memory~{s['bytes'] / 2 ** 20:.1f} MiB")
    total = sum(s["solves"] for s in steps)
    peak = max((s["bytes"] for s in steps), default=0)
    lines.append(f"total solves {total}, peak memory ~{peak / 2 ** 20:.1f} MiB")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- entry points

def run(cfg: ExperimentConfig, out_dir=None, threads: int = 1) -> int:
    """Run one experiment, write its outputs and return the exit code."""
    out_dir = Path(out_dir or cfg.out or ".")
    out = Outputs()
    checks: list[dict] = []
    try:
        payload = RUNNERS[cfg.experiment](cfg, out, checks, max(1, int(threads)))
    except (HomogBenchError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        report = {"experiment": cfg.experiment, "coeff": cfg.coeff, "error": type(exc).__name__,
                  "message": str(exc), "traceback": traceback.format_exc().splitlines()}
        failed = Outputs()
        failed.text("error.json", json_text(report))
        failed.flush(out_dir)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    passed = all(c["passed"] for c in checks)
    report = {"experiment": cfg.experiment, "coeff": cfg.coeff, "checks": checks,
              "passed": passed, "result": payload}
    out.text(f"{cfg.experiment}_report.json", json_text(report))
    out.flush(out_dir)
    for c in checks:
        print(f"{'PASS' if c['passed'] else 'FAIL'} {c['check']}: {c['value']}")
    return 0 if passed else 2


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="homogbench", description="Homogenization rate experiments.")
    p.add_argument("--config", required=True, help="experiment configuration file")
    p.add_argument("--out", default=None, help="output directory (default: config 'out' or .)")
    p.add_argument("--dry-run", action="store_true", help="print the plan without solving")
    p.add_argument("--threads", type=int, default=1, help="sweep-level parallelism")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return 1
    try:
        text = Path(args.config).read_text(encoding="utf-8")
        cfg = parse_config(text)
    except (ParseError, ValidationError) as exc:
        for line in exc.errors:
            print(f"config error: {line}", file=sys.stderr)
        return 1
    except (OSError, UnicodeDecodeError) as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 1
    if args.dry_run:
        try:
            sys.stdout.write(format_plan(cfg, plan(cfg)))
        except HomogBenchError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        return 0
    return run(cfg, args.out, args.threads)


if __name__ == "__main__":
    sys.exit(main())
