"""Experiment harness: sweeps, rate fits, regime tables and interior-regularity monitors."""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.integrate import quad

from .bvp import (
    Ball,
    DomainGrid,
    DomainSolution,
    Whole,
    _tensor_sampler,
    _weights,
    bump,
    norms_on_region,
    region_norm,
    sample_source,
    solve_friedman_exact,
    solve_homogenized,
    solve_operator,
    solve_perturbed,
)
from .cell import CorrectorBundle, solve_corrector, solve_periodic
from .coefficients import CoefficientField
from .effective import effective_limit, homogenize
from .errors import MissingMetadata, RegionNotNested
from .expansion import sample_corrector, two_scale_w
from .fitting import RateReport, fit_rate, local_slopes
from .torus import PeriodicField, norm

__all__ = [
    "RateReport", "fit_rate", "local_slopes", "regime_rho", "regime_exponent", "regime_bound",
    "RegimeReport", "regime_sweep", "fixed_lambda_sweep", "sp_rate_sweep",
    "ExcessReport", "excess_decay", "LipschitzRow", "lipschitz_monitor",
    "format_number", "write_csv", "write_json", "write_dat", "output_name",
]

BOUND_FACTOR = 2.0
KAPPA_RULES = {
    "eps2": lambda eps: eps ** 2,
    "eps": lambda eps: eps,
    "sqrt": lambda eps: math.sqrt(eps),
}


def _map(fn, items, workers):
    items = list(items)
    if workers and workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


# ---------------------------------------------------------------- regimes

def regime_rho(gamma: float) -> float:
    """``lim kappa/eps`` for ``kappa = eps^gamma``."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if gamma < 1:
        return math.inf
    if gamma == 1:
        return 1.0
    return 0.0


def regime_exponent(gamma: float) -> float:
    """Smallest power of eps among the terms of the branch bound."""
    if gamma < 1:
        return min(gamma, 1.0, 2.0 * (1.0 - gamma))
    if gamma == 1:
        return 1.0
    return min(1.0, 2.0 * (gamma - 1.0))


def regime_bound(eps: float, kappa: float, rho: float) -> float:
    if math.isinf(rho):
        return kappa + eps + (eps / kappa) ** 2
    if rho == 0:
        return kappa + eps + (kappa / eps) ** 2
    return kappa + eps + abs((kappa / eps) ** 2 - rho ** 2) / rho ** 2


@dataclass(frozen=True)
class RegimeReport:
    rate: RateReport
    gamma: float
    rho: float
    exponent: float
    kappas: tuple
    bounds: tuple
    c_fit: float
    bound_ok: bool
    grids: tuple

    def rows(self):
        for e, k, err, b, n in zip(self.rate.params, self.kappas, self.rate.values,
                                   self.bounds, self.grids):
            yield {"eps": e, "kappa": k, "lambda": k / e, "N": n, "error": err, "bound": b,
                   "ratio": err / b}

    def to_json(self) -> dict:
        return {
            "gamma": self.gamma,
            "rho": "inf" if math.isinf(self.rho) else self.rho,
            "theoretical_exponent": self.exponent,
            "fit": self.rate.to_json(),
            "c_fit": self.c_fit,
            "bound_factor": BOUND_FACTOR,
            "bound_ok": self.bound_ok,
            "rows": list(self.rows()),
        }


def bound_check(errors, bounds) -> tuple[float, bool]:
    """Geometric-mean constant and whether every ratio stays within ``BOUND_FACTOR`` of it."""
    ratios = np.asarray(errors, dtype=float) / np.asarray(bounds, dtype=float)
    if np.all(ratios == 0):
        return 0.0, True
    c_fit = float(np.exp(np.mean(np.log(ratios))))
    return c_fit, bool(np.max(ratios) <= BOUND_FACTOR * c_fit)


def regime_sweep(A: CoefficientField, gamma: float, eps_list: Sequence[float], F=None, G=None,
                 ratio: float = 4.0, cell_tol: float = 1e-10, kappa_rule: str | None = None,
                 workers: int = 1, min_points: int = 4) -> RegimeReport:
    """``||u_eps - u_0||_L2`` with ``kappa = eps^gamma`` against the limit tensor of the regime.

    ``kappa_rule = "shifted"`` uses ``kappa = rho eps + eps^2`` in the ``gamma = 1`` branch.
    """
    rho = regime_rho(gamma)
    if rho == 0 and A.lipschitz is None:
        raise MissingMetadata(f"{A.name}: the small-ratio regime needs a Lipschitz constant")
    F = bump(A.d) if F is None else F
    Ahat = effective_limit(A, rho, cell_tol)

    def kappa_of(eps):
        if kappa_rule == "shifted" and 0 < rho < math.inf:
            return rho * eps + eps ** 2
        return eps ** gamma

    def run(eps):
        kappa = kappa_of(eps)
        grid = DomainGrid.for_scales(A.d, eps, kappa, ratio)
        u = solve_perturbed(A, eps, kappa, F, G, grid)
        u0 = solve_homogenized(Ahat, F, G, grid)
        return kappa, grid.N, norms_on_region(u - u0, Whole(), "L2")

    eps_list = [float(e) for e in eps_list]
    out = _map(run, eps_list, workers)
    kappas = [o[0] for o in out]
    errors = [o[2] for o in out]
    bounds = [regime_bound(e, k, rho) for e, k in zip(eps_list, kappas)]
    rate = fit_rate(eps_list, errors, {"experiment": "regime", "coeff": A.name, "gamma": gamma},
                    min_points=min_points)
    c_fit, ok = bound_check(errors, bounds)
    return RegimeReport(rate, gamma, rho, regime_exponent(gamma), tuple(kappas), tuple(bounds),
                        c_fit, ok, tuple(o[1] for o in out))


def fixed_lambda_sweep(A: CoefficientField, lam: float, eps_list: Sequence[float], F=None, G=None,
                       ratio: float = 4.0, cell_tol: float = 1e-10, workers: int = 1,
                       bundle: CorrectorBundle | None = None, min_points: int = 4):
    """L2 error against the ``lam``-homogenized solution and ``||grad w||`` along ``eps``."""
    if lam <= 0:
        raise ValueError("lam must be positive")
    F = bump(A.d) if F is None else F
    bundle = bundle or solve_corrector(A, lam, cell_tol)
    Ahat = homogenize(A, lam, bundle=bundle)
    Gval = getattr(G, "value", None)

    def run(eps):
        kappa = lam * eps
        grid = DomainGrid.for_scales(A.d, eps, kappa, ratio)
        u = solve_perturbed(A, eps, kappa, F, G, grid)
        u0 = solve_homogenized(Ahat, F, G, grid)
        w = two_scale_w(u, u0, bundle, eps, lam, Gval)
        return norms_on_region(u - u0, Whole(), "L2"), norms_on_region(w, Whole(), "H1_seminorm")

    eps_list = [float(e) for e in eps_list]
    out = _map(run, eps_list, workers)
    desc = {"experiment": "fixed_lambda", "coeff": A.name, "lambda": lam}
    l2 = fit_rate(eps_list, [o[0] for o in out], {**desc, "quantity": "L2"}, min_points=min_points)
    h1 = fit_rate(eps_list, [o[1] for o in out], {**desc, "quantity": "grad_w"}, min_points=min_points)
    return l2, h1


# ---------------------------------------------------------------- singular perturbation

SP_MODES = ("dirichlet_L2", "dirichlet_H1", "periodic_L2", "periodic_H1")


def _friedman_error(lam: float, kind: str) -> float:
    sol = solve_friedman_exact(lam)
    if kind == "L2":
        f = lambda x: (sol.u(x) - sol.u0(x)) ** 2
    else:
        f = lambda x: (sol.du(x) - sol.du0(x)) ** 2
    # Split at the layers so quad resolves the exponentials.
    cuts = sorted({0.0, min(20 * lam, 0.5), 0.5, max(1 - 20 * lam, 0.5), 1.0})
    total = sum(quad(f, a, b, limit=200, epsabs=1e-15, epsrel=1e-12)[0]
                for a, b in zip(cuts, cuts[1:]) if b > a)
    return math.sqrt(total)


def sp_rate_sweep(A: CoefficientField | None, lam_list: Sequence[float], mode: str, F=None,
                  G=None, n: int = 256, ratio: float = 4.0, tol: float = 1e-12,
                  min_points: int = 4) -> RateReport:
    """Rate of ``u_lam -> u_0`` with a fixed (non-oscillating) coefficient.

    ``A = None`` in a Dirichlet mode uses the closed-form 1-D example
    (``a = 1``, ``F = 1``); periodic modes solve on the torus with mean-zero ``F``.
    """
    if mode not in SP_MODES:
        raise ValueError(f"mode must be one of {SP_MODES}")
    lam_list = [float(x) for x in lam_list]
    kind = "L2" if mode.endswith("L2") else "H1"
    desc = {"experiment": "sp", "mode": mode, "coeff": "friedman" if A is None else A.name}
    errors = []
    if mode.startswith("periodic"):
        if A is None:
            raise ValueError("periodic modes need a coefficient field")
        A = A.with_resolution(n) if A.n != n and A.formula is not None else A
        if F is None:
            F = PeriodicField.from_function(lambda *y: np.sin(2 * np.pi * y[0]), A.n, A.d)
        elif callable(F):
            F = PeriodicField.from_function(F, A.n, A.d)
        F = F.project_mean_zero()
        u0 = solve_periodic(A, 0.0, F, tol)
        for lam in lam_list:
            diff = solve_periodic(A, lam, F, tol) - u0
            errors.append(norm(diff, "L2") if kind == "L2" else norm(diff, "H1"))
    elif A is None:
        errors = [_friedman_error(lam, kind) for lam in lam_list]
    else:
        F = bump(A.d) if F is None else F
        tensor, m = _tensor_sampler(A, 1.0)
        for lam in lam_list:
            grid = DomainGrid.for_scales(A.d, 1.0, lam, ratio)
            u = solve_operator(grid, tensor, m, lam, F, G, 1e-8, "direct", {"lambda": lam})
            u0 = solve_operator(grid, tensor, m, 0.0, F, G, 1e-8, "direct", {"lambda": 0})
            diff = u - u0
            errors.append(norms_on_region(diff, Whole(), "L2" if kind == "L2" else "H1_seminorm"))
    return fit_rate(lam_list, errors, desc, min_points=min_points)


# ---------------------------------------------------------------- excess decay

@dataclass(frozen=True)
class ExcessReport:
    radii: tuple
    excess: tuple
    normalized: tuple
    alpha: float
    monotone: bool
    jitter: float = 0.1

    def to_json(self) -> dict:
        return {"radii": list(self.radii), "excess": list(self.excess),
                "normalized": list(self.normalized), "alpha": self.alpha,
                "monotone": self.monotone, "jitter": self.jitter}


def corrector_affine_gradients(u: DomainSolution, bundle: CorrectorBundle, eps: float) -> np.ndarray:
    """Gradients of ``P_j^beta + eps chi_j^beta(x/eps)`` with the same difference operator as ``u``.

    Shape ``[beta, j, gamma, k, ...]``.
    """
    grid = u.grid
    chi = sample_corrector(bundle, grid, eps)                     # [beta, j, gamma, ...]
    m, d = bundle.m, grid.d
    coords = grid.coords()
    phi = eps * chi.copy()
    for beta in range(m):
        for j in range(d):
            phi[beta, j, beta] += coords[j]
    grads = [np.gradient(phi, grid.h, axis=3 + a, edge_order=2) for a in range(d)]
    return np.stack(grads, axis=3)


def excess_at(u: DomainSolution, basis: np.ndarray, region) -> float:
    """``min_E (avg_region |grad u - E . basis|^2)^{1/2}`` by weighted least squares."""
    grid = u.grid
    mask = region.mask(grid)
    if not mask.any():
        raise RegionNotNested(f"{region} contains no nodes")
    w = (_weights(grid) * mask)[mask]
    w = w / w.sum()
    g = u.gradient()[(slice(None), slice(None), mask)]            # [gamma, k, p]
    B = basis[(slice(None), slice(None), slice(None), slice(None), mask)]  # [beta, j, gamma, k, p]
    nb = B.shape[0] * B.shape[1]
    design = B.reshape(nb, -1).T                                  # rows: (gamma, k, p)
    target = g.reshape(-1)
    sw = np.sqrt(np.broadcast_to(w, g.shape).reshape(-1))
    coef, *_ = np.linalg.lstsq(design * sw[:, None], target * sw, rcond=None)
    resid = (target - design @ coef) * sw
    return float(math.sqrt(max(float(resid @ resid), 0.0)))


def excess_decay(u: DomainSolution, bundle: CorrectorBundle, eps: float, center,
                 r_list: Sequence[float], jitter: float = 0.1) -> ExcessReport:
    """Excess over dyadic balls together with the fitted decay exponent."""
    radii = sorted(float(r) for r in r_list)
    if eps > radii[0] * (1 + 1e-12):
        raise ValueError("eps must not exceed the smallest radius")
    grid = u.grid
    c = np.broadcast_to(np.asarray(center, dtype=float), (grid.d,))
    lo, hi = np.asarray(grid.origin), np.asarray(grid.origin) + grid.length
    if np.any(c - radii[-1] < lo) or np.any(c + radii[-1] > hi):
        raise RegionNotNested("largest ball leaves the domain")
    basis = corrector_affine_gradients(u, bundle, eps)
    excess = [excess_at(u, basis, Ball(tuple(c), r)) for r in radii]
    scale = norms_on_region(u, Ball(tuple(c), radii[-1]), "avg_grad")
    normalized = [e / scale if scale > 0 else 0.0 for e in excess]
    monotone = all(excess[i] <= (1 + jitter) * excess[i + 1] for i in range(len(radii) - 1))
    if all(e > 0 for e in excess) and len(radii) >= 2:
        alpha = float(np.polyfit(np.log(radii), np.log(excess), 1)[0])
    else:
        alpha = float("inf")
    return ExcessReport(tuple(radii), tuple(excess), tuple(normalized), alpha, monotone, jitter)


# ---------------------------------------------------------------- Lipschitz monitor

@dataclass(frozen=True)
class LipschitzRow:
    eps: float
    rule: str
    kappa: float
    N: int
    Q: float
    Q_pt: float


def dyadic_radii(eps: float, R: float) -> list[float]:
    radii, r = [], R / 2
    while r >= eps * (1 - 1e-12):
        radii.append(r)
        r /= 2
    return radii


def lipschitz_quotients(u: DomainSolution, F, eps: float, center, R: float, p: float = 4.0):
    grid = u.grid
    c = tuple(np.broadcast_to(np.asarray(center, dtype=float), (grid.d,)).tolist())
    radii = dyadic_radii(eps, R)
    if not radii:
        raise ValueError("no dyadic radius between eps and R/2")
    big = Ball(c, R)
    Fv = sample_source(F, grid, u.m, closed=True)
    denom = norms_on_region(u, big, "avg_grad") + R * region_norm(Fv, grid, big, "avg_Lp", p)
    q = max(norms_on_region(u, Ball(c, r), "avg_grad") for r in radii) / denom
    q_pt = norms_on_region(u, Ball(c, R / 8), "Linf_grad") / denom
    return q, q_pt


def lipschitz_monitor(A: CoefficientField, eps_list: Sequence[float],
                      kappa_rules: Sequence[str] = ("eps2", "eps", "sqrt"), F=None,
                      ratio: float = 4.0, center=0.5, R: float = 0.25, p: float = 4.0,
                      grid: DomainGrid | None = None, workers: int = 1) -> list[LipschitzRow]:
    F = bump(A.d) if F is None else F
    jobs = [(float(e), rule) for e in eps_list for rule in kappa_rules]

    def run(job):
        eps, rule = job
        kappa = KAPPA_RULES[rule](eps)
        g = grid or DomainGrid.for_scales(A.d, eps, kappa, ratio)
        u = solve_perturbed(A, eps, kappa, F, None, g, ratio=ratio)
        q, q_pt = lipschitz_quotients(u, F, eps, center, R, p)
        return LipschitzRow(eps, rule, kappa, g.N, q, q_pt)

    return _map(run, jobs, workers)


# ---------------------------------------------------------------- output

def format_number(x) -> str:
    """Shortest round-trip text for floats; integers and strings unchanged."""
    if isinstance(x, bool) or x is None:
        return str(x)
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return repr(x)
    return str(x)


def csv_text(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_number(v) for v in row])
    return buf.getvalue()


def write_csv(path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(csv_text(header, rows))


def dat_text(header, rows) -> str:
    lines = ["# " + " ".join(header)]
    lines += [" ".join(format_number(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def write_dat(path, header, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dat_text(header, rows))


def _jsonable(obj):
    if isinstance(obj, float) and (math.isinf(obj) or math.isnan(obj)):
        return str(obj)
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def json_text(payload) -> str:
    return json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n"


def write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json_text(payload))


def output_name(experiment: str, coeff: str, key: str, value) -> str:
    """``<experiment>_<coeff>_<key><value>`` with filesystem-safe characters; ``1.0`` prints as ``1``."""
    safe = "".join(ch if ch.isalnum() or ch in "._-" else "_" for ch in coeff).strip("_")
    if isinstance(value, float) and value.is_integer():
        value = int(value)
    return f"{experiment}_{safe}_{key}{format_number(value)}"
