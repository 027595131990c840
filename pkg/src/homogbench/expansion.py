"""Two-scale expansion on bounded domains: cutoff, smoothing, w and first-order error."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bvp import (
    Ball,
    BoundaryData,
    DomainGrid,
    DomainSolution,
    Traces,
    region_norm,
    sample_source,
    solve_intermediate,
)
from .cell import CorrectorBundle
from .errors import EpsilonOutOfRange, RegionNotNested, ShapeMismatch, TooThick
from .torus import smooth_array, trig_sample

GRADIENT_BOUND = 8.0


def smoothstep(s):
    """Quintic ramp: 0 below 3, 1 above 4, C^2 in between."""
    z = np.clip(np.asarray(s, dtype=float) - 3.0, 0.0, 1.0)
    return z ** 3 * (10.0 - 15.0 * z + 6.0 * z * z)


@dataclass(frozen=True)
class CutoffField:
    grid: DomainGrid
    t: float
    values: np.ndarray

    def gradient_bound(self) -> float:
        """``t * max |grad eta|`` over the grid."""
        g = np.gradient(self.values, self.grid.h) if self.grid.d > 1 else [np.gradient(self.values, self.grid.h)]
        mag = np.sqrt(sum(x ** 2 for x in g))
        return float(mag.max() * self.t)


def cutoff(grid: DomainGrid, t: float) -> CutoffField:
    """``eta_t = psi(dist(x, boundary) / t)``; zero within 3t of the boundary, one beyond 4t."""
    if t <= 0:
        raise ValueError("t must be positive")
    if 4.0 * t > grid.inradius * (1 + 1e-12):
        raise TooThick(f"4t = {4 * t:g} exceeds the inradius {grid.inradius:g}")
    values = smoothstep(grid.distance_to_boundary() / t)
    values.setflags(write=False)
    return CutoffField(grid, float(t), values)


def smooth_on_domain(values: np.ndarray, grid: DomainGrid, eps: float) -> np.ndarray:
    """``S_eps`` of closed-node data extended by zero outside the domain.

    The data are padded into a periodic box at least twice the domain width
    (a power of two), so the convolution never wraps around.
    """
    if not 0.0 < eps < 1.0:
        raise EpsilonOutOfRange(f"eps must lie in (0, 1), got {eps}")
    d = grid.d
    n_closed = grid.N + 2
    reach = int(math.ceil(0.5 * eps / grid.h)) + 1
    size = 1 << int(math.ceil(math.log2(n_closed + 2 * reach)))
    lead = values.shape[: values.ndim - d]
    box = np.zeros(lead + (size,) * d)
    box[(Ellipsis,) + (slice(0, n_closed),) * d] = values
    out = smooth_array(box, d, grid.h, eps)
    return out[(Ellipsis,) + (slice(0, n_closed),) * d]


def sample_corrector(bundle: CorrectorBundle, grid: DomainGrid, eps: float, gradient: bool = False):
    """``chi(x/eps)`` (or ``grad_y chi(x/eps)``) at the closed nodes of ``grid``."""
    data = bundle.gradient() if gradient else bundle.chi
    axes = [grid.axis(a) / eps for a in range(grid.d)]
    return trig_sample(data, grid.d, axes)


def _boundary_values(G, grid, m):
    if G is None:
        return np.zeros((m,) + (grid.N + 2,) * grid.d)
    if isinstance(G, BoundaryData):
        G = G.value
    return sample_source(G, grid, m, closed=True)


@dataclass(frozen=True)
class ExpansionParts:
    eta: CutoffField
    corrector_term: np.ndarray      # eps chi(x/eps) eta S_eps(grad u0)
    layer_term: np.ndarray          # (u0 - G)(1 - eta)


def expansion_parts(u0: DomainSolution, bundle: CorrectorBundle, eps: float, lam: float,
                    G=None) -> ExpansionParts:
    grid = u0.grid
    eta = cutoff(grid, (1.0 + lam) * eps)
    grad0 = u0.gradient()                                        # [beta, j, ...]
    smoothed = smooth_on_domain(grad0, grid, eps)
    chi = sample_corrector(bundle, grid, eps)                    # [beta, j, gamma, ...]
    corr = eps * eta.values * np.einsum("bjg...,bj...->g...", chi, smoothed)
    layer = (u0.values - _boundary_values(G, grid, u0.m)) * (1.0 - eta.values)
    return ExpansionParts(eta, corr, layer)


def two_scale_w(u_eps: DomainSolution, u0: DomainSolution, bundle: CorrectorBundle,
                eps: float, lam: float, G=None) -> DomainSolution:
    """``w = u_eps - u0 + (u0 - G)(1 - eta_t) - eps chi(x/eps) eta_t S_eps(grad u0)``, ``t = (1+lam) eps``."""
    if u_eps.grid != u0.grid or u_eps.values.shape != u0.values.shape:
        raise ShapeMismatch("u_eps and u0 must share a grid")
    if bundle.m != u0.m or bundle.d != u0.grid.d:
        raise ShapeMismatch("corrector bundle does not match the solutions")
    parts = expansion_parts(u0, bundle, eps, lam, G)
    w = u_eps.values - u0.values + parts.layer_term - parts.corrector_term
    return u_eps.with_values(w, kind="two_scale_w", t=(1.0 + lam) * eps)


# ---------------------------------------------------------------- first-order error

def _center(grid, center):
    return np.broadcast_to(np.asarray(center, dtype=float), (grid.d,))


def intermediate_on_ball(u_eps: DomainSolution, Ahat, eps: float, lam: float, F,
                         center, r: float, tol: float = 1e-8) -> DomainSolution:
    """Solve the intermediate problem on the concentric square of half-width ``3r/2``
    with boundary and ghost traces copied from ``u_eps``."""
    grid = u_eps.grid
    c = _center(grid, center)
    h = grid.h
    lo = (c - 1.5 * r - np.asarray(grid.origin)) / h
    hi = (c + 1.5 * r - np.asarray(grid.origin)) / h
    start = int(math.floor(lo.min() + 1e-9))
    stop = int(math.ceil(hi.max() - 1e-9))
    if not np.allclose(lo, lo[0]) or not np.allclose(hi, hi[0]):
        raise RegionNotNested("the ball must be centred on the grid diagonal")
    count = stop - start - 1
    if start < 1 or stop > grid.N:
        raise RegionNotNested("the enclosing square does not fit inside the domain")
    sub = grid.subgrid(start, count)
    return solve_intermediate(Ahat, eps, lam, F, Traces(u_eps), sub, tol)


def _restrict(u: DomainSolution, values: np.ndarray, sub: DomainGrid) -> np.ndarray:
    off = [int(round((so - po) / u.grid.h)) for so, po in zip(sub.origin, u.grid.origin)]
    sl = tuple(slice(o, o + sub.N + 2) for o in off)
    return values[(Ellipsis,) + sl]


def first_order_error(u_eps: DomainSolution, v_int: DomainSolution, bundle: CorrectorBundle,
                      eps: float, center, r: float) -> float:
    """``(avg_{B_r} |grad u - grad v - grad chi(x/eps) grad v|^2)^{1/2}``."""
    sub = v_int.grid
    c = _center(sub, center)
    half = 0.5 * sub.length
    sub_center = np.asarray(sub.origin) + half
    if np.any(np.abs(c - sub_center) + r > half + 1e-12):
        raise RegionNotNested("B_r is not contained in the intermediate domain")
    grad_u = _restrict(u_eps, u_eps.gradient(), sub)             # [gamma, k, ...]
    grad_v = v_int.gradient()                                     # [beta, j, ...]
    gchi = sample_corrector(bundle, sub, eps, gradient=True)      # [beta, j, gamma, k, ...]
    corr = np.einsum("bjgk...,bj...->gk...", gchi, grad_v)
    return region_norm(grad_u - grad_v - corr, sub, Ball(tuple(c), r), "avg_Lp", 2.0)


def rhs_bracket(u_eps: DomainSolution, F, center, r: float, p: float = 4.0) -> float:
    """``(avg_{B_2r} |grad u|^2)^{1/2} + r (avg_{B_2r} |F|^p)^{1/p}``."""
    grid = u_eps.grid
    c = _center(grid, center)
    if np.any(c - 2 * r < np.asarray(grid.origin) - 1e-12) or np.any(
            c + 2 * r > np.asarray(grid.origin) + grid.length + 1e-12):
        raise RegionNotNested("B_2r leaves the domain")
    ball = Ball(tuple(c), 2 * r)
    grad_part = region_norm(u_eps.gradient(), grid, ball, "avg_Lp", 2.0)
    Fv = sample_source(F, grid, u_eps.m, closed=True)
    return grad_part + r * region_norm(Fv, grid, ball, "avg_Lp", p)
