"""Finite-difference boundary-value solvers on intervals and squares.

The unknowns are the interior nodes of a uniform grid.  Each operator is
stored on an extended grid that carries the boundary nodes plus one ghost
layer; boundary data are eliminated through ``u_ext = E u + g``:

* ``clamped``: boundary values from G, ghosts from the centred normal
  derivative ``(u_1 - u_{-1}) / 2h = d_n G``;
* ``given``: boundary and ghost values copied from another solution;
* ``dirichlet``: boundary values only (second-order problems).
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .coefficients import CoefficientField
from .errors import EmptyRegion, GridTooCoarse, NoConvergence, ShapeMismatch, SingularSystem
from .kernels import StencilCoefficients, apply_operator
from .torus import PeriodicField, dump_pfgrid

DEFAULT_RATIO = 4.0


# ---------------------------------------------------------------- grids

@dataclass(frozen=True)
class DomainGrid:
    """``N`` interior nodes per axis on ``origin + [0, length]^d``."""

    d: int
    N: int
    origin: tuple = None
    length: float = 1.0

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ValueError("d must be 1 or 2")
        if self.N < 8:
            raise ValueError(f"need at least 8 interior nodes, got {self.N}")
        origin = (0.0,) * self.d if self.origin is None else tuple(float(o) for o in self.origin)
        if len(origin) != self.d:
            raise ValueError("origin has the wrong dimension")
        object.__setattr__(self, "origin", origin)

    @property
    def h(self) -> float:
        return self.length / (self.N + 1)

    @classmethod
    def for_scales(cls, d: int, eps: float, kappa: float, ratio: float = DEFAULT_RATIO) -> "DomainGrid":
        """Smallest ``N = 2^k - 1`` with ``h <= min(eps, kappa) / ratio``."""
        target = min(eps, kappa) / ratio
        k = max(4, math.ceil(math.log2(1.0 / target) - 1e-12))
        return cls(d, 2 ** k - 1)

    def axis(self, ax: int, closed: bool = True) -> np.ndarray:
        idx = np.arange(self.N + 2) if closed else np.arange(1, self.N + 1)
        return self.origin[ax] + idx * self.h

    def coords(self, closed: bool = True) -> list[np.ndarray]:
        return np.meshgrid(*[self.axis(a, closed) for a in range(self.d)], indexing="ij")

    def distance_to_boundary(self) -> np.ndarray:
        dist = None
        for a, x in enumerate(self.coords()):
            lo = x - self.origin[a]
            dd = np.minimum(lo, self.length - lo)
            dist = dd if dist is None else np.minimum(dist, dd)
        return np.maximum(dist, 0.0)

    @property
    def inradius(self) -> float:
        return 0.5 * self.length

    def subgrid(self, start: int, count: int) -> "DomainGrid":
        """Square whose boundary sits on closed node ``start`` and ``start + count + 1``."""
        if start < 1 or start + count + 1 > self.N:
            raise ValueError("subgrid must keep a ghost layer inside the parent")
        origin = tuple(o + start * self.h for o in self.origin)
        return DomainGrid(self.d, count, origin, (count + 1) * self.h)

    def to_json(self) -> dict:
        return {"d": self.d, "N": self.N, "origin": list(self.origin), "length": self.length}


# ---------------------------------------------------------------- data

Source = Callable[..., np.ndarray]


@dataclass(frozen=True)
class BoundaryData:
    """Analytic boundary data ``G`` and its gradient (both optional callables)."""

    value: Optional[Source] = None
    gradient: Optional[Source] = None
    name: str = "G"


ZERO = BoundaryData(name="0")


@dataclass(frozen=True)
class Traces:
    """Boundary and ghost values copied from ``parent`` on an aligned subgrid."""

    parent: "DomainSolution"


def _as_components(values, m: int, shape: tuple) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if v.shape == shape and m == 1:
        v = v[None]
    return np.broadcast_to(v, (m,) + shape).copy()


def sample_source(F, grid: DomainGrid, m: int = 1, closed: bool = False) -> np.ndarray:
    """Sample a source (callable, scalar or array) on interior (or closed) nodes."""
    pts = grid.coords(closed)
    shape = pts[0].shape
    if F is None:
        return np.zeros((m,) + shape)
    if callable(F):
        return _as_components(F(*pts), m, shape)
    v = np.asarray(F, dtype=float)
    if v.ndim == 0:
        return np.full((m,) + shape, float(v))
    return _as_components(v, m, shape)


def bump(d: int, center=0.45, radius=0.25, amplitude=1.0) -> Source:
    """Smooth compactly supported bump ``exp(-1/(1-s^2))`` with ``s = |x-c|/r``."""
    c = np.broadcast_to(np.asarray(center, dtype=float), (d,))

    def F(*x):
        s2 = sum(((xi - ci) / radius) ** 2 for xi, ci in zip(x, c))
        out = np.zeros_like(s2)
        inside = s2 < 1.0
        out[inside] = amplitude * np.exp(-1.0 / (1.0 - s2[inside]))
        return out

    F.__name__ = f"bump{d}d"
    return F


# ---------------------------------------------------------------- solutions

@dataclass(frozen=True)
class DomainSolution:
    """Closed-node values ``(m, N+2, ...)`` of a boundary-value solve."""

    grid: DomainGrid
    values: np.ndarray
    bc: str
    descriptor: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def interior(self) -> np.ndarray:
        return self.values[(slice(None),) + (slice(1, -1),) * self.grid.d]

    def gradient(self) -> np.ndarray:
        """``(m, d, ...)`` centred differences, one-sided of second order at the boundary."""
        g = [np.gradient(self.values, self.grid.h, axis=1 + a, edge_order=2)
             for a in range(self.grid.d)]
        return np.stack(g, axis=1)

    def with_values(self, values, **descriptor) -> "DomainSolution":
        values = np.asarray(values, dtype=float)
        if values.shape != self.values.shape:
            raise ShapeMismatch(f"{values.shape} vs {self.values.shape}")
        return DomainSolution(self.grid, values, self.bc, {**self.descriptor, **descriptor}, {})

    def __sub__(self, other: "DomainSolution") -> "DomainSolution":
        if other.grid != self.grid:
            raise ShapeMismatch("solutions live on different grids")
        return self.with_values(self.values - other.values, kind="difference")

    def dump(self, path) -> None:
        path = Path(path)
        with open(path, "wb") as fh:
            dump_pfgrid(PeriodicField(self.values, self.grid.d), fh)
        side = {"grid": self.grid.to_json(), "bc": self.bc, "m": self.m,
                "descriptor": self.descriptor, "diagnostics": self.diagnostics}
        path.with_name(path.name + ".json").write_text(
            json.dumps(side, indent=2, sort_keys=True, default=str))


# ---------------------------------------------------------------- coefficients

TensorFn = Callable[[Sequence[np.ndarray]], np.ndarray]


def _tensor_sampler(A, eps: float | None) -> tuple[TensorFn, int]:
    """Return ``points -> (m, d, m, d, ...)`` for an oscillating field or a constant tensor."""
    if isinstance(A, CoefficientField):
        scale = 1.0 if eps is None else 1.0 / eps
        return (lambda pts: A.at([p * scale for p in pts])), A.m
    values = np.asarray(getattr(A, "values", A), dtype=float)
    if values.ndim == 0:
        values = values.reshape(1, 1, 1, 1)

    def const(pts):
        return np.broadcast_to(values.reshape(values.shape + (1,) * pts[0].ndim),
                               values.shape + pts[0].shape)

    return const, values.shape[0]


def stencil_coefficients(grid: DomainGrid, tensor: TensorFn) -> StencilCoefficients:
    h, N = grid.h, grid.N
    half = [grid.origin[a] + (np.arange(N + 1) + 0.5) * h for a in range(grid.d)]
    inner = [grid.axis(a, closed=False) for a in range(grid.d)]
    closed = [grid.axis(a, closed=True) for a in range(grid.d)]
    if grid.d == 1:
        T = tensor([half[0]])
        return StencilCoefficients(np.array(T[:, 0, :, 0]))

    def at(xs, ys):
        return tensor(np.meshgrid(xs, ys, indexing="ij"))

    ax = at(half[0], inner[1])[:, 0, :, 0]
    ay = at(inner[0], half[1])[:, 1, :, 1]
    axy = at(closed[0], inner[1])[:, 0, :, 1]
    ayx = at(inner[0], closed[1])[:, 1, :, 0]
    return StencilCoefficients(*(np.array(x) for x in (ax, ay, axy, ayx)))


# ---------------------------------------------------------------- assembly

def _band(rows, cols, offsets, weights, scale):
    return sp.diags([np.full(rows, w * scale) for w in weights], offsets,
                    shape=(rows, cols), format="csr")


class _Ops1D:
    def __init__(self, N: int, h: float):
        M = N + 4
        self.N, self.M = N, M
        self.d2_cl = _band(N + 2, M, [0, 1, 2], [1, -2, 1], 1 / h ** 2)
        self.d2_ic = _band(N, N + 2, [0, 1, 2], [1, -2, 1], 1 / h ** 2)
        self.s_int = _band(N, M, [2], [1], 1.0)
        self.s_cl = _band(N + 2, M, [1], [1], 1.0)
        self.s_ic = _band(N, N + 2, [1], [1], 1.0)
        self.fwd = _band(N + 1, M, [1, 2], [-1, 1], 1 / h)
        self.div = _band(N, N + 1, [0, 1], [-1, 1], 1 / h)
        self.cen_int = _band(N, M, [1, 3], [-1, 1], 0.5 / h)
        self.cen_ic = _band(N, N + 2, [0, 2], [-1, 1], 0.5 / h)
        self.eye = sp.identity(N, format="csr")


def _assemble_ext(grid: DomainGrid, kappa2: float, co: StencilCoefficients) -> sp.csr_matrix:
    """Operator from extended-grid values to interior equations, all blocks."""
    o = _Ops1D(grid.N, grid.h)
    m = co.m
    if grid.d == 1:
        bih = o.d2_ic @ o.d2_cl
        blocks = [[None] * m for _ in range(m)]
        for a in range(m):
            for b in range(m):
                blk = -(o.div @ sp.diags(co.ax[a, b]) @ o.fwd)
                if a == b and kappa2:
                    blk = blk + kappa2 * bih
                blocks[a][b] = blk
        return sp.bmat(blocks, format="csr")
    kron = sp.kron
    lap_cl = kron(o.d2_cl, o.s_cl) + kron(o.s_cl, o.d2_cl)
    lap_ic = kron(o.d2_ic, o.s_ic) + kron(o.s_ic, o.d2_ic)
    bih = (lap_ic @ lap_cl).tocsr()
    div_x, grad_x = kron(o.div, o.eye), kron(o.fwd, o.s_int)
    div_y, grad_y = kron(o.eye, o.div), kron(o.s_int, o.fwd)
    cx_out, cy_in = kron(o.cen_ic, o.eye), kron(o.s_cl, o.cen_int)
    cy_out, cx_in = kron(o.eye, o.cen_ic), kron(o.cen_int, o.s_cl)
    blocks = [[None] * m for _ in range(m)]
    for a in range(m):
        for b in range(m):
            blk = -(div_x @ sp.diags(co.ax[a, b].ravel()) @ grad_x
                    + div_y @ sp.diags(co.ay[a, b].ravel()) @ grad_y
                    + cx_out @ sp.diags(co.axy[a, b].ravel()) @ cy_in
                    + cy_out @ sp.diags(co.ayx[a, b].ravel()) @ cx_in)
            if a == b and kappa2:
                blk = blk + kappa2 * bih
            blocks[a][b] = blk
    return sp.bmat(blocks, format="csr")


def _extension(grid: DomainGrid, m: int, reflect: bool) -> sp.csr_matrix:
    N, M = grid.N, grid.N + 4
    p = sp.csr_matrix((np.ones(N), (np.arange(2, N + 2), np.arange(N))), shape=(M, N))
    if reflect:
        r = sp.csr_matrix(([1.0, 1.0], ([0, N + 3], [0, N - 1])), shape=(M, N))
    else:
        r = sp.csr_matrix((M, N))
    if grid.d == 1:
        e = p + r
    else:
        e = sp.kron(p, p) + sp.kron(r, p) + sp.kron(p, r)
    return sp.block_diag([e] * m, format="csr")


def _ext_slices(d):
    return (slice(None),) + (slice(2, -2),) * d


def _lift(grid: DomainGrid, m: int, bc: str, boundary) -> np.ndarray:
    """Extended-grid vector ``g`` carrying boundary and ghost data, zero inside."""
    N, h, d = grid.N, grid.h, grid.d
    M = N + 4
    g = np.zeros((m,) + (M,) * d)
    if isinstance(boundary, Traces):
        par = boundary.parent
        pg = par.grid
        if not math.isclose(pg.h, h, rel_tol=1e-12):
            raise ShapeMismatch("trace parent has a different spacing")
        off = [(o - po) / h for o, po in zip(grid.origin, pg.origin)]
        if any(abs(x - round(x)) > 1e-8 for x in off):
            raise ShapeMismatch("subgrid is not aligned with the trace parent")
        start = [int(round(x)) - 1 for x in off]  # closed index of the ghost layer
        if min(start) < 0 or max(start) + M > pg.N + 2:
            raise ShapeMismatch("trace parent does not cover the ghost layer")
        sl = tuple(slice(s, s + M) for s in start)
        g[...] = par.values[(slice(None),) + sl]
        g[_ext_slices(d)] = 0.0
        return g
    G = boundary if boundary is not None else ZERO
    closed = grid.coords(True)
    if G.value is not None:
        vals = _as_components(G.value(*closed), m, closed[0].shape)
        cl = (slice(None),) + (slice(1, -1),) * d
        g[cl] = vals
        g[_ext_slices(d)] = 0.0
    if bc == "clamped" and G.gradient is not None:
        x0 = [grid.axis(a, closed=False) for a in range(d)]
        for a in range(d):
            for side, pos, sign in ((0, grid.origin[a], -1.0), (1, grid.origin[a] + grid.length, 1.0)):
                pts = list(x0)
                pts[a] = np.array([pos])
                mesh = np.meshgrid(*pts, indexing="ij")
                dg = np.asarray(G.gradient(*mesh), dtype=float)
                dg = np.broadcast_to(dg if dg.ndim == d + 2 else dg[None],
                                     (m, d) + mesh[0].shape)[:, a]
                ghost = [slice(2, -2)] * d
                ghost[a] = slice(0, 1) if side == 0 else slice(M - 1, M)
                g[(slice(None),) + tuple(ghost)] = sign * 2.0 * h * dg
    return g


# ---------------------------------------------------------------- solving

@dataclass
class _System:
    grid: DomainGrid
    m: int
    kappa2: float
    coeffs: StencilCoefficients
    bc: str
    reflect: bool
    lift: np.ndarray
    L: sp.csr_matrix = None
    E: sp.csr_matrix = None

    def assemble(self):
        self.L = _assemble_ext(self.grid, self.kappa2, self.coeffs)
        self.E = _extension(self.grid, self.m, self.reflect)
        return (self.L @ self.E).tocsc()

    def extend(self, u_int: np.ndarray) -> np.ndarray:
        """Matrix-free ``E u + g`` with ``u_int`` shaped ``(m, N, ...)``."""
        d, N = self.grid.d, self.grid.N
        ext = self.lift.copy()
        ext[_ext_slices(d)] += u_int
        if self.reflect:
            for a in range(d):
                for ghost, src in ((0, 0), (N + 3, N - 1)):
                    sl = [slice(None)] + [slice(2, -2)] * d
                    sl[1 + a] = slice(ghost, ghost + 1)
                    ext[tuple(sl)] += np.take(u_int, [src], axis=1 + a)
        return ext

    def apply(self, u_int: np.ndarray) -> np.ndarray:
        return apply_operator(self.extend(u_int), self.kappa2, self.coeffs, self.grid.h)


def _solve(system: _System, F: np.ndarray, tol: float, solver: str, descriptor: dict) -> DomainSolution:
    grid, m, d = system.grid, system.m, system.grid.d
    t0 = time.perf_counter()
    K = system.assemble()
    n_int = grid.N ** d
    rhs = F.reshape(m * n_int) - system.L @ system.lift.reshape(-1)
    diagnostics = {"solver": solver, "unknowns": m * n_int, "nnz": int(K.nnz)}
    if not np.any(rhs):
        u = np.zeros(m * n_int)
        diagnostics["iterations"] = 0
    elif solver == "direct":
        if d == 1 and m == 1:
            ab = np.zeros((3, grid.N))
            for k in range(3):
                ab[2 - k, k:] = K.diagonal(k)
            u = sla.solveh_banded(ab, rhs, lower=False, check_finite=False)
        else:
            u = spla.splu(K, permc_spec="MMD_AT_PLUS_A").solve(rhs)
        diagnostics["iterations"] = 1
    elif solver == "cg":
        shape = (m,) + (grid.N,) * d
        op = spla.LinearOperator(K.shape, dtype=float,
                                 matvec=lambda v: (system.apply(v.reshape(shape))
                                                   - system.apply(np.zeros(shape))).reshape(-1))
        jac = 1.0 / K.diagonal()
        pre = spla.LinearOperator(K.shape, dtype=float, matvec=lambda v: jac * v)
        count = [0]

        def tick(_):
            count[0] += 1

        u, info = spla.cg(op, rhs, rtol=tol, maxiter=50 * m * n_int, M=pre, callback=tick)
        diagnostics["iterations"] = count[0]
        if info != 0:
            raise NoConvergence("finite-difference CG did not converge", count[0], float("nan"))
    else:
        raise ValueError(f"unknown solver {solver!r}")

    shape = (m,) + (grid.N,) * d
    u_int = u.reshape(shape)
    r = F - system.apply(u_int)
    ref = float(np.linalg.norm(rhs))
    res = float(np.linalg.norm(r))
    # Normwise backward error; the plain ratio grows like cond(K) * machine eps.
    knorm = float(abs(K).sum(axis=1).max())
    scale = knorm * float(np.linalg.norm(u)) + ref
    diagnostics["relative_residual"] = res / ref if ref > 0 else res
    diagnostics["residual"] = res / scale if scale > 0 else res
    diagnostics["seconds"] = time.perf_counter() - t0
    if diagnostics["residual"] > max(tol, 1e-14):
        raise NoConvergence(f"residual {diagnostics['residual']:.3e} above {tol:.1e}",
                            diagnostics.get("iterations", 0), diagnostics["residual"])
    ext = system.extend(u_int)
    values = ext[(slice(None),) + (slice(1, -1),) * d].copy()
    values.setflags(write=False)
    return DomainSolution(grid, values, system.bc, descriptor, diagnostics)


def solve_operator(grid: DomainGrid, tensor: TensorFn, m: int, kappa: float, F, boundary,
                   tol: float, solver: str, descriptor: dict) -> DomainSolution:
    """Shared driver for ``kappa^2 Delta^2 u - div(T grad u) = F``."""
    coeffs = stencil_coefficients(grid, tensor)
    if kappa == 0:
        kind = "dirichlet"
    else:
        kind = "given" if isinstance(boundary, Traces) else "clamped"
    lift = _lift(grid, m, kind, boundary)
    system = _System(grid, m, float(kappa) ** 2, coeffs, kind, kind == "clamped", lift)
    Fv = sample_source(F, grid, m)
    return _solve(system, Fv, tol, solver, descriptor)


def _describe(**kw):
    out = {}
    for k, v in kw.items():
        if callable(v):
            v = getattr(v, "__name__", "callable")
        elif isinstance(v, BoundaryData):
            v = v.name
        elif isinstance(v, Traces):
            v = "traces"
        out[k] = v
    return out


def solve_perturbed(A: CoefficientField, eps: float, kappa: float, F, G=None,
                    grid: DomainGrid | None = None, tol: float = 1e-8,
                    ratio: float = DEFAULT_RATIO, solver: str = "direct") -> DomainSolution:
    """Clamped solve of ``kappa^2 Delta^2 u - div(A(x/eps) grad u) = F``."""
    if kappa <= 0 or eps <= 0:
        raise ValueError("eps and kappa must be positive")
    if grid is None:
        grid = DomainGrid.for_scales(A.d, eps, kappa, ratio)
    if grid.h > min(eps, kappa) / ratio * (1 + 1e-12):
        raise GridTooCoarse(f"h = {grid.h:.3e} exceeds min(eps, kappa)/{ratio:g} = "
                            f"{min(eps, kappa) / ratio:.3e}")
    tensor, m = _tensor_sampler(A, eps)
    desc = _describe(problem="perturbed", eps=eps, kappa=kappa, coeff=A.name, F=F,
                     G=G if G is not None else ZERO)
    return solve_operator(grid, tensor, m, kappa, F, G, tol, solver, desc)


def solve_homogenized(Ahat, F, G=None, grid: DomainGrid | None = None, tol: float = 1e-8,
                      solver: str = "direct") -> DomainSolution:
    """Dirichlet solve of ``-div(Ahat grad u) = F`` with constant ``Ahat``."""
    if grid is None:
        raise ValueError("a grid is required")
    tensor, m = _tensor_sampler(Ahat, None)
    desc = _describe(problem="homogenized", tensor=getattr(Ahat, "provenance", "constant"),
                     F=F, G=G if G is not None else ZERO)
    return solve_operator(grid, tensor, m, 0.0, F, G, tol, solver, desc)


def solve_intermediate(Ahat, eps: float, lam: float, F, boundary=None,
                       grid: DomainGrid | None = None, tol: float = 1e-8,
                       ratio: float = DEFAULT_RATIO, solver: str = "direct") -> DomainSolution:
    """``(lam eps)^2 Delta^2 v - div(Ahat grad v) = F`` with clamped data or copied traces."""
    kappa = lam * eps
    if kappa <= 0:
        raise ValueError("lam * eps must be positive")
    if grid is None:
        raise ValueError("a grid is required")
    if grid.h > min(eps, kappa) / ratio * (1 + 1e-12):
        raise GridTooCoarse(f"h = {grid.h:.3e} too coarse for eps={eps}, kappa={kappa}")
    tensor, m = _tensor_sampler(Ahat, None)
    desc = _describe(problem="intermediate", eps=eps, lam=lam,
                     tensor=getattr(Ahat, "provenance", "constant"), F=F,
                     G=boundary if boundary is not None else ZERO)
    return solve_operator(grid, tensor, m, kappa, F, boundary, tol, solver, desc)


def assembled_operator(A, eps, kappa, grid: DomainGrid, bc: str = "clamped") -> sp.csc_matrix:
    """The eliminated interior matrix (for symmetry and positivity checks)."""
    tensor, m = _tensor_sampler(A, eps)
    coeffs = stencil_coefficients(grid, tensor)
    system = _System(grid, m, float(kappa) ** 2, coeffs, bc, bc == "clamped",
                     np.zeros((m,) + (grid.N + 4,) * grid.d))
    return system.assemble()


# ---------------------------------------------------------------- closed form

@dataclass(frozen=True)
class FriedmanSolution:
    """``lam^2 u'''' - u'' = 1`` on (0, 1) with ``u = u' = 0`` at both ends."""

    lam: float
    coeffs: tuple

    def u(self, x):
        x = np.asarray(x, dtype=float)
        c0, c1, c2, c3 = self.coeffs
        lam = self.lam
        return -0.5 * x ** 2 + c0 + c1 * x + c2 * np.exp(-x / lam) + c3 * np.exp(-(1 - x) / lam)

    def du(self, x):
        x = np.asarray(x, dtype=float)
        _, c1, c2, c3 = self.coeffs
        lam = self.lam
        return -x + c1 - c2 / lam * np.exp(-x / lam) + c3 / lam * np.exp(-(1 - x) / lam)

    @staticmethod
    def u0(x):
        x = np.asarray(x, dtype=float)
        return 0.5 * x * (1 - x)

    @staticmethod
    def du0(x):
        return 0.5 - np.asarray(x, dtype=float)


def solve_friedman_exact(lam: float) -> FriedmanSolution:
    if not 0.0 < lam <= 1.0:
        raise ValueError("lam must lie in (0, 1]")
    q = math.exp(-1.0 / lam)
    M = np.array([
        [1.0, 0.0, 1.0, q],
        [1.0, 1.0, q, 1.0],
        [0.0, 1.0, -1.0 / lam, q / lam],
        [0.0, 1.0, -q / lam, 1.0 / lam],
    ])
    rhs = np.array([0.0, 0.5, 0.0, 1.0])
    if not np.isfinite(np.linalg.cond(M)) or np.linalg.cond(M) > 1e14:
        raise SingularSystem(f"boundary system singular at lam={lam}")
    return FriedmanSolution(float(lam), tuple(np.linalg.solve(M, rhs).tolist()))


# ---------------------------------------------------------------- regions

@dataclass(frozen=True)
class Ball:
    center: tuple
    radius: float

    def mask(self, grid):
        c = np.broadcast_to(np.asarray(self.center, dtype=float), (grid.d,))
        r2 = sum((x - ci) ** 2 for x, ci in zip(grid.coords(), c))
        return r2 <= self.radius ** 2 * (1 + 1e-12)


@dataclass(frozen=True)
class Box:
    center: tuple
    half_width: float

    def mask(self, grid):
        c = np.broadcast_to(np.asarray(self.center, dtype=float), (grid.d,))
        ok = None
        for x, ci in zip(grid.coords(), c):
            inside = np.abs(x - ci) <= self.half_width * (1 + 1e-12)
            ok = inside if ok is None else ok & inside
        return ok


@dataclass(frozen=True)
class Layer:
    t: float

    def mask(self, grid):
        return grid.distance_to_boundary() < self.t


@dataclass(frozen=True)
class Whole:
    def mask(self, grid):
        return np.ones((grid.N + 2,) * grid.d, dtype=bool)


def _weights(grid: DomainGrid) -> np.ndarray:
    w1 = np.full(grid.N + 2, grid.h)
    w1[[0, -1]] *= 0.5
    w = w1
    for _ in range(grid.d - 1):
        w = np.multiply.outer(w, w1)
    return w


def region_norm(values, grid: DomainGrid, region, kind: str = "L2", p: float = 2.0) -> float:
    """Norm of closed-node data ``(c, ...)`` over the nodes of ``region``.

    Kinds: ``L2``, ``avg_Lp`` (region-averaged p-norm), ``Linf`` and ``mean``.
    Quadrature is the trapezoid weight of each node, restricted to the region.
    """
    values = np.asarray(values, dtype=float)
    mask = region.mask(grid)
    if not mask.any():
        raise EmptyRegion(f"{region} contains no grid nodes")
    w = _weights(grid) * mask
    mag2 = np.sum(values.reshape((-1,) + mask.shape) ** 2, axis=0)
    if kind == "L2":
        return math.sqrt(float(np.sum(w * mag2)))
    if kind == "avg_Lp":
        return float((np.sum(w * mag2 ** (p / 2)) / np.sum(w)) ** (1.0 / p))
    if kind == "Linf":
        return float(np.sqrt(mag2[mask].max()))
    if kind == "mean":
        flat = values.reshape((-1,) + mask.shape)
        means = np.sum(flat * w, axis=tuple(range(1, flat.ndim))) / np.sum(w)
        return float(means[0]) if means.size == 1 else float(np.linalg.norm(means))
    raise ValueError(f"unknown region norm {kind!r}")


def norms_on_region(u: DomainSolution, region=None, kind: str = "L2", p: float = 2.0) -> float:
    """``L2``, ``H1_seminorm``, ``Linf_grad``, ``mean``, ``avg_L2``, ``avg_grad`` or ``avg_Lp``."""
    region = Whole() if region is None else region
    if kind in ("L2", "mean", "Linf"):
        return region_norm(u.values, u.grid, region, kind)
    if kind == "avg_L2":
        return region_norm(u.values, u.grid, region, "avg_Lp", 2.0)
    if kind == "avg_Lp":
        return region_norm(u.values, u.grid, region, "avg_Lp", p)
    grad = u.gradient()
    if kind == "H1_seminorm":
        return region_norm(grad, u.grid, region, "L2")
    if kind == "Linf_grad":
        return region_norm(grad, u.grid, region, "Linf")
    if kind == "avg_grad":
        return region_norm(grad, u.grid, region, "avg_Lp", 2.0)
    raise ValueError(f"unknown norm kind {kind!r}")
