"""Periodic coefficient tensors on the unit cell.

A coefficient field stores the tensor ``a[alpha, i, beta, j]`` at every node
``y_g = g / n`` of the torus grid, so that the flux of a displacement ``u`` is
``sigma[alpha, i] = a[alpha, i, beta, j] * du[beta] / dy_j``.  Scalar problems
use ``m = 1``; elasticity problems use ``m = d``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from .errors import NonSymmetric, UnknownName

SYMMETRY_TOL = 1e-12

Formula = Callable[[Sequence[np.ndarray]], np.ndarray]


@dataclass(frozen=True, eq=False)
class CoefficientField:
    """Nodal samples of a 1-periodic tensor ``A(y)`` plus structural metadata."""

    values: np.ndarray
    nu1: float
    nu2: float
    name: str = "custom"
    elasticity: bool = False
    lipschitz: Optional[float] = None
    holder: Optional[tuple[float, float]] = None
    formula: Optional[Formula] = field(default=None, repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim < 5:
            raise ValueError("values must have shape (m, d, m, d, n, ...)")
        m, d = v.shape[0], v.shape[1]
        if v.shape[:4] != (m, d, m, d) or v.ndim != 4 + d:
            raise ValueError(f"inconsistent coefficient shape {v.shape}")
        if d not in (1, 2):
            raise ValueError("only d = 1 or d = 2 is supported")
        if len(set(v.shape[4:])) != 1:
            raise ValueError("grid must have the same resolution on every axis")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def n(self) -> int:
        return self.values.shape[-1]

    @property
    def is_constant(self) -> bool:
        flat = self.values.reshape(self.values.shape[:4] + (-1,))
        return bool(np.all(flat == flat[..., :1]))

    def mean(self) -> np.ndarray:
        return self.values.mean(axis=tuple(range(4, 4 + self.d)))

    def at(self, points: Sequence[np.ndarray]) -> np.ndarray:
        """Evaluate ``A`` at arbitrary points (periodically).

        ``points`` holds one coordinate array per axis; the arrays must
        broadcast against each other.  Builtins are evaluated from their
        closed-form expression, gridded fields by periodic multilinear
        interpolation.
        """
        pts = np.broadcast_arrays(*[np.asarray(p, dtype=float) for p in points])
        if len(pts) != self.d:
            raise ValueError(f"expected {self.d} coordinate arrays")
        if self.formula is not None:
            out = self.formula(pts)
            return np.broadcast_to(out, self.values.shape[:4] + pts[0].shape)
        return _interpolate_linear(self.values, pts)

    def with_resolution(self, n: int) -> "CoefficientField":
        if self.formula is None:
            raise ValueError("cannot resample a field without a formula")
        return _from_formula(self.formula, n, self.d, self.nu1, self.nu2, self.name,
                             self.elasticity, self.lipschitz, self.holder)


def _interpolate_linear(values, pts):
    n = values.shape[-1]
    d = len(pts)
    out = 0.0
    base = []
    frac = []
    for p in pts:
        s = np.mod(p, 1.0) * n
        i0 = np.floor(s).astype(int)
        base.append(i0 % n)
        frac.append(s - i0)
    for corner in range(2 ** d):
        weight = 1.0
        idx = []
        for ax in range(d):
            bit = (corner >> ax) & 1
            weight = weight * (frac[ax] if bit else 1.0 - frac[ax])
            idx.append((base[ax] + bit) % n)
        out = out + weight * values[(Ellipsis,) + tuple(idx)]
    return out


def cell_grid(n: int, d: int) -> list[np.ndarray]:
    """Node coordinates ``g / n`` of the torus grid, ``ij``-indexed."""
    y = np.arange(n) / n
    return list(np.meshgrid(*([y] * d), indexing="ij"))


def _from_formula(formula, n, d, nu1, nu2, name, elasticity, lipschitz, holder=None):
    if n < 1 or n & (n - 1):
        raise ValueError(f"grid resolution must be a power of two, got {n}")
    grid = cell_grid(n, d)
    values = np.array(formula(grid), dtype=float)
    if holder is None and lipschitz is not None:
        holder = (lipschitz * (math.sqrt(d) / 2) ** 0.5, 0.5)
    return CoefficientField(values, nu1, nu2, name=name, elasticity=elasticity,
                            lipschitz=lipschitz, holder=holder, formula=formula)


def scalar_tensor(a, d: int) -> np.ndarray:
    """``a(y) * delta_ij`` in the (1, d, 1, d, ...) layout."""
    a = np.asarray(a, dtype=float)
    eye = np.eye(d).reshape((1, d, 1, d) + (1,) * a.ndim)
    return eye * a[None, None, None, None]


def lame_tensor(mu, lam, d: int) -> np.ndarray:
    """Isotropic elasticity tensor with Lame parameters ``mu`` and ``lam``."""
    mu = np.asarray(mu, dtype=float)
    lam = np.asarray(lam, dtype=float)
    shape = np.broadcast_shapes(mu.shape, lam.shape)
    e = np.eye(d)
    # a[alpha, i, beta, j]
    t_lam = np.einsum("ai,bj->aibj", e, e)
    t_mu = np.einsum("ij,ab->aibj", e, e) + np.einsum("ib,ja->aibj", e, e)
    ext = (d, d, d, d) + (1,) * len(shape)
    return (t_lam.reshape(ext) * np.broadcast_to(lam, shape)
            + t_mu.reshape(ext) * np.broadcast_to(mu, shape))


def embed_scalar(A: CoefficientField) -> CoefficientField:
    """Embed a scalar field as the decoupled system ``a * delta_ij * delta^ab``."""
    if A.m != 1:
        raise ValueError("field is already a system")
    d = A.d
    a = A.values[0, 0, 0, 0]
    if not np.allclose(A.values[0, :, 0, :], np.eye(d).reshape((d, d) + (1,) * d) * a):
        raise ValueError("only isotropic scalar fields a * delta_ij can be embedded")
    e = np.eye(d)
    coupling = np.einsum("ij,ab->aibj", e, e).reshape((d,) * 4 + (1,) * d)
    base = A.formula
    e4 = np.einsum("ij,ab->aibj", e, e)

    def formula(pts):
        a_pts = base(pts)[0, 0, 0, 0]
        return e4.reshape(e4.shape + (1,) * a_pts.ndim) * a_pts

    formula = None if base is None else formula

    return CoefficientField(coupling * a[None, None, None, None], A.nu1, A.nu2,
                            name=f"{A.name}[system]", elasticity=False,
                            lipschitz=A.lipschitz, holder=A.holder, formula=formula)


# ---------------------------------------------------------------- builtins

def _a1(pts):
    (y,) = pts
    return scalar_tensor(2.0 + np.sin(2 * np.pi * y), 1)


def _a2(pts):
    y1, y2 = pts
    return scalar_tensor(2.0 + np.sin(2 * np.pi * y1) * np.sin(2 * np.pi * y2), 2)


def _a3_parts(y1, y2):
    mu = 2.0 + np.cos(2 * np.pi * y1) * np.cos(2 * np.pi * y2)
    lam = 1.0 + 0.5 * np.sin(2 * np.pi * y1) + 0.0 * y2
    return mu, lam


def _a3(pts):
    mu, lam = _a3_parts(*pts)
    return lame_tensor(mu, lam, 2)


def _const(c, d):
    def formula(pts):
        return scalar_tensor(np.full(pts[0].shape, float(c)), d)
    return formula


def _lame_const(mu, lam):
    def formula(pts):
        shape = pts[0].shape
        return lame_tensor(np.full(shape, float(mu)), np.full(shape, float(lam)), 2)
    return formula


def _checker(w):
    def formula(pts):
        y1, y2 = pts
        s1 = np.tanh(np.sin(2 * np.pi * y1) / w)
        s2 = np.tanh(np.sin(2 * np.pi * y2) / w)
        return scalar_tensor(2.0 + s1 * s2, 2)
    return formula


_SPEC_RE = re.compile(r"^\s*([A-Za-z][A-Za-z0-9_]*)\s*(?:\((.*)\))?\s*$")


def _parse_args(text):
    args, kwargs = [], {}
    if not text or not text.strip():
        return args, kwargs
    for token in text.split(","):
        token = token.strip()
        if "=" in token:
            key, val = token.split("=", 1)
            kwargs[key.strip()] = float(val)
        else:
            args.append(float(token))
    return args, kwargs


def builtin(name: str, n: int) -> CoefficientField:
    """Construct a named test coefficient at cell resolution ``n``.

    Accepted names: ``A1``, ``A2``, ``A3``, ``CONST(c)``, ``CONST(c, d)``,
    ``LAME(mu, lam)`` and ``CHECKER(w)``.
    """
    match = _SPEC_RE.match(name)
    if not match:
        raise UnknownName(name)
    key = match.group(1).upper()
    try:
        args, kwargs = _parse_args(match.group(2))
    except ValueError as exc:
        raise UnknownName(name) from exc
    if key == "A1" and not args:
        return _from_formula(_a1, n, 1, 1.0, 3.0, "A1", False, 2 * np.pi)
    if key == "A2" and not args:
        return _from_formula(_a2, n, 2, 1.0, 3.0, "A2", False, 2 * np.pi * math.sqrt(2))
    if key == "A3" and not args:
        # |d mu| <= 2 pi, |d lam| <= pi; Frobenius norms of the two unit tensors
        lip = 2 * np.pi * math.sqrt(12.0) + np.pi * 2.0
        return _from_formula(_a3, n, 2, 2.0, 6.0 + math.sqrt(5.0), "A3", True, lip)
    if key == "CONST":
        c = args[0] if args else kwargs.get("c", 1.0)
        d = int(args[1]) if len(args) > 1 else int(kwargs.get("d", 1))
        if c <= 0 or d not in (1, 2):
            raise UnknownName(name)
        return _from_formula(_const(c, d), n, d, c, c, f"CONST({c:g})", False, 0.0)
    if key == "LAME":
        mu = args[0] if args else kwargs.get("mu", 1.0)
        lam = args[1] if len(args) > 1 else kwargs.get("lam", 1.0)
        lo, hi = sorted((2 * mu, 2 * mu + 2 * lam))
        if lo <= 0:
            raise UnknownName(name)
        return _from_formula(_lame_const(mu, lam), n, 2, lo, hi,
                             f"LAME({mu:g},{lam:g})", True, 0.0)
    if key == "CHECKER":
        w = args[0] if args else kwargs.get("w", 0.1)
        if w <= 0:
            raise UnknownName(name)
        return _from_formula(_checker(w), n, 2, 1.0, 3.0, f"CHECKER({w:g})", False,
                             2 * np.pi * math.sqrt(2) / w)
    raise UnknownName(name)


BUILTIN_NAMES = ("A1", "A2", "A3", "CONST", "LAME", "CHECKER")


# ---------------------------------------------------------------- checks

@dataclass(frozen=True)
class SymmetryReport:
    major: float
    minor: Optional[float]
    tol: float = SYMMETRY_TOL

    @property
    def passed(self) -> bool:
        worst = self.major if self.minor is None else max(self.major, self.minor)
        return worst <= self.tol


def tensor_symmetry(values: np.ndarray, elasticity: bool, tol=SYMMETRY_TOL) -> SymmetryReport:
    """Symmetry deviations of a tensor array shaped ``(m, d, m, d, ...)``."""
    major = float(np.max(np.abs(values - values.transpose((2, 3, 0, 1) + tuple(range(4, values.ndim))))))
    minor = None
    if elasticity:
        minor = float(np.max(np.abs(values - values.transpose((1, 0, 2, 3) + tuple(range(4, values.ndim))))))
    return SymmetryReport(major, minor, tol)


def validate_symmetry(A: CoefficientField) -> SymmetryReport:
    return tensor_symmetry(A.values, A.elasticity)


def _form_basis(m: int, d: int, symmetric: bool) -> np.ndarray:
    """Orthonormal (Frobenius) basis of the admissible strain matrices."""
    basis = []
    if symmetric:
        for b in range(d):
            for j in range(b, d):
                e = np.zeros((d, d))
                if b == j:
                    e[b, j] = 1.0
                else:
                    e[b, j] = e[j, b] = 1.0 / math.sqrt(2.0)
                basis.append(e)
    else:
        for b in range(m):
            for j in range(d):
                e = np.zeros((m, d))
                e[b, j] = 1.0
                basis.append(e)
    return np.array(basis)


def quadratic_form_bounds(values: np.ndarray, elasticity: bool) -> tuple[float, float]:
    """Extremal Rayleigh quotients of ``a xi . xi`` over admissible ``xi``.

    For elasticity tensors ``xi`` ranges over symmetric matrices (Voigt
    reduction); otherwise over all ``m x d`` matrices.
    """
    m, d = values.shape[0], values.shape[1]
    basis = _form_basis(m, d, elasticity and m == d)
    q = np.einsum("pai,aibj...,qbj->...pq", basis, values, basis)
    q = 0.5 * (q + np.swapaxes(q, -1, -2))
    eig = np.linalg.eigvalsh(q)
    return float(eig[..., 0].min()), float(eig[..., -1].max())


def _point_bounds(A: CoefficientField, y: np.ndarray) -> tuple[float, float]:
    pts = [np.array([v % 1.0]) for v in y]
    return quadratic_form_bounds(A.at(pts)[..., 0], A.elasticity)


def _refine(A: CoefficientField, start: np.ndarray, which: int) -> float:
    """Polish a nodal extreme over the continuous cell using the closed-form ``A``."""
    sign = 1.0 if which == 0 else -1.0

    def objective(y):
        return sign * _point_bounds(A, y)[which]

    h = 1.0 / A.n
    simplex = np.vstack([start] + [start + h * np.eye(A.d)[k] for k in range(A.d)])
    res = minimize(objective, start, method="Nelder-Mead",
                   options={"initial_simplex": simplex, "xatol": 1e-12, "fatol": 1e-15,
                            "maxiter": 4000})
    return sign * float(res.fun)


def estimate_ellipticity(A: CoefficientField) -> tuple[float, float]:
    """Bounds of ``a xi . xi / |xi|^2`` over the cell.

    Nodal extremes are polished on the closed-form coefficient when one is
    available, so the estimate does not depend on the grid resolution.
    """
    report = validate_symmetry(A)
    if not report.passed:
        raise NonSymmetric(f"symmetry violated: {report}")
    lo, hi = quadratic_form_bounds(A.values, A.elasticity)
    if A.formula is None or A.is_constant:
        return lo, hi
    m, d = A.m, A.d
    basis = _form_basis(m, d, A.elasticity and m == d)
    q = np.einsum("pai,aibj...,qbj->...pq", basis, A.values, basis)
    eig = np.linalg.eigvalsh(0.5 * (q + np.swapaxes(q, -1, -2)))
    coords = np.stack(cell_grid(A.n, d), axis=-1)
    for which, vals in ((0, eig[..., 0]), (1, -eig[..., -1])):
        for flat in np.argsort(vals, axis=None)[:3]:
            y0 = coords[np.unravel_index(flat, vals.shape)]
            v = _refine(A, y0, which)
            lo, hi = (min(lo, v), hi) if which == 0 else (lo, max(hi, v))
    return lo, hi


def lipschitz_estimate(A: CoefficientField) -> float:
    """Largest periodic difference quotient ``|A(y + h e_k) - A(y)| / h`` (Frobenius)."""
    h = 1.0 / A.n
    best = 0.0
    for axis in range(A.d):
        diff = np.roll(A.values, -1, axis=4 + axis) - A.values
        norms = np.sqrt(np.sum(diff ** 2, axis=(0, 1, 2, 3)))
        best = max(best, float(norms.max()) / h)
    return best
