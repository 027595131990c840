"""Periodic cell problems for the correctors chi^lambda.

For each column (j, beta) the corrector solves

    lam^2 Delta^2 chi - div(A grad chi) = div(A grad P),   P = y_j e_beta,

on mean-zero periodic fields.  The operator is applied matrix-free in spectral
variables and inverted by preconditioned conjugate gradients.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .coefficients import CoefficientField
from .errors import IllConditioned, NoConvergence, ShapeMismatch
from .torus import (
    PeriodicField,
    _fft,
    _ifft,
    bilaplacian,
    derivative_symbols,
    div,
    dump_pfgrid,
    grad,
    load_pfgrid,
    resolved_mask,
    squared_frequency,
)


class _CellOperator:
    """``u -> lam^2 Delta^2 u - div(A grad u)`` acting on spectral m-vectors."""

    def __init__(self, A: CoefficientField, lam: float):
        self.A = A
        self.lam2 = float(lam) ** 2
        n, d = A.n, A.d
        self.d = d
        self.syms = derivative_symbols(n, d)
        k2 = squared_frequency(n, d)
        self.k4 = k2 ** 2
        self.mask = resolved_mask(n, d)
        abar = float(np.einsum("iaia->", A.mean())) / (A.d * A.m)
        with np.errstate(divide="ignore"):
            diag = self.lam2 * self.k4 + abar * k2
            self.precond = np.where(self.mask, 1.0 / np.where(self.mask, diag, 1.0), 0.0)
            self.weight = np.where(self.mask, 1.0 / np.where(self.mask, self.k4, 1.0), 0.0)
        if A.is_constant:
            self.a_const = A.values.reshape(A.values.shape[:4] + (-1,))[..., 0]
        else:
            self.a_const = None

    def flux(self, c: np.ndarray) -> np.ndarray:
        """Nodal ``A grad u`` for spectral ``c`` of shape ``(m,) + grid``."""
        g = np.stack([_ifft(s * c, self.d) for s in self.syms], axis=1)
        if self.a_const is not None:
            return np.einsum("aigk,gk...->ai...", self.a_const, g)
        return np.einsum("aigk...,gk...->ai...", self.A.values, g)

    def div_spectral(self, sigma: np.ndarray) -> np.ndarray:
        s = _fft(sigma, self.d)
        return sum(self.syms[i] * s[:, i] for i in range(self.d))

    def apply(self, c: np.ndarray) -> np.ndarray:
        out = self.lam2 * self.k4 * c - self.div_spectral(self.flux(c))
        return out * self.mask

    def h_minus2(self, r: np.ndarray) -> float:
        return math.sqrt(float(np.sum(np.abs(r) ** 2 * self.weight)))


def _dot(x, y):
    return float(np.real(np.vdot(x, y)))


def _pcg(op: _CellOperator, rhs: np.ndarray, tol: float, max_iters: int, x0=None):
    """Preconditioned CG on spectral variables; stops on the relative H^-2 residual."""
    rhs = rhs * op.mask
    ref = op.h_minus2(rhs)
    if ref == 0.0:
        return np.zeros_like(rhs), 0, 0.0
    x = np.zeros_like(rhs) if x0 is None else x0 * op.mask
    r = rhs - op.apply(x) if x0 is not None else rhs.copy()
    z = op.precond * r
    p = z.copy()
    rz = _dot(r, z)
    it = 0
    refreshed = False
    while True:
        rel = op.h_minus2(r) / ref
        if rel <= tol:
            # Guard against drift of the recursive residual.
            r_true = rhs - op.apply(x)
            rel = op.h_minus2(r_true) / ref
            if rel <= tol or refreshed:
                break
            refreshed = True
            r = r_true
            z = op.precond * r
            p = z.copy()
            rz = _dot(r, z)
        if it >= max_iters:
            raise NoConvergence(f"cell CG stalled at relative residual {rel:.3e}", it, rel)
        q = op.apply(p)
        alpha = rz / _dot(p, q)
        x = x + alpha * p
        r = r - alpha * q
        z = op.precond * r
        rz_new = _dot(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
        it += 1
    if rel > tol:
        raise NoConvergence(f"cell CG residual {rel:.3e} above tolerance", it, rel)
    return x, it, rel


def _column_rhs(A: CoefficientField, beta: int, j: int) -> np.ndarray:
    """Spectral ``div(A grad P_j^beta)``; the flux is the column ``a[:, :, beta, j]``."""
    syms = derivative_symbols(A.n, A.d)
    s = _fft(A.values[:, :, beta, j], A.d)
    return sum(syms[i] * s[:, i] for i in range(A.d))


@dataclass(frozen=True)
class CorrectorBundle:
    """Correctors ``chi[beta, j, gamma]`` for every column (j, beta)."""

    chi: np.ndarray
    lam: float
    tol: float
    residual: float
    iterations: int
    d: int
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def m(self) -> int:
        return self.chi.shape[0]

    @property
    def n(self) -> int:
        return self.chi.shape[-1]

    def field(self) -> PeriodicField:
        return PeriodicField(self.chi, self.d)

    @cached_property
    def spectral(self) -> np.ndarray:
        return _fft(self.chi, self.d)

    def gradient(self) -> np.ndarray:
        """``grad[beta, j, gamma, k] = d_k chi_gamma^{j beta}``."""
        return grad(self.field()).values

    def _energy(self, order: int) -> float:
        w = squared_frequency(self.n, self.d) ** order
        return float(np.sum(np.abs(self.spectral) ** 2 * w))

    @cached_property
    def h1(self) -> float:
        return math.sqrt(self._energy(0) + self._energy(1))

    @cached_property
    def hess(self) -> float:
        return math.sqrt(self._energy(2))

    @cached_property
    def third(self) -> float:
        return math.sqrt(self._energy(3))

    def dump(self, path) -> None:
        """PFGRID payload at ``path`` and a JSON sidecar at ``path + '.json'``."""
        path = Path(path)
        with open(path, "wb") as fh:
            dump_pfgrid(self.field(), fh)
        side = {
            "lambda": self.lam,
            "tol": self.tol,
            "residual": self.residual,
            "iterations": self.iterations,
            "n": self.n,
            "d": self.d,
            "m": self.m,
        }
        side.update(self.meta)
        path.with_name(path.name + ".json").write_text(json.dumps(side, indent=2, sort_keys=True))

    @classmethod
    def load(cls, path) -> "CorrectorBundle":
        path = Path(path)
        side = json.loads(path.with_name(path.name + ".json").read_text())
        m, d = side["m"], side["d"]
        with open(path, "rb") as fh:
            f = load_pfgrid(fh, (m, d, m))
        meta = {k: v for k, v in side.items()
                if k not in ("lambda", "tol", "residual", "iterations", "n", "d", "m")}
        return cls(f.values, side["lambda"], side["tol"], side["residual"],
                   side["iterations"], d, meta)


def _check_tol(tol):
    if not 0.0 < tol <= 1e-4:
        raise ValueError(f"tol must lie in (0, 1e-4], got {tol}")


def solve_corrector(
    A: CoefficientField,
    lam: float,
    tol: float = 1e-9,
    max_iters: int | None = None,
    x0: CorrectorBundle | None = None,
    workers: int = 1,
) -> CorrectorBundle:
    """Solve every column of the cell problem at ``lam = kappa / eps``."""
    _check_tol(tol)
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    if A.nu1 is None or A.nu1 <= 0:
        raise IllConditioned(f"{A.name}: lower ellipticity bound {A.nu1} is not positive")
    n, d, m = A.n, A.d, A.m
    if max_iters is None:
        max_iters = 10 * n * d
    op = _CellOperator(A, lam)
    start = None if x0 is None else x0.spectral

    def column(idx):
        beta, j = idx
        guess = None if start is None else start[beta, j]
        return _pcg(op, _column_rhs(A, beta, j), tol, max_iters, guess)

    jobs = [(beta, j) for beta in range(m) for j in range(d)]
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(column, jobs))
    else:
        results = [column(job) for job in jobs]

    spec = np.zeros((m, d, m) + (n,) * d, dtype=complex)
    iters, worst = 0, 0.0
    for (beta, j), (x, it, rel) in zip(jobs, results):
        spec[beta, j] = x
        iters = max(iters, it)
        worst = max(worst, rel)
    chi = _ifft(spec, d)
    chi.setflags(write=False)
    return CorrectorBundle(chi, float(lam), tol, worst, iters, d, {"coefficient": A.name})


def solve_periodic(A: CoefficientField, lam: float, F, tol: float = 1e-11,
                   max_iters: int | None = None) -> PeriodicField:
    """Mean-zero solution of ``lam^2 Delta^2 u - div(A grad u) = F`` on the torus.

    ``A`` is used as sampled (no oscillation); ``F`` is a scalar or m-vector
    PeriodicField whose mean is discarded.
    """
    if A.nu1 is None or A.nu1 <= 0:
        raise IllConditioned(f"{A.name}: lower ellipticity bound {A.nu1} is not positive")
    if F.n != A.n or F.d != A.d:
        raise ShapeMismatch("right-hand side and coefficient grids differ")
    values = F.values.reshape((A.m,) + (A.n,) * A.d)
    op = _CellOperator(A, lam)
    x, _, _ = _pcg(op, _fft(values, A.d), tol, max_iters or 10 * A.n * A.d)
    return PeriodicField(_ifft(x, A.d).reshape(F.values.shape), A.d)


def residual(A: CoefficientField, lam: float, bundle: CorrectorBundle) -> float:
    """Strong-form residual recomputed nodally, max over columns.

    Relative to ``||div(A grad P)||`` in the H^-2 weighted norm, or absolute
    when that reference vanishes.
    """
    if bundle.chi.shape[:3] != (A.m, A.d, A.m) or bundle.n != A.n:
        raise ShapeMismatch("corrector bundle does not match the coefficient field")
    d = A.d
    k2 = squared_frequency(A.n, d)
    nonzero = k2 > 0
    weight = np.where(nonzero, 1.0 / np.where(nonzero, k2 ** 2, 1.0), 0.0)
    worst = 0.0
    for beta in range(A.m):
        for j in range(d):
            chi = PeriodicField(bundle.chi[beta, j], d)
            gchi = grad(chi).values
            flux = np.einsum("aigk...,gk...->ai...", A.values, gchi)
            rhs = div(PeriodicField(A.values[:, :, beta, j], d)).values
            res = lam ** 2 * bilaplacian(chi).values - div(PeriodicField(flux, d)).values - rhs
            num = math.sqrt(float(np.sum(np.abs(_fft(res, d)) ** 2 * weight)))
            den = math.sqrt(float(np.sum(np.abs(_fft(rhs, d)) ** 2 * weight)))
            worst = max(worst, num / den if den > 0 else num)
    return worst


@dataclass(frozen=True)
class NormRow:
    lam: float
    h1: float
    hess: float
    third: float


def corrector_norm_sweep(A: CoefficientField, lams, tol: float = 1e-9) -> list[NormRow]:
    """``(lam, ||chi||_H1, ||grad^2 chi||, ||grad^3 chi||)`` along a sorted positive sweep."""
    lams = [float(x) for x in lams]
    if any(x <= 0 for x in lams) or lams != sorted(lams):
        raise ValueError("lambda list must be sorted and positive")
    rows = []
    for lam in lams:
        b = solve_corrector(A, lam, tol)
        rows.append(NormRow(lam, b.h1, b.hess, b.third))
    return rows
