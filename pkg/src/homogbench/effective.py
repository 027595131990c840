"""Effective tensors, the flux field B and its antisymmetric potential."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .cell import CorrectorBundle, solve_corrector
from .coefficients import CoefficientField, quadratic_form_bounds, tensor_symmetry
from .errors import DivergenceNotZero, MissingMetadata, ShapeMismatch
from .fitting import RateReport, fit_rate
from .torus import PeriodicField, _fft, _ifft, derivative_symbols, resolved_mask, squared_frequency

SYMMETRY_BUDGET = 1e-10
ELLIPTICITY_SLACK = 1e-8
DIVERGENCE_GUARD = 1e-6


@dataclass(frozen=True)
class Certification:
    major: float
    minor: Optional[float]
    nu_min: float
    nu_max: float
    nu1: float
    nu2: float

    @property
    def symmetric(self) -> bool:
        worst = self.major if self.minor is None else max(self.major, self.minor)
        return worst <= SYMMETRY_BUDGET

    @property
    def elliptic(self) -> bool:
        return (self.nu_min >= self.nu1 - ELLIPTICITY_SLACK
                and self.nu_max <= self.nu2 + ELLIPTICITY_SLACK)

    @property
    def passed(self) -> bool:
        return self.symmetric and self.elliptic

    def to_json(self) -> dict:
        return {
            "major_symmetry": self.major,
            "minor_symmetry": self.minor,
            "interval": [self.nu_min, self.nu_max],
            "bounds": [self.nu1, self.nu2],
            "passed": self.passed,
        }


@dataclass(frozen=True)
class EffectiveTensor:
    """Constant tensor ``values[alpha, i, beta, j]`` with its origin and certificate."""

    values: np.ndarray
    provenance: str
    lam: Optional[float]
    certification: Certification
    elasticity: bool = False
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def energy(self, xi: np.ndarray) -> float:
        return float(np.einsum("ai,aibj,bj->", xi, self.values, xi))

    def to_json(self) -> dict:
        lam = self.lam
        if lam is not None and math.isinf(lam):
            lam = "inf"
        return {
            "provenance": self.provenance,
            "lambda": lam,
            "shape": list(self.values.shape),
            "entries": self.values.tolist(),
            "certification": self.certification.to_json(),
            **self.meta,
        }


def certify(values: np.ndarray, A: CoefficientField) -> Certification:
    sym = tensor_symmetry(values, A.elasticity)
    lo, hi = quadratic_form_bounds(values, A.elasticity)
    return Certification(sym.major, sym.minor, lo, hi, A.nu1, A.nu2)


def _tensor(values, A, provenance, lam, **meta):
    values = np.array(values, dtype=float)
    values.setflags(write=False)
    return EffectiveTensor(values, provenance, lam, certify(values, A), A.elasticity, meta)


def corrector_flux(A: CoefficientField, bundle: CorrectorBundle) -> np.ndarray:
    """Nodal ``(A grad chi)[alpha, i, beta, j]`` for every column."""
    g = bundle.gradient()
    return np.einsum("aigk...,bjgk...->aibj...", A.values, g)


def tensor_from_bundle(A: CoefficientField, bundle: CorrectorBundle) -> np.ndarray:
    """Cell average of ``A + A grad chi``."""
    if bundle.chi.shape[:3] != (A.m, A.d, A.m) or bundle.n != A.n:
        raise ShapeMismatch("corrector bundle does not match the coefficient field")
    total = A.values + corrector_flux(A, bundle)
    return total.mean(axis=tuple(range(4, 4 + A.d)))


def homogenize(A: CoefficientField, lam: float, tol: float = 1e-9,
               bundle: CorrectorBundle | None = None) -> EffectiveTensor:
    """Effective tensor of the cell problem at ``lam``."""
    if bundle is None:
        bundle = solve_corrector(A, lam, tol)
    return _tensor(tensor_from_bundle(A, bundle), A, f"lambda={lam!r}", float(lam),
                   residual=bundle.residual)


def average(A: CoefficientField) -> EffectiveTensor:
    return _tensor(A.mean(), A, "average", math.inf)


def effective_limit(A: CoefficientField, rho: float, tol: float = 1e-9) -> EffectiveTensor:
    """The limit tensor: the cell average for ``rho = inf``, else the tensor at ``lam = rho``."""
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    if math.isinf(rho):
        return average(A)
    return homogenize(A, rho, tol)


# ---------------------------------------------------------------- flux field

@dataclass(frozen=True)
class FluxBundle:
    """``B[alpha, i, beta, j]`` and ``potential[k, alpha, i, beta, j]``."""

    B: PeriodicField
    potential: PeriodicField
    mean_abs: float
    div_norm: float
    potential_residual: float
    antisymmetry: float


def _spectral_l2(c) -> float:
    return math.sqrt(float(np.sum(np.abs(c) ** 2)))


def flux(A: CoefficientField, lam: float, bundle: CorrectorBundle,
         Ahat: EffectiveTensor | None = None) -> FluxBundle:
    """Assemble ``B = lam^2 grad Delta chi - A grad chi - A + Ahat`` and its potential.

    The potential is ``d_k f_ij - d_i f_kj`` with ``Delta f = B`` on mean-zero
    fields, so it is antisymmetric in (k, i) by construction.
    """
    d = A.d
    n = A.n
    if Ahat is None:
        Ahat = homogenize(A, lam, bundle=bundle)
    syms = derivative_symbols(n, d)
    k2 = squared_frequency(n, d)
    keep = resolved_mask(n, d)
    axes = tuple(range(4, 4 + d))

    # lam^2 d_i Delta chi_alpha^{j beta}, laid out as [alpha, i, beta, j]
    c = bundle.spectral.transpose((2, 0, 1) + tuple(range(3, 3 + d)))
    third = np.stack([_ifft(-lam ** 2 * s * k2 * c, d) for s in syms], axis=1)
    expand = (Ellipsis,) + (None,) * d
    B = third - corrector_flux(A, bundle) - A.values + np.asarray(Ahat.values)[expand]
    Bhat = _fft(B, d) * keep
    B = _ifft(Bhat, d)

    divB = sum(syms[i] * Bhat[:, i] for i in range(d))
    div_norm = _spectral_l2(divB)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(keep, -1.0 / np.where(keep, k2, 1.0), 0.0)
    # The guard uses the H^-1 norm relative to |B|: the plain L2 norm carries
    # round-off amplified by the third derivative in B and grows like n^3.
    scale = max(_spectral_l2(Bhat), _spectral_l2(A.values))
    weak = math.sqrt(float(np.sum(np.abs(divB) ** 2 * -inv))) / scale if scale > 0 else 0.0
    if weak > DIVERGENCE_GUARD:
        raise DivergenceNotZero(f"relative flux divergence {weak:.3e}; corrector not converged")

    fhat = Bhat * inv
    # [k, alpha, i, beta, j]: d_k f[alpha, i] - d_i f[alpha, k]
    grad_f = np.stack([s * fhat for s in syms], axis=0)
    swapped = np.stack([np.stack([syms[i] * fhat[:, k] for i in range(d)], axis=1)
                        for k in range(d)], axis=0)
    pot_hat = grad_f - swapped
    potential = _ifft(pot_hat, d)

    recon = sum(syms[k] * pot_hat[k] for k in range(d))
    pot_res = _spectral_l2(recon - Bhat)
    anti = float(np.max(np.abs(potential + np.swapaxes(potential, 0, 2))))
    mean_abs = float(np.max(np.abs(B.mean(axis=axes))))
    return FluxBundle(PeriodicField(B, d), PeriodicField(potential, d), mean_abs,
                      div_norm, pot_res, anti)


# ---------------------------------------------------------------- asymptotics

@dataclass(frozen=True)
class ContinuityRow:
    lam1: float
    lam2: float
    difference: float
    ratio: float


def _frobenius(x) -> float:
    return float(np.sqrt(np.sum(np.asarray(x) ** 2)))


def lambda_asymptotics(A: CoefficientField, small, large, tol: float = 1e-10):
    """Fits of ``|Ahat^lam - Abar|`` over ``large`` and ``|Ahat^lam - Ahat^0|`` over ``small``.

    Returns ``(small_report, large_report, continuity)``; a report is None when
    its list is empty.
    """
    small = sorted(float(x) for x in small)
    large = sorted(float(x) for x in large)
    if small and A.lipschitz is None:
        raise MissingMetadata(f"{A.name}: small-lambda estimate needs a Lipschitz constant")
    tensors = {}
    for lam in sorted(set(small + large)):
        tensors[lam] = homogenize(A, lam, tol).values
    zero_floor = 1e2 * tol
    small_rep = large_rep = None
    if small:
        base = homogenize(A, 0.0, tol).values
        diffs = [_frobenius(tensors[x] - base) for x in small]
        small_rep = fit_rate(small, diffs, {"quantity": "|Ahat^lam - Ahat^0|", "coeff": A.name},
                             zero_floor=zero_floor)
    if large:
        bar = A.mean()
        diffs = [_frobenius(tensors[x] - bar) for x in large]
        large_rep = fit_rate(large, diffs, {"quantity": "|Ahat^lam - Abar|", "coeff": A.name},
                             zero_floor=zero_floor)
    lams = sorted(tensors)
    rows = []
    for a, b in zip(lams, lams[1:]):
        diff = _frobenius(tensors[a] - tensors[b])
        rows.append(ContinuityRow(a, b, diff, diff / abs(1.0 - (a / b) ** 2)))
    return small_rep, large_rep, rows


__all__ = [
    "Certification",
    "ContinuityRow",
    "EffectiveTensor",
    "FluxBundle",
    "RateReport",
    "average",
    "certify",
    "effective_limit",
    "flux",
    "homogenize",
    "lambda_asymptotics",
    "tensor_from_bundle",
]
