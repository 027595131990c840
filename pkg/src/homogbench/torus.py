"""Periodic fields on the unit torus and their spectral calculus.

Values are stored nodally with the grid axes last: a scalar field on a
``n x n`` grid has shape ``(n, n)``, an m-vector field ``(m, n, n)`` and so on.
Fourier coefficients are normalised so that ``f(y) = sum_k c_k exp(2 pi i k.y)``.
"""

from __future__ import annotations

import math
from functools import cached_property, lru_cache
from typing import BinaryIO, Sequence

import numpy as np
from scipy.special import j0

from .errors import EpsilonOutOfRange, ShapeMismatch

_QUAD_NODES = 600


def wavenumbers(n: int, d: int) -> list[np.ndarray]:
    """Integer wavenumbers per axis, shaped to broadcast over a ``d``-grid."""
    k = np.fft.fftfreq(n, 1.0 / n)
    out = []
    for ax in range(d):
        shape = [1] * d
        shape[ax] = n
        out.append(k.reshape(shape))
    return out


def derivative_symbols(n: int, d: int) -> list[np.ndarray]:
    """``2 pi i k`` per axis with the Nyquist mode removed."""
    syms = []
    for k in wavenumbers(n, d):
        s = 2j * np.pi * k
        if n % 2 == 0:
            s = np.where(np.abs(k) == n // 2, 0.0, s)
        syms.append(s)
    return syms


def squared_frequency(n: int, d: int) -> np.ndarray:
    """``|2 pi k|^2`` on the full spectral grid."""
    return sum((2 * np.pi * k) ** 2 for k in wavenumbers(n, d))


def resolved_mask(n: int, d: int) -> np.ndarray:
    """Modes that are neither the mean nor on a Nyquist line."""
    mask = np.ones((n,) * d, dtype=bool)
    for k in wavenumbers(n, d):
        if n % 2 == 0:
            mask &= np.abs(k) != n // 2
    mask[(0,) * d] = False
    return mask


def _fft(values, d):
    axes = tuple(range(-d, 0))
    n = values.shape[-1]
    return np.fft.fftn(values, axes=axes) / n ** d


def _ifft(coeffs, d):
    axes = tuple(range(-d, 0))
    n = coeffs.shape[-1]
    return np.real(np.fft.ifftn(coeffs, axes=axes)) * n ** d


class PeriodicField:
    """Immutable nodal field on the ``n^d`` torus grid."""

    def __init__(self, values, d: int):
        v = np.array(values, dtype=float)
        if d not in (1, 2) or v.ndim < d:
            raise ShapeMismatch(f"cannot form a {d}-dimensional field from shape {v.shape}")
        grid = v.shape[v.ndim - d:]
        if len(set(grid)) != 1:
            raise ShapeMismatch(f"non-square grid {grid}")
        v.setflags(write=False)
        self.values = v
        self.d = d

    @classmethod
    def from_function(cls, func, n: int, d: int) -> "PeriodicField":
        y = np.arange(n) / n
        grid = np.meshgrid(*([y] * d), indexing="ij")
        return cls(func(*grid), d)

    @classmethod
    def from_spectral(cls, coeffs, d: int) -> "PeriodicField":
        return cls(_ifft(coeffs, d), d)

    @property
    def n(self) -> int:
        return self.values.shape[-1]

    @property
    def comp_shape(self) -> tuple:
        return self.values.shape[: self.values.ndim - self.d]

    @cached_property
    def spectral(self) -> np.ndarray:
        c = _fft(self.values, self.d)
        c.setflags(write=False)
        return c

    def __add__(self, other):
        return PeriodicField(self.values + _vals(other), self.d)

    def __sub__(self, other):
        return PeriodicField(self.values - _vals(other), self.d)

    def __mul__(self, scalar):
        return PeriodicField(self.values * scalar, self.d)

    __rmul__ = __mul__

    def __neg__(self):
        return PeriodicField(-self.values, self.d)

    def mean(self) -> np.ndarray:
        return self.values.mean(axis=tuple(range(-self.d, 0)))

    def project_mean_zero(self) -> "PeriodicField":
        m = self.mean()
        return PeriodicField(self.values - np.expand_dims(m, tuple(range(-self.d, 0))), self.d)

    def grad(self):
        return grad(self)

    def laplacian(self):
        return laplacian(self)

    def norm(self, kind="L2"):
        return norm(self, kind)


def _vals(x):
    return x.values if isinstance(x, PeriodicField) else x


def grad(f: PeriodicField) -> PeriodicField:
    """Spectral gradient; the derivative index becomes the last component axis."""
    c = f.spectral
    parts = [s * c for s in derivative_symbols(f.n, f.d)]
    return PeriodicField.from_spectral(np.stack(parts, axis=c.ndim - f.d), f.d)


def div(F: PeriodicField) -> PeriodicField:
    """Spectral divergence contracting the last component axis."""
    comp = F.comp_shape
    if not comp or comp[-1] != F.d:
        raise ShapeMismatch(f"divergence needs a trailing axis of size {F.d}, got {comp}")
    c = F.spectral
    ax = c.ndim - F.d - 1
    syms = derivative_symbols(F.n, F.d)
    out = sum(syms[i] * np.take(c, i, axis=ax) for i in range(F.d))
    return PeriodicField.from_spectral(out, F.d)


def laplacian(f: PeriodicField) -> PeriodicField:
    return PeriodicField.from_spectral(-squared_frequency(f.n, f.d) * f.spectral, f.d)


def bilaplacian(f: PeriodicField) -> PeriodicField:
    return PeriodicField.from_spectral(squared_frequency(f.n, f.d) ** 2 * f.spectral, f.d)


def _power_sum(f: PeriodicField, order: int) -> float:
    weight = squared_frequency(f.n, f.d) ** order
    return float(np.sum(np.abs(f.spectral) ** 2 * weight))


def derivative_norm(f: PeriodicField, order: int) -> float:
    """``||nabla^order f||_{L2(Y)}`` over all multi-indices, via Parseval."""
    return math.sqrt(_power_sum(f, order))


def norm(f: PeriodicField, kind: str = "L2") -> float:
    kind = kind.upper()
    if kind == "L2":
        return derivative_norm(f, 0)
    if kind == "H1":
        return math.sqrt(_power_sum(f, 0) + _power_sum(f, 1))
    if kind == "H2":
        return math.sqrt(_power_sum(f, 0) + _power_sum(f, 1) + _power_sum(f, 2))
    if kind in ("LINF", "L∞"):
        comp_axes = tuple(range(len(f.comp_shape)))
        mag = np.sqrt(np.sum(f.values ** 2, axis=comp_axes)) if comp_axes else np.abs(f.values)
        return float(mag.max())
    raise ValueError(f"unknown norm {kind!r}")


# ---------------------------------------------------------------- mollifier

def _bump(r):
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    inside = r < 0.5
    out[inside] = np.exp(-1.0 / (1.0 - 4.0 * r[inside] ** 2))
    return out


@lru_cache(maxsize=None)
def _radial_quadrature():
    x, w = np.polynomial.legendre.leggauss(_QUAD_NODES)
    r = 0.25 * (x + 1.0)
    return r, 0.25 * w


@lru_cache(maxsize=None)
def mollifier_constant(d: int) -> float:
    """``c_d`` such that ``c_d exp(-1/(1-4|x|^2))`` integrates to one over ``|x| < 1/2``."""
    r, w = _radial_quadrature()
    if d == 1:
        mass = 2.0 * np.sum(w * _bump(r))
    elif d == 2:
        mass = 2.0 * np.pi * np.sum(w * _bump(r) * r)
    else:
        raise ValueError("d must be 1 or 2")
    return 1.0 / float(mass)


def mollifier(x, d: int):
    """Normalised bump ``phi`` evaluated at radius ``|x|``."""
    return mollifier_constant(d) * _bump(np.abs(x))


def mollifier_transform(xi, d: int) -> np.ndarray:
    """Continuous Fourier transform ``phi^(xi) = int phi(x) exp(-2 pi i x.xi) dx`` (radial)."""
    xi = np.asarray(xi, dtype=float)
    r, w = _radial_quadrature()
    weights = w * mollifier_constant(d) * _bump(r)
    flat = xi.reshape(-1, 1)
    if d == 1:
        vals = 2.0 * np.cos(2 * np.pi * flat * r) @ weights
    else:
        vals = 2.0 * np.pi * j0(2 * np.pi * flat * r) @ (weights * r)
    return vals.reshape(xi.shape)


def _interval_rule(lo: float, hi: float, h: float, q: int):
    """Composite Gauss-Legendre nodes on ``[lo, hi]`` split at the multiples of ``h``."""
    cuts = np.arange(math.ceil(lo / h), math.floor(hi / h) + 1) * h
    edges = np.unique(np.concatenate([[lo], cuts, [hi]]))
    x, w = np.polynomial.legendre.leggauss(q)
    a, b = edges[:-1, None], edges[1:, None]
    nodes = 0.5 * (b - a) * x + 0.5 * (a + b)
    weights = 0.5 * (b - a) * w
    return nodes.ravel(), weights.ravel()


def _spread(x: np.ndarray, h: float, n: int):
    """Multilinear (hat) basis weights of points ``x`` onto periodic node indices."""
    s = x / h
    i0 = np.floor(s).astype(np.int64)
    f = s - i0
    return (i0 % n, 1.0 - f), ((i0 + 1) % n, f)


@lru_cache(maxsize=64)
def _smoothing_kernel(n: int, d: int, spacing: float, eps: float) -> np.ndarray:
    """DFT of the nodal weights ``int phi_eps(x) Lambda_g(x) dx`` (``Lambda_g`` = hat at node g).

    Weights are nonnegative and sum to one, so constants are kept exactly and
    nonnegative data stay nonnegative.
    """
    half = 0.5 * eps
    q = 10 if d == 1 else max(3, min(10, int(2000 / (half / spacing + 2))))
    x, w = _interval_rule(-half, half, spacing, q)
    kernel = np.zeros((n,) * d)
    if d == 1:
        mass = w * _bump(x / eps)
        for idx, frac in _spread(x, spacing, n):
            np.add.at(kernel, idx, mass * frac)
    else:
        X, Y = np.meshgrid(x, x, indexing="ij")
        mass = np.outer(w, w) * _bump(np.hypot(X, Y) / eps)
        keep = mass > 0
        X, Y, mass = X[keep], Y[keep], mass[keep]
        for ix, fx in _spread(X, spacing, n):
            for iy, fy in _spread(Y, spacing, n):
                np.add.at(kernel, (ix, iy), mass * fx * fy)
    total = kernel.sum()
    if total <= 0:
        kernel[(0,) * d] = 1.0
    else:
        kernel /= total
    out = np.real(np.fft.fftn(kernel))
    out.setflags(write=False)
    return out


def smooth_array(values: np.ndarray, d: int, spacing: float, eps: float) -> np.ndarray:
    """``phi_eps`` convolved with the multilinear interpolant of periodic nodal data, at the nodes."""
    n = values.shape[-1]
    symbol = _smoothing_kernel(n, d, float(spacing), float(eps))
    axes = tuple(range(-d, 0))
    return np.real(np.fft.ifftn(np.fft.fftn(values, axes=axes) * symbol, axes=axes))


def smooth(f: PeriodicField, eps: float) -> PeriodicField:
    """The smoothing operator ``S_eps f = f * phi_eps`` on the torus."""
    if not 0.0 < eps < 1.0:
        raise EpsilonOutOfRange(f"eps must lie in (0, 1), got {eps}")
    return PeriodicField(smooth_array(f.values, f.d, 1.0 / f.n, eps), f.d)


# ---------------------------------------------------------------- sampling

def _axis_matrix(n: int, y: np.ndarray) -> np.ndarray:
    k = np.fft.fftfreq(n, 1.0 / n)
    mat = np.exp(2j * np.pi * np.outer(y, k))
    if n % 2 == 0:
        mat[:, n // 2] = np.cos(np.pi * n * y)
    return mat


def trig_sample(values: np.ndarray, d: int, axes: Sequence[np.ndarray]) -> np.ndarray:
    """Trigonometric interpolant of nodal ``values`` on a tensor-product point set.

    ``axes`` gives the (periodic) coordinates along each grid axis; the result
    has shape ``comp + (len(axes[0]), ..., len(axes[-1]))``.  Points that fall
    exactly on the cell grid are read off directly.
    """
    n = values.shape[-1]
    axes = [np.asarray(a, dtype=float) for a in axes]
    scaled = [a * n for a in axes]
    if all(np.allclose(s, np.round(s), atol=1e-9, rtol=0) for s in scaled):
        idx = [np.round(s).astype(int) % n for s in scaled]
        return values[(Ellipsis,) + tuple(np.ix_(*idx))]
    c = _fft(values, d)
    out = c
    for ax, y in enumerate(axes):
        pos = out.ndim - d + ax
        chunks = []
        step = max(1, 2 ** 22 // n)
        for start in range(0, y.size, step):
            mat = _axis_matrix(n, y[start:start + step])
            moved = np.moveaxis(out, pos, -1)
            chunks.append(np.moveaxis(moved @ mat.T, -1, pos))
        out = np.concatenate(chunks, axis=pos)
    return np.real(out)


# ---------------------------------------------------------------- PFGRID v1

def dump_pfgrid(f: PeriodicField, fh: BinaryIO) -> None:
    """Write ``PFGRID 1 <d> <n> <components>`` followed by node-major float64 data."""
    comp = int(np.prod(f.comp_shape)) if f.comp_shape else 1
    fh.write(f"PFGRID 1 {f.d} {f.n} {comp}\n".encode("ascii"))
    data = f.values.reshape((comp,) + (f.n,) * f.d)
    data = np.moveaxis(data, 0, -1)
    fh.write(np.ascontiguousarray(data, dtype="<f8").tobytes())


def load_pfgrid(fh: BinaryIO, comp_shape: tuple | None = None) -> PeriodicField:
    header = fh.readline().decode("ascii").split()
    if len(header) != 5 or header[0] != "PFGRID" or header[1] != "1":
        raise ValueError(f"not a PFGRID v1 stream: {header}")
    d, n, comp = (int(t) for t in header[2:])
    raw = np.frombuffer(fh.read(), dtype="<f8")
    if raw.size != comp * n ** d:
        raise ValueError("truncated PFGRID payload")
    data = np.moveaxis(raw.reshape((n,) * d + (comp,)), -1, 0)
    if comp_shape is None:
        comp_shape = () if comp == 1 else (comp,)
    return PeriodicField(data.reshape(tuple(comp_shape) + (n,) * d), d)
