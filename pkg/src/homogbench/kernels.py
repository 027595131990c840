"""Matrix-free finite-difference operator on the extended (ghosted) grid.

The compiled extension handles scalar fields; systems and the fallback use
the numpy implementation below.  Set ``HOMOGBENCH_KERNELS=python`` to force
the fallback.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

try:
    if os.environ.get("HOMOGBENCH_KERNELS", "").lower() == "python":
        raise ImportError("compiled kernels disabled by environment")
    from . import _stencil
    BACKEND = "cython"
except ImportError:
    _stencil = None
    BACKEND = "python"


@dataclass(frozen=True)
class StencilCoefficients:
    """Coefficient samples for every (alpha, beta) block.

    1-D: ``ax`` has shape ``(m, m, N+1)`` at half nodes.
    2-D: ``ax (m, m, N+1, N)`` and ``ay (m, m, N, N+1)`` at half nodes carry
    ``a[alpha, x, beta, x]`` and ``a[alpha, y, beta, y]``; ``axy (m, m, N+2, N)``
    and ``ayx (m, m, N, N+2)`` carry the mixed entries at full nodes.
    """

    ax: np.ndarray
    ay: Optional[np.ndarray] = None
    axy: Optional[np.ndarray] = None
    ayx: Optional[np.ndarray] = None

    @property
    def m(self) -> int:
        return self.ax.shape[0]

    @property
    def d(self) -> int:
        return 1 if self.ay is None else 2


def apply_1d_numpy(u, kappa2, a_edge, h):
    ih2 = 1.0 / (h * h)
    lap = (u[:-2] - 2.0 * u[1:-1] + u[2:]) * ih2
    bih = (lap[:-2] - 2.0 * lap[1:-1] + lap[2:]) * ih2
    c = u[2:-2]
    flux = a_edge[1:] * (u[3:-1] - c) - a_edge[:-1] * (c - u[1:-3])
    return kappa2 * bih - flux * ih2


def apply_2d_numpy(u, kappa2, ax, ay, axy, ayx, h):
    ih2 = 1.0 / (h * h)
    lap = (u[:-2, 1:-1] + u[2:, 1:-1] + u[1:-1, :-2] + u[1:-1, 2:] - 4.0 * u[1:-1, 1:-1]) * ih2
    bih = (lap[:-2, 1:-1] + lap[2:, 1:-1] + lap[1:-1, :-2] + lap[1:-1, 2:]
           - 4.0 * lap[1:-1, 1:-1]) * ih2
    c = u[2:-2, 2:-2]
    second = (ax[1:] * (u[3:-1, 2:-2] - c) - ax[:-1] * (c - u[1:-3, 2:-2])
              + ay[:, 1:] * (u[2:-2, 3:-1] - c) - ay[:, :-1] * (c - u[2:-2, 1:-3])) * ih2
    pp, pm = u[3:-1, 3:-1], u[3:-1, 1:-3]
    mp, mm = u[1:-3, 3:-1], u[1:-3, 1:-3]
    cross = (axy[2:] * (pp - pm) - axy[:-2] * (mp - mm)
             + ayx[:, 2:] * (pp - mp) - ayx[:, :-2] * (pm - mm)) * (0.25 * ih2)
    return kappa2 * bih - second - cross


def apply_operator(u_ext: np.ndarray, kappa2: float, coeffs: StencilCoefficients, h: float,
                   backend: str | None = None) -> np.ndarray:
    """Interior values of ``kappa^2 Delta_h^2 u - div_h(A grad_h u)`` for ``u_ext (m, ...)``."""
    backend = backend or BACKEND
    if backend == "cython" and _stencil is None:
        raise RuntimeError("compiled kernels are not available")
    m = coeffs.m
    compiled = backend == "cython"
    out = []
    for a in range(m):
        acc = None
        for b in range(m):
            k2 = kappa2 if a == b else 0.0
            ub = np.ascontiguousarray(u_ext[b], dtype=float)
            if coeffs.d == 1:
                ae = np.ascontiguousarray(coeffs.ax[a, b])
                part = _stencil.apply_1d(ub, k2, ae, h) if compiled else apply_1d_numpy(ub, k2, ae, h)
            else:
                args = [np.ascontiguousarray(x[a, b]) for x in (coeffs.ax, coeffs.ay, coeffs.axy, coeffs.ayx)]
                if compiled:
                    part = _stencil.apply_2d(ub, k2, *args, h)
                else:
                    part = apply_2d_numpy(ub, k2, *args, h)
            part = np.asarray(part)
            acc = part if acc is None else acc + part
        out.append(acc)
    return np.stack(out)
