import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from homogbench.coefficients import (
    BUILTIN_NAMES,
    CoefficientField,
    builtin,
    embed_scalar,
    estimate_ellipticity,
    lame_tensor,
    lipschitz_estimate,
    quadratic_form_bounds,
    scalar_tensor,
    tensor_symmetry,
    validate_symmetry,
)
from homogbench.errors import NonSymmetric, UnknownName

ALL = ["A1", "A2", "A3", "CONST(1)", "CONST(2.5, 2)", "LAME(1, 1)", "CHECKER(0.2)"]


def test_const_is_identity():
    A = builtin("CONST(1)", 64)
    assert A.d == 1 and A.m == 1 and A.is_constant
    assert np.all(A.values == 1.0)
    B = builtin("CONST(1, 2)", 16)
    assert np.array_equal(B.values[0, :, 0, :, 3, 5], np.eye(2))


def test_a1_shape_and_bounds():
    A = builtin("A1", 1024)
    assert A.values.shape == (1, 1, 1, 1, 1024)
    assert (A.nu1, A.nu2) == (1.0, 3.0)
    y = np.arange(1024) / 1024
    assert np.allclose(A.values[0, 0, 0, 0], 2 + np.sin(2 * np.pi * y), atol=0, rtol=1e-15)


def test_a3_matches_lame_formula():
    A = builtin("A3", 128)
    y1, y2 = np.meshgrid(np.arange(128) / 128, np.arange(128) / 128, indexing="ij")
    mu = 2 + np.cos(2 * np.pi * y1) * np.cos(2 * np.pi * y2)
    lam = 1 + 0.5 * np.sin(2 * np.pi * y1)
    # a_11^11 = lam + 2 mu, a_12^12 = mu, a_22^11 = lam
    assert np.allclose(A.values[0, 0, 0, 0], lam + 2 * mu, rtol=0, atol=1e-14)
    assert np.allclose(A.values[0, 1, 0, 1], mu, rtol=0, atol=1e-14)
    assert np.allclose(A.values[0, 0, 1, 1], lam, rtol=0, atol=1e-14)
    assert np.allclose(A.values[0, 1, 1, 0], mu, rtol=0, atol=1e-14)
    assert A.elasticity and A.m == 2


@pytest.mark.parametrize("name", ["B7", "CONST(-1)", "A1(3)", "CHECKER(0)", "", "CONST(x)"])
def test_unknown_names(name):
    with pytest.raises(UnknownName):
        builtin(name, 16)


def test_non_power_of_two_rejected():
    with pytest.raises(ValueError):
        builtin("A1", 100)


def test_builtin_names_cover_families():
    for family in BUILTIN_NAMES:
        assert any(name.startswith(family) for name in ALL)


@pytest.mark.parametrize("name", ALL)
def test_builtins_symmetric(name):
    assert validate_symmetry(builtin(name, 32)).passed


def test_lame_symmetry_exact():
    rep = tensor_symmetry(lame_tensor(1.0, 1.0, 2), elasticity=True)
    assert rep.major == 0.0 and rep.minor == 0.0


def test_a3_symmetry_deviation():
    rep = validate_symmetry(builtin("A3", 64))
    assert rep.major <= 1e-15 and rep.minor <= 1e-15


def test_injected_defect_detected():
    v = np.array(builtin("A3", 16).values)
    v[0, 1, 0, 0, 3, 4] += 1e-3          # a_12^11 at one node
    rep = tensor_symmetry(v, elasticity=True)
    assert not rep.passed
    assert rep.major == pytest.approx(1e-3, rel=1e-9)
    A = CoefficientField(v, 2.0, 9.0, elasticity=True)
    with pytest.raises(NonSymmetric):
        estimate_ellipticity(A)


def test_ellipticity_a1_and_identity():
    lo, hi = estimate_ellipticity(builtin("A1", 1024))
    assert lo == pytest.approx(1.0, abs=1e-4) and hi == pytest.approx(3.0, abs=1e-4)
    assert estimate_ellipticity(builtin("CONST(1)", 8)) == (1.0, 1.0)


def test_ellipticity_a3_against_dense_eigensolve():
    A = builtin("A3", 32)
    lo, hi = quadratic_form_bounds(A.values, elasticity=True)
    y1, y2 = np.meshgrid(np.arange(32) / 32, np.arange(32) / 32, indexing="ij")
    mu = 2 + np.cos(2 * np.pi * y1) * np.cos(2 * np.pi * y2)
    assert lo == pytest.approx(2 * mu.min(), abs=1e-12)
    # independent route: Voigt 3x3 matrix with engineering shear scaled to an orthonormal basis
    best_lo, best_hi = np.inf, -np.inf
    for idx in np.ndindex(32, 32):
        a = A.values[(Ellipsis,) + idx]
        s = 1 / math.sqrt(2)
        basis = [np.array([[1, 0], [0, 0]]), np.array([[0, 0], [0, 1]]), np.array([[0, s], [s, 0]])]
        Q = np.array([[np.einsum("ai,aibj,bj", p, a, q) for q in basis] for p in basis])
        ev = np.linalg.eigvalsh(Q)
        best_lo, best_hi = min(best_lo, ev[0]), max(best_hi, ev[-1])
    assert (lo, hi) == pytest.approx((best_lo, best_hi), abs=1e-12)
    assert A.nu1 - 1e-12 <= lo and hi <= A.nu2 + 1e-12


@pytest.mark.parametrize("name", ["A2", "A3"])
def test_ellipticity_refinement_invariant(name):
    a = estimate_ellipticity(builtin(name, 16))
    b = estimate_ellipticity(builtin(name, 64))
    assert a == pytest.approx(b, abs=1e-10)


def test_a3_upper_bound_is_attained():
    lo, hi = estimate_ellipticity(builtin("A3", 16))
    assert lo == pytest.approx(2.0, abs=1e-12)
    assert hi == pytest.approx(6 + math.sqrt(5), abs=1e-10)


def test_lipschitz_estimates():
    assert lipschitz_estimate(builtin("CONST(3)", 64)) == 0.0
    assert lipschitz_estimate(builtin("A1", 1024)) == pytest.approx(2 * np.pi, rel=0.01)
    ws = [0.4, 0.2, 0.1, 0.05]
    L = [lipschitz_estimate(builtin(f"CHECKER({w})", 512)) for w in ws]
    slope = np.polyfit(np.log(ws), np.log(L), 1)[0]
    assert -1.15 < slope < -0.8


def test_embed_scalar_layout():
    A = builtin("A2", 16)
    E = embed_scalar(A)
    assert E.m == 2 and E.d == 2
    assert np.array_equal(E.values[1, 0, 1, 0], A.values[0, 0, 0, 0])
    assert np.all(E.values[0, 0, 1, 0] == 0)
    pts = [np.array([0.1, 0.7]), np.array([0.3, 0.2])]
    assert np.allclose(E.at(pts)[0, 1, 0, 1], A.at(pts)[0, 0, 0, 0])


def test_at_formula_and_interpolation_agree_on_nodes():
    A = builtin("A2", 32)
    gridded = CoefficientField(A.values, A.nu1, A.nu2)
    pts = [np.array([3 / 32, 31 / 32, 1.0 + 5 / 32]), np.array([0.0, 7 / 32, 2 / 32])]
    assert np.allclose(A.at(pts), gridded.at(pts), atol=1e-14)


def test_fields_are_immutable():
    A = builtin("A1", 16)
    with pytest.raises(ValueError):
        A.values[0, 0, 0, 0, 0] = 5.0


@given(st.floats(0.1, 5), st.floats(0.0, 5))
def test_lame_bounds_closed_form(mu, lam):
    lo, hi = quadratic_form_bounds(lame_tensor(mu, lam, 2), elasticity=True)
    assert lo == pytest.approx(2 * mu, rel=1e-12)
    assert hi == pytest.approx(2 * mu + 2 * lam, rel=1e-12)
    assert tensor_symmetry(lame_tensor(mu, lam, 2), True).passed


@given(st.lists(st.floats(0.5, 4), min_size=4, max_size=4))
def test_scalar_bounds_are_range(vals):
    a = np.array(vals)
    lo, hi = quadratic_form_bounds(scalar_tensor(a, 1), elasticity=False)
    assert lo == pytest.approx(a.min()) and hi == pytest.approx(a.max())
