import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from homogbench.bvp import (
    Ball,
    BoundaryData,
    Box,
    DomainGrid,
    DomainSolution,
    Layer,
    Traces,
    Whole,
    assembled_operator,
    bump,
    norms_on_region,
    region_norm,
    sample_source,
    solve_friedman_exact,
    solve_homogenized,
    solve_intermediate,
    solve_perturbed,
)
from homogbench.coefficients import builtin
from homogbench.effective import average
from homogbench.errors import EmptyRegion, GridTooCoarse, ShapeMismatch
from homogbench.fitting import fit_rate

PI = math.pi


def p(x):
    return x ** 2 * (1 - x) ** 2


def p2(x):
    return 2 - 12 * x + 12 * x ** 2


def observed_order(errors):
    hs = [1 / (N + 1) for N, _ in errors]
    return fit_rate(hs, [e for _, e in errors], min_points=3).slope


def max_error(u, exact):
    return float(np.abs(u.values[0] - exact).max())


def test_grid_policy():
    g = DomainGrid.for_scales(1, 1 / 8, 1 / 8)
    assert g.N == 31 and g.h <= (1 / 8) / 4
    assert DomainGrid.for_scales(2, 1 / 2, 1.0).N == 15          # N >= 15 floor
    assert DomainGrid.for_scales(1, 1 / 32, 1 / 1024).N == 4095
    with pytest.raises(ValueError):
        DomainGrid(1, 7)


def test_grid_too_coarse():
    A = builtin("A1", 64)
    with pytest.raises(GridTooCoarse):
        solve_perturbed(A, 1 / 8, 1 / 8, 1.0, grid=DomainGrid(1, 15))


def test_zero_data_gives_zero():
    u = solve_perturbed(builtin("A2", 32), 1 / 4, 1 / 4, 0.0)
    assert np.all(u.values == 0.0)


@pytest.mark.parametrize("solver", ["direct", "cg"])
def test_manufactured_perturbed_1d(solver):
    eps, kappa = 1.0, 1.0
    A = builtin("A1", 64)

    def F(x):
        a = 2 + np.sin(2 * PI * x / eps)
        da = 2 * PI / eps * np.cos(2 * PI * x / eps)
        dp = 2 * x * (1 - x) * (1 - 2 * x)
        return kappa ** 2 * 24 - (da * dp + a * p2(x))

    errs = []
    for N in (31, 63, 127, 255):
        g = DomainGrid(1, N)
        u = solve_perturbed(A, eps, kappa, F, grid=g, solver=solver, tol=1e-12)
        errs.append((N, max_error(u, p(g.axis(0)))))
    assert observed_order(errs) == pytest.approx(2.0, abs=0.1)


def test_manufactured_perturbed_with_boundary_data():
    A = builtin("CONST(1)", 8)
    G = BoundaryData(lambda x: 1 + x + x ** 2, lambda x: 1 + 2 * x, name="quad")
    F = lambda x: 24 - (p2(x) + 2)                              # noqa: E731
    errs = []
    for N in (31, 63, 127, 255):
        g = DomainGrid(1, N)
        x = g.axis(0)
        u = solve_perturbed(A, 1.0, 1.0, F, G, grid=g, tol=1e-12)
        errs.append((N, max_error(u, p(x) + 1 + x + x ** 2)))
        assert u.values[0, 0] == 1.0 and u.values[0, -1] == pytest.approx(3.0, abs=1e-15)
    assert observed_order(errs) == pytest.approx(2.0, abs=0.1)


def test_manufactured_perturbed_2d():
    A = builtin("CONST(1, 2)", 8)

    def F(x, y):
        bih = 24 * p(y) + 2 * p2(x) * p2(y) + 24 * p(x)
        lap = p2(x) * p(y) + p(x) * p2(y)
        return bih - lap

    errs = []
    for N in (15, 31, 63):
        g = DomainGrid(2, N)
        X, Y = g.coords()
        u = solve_perturbed(A, 1.0, 1.0, F, grid=g, tol=1e-12)
        errs.append((N, max_error(u, p(X) * p(Y))))
    assert observed_order(errs) == pytest.approx(2.0, abs=0.15)


def test_homogenized_textbook():
    g = DomainGrid(1, 63)
    x = g.axis(0)
    u = solve_homogenized(np.array(1.0), 1.0, grid=g, tol=1e-12)
    assert np.abs(u.values[0] - x * (1 - x) / 2).max() < 1e-12       # exact for quadratics
    v = solve_homogenized(np.array(math.sqrt(3)), 1.0, grid=g, tol=1e-12)
    assert np.allclose(v.values, u.values / math.sqrt(3), atol=1e-14)


def test_homogenized_2d_manufactured():
    errs = []
    F = lambda x, y: 2 * PI ** 2 * np.sin(PI * x) * np.sin(PI * y)   # noqa: E731
    for N in (15, 31, 63, 127):
        g = DomainGrid(2, N)
        X, Y = g.coords()
        u = solve_homogenized(average(builtin("CONST(1, 2)", 8)), F, grid=g, tol=1e-12)
        errs.append((N, max_error(u, np.sin(PI * X) * np.sin(PI * Y))))
    assert observed_order(errs) == pytest.approx(2.0, abs=0.1)


def test_homogenized_requires_grid():
    with pytest.raises(ValueError):
        solve_homogenized(np.array(1.0), 1.0)


def test_intermediate_manufactured_and_reduction():
    lam, eps = 2.0, 0.25
    F = lambda x: (lam * eps) ** 2 * 24 - p2(x)                         # noqa: E731
    errs = []
    for N in (31, 63, 127, 255):
        g = DomainGrid(1, N)
        v = solve_intermediate(np.array(1.0), eps, lam, F, grid=g, tol=1e-12)
        errs.append((N, max_error(v, p(g.axis(0)))))
    assert observed_order(errs) == pytest.approx(2.0, abs=0.1)
    g = DomainGrid(1, 63)
    v = solve_intermediate(np.array(1.0), 0.5, 2.0, 1.0, grid=g)
    u = solve_perturbed(builtin("CONST(1)", 8), 0.5, 1.0, 1.0, grid=g)
    assert np.abs(u.values - v.values).max() < 1e-14


@pytest.mark.parametrize("name", ["CONST(2)", "CONST(1.5, 2)", "LAME(1, 0.5)"])
def test_constant_perturbed_equals_intermediate(name):
    A = builtin(name, 8)
    eps, kappa = 0.25, 0.125
    g = DomainGrid.for_scales(A.d, eps, kappa)
    F = bump(A.d)
    u = solve_perturbed(A, eps, kappa, F, grid=g, tol=1e-12)
    v = solve_intermediate(average(A), eps, kappa / eps, F, grid=g, tol=1e-12)
    assert np.abs(u.values - v.values).max() <= 1e-12 * np.abs(u.values).max()


def test_friedman_closed_form():
    f = solve_friedman_exact(0.1)
    for x in (0.0, 1.0):
        assert abs(f.u(x)) < 1e-12 and abs(f.du(x)) < 1e-12
    # the ODE itself: lam^2 u'''' - u'' = 1, checked by finite differences of the closed form
    x, h = 0.37, 1e-3
    d2 = (f.u(x + h) - 2 * f.u(x) + f.u(x - h)) / h ** 2
    d4 = (f.u(x + 2 * h) - 4 * f.u(x + h) + 6 * f.u(x) - 4 * f.u(x - h) + f.u(x - 2 * h)) / h ** 4
    assert 0.01 * d4 - d2 == pytest.approx(1.0, abs=1e-3)


def test_friedman_fd_matches_closed_form():
    g = DomainGrid(1, 4095)
    u = solve_perturbed(builtin("CONST(1)", 8), 1.0, 0.1, 1.0, grid=g, tol=1e-12)
    assert max_error(u, solve_friedman_exact(0.1).u(g.axis(0))) <= 1e-6


def test_friedman_convergence_to_limit():
    errs = []
    for lam in (0.2, 0.1, 0.05):
        f = solve_friedman_exact(lam)
        errs.append(math.sqrt(quad(lambda x: (f.u(x) - f.u0(x)) ** 2, 0, 1, points=[lam, 1 - lam],
                                   limit=200)[0]))
    assert errs[0] > errs[1] > errs[2]
    with pytest.raises(ValueError):
        solve_friedman_exact(0.0)
    with pytest.raises(ValueError):
        solve_friedman_exact(2.0)


def test_region_norms_on_exact_data():
    g = DomainGrid(1, 1023)
    x = g.axis(0)
    u0 = DomainSolution(g, (x * (1 - x) / 2)[None], "dirichlet")
    assert norms_on_region(u0, Whole(), "L2") == pytest.approx(math.sqrt(1 / 120), rel=1e-5)
    const = DomainSolution(g, np.full((1, g.N + 2), 3.0), "given")
    assert norms_on_region(const, Ball((0.5,), 0.2), "H1_seminorm") == 0.0
    assert norms_on_region(const, Ball((0.5,), 0.2), "mean") == pytest.approx(3.0)
    assert norms_on_region(const, Box((0.5,), 0.1), "avg_L2") == pytest.approx(3.0)
    with pytest.raises(EmptyRegion):
        region_norm(const.values, g, Ball((0.5 + g.h / 2,), 1e-6))
    with pytest.raises(ValueError):
        norms_on_region(const, Whole(), "W2")


def test_layer_gradient_norm_scales_like_t_three_halves():
    g = DomainGrid(1, 8191)
    x = g.axis(0)
    u = DomainSolution(g, p(x)[None], "clamped")
    ts = [1 / 32, 1 / 64, 1 / 128, 1 / 256]
    vals = [norms_on_region(u, Layer(t), "H1_seminorm") for t in ts]
    assert fit_rate(ts, vals).slope == pytest.approx(1.5, abs=0.1)


@pytest.mark.parametrize("name,eps", [("A1", 0.25), ("A2", 0.5), ("A3", 0.5)])
def test_assembled_operator_is_symmetric(name, eps):
    A = builtin(name, 32)
    g = DomainGrid(A.d, 15)
    K = assembled_operator(A, eps, 0.25, g)
    assert abs(K - K.T).max() <= 1e-12 * abs(K).max()


@settings(max_examples=15)
@given(st.integers(0, 10 ** 6), st.sampled_from(["A1", "A2", "A3"]))
def test_discrete_operator_is_positive(seed, name):
    A = builtin(name, 32)
    g = DomainGrid(A.d, 15)
    K = assembled_operator(A, 0.5, 0.25, g)
    u = np.random.default_rng(seed).standard_normal(K.shape[0])
    assert u @ (K @ u) > 0


def test_traces_and_interior_estimate():
    A = builtin("A2", 32)
    eps = 1 / 8
    g = DomainGrid(2, 63)
    u = solve_perturbed(A, eps, eps, bump(2, center=0.5, radius=0.4), grid=g)
    sub = g.subgrid(16, 31)
    v = solve_intermediate(average(A), eps, 1.0, 0.0, Traces(u), sub)
    assert np.abs(v.values).max() > 0
    center, r = (0.5, 0.5), 0.1
    inner = norms_on_region(v, Ball(center, r), "H1_seminorm")
    outer = norms_on_region(u, Ball(center, 2 * r), "H1_seminorm")
    assert inner <= 10 * outer
    # boundary and ghost layers are copied exactly from the parent
    assert np.array_equal(v.values[:, 0, :], u.values[:, 16, 16:16 + 33])


def test_kappa_continuity():
    A = builtin("A1", 64)
    g = DomainGrid(1, 255)
    base = solve_perturbed(A, 1 / 8, 1 / 8, bump(1), grid=g)
    gaps = [norms_on_region(solve_perturbed(A, 1 / 8, 1 / 8 + d, bump(1), grid=g) - base)
            for d in (1e-2, 1e-3, 1e-4)]
    # Lipschitz in kappa: the gap shrinks in proportion to the shift
    assert gaps[0] / gaps[1] == pytest.approx(10, rel=0.05)
    assert gaps[1] / gaps[2] == pytest.approx(10, rel=0.05)


def test_solution_arithmetic_and_shapes():
    g = DomainGrid(1, 15)
    u = DomainSolution(g, np.ones((1, 17)), "given")
    with pytest.raises(ShapeMismatch):
        u.with_values(np.ones((1, 5)))
    with pytest.raises(ShapeMismatch):
        u - DomainSolution(DomainGrid(1, 31), np.ones((1, 33)), "given")
    assert u.gradient().shape == (1, 1, 17)
    assert u.interior.shape == (1, 15)


def test_sample_source_forms():
    g = DomainGrid(2, 15)
    assert sample_source(2.0, g).shape == (1, 15, 15)
    assert sample_source(lambda x, y: x + y, g, m=2).shape == (2, 15, 15)
    assert sample_source(None, g, closed=True).shape == (1, 17, 17)
    F = bump(1)
    x = np.linspace(0, 1, 1001)
    support = x[F(x) > 0]
    assert support.min() > 0.2 and support.max() < 0.7


def test_direct_and_cg_agree():
    A = builtin("A2", 32)
    g = DomainGrid(2, 31)
    a = solve_perturbed(A, 0.5, 0.25, bump(2), grid=g, tol=1e-10)
    b = solve_perturbed(A, 0.5, 0.25, bump(2), grid=g, tol=1e-10, solver="cg")
    assert np.abs(a.values - b.values).max() <= 1e-6 * np.abs(a.values).max()
    assert a.diagnostics["residual"] <= 1e-10


def test_dump_writes_pfgrid(tmp_path):
    g = DomainGrid(1, 15)
    u = solve_perturbed(builtin("A1", 32), 1.0, 1.0, 1.0, grid=g)
    u.dump(tmp_path / "u.pfgrid")
    assert (tmp_path / "u.pfgrid").read_bytes().startswith(b"PFGRID 1 1 17 1\n")
    assert (tmp_path / "u.pfgrid.json").exists()
