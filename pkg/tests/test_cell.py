import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from homogbench.cell import (
    CorrectorBundle,
    corrector_norm_sweep,
    residual,
    solve_corrector,
    solve_periodic,
)
from homogbench.coefficients import CoefficientField, builtin, embed_scalar
from homogbench.errors import IllConditioned, NoConvergence, ShapeMismatch
from homogbench.fitting import fit_rate
from homogbench.torus import PeriodicField, grad, laplacian


@pytest.mark.parametrize("lam", [0.0, 1.0, 100.0])
@pytest.mark.parametrize("name", ["CONST(2)", "CONST(1, 2)", "LAME(1, 1)"])
def test_constant_coefficients_give_zero_corrector(name, lam):
    b = solve_corrector(builtin(name, 16), lam)
    assert b.h1 <= 1e-12 and b.hess == 0.0 and b.third == 0.0
    assert np.all(b.chi == 0)


def test_a1_classical_corrector():
    A = builtin("A1", 1024)
    b = solve_corrector(A, 0.0, tol=1e-12)
    harmonic = 1.0 / quad(lambda y: 1.0 / (2 + math.sin(2 * math.pi * y)), 0, 1, epsabs=1e-14)[0]
    assert harmonic == pytest.approx(math.sqrt(3), abs=1e-12)
    y = np.arange(1024) / 1024
    dchi = b.gradient()[0, 0, 0, 0]
    assert np.abs(dchi - (harmonic / (2 + np.sin(2 * np.pi * y)) - 1)).max() < 1e-8


def test_large_lambda_corrector_is_small():
    A = builtin("A1", 256)
    assert solve_corrector(A, 100.0).h1 < 1e-3 * solve_corrector(A, 0.0).h1


@pytest.mark.parametrize("name", ["A1", "A2", "A3", "CHECKER(0.3)"])
@pytest.mark.parametrize("lam", [0.0, 1.0, 100.0])
def test_residual_confirms_solution(name, lam):
    # CHECKER is not band-limited; n must resolve it (the solver drops Nyquist lines)
    n = {"A1": 256, "CHECKER(0.3)": 128}.get(name, 32)
    A = builtin(name, n)
    b = solve_corrector(A, lam, tol=1e-10)
    assert b.residual <= 1e-10
    assert residual(A, lam, b) <= 1e-9


def test_residual_of_zero_bundle_is_one():
    A = builtin("A2", 32)
    b = solve_corrector(A, 1.0)
    zero = CorrectorBundle(np.zeros_like(b.chi), 1.0, b.tol, 0.0, 0, 2)
    assert residual(A, 1.0, zero) == pytest.approx(1.0, rel=1e-12)


def test_residual_detects_perturbation(rng):
    A = builtin("A1", 128)
    b = solve_corrector(A, 1.0, tol=1e-11)
    noisy = CorrectorBundle(b.chi + 1e-6 * rng.standard_normal(b.chi.shape), 1.0, b.tol, 0.0, 0, 1)
    assert residual(A, 1.0, noisy) > 1e3 * residual(A, 1.0, b)


def test_residual_shape_mismatch():
    b = solve_corrector(builtin("A1", 64), 1.0)
    with pytest.raises(ShapeMismatch):
        residual(builtin("A1", 128), 1.0, b)


@pytest.mark.parametrize("lam", [0.5, 3.0])
def test_energy_identity(lam):
    A = builtin("A2", 32)
    b = solve_corrector(A, lam, tol=1e-12)
    for beta, j in [(0, 0), (0, 1)]:
        chi = PeriodicField(b.chi[beta, j], 2)
        g = grad(chi).values                                      # [gamma, k, ...]
        lap = laplacian(chi).values
        agrad = np.einsum("aigk...,gk...->ai...", A.values, g)
        lhs = lam ** 2 * np.mean(lap ** 2) + np.mean(np.sum(agrad * g, axis=(0, 1)))
        rhs = -np.mean(np.sum(A.values[:, :, beta, j] * g, axis=(0, 1)))
        assert lhs == pytest.approx(rhs, rel=1e-9)


def test_uniqueness_from_different_starts(rng):
    A = builtin("A2", 32)
    a = solve_corrector(A, 1.0, tol=1e-10)
    guess = CorrectorBundle(rng.standard_normal(a.chi.shape), 1.0, 1e-10, 0.0, 0, 2)
    b = solve_corrector(A, 1.0, tol=1e-10, x0=guess)
    diff = CorrectorBundle(a.chi - b.chi, 1.0, 1e-10, 0.0, 0, 2)
    assert diff.h1 <= 10 * 1e-10 * max(a.h1, 1.0)


def test_scalar_and_system_modes_agree():
    A = builtin("A2", 32)
    s = solve_corrector(A, 0.7, tol=1e-11)
    e = solve_corrector(embed_scalar(A), 0.7, tol=1e-11)
    for beta in range(2):
        for gamma in range(2):
            expect = s.chi[0, :, 0] if beta == gamma else 0.0
            assert np.abs(e.chi[beta, :, gamma] - expect).max() <= 1e-9


def test_workers_do_not_change_result():
    A = builtin("A3", 16)
    a = solve_corrector(A, 1.0)
    b = solve_corrector(A, 1.0, workers=3)
    assert np.array_equal(a.chi, b.chi)


def test_norm_sweep_slopes():
    lams = [8.0, 16.0, 32.0, 64.0]
    rows = corrector_norm_sweep(builtin("A1", 256), lams, tol=1e-11)
    h1 = fit_rate(lams, [r.h1 for r in rows])
    hess = fit_rate(lams, [r.hess for r in rows])
    assert h1.slope == pytest.approx(-2.0, abs=0.1)
    assert hess.slope == pytest.approx(-2.0, abs=0.1)
    const = corrector_norm_sweep(builtin("CONST(1)", 16), lams)
    assert all(r.h1 == 0 and r.hess == 0 and r.third == 0 for r in const)
    with pytest.raises(ValueError):
        corrector_norm_sweep(builtin("A1", 16), [2.0, 1.0])


def test_lambda_continuity_ratio_bounded():
    A = builtin("A1", 256)
    lams = [0.5, 0.6, 0.8, 1.0, 1.5, 2.0]
    bundles = {lam: solve_corrector(A, lam, tol=1e-12) for lam in lams}
    ratios = []
    for l1, l2 in zip(lams[:-1], lams[1:]):
        g1, g2 = bundles[l1].gradient(), bundles[l2].gradient()
        gap = math.sqrt(np.mean((g1 - g2) ** 2))
        ratios.append(gap / abs(1 - (l1 / l2) ** 2))
    assert max(ratios) / min(ratios) < 10


def test_dump_and_load(tmp_path):
    b = solve_corrector(builtin("A3", 16), 1.0)
    path = tmp_path / "chi.pfgrid"
    b.dump(path)
    c = CorrectorBundle.load(path)
    assert np.array_equal(b.chi, c.chi)
    assert (c.lam, c.iterations, c.d) == (b.lam, b.iterations, b.d)


def test_bad_arguments():
    A = builtin("A1", 32)
    with pytest.raises(ValueError):
        solve_corrector(A, 1.0, tol=1e-3)
    with pytest.raises(ValueError):
        solve_corrector(A, -1.0)
    degenerate = CoefficientField(A.values, 0.0, 3.0)
    with pytest.raises(IllConditioned):
        solve_corrector(degenerate, 1.0)
    with pytest.raises(NoConvergence) as info:
        solve_corrector(builtin("A2", 32), 0.0, tol=1e-12, max_iters=2)
    assert info.value.iterations >= 2


def test_solve_periodic_manufactured():
    A = builtin("A1", 64)
    u = PeriodicField.from_function(lambda y: np.cos(2 * np.pi * y), 64, 1)
    lam = 0.3
    a = A.values[0, 0, 0, 0]
    F = lam ** 2 * laplacian(laplacian(u)).values - np.real(
        np.fft.ifft(2j * np.pi * np.fft.fftfreq(64, 1 / 64) * np.fft.fft(a * grad(u).values[0])))
    got = solve_periodic(A, lam, PeriodicField(F, 1))
    assert np.abs(got.values - u.values).max() < 1e-9


@settings(max_examples=10)
@given(st.floats(0.0, 20.0))
def test_residual_small_for_any_lambda(lam):
    A = builtin("A1", 64)
    b = solve_corrector(A, lam, tol=1e-10)
    assert residual(A, lam, b) <= 1e-9
