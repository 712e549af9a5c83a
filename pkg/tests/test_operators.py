import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import brentq

from chks_control.core import Grid2D, LogPotential, field_inner
from chks_control.operators import (
    LinOpSpec,
    NewtonError,
    cg_solve,
    chemotaxis_div,
    chemotaxis_div_adjoint,
    laplacian_neumann,
    newton_safeguarded,
    spectrum,
)
from chks_control.verify import laplacian_errors, observed_orders

grids = st.builds(Grid2D, st.integers(3, 12), st.integers(3, 12), st.floats(0.5, 2.0),
                  st.floats(0.5, 2.0))
seeds = st.integers(0, 2**32 - 1)


def _eigenfunction(grid):
    X, Y = grid.mesh
    return np.cos(np.pi * X) * np.cos(np.pi * Y)


# --- Laplacian -------------------------------------------------------------

def test_laplacian_kills_constants(grid16):
    assert np.array_equal(laplacian_neumann(grid16, grid16.full(2.5)), grid16.zeros())


def test_laplacian_eigenfunction():
    for n in (17, 33):
        g = Grid2D(n, n)
        f = _eigenfunction(g)
        err = np.max(np.abs(laplacian_neumann(g, f) + 2 * np.pi**2 * f))
        assert err < 2.0 * g.hx**2 * np.pi**4


def test_laplacian_order():
    assert min(observed_orders(laplacian_errors())) >= 1.8


@given(grids, seeds)
def test_laplacian_integrates_to_zero(grid, seed):
    f = np.random.default_rng(seed).standard_normal(grid.shape)
    scale = (1 + np.abs(f).max()) * grid.area / min(grid.hx, grid.hy) ** 2
    assert abs(field_inner(grid, laplacian_neumann(grid, f), 1.0)) < 1e-12 * scale


@given(grids, seeds)
def test_laplacian_self_adjoint_and_negative(grid, seed):
    r = np.random.default_rng(seed)
    f, g = r.standard_normal(grid.shape), r.standard_normal(grid.shape)
    lhs = field_inner(grid, laplacian_neumann(grid, f), g)
    rhs = field_inner(grid, f, laplacian_neumann(grid, g))
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-10)
    assert field_inner(grid, laplacian_neumann(grid, f), f) <= 1e-10


@given(grids)
def test_spectrum_matches_stencil(grid):
    spec = spectrum(grid)
    f = np.random.default_rng(0).standard_normal(grid.shape)
    via_dct = spec.apply(-spec.eigenvalues, f)
    assert np.allclose(via_dct, laplacian_neumann(grid, f), rtol=0, atol=1e-9 / grid.hx**2)


# --- chemotaxis ------------------------------------------------------------

def test_chemotaxis_examples(grid16, rng):
    phi = rng.standard_normal(grid16.shape)
    assert np.array_equal(chemotaxis_div(grid16, grid16.zeros(), phi), grid16.zeros())
    assert np.array_equal(chemotaxis_div(grid16, phi, grid16.full(0.3)), grid16.zeros())
    assert np.array_equal(chemotaxis_div(grid16, grid16.full(1.0), phi),
                          laplacian_neumann(grid16, phi))


@given(grids, seeds)
def test_chemotaxis_adjoint_and_conservation(grid, seed):
    r = np.random.default_rng(seed)
    sigma, phi, y = (r.standard_normal(grid.shape) for _ in range(3))
    c = chemotaxis_div(grid, sigma, phi)
    assert abs(field_inner(grid, c, 1.0)) < 1e-10 * np.abs(c).max() * grid.area
    lhs = field_inner(grid, c, y)
    rhs = field_inner(grid, sigma, chemotaxis_div_adjoint(grid, phi, y))
    assert lhs == pytest.approx(rhs, rel=1e-11, abs=1e-10)
    # in its second argument the operator is symmetric
    z = r.standard_normal(grid.shape)
    assert field_inner(grid, chemotaxis_div(grid, sigma, phi), z) == pytest.approx(
        field_inner(grid, phi, chemotaxis_div(grid, sigma, z)), rel=1e-11, abs=1e-10)


# --- CG --------------------------------------------------------------------

def test_cg_identity(grid16, rng):
    b = rng.standard_normal(grid16.shape)
    x, rep = cg_solve(grid16, LinOpSpec(1.0), b, precond=None)
    assert rep.converged and rep.iterations <= 1
    assert np.allclose(x, b, atol=1e-14)


def test_cg_eigenfunction():
    g = Grid2D(33, 33)
    f = _eigenfunction(g)
    x, rep = cg_solve(g, LinOpSpec(1.0, 1.0), (1 + 2 * np.pi**2) * f)
    assert rep.converged
    assert np.max(np.abs(x - f)) < 5 * g.hx**2


@pytest.mark.parametrize("precond", ["spectral", "jacobi", None])
def test_cg_random_spd(grid16, rng, precond):
    op = LinOpSpec(2.0, 1.0, 1.0, rng.uniform(0.0, 3.0, grid16.shape))
    b = rng.standard_normal(grid16.shape)
    x, rep = cg_solve(grid16, op, b, tol=1e-12, precond=precond)
    assert rep.converged
    assert np.linalg.norm(op.apply(grid16, x) - b) <= 1e-12 * np.linalg.norm(b)


def test_cg_reports_nonconvergence(grid16, rng):
    b = rng.standard_normal(grid16.shape)
    _, rep = cg_solve(grid16, LinOpSpec(1e-3, 1.0), b, max_iter=1, precond=None)
    assert not rep.converged and rep.iterations == 1


def test_linop_definiteness():
    assert LinOpSpec(1.0, 1.0).is_positive_definite()
    assert not LinOpSpec(0.0, 1.0).is_positive_definite()
    assert not LinOpSpec(1.0, 1.0, -1.0, np.full((3, 3), 2.0)).is_positive_definite()


# --- Newton ----------------------------------------------------------------

def test_newton_affine_one_step():
    x, rep = newton_safeguarded(lambda x: x - 0.3, lambda x, b: b, np.zeros(4), tol=1e-12)
    assert np.allclose(x, 0.3, atol=0, rtol=1e-15)
    assert rep.iterations == 1 and rep.converged


def _scalar_model(rhs, tau_dt=20.0, c0=1.5):
    pot = LogPotential(c0)

    def residual(x):
        return tau_dt * x + pot.d1(x) - rhs

    def solve(x, b):
        return b / (tau_dt + pot.d2(x))

    return residual, solve


def test_newton_matches_bisection_oracle():
    residual, solve = _scalar_model(0.5)
    x, rep = newton_safeguarded(residual, solve, np.zeros(1), tol=1e-13)
    root = brentq(lambda s: float(residual(np.array([s]))[0]), -1 + 1e-12, 1 - 1e-12, xtol=1e-15)
    assert abs(x[0] - root) < 1e-10


@given(st.floats(-1e6, 1e6))
def test_newton_stays_inside_interval(rhs):
    residual, solve = _scalar_model(rhs)
    seen = [0.0]
    bound = 1 - 1e-9
    try:
        x, _ = newton_safeguarded(residual, solve, np.zeros(1), tol=1e-10, max_iter=200,
                                  bound=bound,
                                  callback=lambda v: seen.append(float(np.max(np.abs(v)))))
    except NewtonError:
        # only acceptable when the root itself lies beyond the safeguard
        assert np.sign(residual(np.array([np.sign(rhs) * bound]))[0]) != np.sign(rhs)
    else:
        assert abs(x[0]) <= bound
    assert max(seen) <= bound


def test_newton_rejects_outside_start_and_collapse():
    with pytest.raises(ValueError):
        newton_safeguarded(lambda x: x, lambda x, b: b, np.array([2.0]))
    # wrong-sign "Jacobian": merit never decreases
    with pytest.raises(NewtonError):
        newton_safeguarded(lambda x: x - 0.3, lambda x, b: -b, np.zeros(1))
