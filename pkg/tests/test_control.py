import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from chks_control.control import (
    ControlProblem,
    OptimizerConfig,
    ReducedCost,
    cost_eval,
    optimize,
    project_admissible,
    q_norm,
    reduced_gradient,
    stationarity_residual,
)
from chks_control.core import Grid2D, ModelParams
from chks_control.sensitivity import solve_adjoint
from chks_control.state import Model, solve_state
from chks_control.verify import gradient_check

from .conftest import bump_data

NT = 20
SHAPE = (NT, 16, 16)


@pytest.fixture
def traj(small_model, small_init):
    return solve_state(small_model, small_init)


def test_cost_zero_on_perfect_tracking(small_model, traj):
    prob = ControlProblem((1, 1, 1, 1, 1), phi_Q=traj.phi, phi_Omega=traj.phi[-1],
                          sigma_Q=traj.sigma, sigma_Omega=traj.sigma[-1])
    assert cost_eval(small_model, traj, None, prob).J == 0.0


def test_cost_of_constant_control():
    grid = Grid2D(9, 9)
    model = Model(grid, ModelParams(T=1.0, nt=10))
    traj = solve_state(model, bump_data(grid), np.full((10, 9, 9), 0.3))
    prob = ControlProblem((0, 0, 0, 0, 2.0))
    c = cost_eval(model, traj, np.full((10, 9, 9), 0.3), prob)
    assert c.J == pytest.approx(0.5 * 2.0 * 0.09, rel=1e-13)
    assert c.u == c.J


def test_cost_is_linear_in_weights(small_model, traj, rng):
    u = 0.1 * rng.uniform(-1, 1, SHAPE)
    prob = ControlProblem((1, 2, 3, 4, 5), phi_Q=0.2, sigma_Q=0.3)
    j1 = cost_eval(small_model, traj, u, prob).J
    j2 = cost_eval(small_model, traj, u, prob.scaled(2.0)).J
    assert j2 == pytest.approx(2 * j1, rel=1e-14)


def test_problem_invariants(small_model):
    with pytest.raises(ValueError):
        ControlProblem((0, 0, 0, 0, 0))
    with pytest.raises(ValueError):
        ControlProblem((1, 1, 1, 1, -1))
    with pytest.raises(ValueError):
        ControlProblem((1, 1, 1, 1, 1), u_min=1, u_max=0)
    with pytest.raises(ValueError):
        ControlProblem((1, 1, 1, 1, 1), phi_Q=np.zeros((3, 16, 16))).validate(small_model)


# --- projection ------------------------------------------------------------

def test_projection_examples():
    prob = ControlProblem((1, 1, 1, 1, 1), u_min=-0.5, u_max=0.5)
    u = np.linspace(-0.5, 0.5, 12).reshape(1, 3, 4)
    assert np.array_equal(project_admissible(u, prob), u)
    assert np.all(project_admissible(np.full((2, 3, 3), 1e300), prob) == 0.5)


@given(arrays(np.float64, (2, 3, 3), elements=st.floats(-1e6, 1e6)))
def test_projection_idempotent_and_feasible(u):
    lo = -np.linspace(0.1, 1.0, 9).reshape(3, 3)
    prob = ControlProblem((1, 1, 1, 1, 1), u_min=lo, u_max=0.25)
    p = project_admissible(u, prob)
    assert np.array_equal(project_admissible(p, prob), p)
    assert np.all(p >= lo) and np.all(p <= 0.25)


# --- gradient --------------------------------------------------------------

def test_gradient_with_control_cost_only(small_model, small_init, rng):
    u = 0.2 * rng.uniform(-1, 1, SHAPE)
    prob = ControlProblem((0, 0, 0, 0, 0.7))
    g, _ = ReducedCost(small_model, small_init, prob).gradient(u)
    assert np.array_equal(g, 0.7 * u)


def test_gradient_equals_r_without_control_cost(small_model, small_init, traj):
    prob = ControlProblem((1, 1, 1, 1, 0), sigma_Q=0.5)
    adj = solve_adjoint(small_model, traj, prob)
    assert np.array_equal(reduced_gradient(small_model, np.zeros(SHAPE), adj, prob), adj.r[:NT])


def test_gradient_matches_finite_differences(small_model, small_init):
    prob = ControlProblem((1, 1, 1, 1, 1e-2), phi_Q=0.0, sigma_Q=0.5, sigma_Omega=0.5)
    results = gradient_check(small_model, init=small_init, prob=prob, seed=3)
    assert all(r.value <= 1e-8 for r in results), results


# --- stationarity ----------------------------------------------------------

def test_stationarity_examples(small_model, rng):
    prob = ControlProblem((1, 1, 1, 1, 0.1), u_min=-0.5, u_max=0.5)
    u = 0.3 * rng.uniform(-1, 1, SHAPE)
    assert stationarity_residual(small_model, u, np.zeros(SHAPE), prob) == 0.0
    r = rng.standard_normal(SHAPE)
    u_star = project_admissible(-r / 0.1, prob)
    assert stationarity_residual(small_model, u_star, r + 0.1 * u_star, prob) < 1e-12
    top = np.full(SHAPE, 0.5)
    assert stationarity_residual(small_model, top, -np.ones(SHAPE), prob) == 0.0


# --- optimizer -------------------------------------------------------------

def test_zero_iteration_budget_echoes_initial_cost(small_model, small_init):
    prob = ControlProblem((1, 1, 1, 1, 1e-2), sigma_Q=0.8)
    rep = optimize(small_model, small_init, prob, opt=OptimizerConfig(max_outer_iters=0))
    assert len(rep.records) == 1
    assert rep.records[0].J == pytest.approx(ReducedCost(small_model, small_init, prob)(
        np.zeros(SHAPE)))


def test_control_cost_only_converges_to_zero(small_model, small_init, rng):
    prob = ControlProblem((0, 0, 0, 0, 1.0), u_min=-1, u_max=1)
    u0 = rng.uniform(-1, 1, SHAPE)
    rep = optimize(small_model, small_init, prob, u0,
                   OptimizerConfig(stationarity_tol=1e-10))
    assert rep.converged
    assert q_norm(small_model, rep.u) < 1e-10


@pytest.mark.parametrize("rule", ["warm", "bb"])
def test_optimizer_monotone_and_feasible(small_model, small_init, rule):
    prob = ControlProblem((1, 1, 1, 1, 1e-3), phi_Q=0.2, sigma_Q=0.7, sigma_Omega=0.7,
                          u_min=-0.3, u_max=0.3)
    seen = []
    rep = optimize(small_model, small_init, prob,
                   opt=OptimizerConfig(max_outer_iters=15, step_rule=rule),
                   log=seen.append)
    J = rep.J_history
    assert len(seen) == len(rep.records)
    assert np.all(np.diff(J) <= 0)
    assert J[-1] < J[0]
    assert np.all(np.abs(rep.u) <= 0.3)


def test_optimizer_config_validation():
    for bad in (dict(armijo_c1=0), dict(armijo_shrink=1), dict(max_outer_iters=-1),
                dict(step_rule="newton")):
        with pytest.raises(ValueError):
            OptimizerConfig(**bad)
