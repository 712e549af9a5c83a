"""Numerical verification suites behind ``chks check``.

Each suite returns a list of ``CheckResult`` rows; a row passes when its
measured value does not exceed the threshold (or, for ``kind="min"``, is
at least the threshold).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .control import ControlProblem, ReducedCost, q_inner
from .core import GammaSource, Grid2D, ModelParams, field_inner
from .operators import laplacian_neumann
from .sensitivity import (
    adjoint_step_map,
    frozen_coefficients,
    solve_adjoint,
    solve_tangent,
    tangent_norm,
    tangent_step_map,
)
from .state import InitialData, Model, mass_balance_report, solve_state


@dataclass(frozen=True)
class CheckResult:
    name: str
    value: float
    threshold: float
    kind: str = "max"

    @property
    def passed(self) -> bool:
        if not math.isfinite(self.value):
            return False
        return self.value <= self.threshold if self.kind == "max" else self.value >= self.threshold


def format_table(results) -> str:
    lines = [f"{'check':<34} {'measured':>12} {'threshold':>12}  result"]
    for r in results:
        op = "<=" if r.kind == "max" else ">="
        lines.append(f"{r.name:<34} {r.value:12.3e} {op}{r.threshold:10.1e}  "
                     f"{'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)


def random_control(model: Model, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    return scale * rng.uniform(-1.0, 1.0, (model.params.nt,) + model.grid.shape)


def _rel(a: float, b: float) -> float:
    den = max(abs(a), abs(b))
    return abs(a - b) / den if den > 0 else 0.0


# ---------------------------------------------------------------------------

def gradient_check(model: Model, init: InitialData, prob: ControlProblem, u=None, seed: int = 0,
                   eps=(1e-3, 1e-4, 1e-5), tol: float = 1e-8) -> list[CheckResult]:
    """Adjoint directional derivative against central differences of the cost."""
    rng = np.random.default_rng(seed)
    rc = ReducedCost(model, init, prob)
    if u is None:
        u = random_control(model, rng, 0.2)
    h = random_control(model, rng)
    grad, _ = rc.gradient(u)
    exact = q_inner(model, grad, h)
    out = []
    for e in eps:
        fd = (rc(u + e * h) - rc(u - e * h)) / (2 * e)
        out.append(CheckResult(f"gradient eps={e:g}", _rel(fd, exact), tol))
    return out


def duality_residual(model: Model, traj, u, prob: ControlProblem, h, adj=None) -> float:
    """Relative mismatch between both sides of the discrete duality identity."""
    a1, a2, a3, a4, _ = prob.alphas
    adj = adj if adj is not None else solve_adjoint(model, traj, prob)
    tan = solve_tangent(model, traj, u, h)
    nt, dt, grid = model.params.nt, model.dt, model.grid
    lhs = q_inner(model, adj.r[:nt], h)
    rhs = 0.0
    for n in range(nt):
        rhs += dt * a1 * field_inner(grid, traj.phi[n] - prob._at(prob.phi_Q, n), tan.psi[n])
        rhs += dt * a3 * field_inner(grid, traj.sigma[n] - prob._at(prob.sigma_Q, n), tan.zeta[n])
    rhs += a2 * field_inner(grid, traj.phi[nt] - np.asarray(prob.phi_Omega, float), tan.psi[nt])
    rhs += a4 * field_inner(grid, traj.sigma[nt] - np.asarray(prob.sigma_Omega, float),
                            tan.zeta[nt])
    return _rel(lhs, rhs)


def duality_check(model: Model, init: InitialData, prob: ControlProblem, u=None, seed: int = 0,
                  directions: int = 5, tol: float = 1e-10) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    if u is None:
        u = random_control(model, rng, 0.2)
    traj = solve_state(model, init, u)
    adj = solve_adjoint(model, traj, prob)
    return [CheckResult(f"duality direction {k}",
                        duality_residual(model, traj, u, prob, random_control(model, rng), adj), tol)
            for k in range(directions)]


def transpose_check(model: Model, init: InitialData, u=None, seed: int = 0, steps=None,
                    tol: float = 1e-11) -> list[CheckResult]:
    """Per-step test ``|<Tx, y> - <x, T*y>| <= tol ||x|| ||y||``."""
    rng = np.random.default_rng(seed)
    nt, grid = model.params.nt, model.grid
    traj = solve_state(model, init, u)
    if steps is None:
        steps = sorted({0, nt // 2, nt - 1}) if nt else []
    out = []
    for n in steps:
        co = frozen_coefficients(model, traj, n)
        psi, zeta, h, z, r = (rng.standard_normal(grid.shape) for _ in range(5))
        psi1, _, zeta1 = tangent_step_map(model, co, psi, zeta, h)
        psi_a, zeta_a, h_a = adjoint_step_map(model, co, z, r)
        ip = field_inner
        left = ip(grid, psi1, z) + ip(grid, zeta1, r)
        right = ip(grid, psi, psi_a) + ip(grid, zeta, zeta_a) + ip(grid, h, h_a)
        nx = math.sqrt(ip(grid, psi, psi) + ip(grid, zeta, zeta) + ip(grid, h, h))
        ny = math.sqrt(ip(grid, z, z) + ip(grid, r, r))
        out.append(CheckResult(f"transpose step {n}", abs(left - right) / (nx * ny), tol))
    return out


def mass_check(model: Model, init: InitialData, u=None, tol: float = 1e-10) -> list[CheckResult]:
    traj = solve_state(model, init, u)
    mb = mass_balance_report(model, traj, u)
    rp = float(mb.rel_phi.max()) if mb.r_phi.size else 0.0
    rs = float(mb.rel_sigma.max()) if mb.r_sigma.size else 0.0
    return [CheckResult("mass balance phi", rp, tol), CheckResult("mass balance sigma", rs, tol)]


# ---------------------------------------------------------------------------
# convergence

def logistic_errors(nts=(1000, 2000), n: int = 16, T: float = 1.0) -> list[float]:
    """|sigma(T) - 1/(1+e^-T)| for uniform data with no source and no control."""
    exact = 1.0 / (1.0 + math.exp(-T))
    grid = Grid2D(n, n)
    init = InitialData(grid.full(0.0), grid.full(0.5))
    errs = []
    for nt in nts:
        model = Model(grid, ModelParams(T=T, nt=nt), GammaSource(amplitude=0.0))
        traj = solve_state(model, init)
        errs.append(float(np.max(np.abs(traj.sigma[-1] - exact))))
    return errs


def laplacian_errors(ns=(17, 33, 65)) -> list[float]:
    """Max error of the discrete Laplacian on ``cos(pi x) cos(pi y)``."""
    errs = []
    for n in ns:
        grid = Grid2D(n, n)
        X, Y = grid.mesh
        f = np.cos(np.pi * X) * np.cos(np.pi * Y)
        errs.append(float(np.max(np.abs(laplacian_neumann(grid, f) + 2 * np.pi**2 * f))))
    return errs


def observed_orders(errs) -> list[float]:
    return [math.log2(a / b) for a, b in zip(errs, errs[1:])]


def convergence_check() -> list[CheckResult]:
    le = logistic_errors()
    lap = laplacian_errors()
    return [
        CheckResult("logistic error dt=1e-3", le[0], 2e-3),
        CheckResult("logistic halving factor", le[0] / le[1], 1.9, "min"),
        CheckResult("laplacian order (h, h/2)", observed_orders(lap)[0], 1.8, "min"),
        CheckResult("laplacian order (h/2, h/4)", observed_orders(lap)[1], 1.8, "min"),
    ]


# ---------------------------------------------------------------------------
# continuous dependence

def continuous_dependence_ratios(model: Model, init: InitialData, pairs: int = 10,
                                 seed: int = 0, scale: float = 0.3) -> np.ndarray:
    """Ratios ``||S(u1) - S(u2)|| / ||u1 - u2||_Q`` over random control pairs.

    The state difference is measured in the tangent norm (max-in-time H1 of
    phi, L2(Q) of mu, max-in-time L2 of sigma).
    """
    from .sensitivity import TangentTrajectory, q_norm

    rng = np.random.default_rng(seed)
    ratios = []
    for _ in range(pairs):
        u1 = random_control(model, rng, scale)
        u2 = random_control(model, rng, scale)
        t1, t2 = solve_state(model, init, u1), solve_state(model, init, u2)
        diff = TangentTrajectory(t1.phi - t2.phi, t1.mu - t2.mu, t1.sigma - t2.sigma, t1.times)
        ratios.append(tangent_norm(model, diff) / q_norm(model, u1 - u2))
    return np.array(ratios)


def check_guard(model: Model, max_cells: int = 64 * 64, max_nt: int = 200) -> None:
    if model.grid.nx * model.grid.ny > max_cells or model.params.nt > max_nt:
        raise ValueError(f"check configs are limited to nx*ny <= {max_cells} and nt <= {max_nt}")


def with_newton_tol(model: Model, tol: float) -> Model:
    return Model(model.grid, replace(model.params, newton_tol=tol), model.gamma)
