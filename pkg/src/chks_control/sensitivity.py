"""Tangent (linearized) and adjoint solvers for the discrete state scheme.

The adjoint is the exact transpose, in the trapezoid inner product, of the
linearization of ``state.step_state``; nothing here discretizes the
continuous backward system independently.

One tangent step around stored states ``(phi, sigma) -> (x, s)`` reads::

    J psi+ = (1/dt + l1) psi + l2 zeta - L(c psi + zeta),   c = tau/dt + 2 c0
    eta+   = B psi+ - c psi - zeta
    A zeta+ = zeta/dt - s zeta - div(zeta grad x) - div(sigma grad psi+) + h

with ``J = (1/dt + m) - L B``, ``B = tau/dt - L + G'(x)`` and
``A = (1/dt - 1 + sigma) - L``.  The backward step transposes these maps in
reverse order.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import LogPotential, control_hash, field_inner, field_norm
from .operators import (
    SolverError,
    cg_solve,
    chemotaxis_div,
    chemotaxis_div_adjoint,
    laplacian_neumann,
    LinOpSpec,
)
from .state import CahnHilliardJacobian, Model, StateTrajectory, nutrient_operator


class StaleTrajectoryError(ValueError):
    pass


@dataclass
class FrozenCoefficients:
    lam1: np.ndarray
    lam2: np.ndarray
    lam: np.ndarray
    d_conv: np.ndarray
    phi_next: np.ndarray
    sigma: np.ndarray
    sigma_next: np.ndarray
    jacobian: CahnHilliardJacobian
    nutrient: LinOpSpec


def frozen_coefficients(model: Model, traj: StateTrajectory, n: int) -> FrozenCoefficients:
    """Coefficients of the step ``n -> n+1`` linearized around ``traj``."""
    phi, sigma = traj.phi[n], traj.sigma[n]
    x = traj.phi[n + 1]
    d = LogPotential.convex_d2(x)
    return FrozenCoefficients(
        lam1=model.gamma.d_phi(phi, sigma),
        lam2=model.gamma.d_sigma(phi, sigma),
        lam=model.potential.d2(phi),
        d_conv=d,
        phi_next=x,
        sigma=sigma,
        sigma_next=traj.sigma[n + 1],
        jacobian=CahnHilliardJacobian(model, d),
        nutrient=nutrient_operator(model, sigma),
    )


def _spd_solve(model: Model, op: LinOpSpec, rhs):
    p = model.params
    x, rep = cg_solve(model.grid, op, rhs, tol=p.cg_tol, max_iter=p.cg_max_iter)
    if not rep.converged:
        raise SolverError(f"CG failed in a sensitivity solve (res {rep.final_residual:.2e})", rep)
    return x


# ---------------------------------------------------------------------------
# tangent

@dataclass
class TangentTriple:
    psi: np.ndarray
    eta: np.ndarray
    zeta: np.ndarray
    t: float


@dataclass
class TangentTrajectory:
    psi: np.ndarray
    eta: np.ndarray
    zeta: np.ndarray
    times: np.ndarray


def tangent_step_map(model: Model, co: FrozenCoefficients, psi, zeta, h):
    """Linear step map ``(psi, zeta, h) -> (psi+, eta+, zeta+)``."""
    grid, p = model.grid, model.params
    dt = p.dt
    c = p.tau / dt + 2 * p.c0
    rhs1 = (1.0 / dt + co.lam1) * psi + co.lam2 * zeta - laplacian_neumann(grid, c * psi + zeta)
    psi1, _ = co.jacobian.solve(rhs1)
    eta1 = co.jacobian.b_apply(psi1) - c * psi - zeta
    rhs2 = (zeta / dt - co.sigma_next * zeta - chemotaxis_div(grid, zeta, co.phi_next)
            - chemotaxis_div(grid, co.sigma, psi1))
    if h is not None:
        rhs2 = rhs2 + h
    zeta1 = _spd_solve(model, co.nutrient, rhs2)
    return psi1, eta1, zeta1


def step_tangent(model: Model, prev: TangentTriple, h_n, co: FrozenCoefficients) -> TangentTriple:
    psi1, eta1, zeta1 = tangent_step_map(model, co, prev.psi, prev.zeta, h_n)
    return TangentTriple(psi1, eta1, zeta1, prev.t + model.dt)


def _check_hash(traj: StateTrajectory, u) -> None:
    if control_hash(u) != traj.control_hash:
        raise StaleTrajectoryError("trajectory was computed for a different control")


def solve_tangent(model: Model, traj: StateTrajectory, u, h) -> TangentTrajectory:
    """Tangent trajectory in direction ``h`` (shape ``(nt, ny, nx)``), zero initial data."""
    _check_hash(traj, u)
    nt = model.params.nt
    shape = (nt + 1,) + model.grid.shape
    psi, eta, zeta = np.zeros(shape), np.zeros(shape), np.zeros(shape)
    cur = TangentTriple(psi[0], eta[0], zeta[0], 0.0)
    for n in range(nt):
        cur = step_tangent(model, cur, None if h is None else h[n],
                           frozen_coefficients(model, traj, n))
        psi[n + 1], eta[n + 1], zeta[n + 1] = cur.psi, cur.eta, cur.zeta
    return TangentTrajectory(psi, eta, zeta, traj.times.copy())


def q_norm(model: Model, v) -> float:
    """Discrete L2(Q) norm with the rectangle rule over the control steps."""
    dt = model.dt
    return float(np.sqrt(dt * np.sum(model.grid.mass * v * v)))


def tangent_norm(model: Model, tan: TangentTrajectory) -> float:
    """max-in-time H1 norm of psi + L2(Q) norm of eta + max-in-time L2 norm of zeta."""
    grid = model.grid
    h1 = max(np.sqrt(field_inner(grid, p_, p_) - field_inner(grid, laplacian_neumann(grid, p_), p_))
             for p_ in tan.psi)
    l2z = max(field_norm(grid, z_) for z_ in tan.zeta)
    return float(h1 + q_norm(model, tan.eta[1:]) + l2z)


def tangent_bound_ratio(model: Model, traj: StateTrajectory, u, h) -> float:
    hn = q_norm(model, h)
    if hn == 0:
        return 0.0
    return tangent_norm(model, solve_tangent(model, traj, u, h)) / hn


# ---------------------------------------------------------------------------
# adjoint

@dataclass
class AdjointTriple:
    """Adjoint fields at one time level.

    ``z`` and ``r_state`` are the variables transported backward (adjoints of
    phi and sigma); ``r`` is the control sensitivity of the step leaving this
    level (``r = g4`` at the final time), ``p``/``q`` split ``z = p + tau q``.
    """

    p: np.ndarray
    q: np.ndarray
    r: np.ndarray
    z: np.ndarray
    r_state: np.ndarray
    t: float


@dataclass
class AdjointTrajectory:
    p: np.ndarray
    q: np.ndarray
    r: np.ndarray
    z: np.ndarray
    r_state: np.ndarray
    times: np.ndarray

    def step(self, n: int) -> AdjointTriple:
        return AdjointTriple(self.p[n], self.q[n], self.r[n], self.z[n], self.r_state[n],
                             float(self.times[n]))


def adjoint_step_map(model: Model, co: FrozenCoefficients, z_next, r_next):
    """Transpose of ``tangent_step_map`` (eta dropped).

    Returns ``(psi_adj, zeta_adj, h_adj)`` such that
    ``<psi+, z_next> + <zeta+, r_next> = <psi, psi_adj> + <zeta, zeta_adj> + <h, h_adj>``.
    """
    grid, p = model.grid, model.params
    dt = p.dt
    c = p.tau / dt + 2 * p.c0
    rho = _spd_solve(model, co.nutrient, r_next)
    w, _ = co.jacobian.solve_adjoint(z_next - chemotaxis_div(grid, co.sigma, rho))
    lw = laplacian_neumann(grid, w)
    psi_adj = (1.0 / dt + co.lam1) * w - c * lw
    zeta_adj = (rho / dt - co.sigma_next * rho - chemotaxis_div_adjoint(grid, co.phi_next, rho)
                + co.lam2 * w - lw)
    return psi_adj, zeta_adj, rho


def split_z(model: Model, z):
    """Recover ``p`` from ``(-L + 1/tau) p = z/tau`` and ``q = (z - p)/tau``."""
    tau = model.params.tau
    p = _spd_solve(model, LinOpSpec(c0=1.0 / tau, c1=1.0), z / tau)
    return p, (z - p) / tau


def step_adjoint(model: Model, nxt: AdjointTriple, co: FrozenCoefficients, g1, g2) -> AdjointTriple:
    """One backward step with running sources ``g1`` (phi) and ``g2`` (sigma)."""
    dt = model.dt
    psi_adj, zeta_adj, rho = adjoint_step_map(model, co, nxt.z, nxt.r_state)
    z = psi_adj + dt * g1
    r_state = zeta_adj + dt * g2
    p, q = split_z(model, z)
    return AdjointTriple(p, q, rho / dt, z, r_state, nxt.t - dt)


def solve_adjoint(model: Model, traj: StateTrajectory, problem) -> AdjointTrajectory:
    """Backward sweep for the cost described by ``problem`` (a ``ControlProblem``)."""
    nt = model.params.nt
    g1, g2, g3, g4 = problem.tracking_sources(traj)
    shape = (nt + 1,) + model.grid.shape
    out = {k: np.zeros(shape) for k in ("p", "q", "r", "z", "r_state")}
    p, q = split_z(model, g3)
    cur = AdjointTriple(p, q, g4.copy(), g3.copy(), g4.copy(), float(traj.times[nt]))
    for k in out:
        out[k][nt] = getattr(cur, k)
    for n in range(nt - 1, -1, -1):
        cur = step_adjoint(model, cur, frozen_coefficients(model, traj, n), g1[n], g2[n])
        for k in out:
            out[k][n] = getattr(cur, k)
    return AdjointTrajectory(times=traj.times.copy(), **out)
