"""Tracking cost, admissible controls and projected-gradient optimization.

Controls are piecewise constant in time: ``u[n]`` acts during the step from
``t_n`` to ``t_{n+1}``, so a control has shape ``(nt, ny, nx)``.  Running
terms of the cost use the left-endpoint rule over ``n = 0..nt-1``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .operators import SolverError
from .sensitivity import AdjointTrajectory, solve_adjoint
from .state import InitialData, Model, StateTrajectory, solve_state


@dataclass
class ControlProblem:
    """Cost weights, targets and control bounds.

    ``phi_Q`` and ``sigma_Q`` are either one field or a stack sampled at
    ``t_0..t_nt``; ``u_min``/``u_max`` broadcast against ``(nt, ny, nx)``.
    """

    alphas: tuple
    phi_Q: np.ndarray | float = 0.0
    phi_Omega: np.ndarray | float = 0.0
    sigma_Q: np.ndarray | float = 0.0
    sigma_Omega: np.ndarray | float = 0.0
    u_min: np.ndarray | float = -0.5
    u_max: np.ndarray | float = 0.5

    def __post_init__(self):
        self.alphas = tuple(float(a) for a in self.alphas)
        if len(self.alphas) != 5:
            raise ValueError("need exactly five cost weights")
        if any(a < 0 or not math.isfinite(a) for a in self.alphas):
            raise ValueError("cost weights must be finite and nonnegative")
        if sum(self.alphas) <= 0:
            raise ValueError("cost weights must not all vanish")
        if np.any(np.asarray(self.u_min) > np.asarray(self.u_max)):
            raise ValueError("need u_min <= u_max everywhere")

    def validate(self, model: Model) -> None:
        nt, shape = model.params.nt, model.grid.shape
        for name in ("phi_Q", "sigma_Q"):
            a = np.asarray(getattr(self, name))
            if a.ndim not in (0, 2, 3) or (a.ndim == 2 and a.shape != shape) or (
                    a.ndim == 3 and a.shape != (nt + 1,) + shape):
                raise ValueError(f"{name} has shape {a.shape}")
        for name in ("phi_Omega", "sigma_Omega"):
            a = np.asarray(getattr(self, name))
            if a.ndim not in (0, 2) or (a.ndim == 2 and a.shape != shape):
                raise ValueError(f"{name} has shape {a.shape}")
        try:
            np.broadcast_shapes(np.shape(self.u_min), np.shape(self.u_max), (nt,) + shape)
        except ValueError:
            raise ValueError("control bounds do not broadcast to the control shape") from None

    @staticmethod
    def _at(target, n):
        a = np.asarray(target, dtype=float)
        return a[n] if a.ndim == 3 else a

    def tracking_sources(self, traj: StateTrajectory):
        """Adjoint sources: running ``g1``/``g2`` per level, terminal ``g3``/``g4``."""
        a1, a2, a3, a4, _ = self.alphas
        nt = len(traj) - 1
        g1 = np.stack([a1 * (traj.phi[n] - self._at(self.phi_Q, n)) for n in range(nt + 1)])
        g2 = np.stack([a3 * (traj.sigma[n] - self._at(self.sigma_Q, n)) for n in range(nt + 1)])
        g3 = a2 * (traj.phi[nt] - np.asarray(self.phi_Omega, dtype=float))
        g4 = a4 * (traj.sigma[nt] - np.asarray(self.sigma_Omega, dtype=float))
        return g1, g2, g3 + np.zeros_like(traj.phi[nt]), g4 + np.zeros_like(traj.phi[nt])

    def scaled(self, factor: float) -> "ControlProblem":
        return ControlProblem(tuple(factor * a for a in self.alphas), self.phi_Q, self.phi_Omega,
                              self.sigma_Q, self.sigma_Omega, self.u_min, self.u_max)


@dataclass(frozen=True)
class CostBreakdown:
    J: float
    phi_Q: float
    phi_T: float
    sigma_Q: float
    sigma_T: float
    u: float


def q_inner(model: Model, a, b) -> float:
    return float(model.dt * np.sum(model.grid.mass * a * b))


def q_norm(model: Model, a) -> float:
    return math.sqrt(max(q_inner(model, a, a), 0.0))


def cost_eval(model: Model, traj: StateTrajectory, u, prob: ControlProblem) -> CostBreakdown:
    grid, dt = model.grid, model.dt
    nt = model.params.nt
    if len(traj) != nt + 1:
        raise ValueError("trajectory length does not match nt")
    a1, a2, a3, a4, a5 = prob.alphas
    mass = grid.mass

    def sq(e):
        return float(np.sum(mass * e * e))

    run_phi = sum(sq(traj.phi[n] - prob._at(prob.phi_Q, n)) for n in range(nt)) * dt
    run_sig = sum(sq(traj.sigma[n] - prob._at(prob.sigma_Q, n)) for n in range(nt)) * dt
    fin_phi = sq(traj.phi[nt] - np.asarray(prob.phi_Omega, dtype=float))
    fin_sig = sq(traj.sigma[nt] - np.asarray(prob.sigma_Omega, dtype=float))
    ctrl = 0.0 if u is None else q_inner(model, u, u)
    parts = (0.5 * a1 * run_phi, 0.5 * a2 * fin_phi, 0.5 * a3 * run_sig, 0.5 * a4 * fin_sig,
             0.5 * a5 * ctrl)
    return CostBreakdown(sum(parts), *parts)


def project_admissible(u, prob: ControlProblem) -> np.ndarray:
    return np.clip(u, prob.u_min, prob.u_max)


def reduced_gradient(model: Model, u, adj: AdjointTrajectory, prob: ControlProblem) -> np.ndarray:
    nt = model.params.nt
    g = adj.r[:nt].copy()
    if u is not None:
        g += prob.alphas[4] * np.asarray(u)
    return g


def infeasibility(u, prob: ControlProblem) -> float:
    """Largest bound violation of ``u``; zero for admissible controls."""
    u = np.asarray(u)
    if u.size == 0:
        return 0.0
    return float(max(np.max(prob.u_min - u), np.max(u - prob.u_max), 0.0))


def stationarity_residual(model: Model, u, grad, prob: ControlProblem) -> float:
    """Q-norm of ``u - P(u - grad)``; zero exactly at points satisfying the
    discrete variational inequality."""
    u = np.zeros_like(grad) if u is None else np.asarray(u)
    return q_norm(model, u - project_admissible(u - grad, prob))


class ReducedCost:
    """The map ``u -> J(u, S(u))`` together with its adjoint gradient."""

    def __init__(self, model: Model, init: InitialData, prob: ControlProblem):
        prob.validate(model)
        self.model = model
        self.init = init
        self.prob = prob

    def evaluate(self, u) -> tuple[CostBreakdown, StateTrajectory]:
        traj = solve_state(self.model, self.init, u)
        return cost_eval(self.model, traj, u, self.prob), traj

    def __call__(self, u) -> float:
        return self.evaluate(u)[0].J

    def gradient(self, u, traj: StateTrajectory | None = None):
        if traj is None:
            traj = solve_state(self.model, self.init, u)
        adj = solve_adjoint(self.model, traj, self.prob)
        return reduced_gradient(self.model, u, adj, self.prob), adj


@dataclass(frozen=True)
class OptimizerConfig:
    max_outer_iters: int = 200
    armijo_c1: float = 1e-4
    armijo_shrink: float = 0.5
    initial_step: float | None = None
    stationarity_tol: float = 1e-4
    min_step: float = 1e-12
    step_rule: str = "warm"

    def __post_init__(self):
        if not 0 < self.armijo_c1 < 1:
            raise ValueError("armijo_c1 must lie in (0, 1)")
        if not 0 < self.armijo_shrink < 1:
            raise ValueError("armijo_shrink must lie in (0, 1)")
        if self.max_outer_iters < 0:
            raise ValueError("max_outer_iters must be nonnegative")
        if self.step_rule not in ("warm", "bb"):
            raise ValueError(f"unknown step rule {self.step_rule!r}")


@dataclass(frozen=True)
class IterationRecord:
    iter: int
    cost: CostBreakdown
    stationarity: float
    step: float
    armijo_rejects: int
    infeasibility: float = 0.0

    @property
    def J(self) -> float:
        return self.cost.J


@dataclass
class OptimizationReport:
    records: list = field(default_factory=list)
    u: np.ndarray | None = None
    trajectory: StateTrajectory | None = None
    adjoint: AdjointTrajectory | None = None
    gradient: np.ndarray | None = None
    converged: bool = False
    reason: str = ""

    @property
    def J_history(self) -> np.ndarray:
        return np.array([r.J for r in self.records])

    @property
    def final_stationarity(self) -> float:
        return self.records[-1].stationarity


def optimize(model: Model, init: InitialData, prob: ControlProblem, u0=None,
             opt: OptimizerConfig = OptimizerConfig(), log=None) -> OptimizationReport:
    """Projected gradient with Armijo backtracking along the projected path.

    ``log``, if given, is called with every ``IterationRecord``.
    """
    rc = ReducedCost(model, init, prob)
    shape = (model.params.nt,) + model.grid.shape
    u = project_admissible(np.zeros(shape) if u0 is None else np.asarray(u0, dtype=float), prob)
    cost, traj = rc.evaluate(u)
    step = opt.initial_step if opt.initial_step is not None else 1.0 / (1.0 + prob.alphas[4])
    report = OptimizationReport()
    rejects = 0
    last_step = 0.0
    prev_u = prev_g = None
    it = 0
    while True:
        g, adj = rc.gradient(u, traj)
        stat = stationarity_residual(model, u, g, prob)
        rec = IterationRecord(it, cost, stat, last_step, rejects, infeasibility(u, prob))
        report.records.append(rec)
        if log is not None:
            log(rec)
        report.u, report.trajectory, report.adjoint, report.gradient = u, traj, adj, g
        if stat <= opt.stationarity_tol:
            report.converged, report.reason = True, "stationary"
            break
        if it >= opt.max_outer_iters:
            report.reason = "max_outer_iters"
            break
        if opt.step_rule == "bb" and prev_u is not None:
            su, sg = u - prev_u, g - prev_g
            curv = q_inner(model, su, sg)
            if curv > 0:
                step = q_inner(model, su, su) / curv
        s = step
        rejects = 0
        accepted = None
        while s >= opt.min_step:
            ut = project_admissible(u - s * g, prob)
            decrease = q_inner(model, g, u - ut)
            try:
                ct, tt = rc.evaluate(ut)
            except SolverError:
                ct = None
            if ct is not None and ct.J <= cost.J - opt.armijo_c1 * decrease and ct.J <= cost.J:
                accepted = (ut, ct, tt)
                break
            s *= opt.armijo_shrink
            rejects += 1
        if accepted is None:
            report.reason = "step_collapse"
            break
        prev_u, prev_g = u, g
        u, cost, traj = accepted
        step = last_step = s
        it += 1
    return report
