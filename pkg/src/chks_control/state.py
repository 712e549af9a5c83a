"""Forward solver for the controlled Cahn-Hilliard-Keller-Segel system.

One time step first solves the Cahn-Hilliard pair with the convex part of the
logarithmic potential implicit and its concave part, ``gamma`` and ``sigma``
lagged::

    (x - phi)/dt - L mu + m x = gamma(phi, sigma)
    tau (x - phi)/dt - L x + G(x) - 2 c0 phi - sigma = mu,   G(s) = ln((1+s)/(1-s))

and then the nutrient with the freshly computed phase field::

    (1/dt - 1 + sigma) s - L s = sigma/dt - div(sigma grad x) + u
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import (
    Grid2D,
    GammaSource,
    LogPotential,
    ModelParams,
    control_hash,
    field_inner,
)
from .operators import (
    LinOpSpec,
    SolverError,
    cg_solve,
    chemotaxis_div,
    gmres_solve,
    laplacian_neumann,
    newton_safeguarded,
    spectrum,
)

MEMORY_CAP = 4 * 1024**3


class SeparationError(SolverError):
    pass


class PositivityError(SolverError):
    pass


class PositivityWarning(UserWarning):
    pass


@dataclass
class Model:
    grid: Grid2D
    params: ModelParams
    gamma: GammaSource = field(default_factory=GammaSource)
    potential: LogPotential | None = None

    def __post_init__(self):
        if self.potential is None:
            self.potential = LogPotential(self.params.c0, self.params.s_guard)
        if self.potential.c0 != self.params.c0:
            raise ValueError("potential and model parameters disagree on c0")
        self.gamma.validate(self.params.m)

    @property
    def dt(self) -> float:
        return self.params.dt

    @property
    def bound(self) -> float:
        return 1.0 - self.params.s_guard


@dataclass
class StateTriple:
    phi: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    t: float


@dataclass(frozen=True)
class InitialData:
    phi0: np.ndarray
    sigma0: np.ndarray

    def validate(self, grid: Grid2D, delta_init: float = 1e-3) -> None:
        grid.check(self.phi0, self.sigma0)
        if not (np.all(np.isfinite(self.phi0)) and np.all(np.isfinite(self.sigma0))):
            raise ValueError("initial data must be finite")
        if np.max(np.abs(self.phi0)) > 1.0 - delta_init:
            raise ValueError(f"need ||phi0||_inf <= 1 - {delta_init}")
        if np.min(self.sigma0) < 0:
            raise ValueError("sigma0 must be nonnegative")


@dataclass(frozen=True)
class StepInfo:
    newton_iters: int
    krylov_iters: int
    cg_iters: int


MONITOR_COLUMNS = (
    "step", "time", "phi_min", "phi_max", "sigma_min", "sigma_max", "mass_phi",
    "mass_sigma", "energy_total", "energy_GL", "energy_M", "newton_iters", "cg_iters",
)


@dataclass
class StateTrajectory:
    grid: Grid2D
    params: ModelParams
    phi: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    control_hash: str
    monitors: dict = field(default_factory=dict)

    def __len__(self):
        return self.phi.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.params.times

    def step(self, n: int) -> StateTriple:
        return StateTriple(self.phi[n], self.mu[n], self.sigma[n], float(self.times[n]))

    @property
    def steps(self) -> list[StateTriple]:
        return [self.step(n) for n in range(len(self))]

    @property
    def separation_margin(self) -> float:
        return 1.0 - float(np.max(np.abs(self.phi)))

    @property
    def min_sigma(self) -> float:
        return float(np.min(self.sigma))


class CahnHilliardJacobian:
    """Jacobian ``a I - L B`` of the phase-field step with ``mu`` eliminated.

    ``B = tau/dt - L + diag(d)`` where ``d = G'(x)`` is the derivative of the
    implicit convex term.  Its adjoint in the trapezoid product is
    ``a I - B L``; both are solved with GMRES preconditioned by the exact
    spectral inverse of the constant-coefficient operator obtained by
    replacing ``d`` by its mean.
    """

    def __init__(self, model: Model, d: np.ndarray):
        p = model.params
        self.grid = model.grid
        self.a = 1.0 / p.dt + p.m
        self.b0 = p.tau / p.dt
        self.d = d
        self.tol = p.krylov_tol
        self.max_iter = max(p.cg_max_iter, 300)
        spec = spectrum(model.grid)
        lam = spec.eigenvalues
        symbol = 1.0 / (self.a + lam * (self.b0 + lam + float(np.mean(d))))
        self.precond = lambda r: spec.apply(symbol, r)

    def b_apply(self, v):
        return self.b0 * v - laplacian_neumann(self.grid, v) + self.d * v

    def apply(self, v):
        return self.a * v - laplacian_neumann(self.grid, self.b_apply(v))

    def apply_adjoint(self, v):
        return self.a * v - self.b_apply(laplacian_neumann(self.grid, v))

    def _solve(self, fn, rhs, atol=0.0):
        x, rep = gmres_solve(fn, rhs, self.precond, tol=self.tol, max_iter=self.max_iter,
                             atol=atol)
        if not rep.converged:
            raise SolverError(f"GMRES failed on the phase-field Jacobian (res {rep.final_residual:.2e})",
                              rep)
        return x, rep

    def solve(self, rhs, atol=0.0):
        return self._solve(self.apply, rhs, atol)

    def solve_adjoint(self, rhs):
        return self._solve(self.apply_adjoint, rhs)


def nutrient_operator(model: Model, sigma_prev: np.ndarray) -> LinOpSpec:
    return LinOpSpec(c0=1.0 / model.dt - 1.0, c1=1.0, c2=1.0, w=sigma_prev)


def chemical_potential(model: Model, x, phi_prev, sigma_prev):
    p = model.params
    return (p.tau * (x - phi_prev) / p.dt - laplacian_neumann(model.grid, x)
            + LogPotential.convex_d1(x) - 2 * p.c0 * phi_prev - sigma_prev)


def initial_mu(model: Model, phi0, sigma0):
    # time derivative of phi at t=0 is taken as zero; reporting only
    return -laplacian_neumann(model.grid, phi0) + model.potential.d1(phi0) - sigma0


def _check_positivity(model: Model, sigma: np.ndarray, t: float) -> None:
    p = model.params
    smin = float(np.min(sigma))
    if smin < -p.pos_tol:
        j, i = np.unravel_index(int(np.argmin(sigma)), sigma.shape)
        msg = f"sigma = {smin:.3e} < -{p.pos_tol:g} at node (i={i}, j={j}), t={t:.6g}"
        if p.strict_positivity:
            raise PositivityError(msg)
        warnings.warn(msg, PositivityWarning, stacklevel=3)


def step_state(model: Model, prev: StateTriple, u_n=None) -> tuple[StateTriple, StepInfo]:
    grid, p = model.grid, model.params
    dt = p.dt
    phi, sigma = prev.phi, prev.sigma
    g = model.gamma.value(phi, sigma)
    krylov = [0]

    def residual(x):
        w = chemical_potential(model, x, phi, sigma)
        return (x - phi) / dt + p.m * x - g - laplacian_neumann(grid, w)

    def solve(x, b):
        jac = CahnHilliardJacobian(model, LogPotential.convex_d2(x))
        # rhs near convergence is roundoff; the absolute floor keeps GMRES finite
        d, rep = jac.solve(b, atol=1e-2 * p.newton_tol)
        krylov[0] += rep.iterations
        return d

    merit_precond = CahnHilliardJacobian(model, LogPotential.convex_d2(phi)).precond

    def merit(r):
        return float(np.max(np.abs(merit_precond(r))))

    x, nrep = newton_safeguarded(residual, solve, phi, tol=p.newton_tol,
                                 max_iter=p.newton_max_iter, bound=model.bound, merit_fn=merit)
    if np.max(np.abs(x)) > model.bound:
        raise SeparationError(f"|phi| exceeded 1 - {p.s_guard:g} at t={prev.t + dt:.6g}")
    mu = chemical_potential(model, x, phi, sigma)

    rhs = sigma / dt - chemotaxis_div(grid, sigma, x)
    if u_n is not None:
        rhs = rhs + u_n
    s_new, crep = cg_solve(grid, nutrient_operator(model, sigma), rhs, x0=sigma,
                           tol=p.cg_tol, max_iter=p.cg_max_iter)
    if not crep.converged:
        raise SolverError(f"CG failed on the nutrient step (res {crep.final_residual:.2e})", crep)
    t = prev.t + dt
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(s_new))):
        raise SolverError(f"non-finite state at t={t:.6g}")
    _check_positivity(model, s_new, t)
    return StateTriple(x, mu, s_new, t), StepInfo(nrep.iterations, krylov[0], crep.iterations)


def free_energy(grid: Grid2D, phi, sigma, pot: LogPotential, s_guard: float = 1e-9):
    """Ginzburg-Landau plus chemotaxis-mass energy; returns ``(total, GL, M)``."""
    gx = np.diff(phi, axis=1) / grid.hx
    gy = np.diff(phi, axis=0) / grid.hy
    grad2 = (np.sum((gx * gx) * (grid.wy * grid.hy)[:, None]) * grid.hx
             + np.sum((gy * gy) * (grid.wx * grid.hx)[None, :]) * grid.hy)
    e_gl = 0.5 * float(grad2) + field_inner(grid, pot.value(phi), 1.0)
    logs = np.log(np.maximum(sigma, s_guard))
    e_m = field_inner(grid, sigma * (logs - 1.0) + sigma * (1.0 - phi), 1.0)
    return e_gl + e_m, e_gl, e_m


def _validate_control(model: Model, u):
    if u is None:
        return None
    u = np.asarray(u, dtype=float)
    nt = model.params.nt
    if u.shape != (nt,) + model.grid.shape:
        raise ValueError(f"control must have shape {(nt,) + model.grid.shape}, got {u.shape}")
    if not np.all(np.isfinite(u)):
        raise ValueError("control must be finite")
    if u.size and np.max(np.abs(u)) > model.params.u_cap:
        raise ValueError(f"||u||_inf exceeds the cap M = {model.params.u_cap}")
    return u


def solve_state(model: Model, init: InitialData, u=None, delta_init: float = 1e-3) -> StateTrajectory:
    """Run the scheme over ``nt`` steps; ``u`` has shape ``(nt, ny, nx)`` or is None."""
    grid, p = model.grid, model.params
    init.validate(grid, delta_init)
    u = _validate_control(model, u)
    nsteps = p.nt + 1
    if 3 * 8 * grid.nx * grid.ny * nsteps > MEMORY_CAP:
        raise MemoryError("trajectory storage would exceed 4 GiB")

    phi = np.empty((nsteps,) + grid.shape)
    mu = np.empty_like(phi)
    sigma = np.empty_like(phi)
    phi[0] = init.phi0
    sigma[0] = init.sigma0
    mu[0] = initial_mu(model, init.phi0, init.sigma0)
    newton_iters = np.zeros(nsteps, dtype=int)
    cg_iters = np.zeros(nsteps, dtype=int)
    prev = StateTriple(phi[0], mu[0], sigma[0], 0.0)
    for n in range(p.nt):
        nxt, info = step_state(model, prev, None if u is None else u[n])
        phi[n + 1], mu[n + 1], sigma[n + 1] = nxt.phi, nxt.mu, nxt.sigma
        newton_iters[n + 1] = info.newton_iters
        cg_iters[n + 1] = info.cg_iters
        prev = nxt

    traj = StateTrajectory(grid, p, phi, mu, sigma, control_hash(u))
    traj.monitors = compute_monitors(model, traj)
    traj.monitors["newton_iters"] = newton_iters
    traj.monitors["cg_iters"] = cg_iters
    return traj


def compute_monitors(model: Model, traj: StateTrajectory) -> dict:
    grid = model.grid
    n = len(traj)
    cols = {k: np.zeros(n) for k in MONITOR_COLUMNS}
    cols["step"] = np.arange(n)
    cols["time"] = traj.times.copy()
    for k in range(n):
        phi, sigma = traj.phi[k], traj.sigma[k]
        cols["phi_min"][k] = phi.min()
        cols["phi_max"][k] = phi.max()
        cols["sigma_min"][k] = sigma.min()
        cols["sigma_max"][k] = sigma.max()
        cols["mass_phi"][k] = field_inner(grid, phi, 1.0)
        cols["mass_sigma"][k] = field_inner(grid, sigma, 1.0)
        tot, gl, em = free_energy(grid, phi, sigma, model.potential, model.params.s_guard)
        cols["energy_total"][k], cols["energy_GL"][k], cols["energy_M"][k] = tot, gl, em
    cols["newton_iters"] = np.zeros(n, dtype=int)
    cols["cg_iters"] = np.zeros(n, dtype=int)
    return cols


@dataclass(frozen=True)
class MassBalance:
    r_phi: np.ndarray
    r_sigma: np.ndarray
    scale_phi: np.ndarray
    scale_sigma: np.ndarray

    @property
    def rel_phi(self) -> np.ndarray:
        return self.r_phi / (1.0 + self.scale_phi)

    @property
    def rel_sigma(self) -> np.ndarray:
        return self.r_sigma / (1.0 + self.scale_sigma)

    @property
    def max_rel(self) -> float:
        if self.r_phi.size == 0:
            return 0.0
        return float(max(self.rel_phi.max(), self.rel_sigma.max()))


def mass_balance_report(model: Model, traj: StateTrajectory, u=None) -> MassBalance:
    """Residuals of the step equations tested with the constant function 1."""
    grid, p = model.grid, model.params
    dt = p.dt
    nt = len(traj) - 1
    r_phi = np.zeros(nt)
    r_sig = np.zeros(nt)
    s_phi = np.zeros(nt)
    s_sig = np.zeros(nt)
    for n in range(nt):
        phi0, phi1 = traj.phi[n], traj.phi[n + 1]
        sig0, sig1 = traj.sigma[n], traj.sigma[n + 1]
        terms = (field_inner(grid, phi1, 1.0) / dt, -field_inner(grid, phi0, 1.0) / dt,
                 p.m * field_inner(grid, phi1, 1.0),
                 -field_inner(grid, model.gamma.value(phi0, sig0), 1.0))
        r_phi[n] = abs(sum(terms))
        s_phi[n] = max(abs(t) for t in terms)
        src = sig1 - sig0 * sig1 + (0.0 if u is None else u[n])
        terms = (field_inner(grid, sig1, 1.0) / dt, -field_inner(grid, sig0, 1.0) / dt,
                 -field_inner(grid, src, 1.0))
        r_sig[n] = abs(sum(terms))
        s_sig[n] = max(abs(t) for t in terms)
    return MassBalance(r_phi, r_sig, s_phi, s_sig)


def uniform_step_oracle(params: ModelParams, gamma: GammaSource, phi: float, sigma: float,
                        u: float = 0.0) -> tuple[float, float, float]:
    """Scalar recurrence of one step for spatially uniform data (Laplacians vanish)."""
    dt = params.dt
    x = (phi / dt + float(gamma.value(phi, sigma))) / (1.0 / dt + params.m)
    mu = (params.tau * (x - phi) / dt + float(LogPotential.convex_d1(x))
          - 2 * params.c0 * phi - sigma)
    s = (sigma / dt + u) / (1.0 / dt - 1.0 + sigma)
    return x, mu, s

