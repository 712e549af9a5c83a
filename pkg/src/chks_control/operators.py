"""Discrete spatial operators and the algebraic solvers built on them.

All operators use the node-centred, mirror-ghost (zero-flux) discretization.
They are written as face fluxes followed by a divergence over the dual
control volumes ``w_ij*hx*hy``, so every one of them is self-adjoint (or has
an explicit adjoint) in the trapezoid inner product and integrates to zero.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.fft import dctn, idctn
from scipy.sparse.linalg import LinearOperator, gmres

from .core import S_GUARD, Grid2D


class SolverError(RuntimeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class NewtonError(SolverError):
    pass


@dataclass(frozen=True)
class SolveReport:
    iterations: int
    final_residual: float
    converged: bool


# ---------------------------------------------------------------------------
# stencils

def _divergence(grid: Grid2D, fx: np.ndarray, fy: np.ndarray) -> np.ndarray:
    """Divergence of face fluxes; boundary faces carry zero flux."""
    d = np.zeros(grid.shape)
    d[:, :-1] += fx
    d[:, 1:] -= fx
    d /= grid.wx * grid.hx
    e = np.zeros(grid.shape)
    e[:-1, :] += fy
    e[1:, :] -= fy
    e /= (grid.wy * grid.hy)[:, None]
    return d + e


def laplacian_neumann(grid: Grid2D, f: np.ndarray) -> np.ndarray:
    """Five-point Laplacian with mirror ghosts (``f[-1] = f[1]``)."""
    fx = np.diff(f, axis=1) / grid.hx
    fy = np.diff(f, axis=0) / grid.hy
    return _divergence(grid, fx, fy)


def chemotaxis_div(grid: Grid2D, sigma: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Conservative ``div(sigma grad phi)`` with arithmetic face averages of sigma."""
    grid.check(sigma, phi)
    sx = 0.5 * (sigma[:, 1:] + sigma[:, :-1])
    sy = 0.5 * (sigma[1:, :] + sigma[:-1, :])
    fx = sx * (np.diff(phi, axis=1) / grid.hx)
    fy = sy * (np.diff(phi, axis=0) / grid.hy)
    return _divergence(grid, fx, fy)


def chemotaxis_div_adjoint(grid: Grid2D, phi: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Adjoint of ``sigma -> chemotaxis_div(sigma, phi)`` in the trapezoid product.

    The continuous counterpart is ``y -> -grad(phi).grad(y)``.
    """
    vx = (np.diff(phi, axis=1) / grid.hx) * (np.diff(y, axis=1) / grid.hx)
    vy = (np.diff(phi, axis=0) / grid.hy) * (np.diff(y, axis=0) / grid.hy)
    out = np.zeros(grid.shape)
    out[:, :-1] += vx
    out[:, 1:] += vx
    out *= -0.5 / grid.wx
    o2 = np.zeros(grid.shape)
    o2[:-1, :] += vy
    o2[1:, :] += vy
    o2 *= (-0.5 / grid.wy)[:, None]
    return out + o2


# ---------------------------------------------------------------------------
# spectral calculus for the Neumann Laplacian (DCT-I diagonalizes it exactly)

class NeumannSpectrum:
    """Eigenvalues of ``-L`` on the grid and functions of ``L`` via DCT-I."""

    def __init__(self, grid: Grid2D):
        kx = np.arange(grid.nx)
        ky = np.arange(grid.ny)
        lx = 4.0 * np.sin(np.pi * kx / (2 * (grid.nx - 1))) ** 2 / grid.hx**2
        ly = 4.0 * np.sin(np.pi * ky / (2 * (grid.ny - 1))) ** 2 / grid.hy**2
        self.grid = grid
        self.eigenvalues = ly[:, None] + lx[None, :]

    def apply(self, symbol: np.ndarray, f: np.ndarray) -> np.ndarray:
        """Return ``g(-L) f`` where ``symbol = g(eigenvalues)``."""
        return idctn(symbol * dctn(f, type=1), type=1)


@lru_cache(maxsize=16)
def spectrum(grid: Grid2D) -> NeumannSpectrum:
    return NeumannSpectrum(grid)


# ---------------------------------------------------------------------------
# linear solvers

@dataclass(frozen=True)
class LinOpSpec:
    """``c0*I + c1*(-L) + c2*diag(w)``; symmetric in the trapezoid product."""

    c0: float
    c1: float = 0.0
    c2: float = 0.0
    w: np.ndarray | None = None

    def apply(self, grid: Grid2D, x: np.ndarray) -> np.ndarray:
        y = self.c0 * x
        if self.c1:
            y = y - self.c1 * laplacian_neumann(grid, x)
        if self.c2 and self.w is not None:
            y = y + self.c2 * self.w * x
        return y

    def diagonal(self, grid: Grid2D) -> np.ndarray:
        d = np.full(grid.shape, self.c0 + self.c1 * (2 / grid.hx**2 + 2 / grid.hy**2))
        if self.c2 and self.w is not None:
            d = d + self.c2 * self.w
        return d

    def mean_shift(self) -> float:
        if self.c2 and self.w is not None:
            return self.c0 + self.c2 * float(np.mean(self.w))
        return self.c0

    def is_positive_definite(self) -> bool:
        low = self.c0
        if self.c2 and self.w is not None:
            low += min(self.c2 * float(np.min(self.w)), self.c2 * float(np.max(self.w)))
        return low > 0 and self.c1 >= 0


def _make_precond(grid: Grid2D, op: LinOpSpec, kind):
    if kind is None or kind == "none":
        return lambda r: r
    if kind == "jacobi":
        d = op.diagonal(grid)
        return lambda r: r / d
    if kind == "spectral":
        spec = spectrum(grid)
        symbol = 1.0 / (op.mean_shift() + op.c1 * spec.eigenvalues)
        return lambda r: spec.apply(symbol, r)
    raise ValueError(f"unknown preconditioner {kind!r}")


def cg_solve(grid: Grid2D, op: LinOpSpec, rhs: np.ndarray, x0: np.ndarray | None = None,
             tol: float = 1e-12, max_iter: int = 500, precond: str | None = "spectral"):
    """Preconditioned CG in the trapezoid inner product.

    Stops when ``||op x - rhs||_2 <= tol * ||rhs||_2`` (checked on the true
    residual).  Non-convergence is reported, not raised.
    """
    grid.check(rhs)
    apply_p = _make_precond(grid, op, precond)
    mass = grid.mass

    def dot(a, b):
        return float(np.sum(mass * a * b))

    bnorm = float(np.linalg.norm(rhs))
    x = np.zeros(grid.shape) if x0 is None else np.array(x0, dtype=float)
    if bnorm == 0.0:
        return np.zeros(grid.shape), SolveReport(0, 0.0, True)
    target = tol * bnorm
    r = rhs - op.apply(grid, x)
    z = apply_p(r)
    p = z.copy()
    rz = dot(r, z)
    it = 0
    while True:
        rnorm = float(np.linalg.norm(r))
        if rnorm <= target:
            r_true = rhs - op.apply(grid, x)
            rnorm = float(np.linalg.norm(r_true))
            if rnorm <= target:
                return x, SolveReport(it, rnorm / bnorm, True)
            # recurrence drifted; restart from the true residual
            r = r_true
            z = apply_p(r)
            p = z.copy()
            rz = dot(r, z)
        if it >= max_iter:
            return x, SolveReport(it, rnorm / bnorm, False)
        ap = op.apply(grid, p)
        pap = dot(p, ap)
        if pap <= 0:
            return x, SolveReport(it, rnorm / bnorm, False)
        alpha = rz / pap
        x = x + alpha * p
        r = r - alpha * ap
        z = apply_p(r)
        rz_new = dot(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
        it += 1


def gmres_solve(apply, rhs: np.ndarray, precond, tol: float = 1e-13, max_iter: int = 300,
                restart: int = 40, atol: float = 0.0):
    """Left-preconditioned GMRES for a nonsymmetric operator on grid fields.

    Convergence is judged on the preconditioned residual
    ``||P^-1 (b - A x)|| <= max(tol ||P^-1 b||, atol)``.
    """
    shape = rhs.shape
    n = rhs.size

    def mv(v):
        return precond(apply(v.reshape(shape))).ravel()

    pb = precond(rhs).ravel()
    bnorm = float(np.linalg.norm(pb))
    if bnorm == 0.0:
        return np.zeros(shape), SolveReport(0, 0.0, True)
    count = [0]

    def cb(_):
        count[0] += 1

    restart = min(restart, n)
    x, _info = gmres(LinearOperator((n, n), matvec=mv, dtype=float), pb, rtol=tol, atol=atol,
                     restart=restart, maxiter=max(1, -(-max_iter // restart)),
                     callback=cb, callback_type="pr_norm")
    res = float(np.linalg.norm(pb - mv(x)))
    ok = res <= max(10 * tol * bnorm, atol)
    return x.reshape(shape), SolveReport(count[0], res / bnorm, ok)


# ---------------------------------------------------------------------------
# nonlinear solver

def newton_safeguarded(residual_fn, solve_fn, x0, tol: float = 1e-10, max_iter: int = 50,
                       bound: float = 1.0 - S_GUARD, merit_fn=None, callback=None):
    """Damped Newton iteration that keeps every iterate inside ``|x| <= bound``.

    ``solve_fn(x, b)`` returns the solution ``d`` of ``J(x) d = b``.  A step is
    halved until the trial point is inside the bound and ``merit_fn`` of its
    residual decreases.  The iteration stops once the Newton correction has
    max-norm ``<= tol``; that last correction is applied and reported as
    ``final_residual``.
    """
    if merit_fn is None:
        def merit_fn(r):
            return float(np.max(np.abs(r)))

    x = np.array(x0, dtype=float)
    if np.max(np.abs(x)) > bound:
        raise ValueError("Newton start point lies outside the admissible interval")
    r = residual_fn(x)
    merit = merit_fn(r)
    accepted = 0
    for _ in range(max_iter):
        dx = solve_fn(x, -r)
        step = float(np.max(np.abs(dx)))
        if not np.isfinite(step):
            raise NewtonError("Newton correction is not finite",
                              SolveReport(accepted, merit, False))
        if step <= tol:
            trial = x + dx
            if np.max(np.abs(trial)) <= bound:
                x = trial
            if callback is not None:
                callback(x)
            return x, SolveReport(accepted, step, True)
        theta = 1.0
        while True:
            trial = x + theta * dx
            if np.max(np.abs(trial)) <= bound:
                rt = residual_fn(trial)
                mt = merit_fn(rt)
                if mt < merit:
                    break
            theta *= 0.5
            if theta < 1e-8:
                raise NewtonError("Newton step collapsed (damping below 1e-8)",
                                  SolveReport(accepted, merit, False))
        x, r, merit = trial, rt, mt
        accepted += 1
        if callback is not None:
            callback(x)
    raise NewtonError(f"Newton did not converge in {max_iter} iterations",
                      SolveReport(accepted, merit, False))
