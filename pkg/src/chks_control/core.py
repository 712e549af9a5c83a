"""Grids, grid functions, model parameters, the logarithmic potential and the
proliferation source.

Grid functions ("fields") are plain ``numpy`` arrays of shape ``(ny, nx)``;
entry ``f[j, i]`` lives at the node ``(i*hx, j*hy)``.  Row-major storage
therefore runs ``j`` outer and ``i`` inner.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.special import xlogy

S_GUARD = 1e-9
POS_TOL = 1e-8


class DomainError(ValueError):
    """Argument outside the domain of the potential."""


class GridMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class Grid2D:
    nx: int
    ny: int
    lx: float = 1.0
    ly: float = 1.0

    def __post_init__(self):
        if int(self.nx) != self.nx or int(self.ny) != self.ny:
            raise ValueError("node counts must be integers")
        if self.nx < 3 or self.ny < 3:
            raise ValueError(f"grid needs at least 3x3 nodes, got {self.nx}x{self.ny}")
        if not (self.lx > 0 and self.ly > 0):
            raise ValueError("domain side lengths must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def hx(self) -> float:
        return self.lx / (self.nx - 1)

    @property
    def hy(self) -> float:
        return self.ly / (self.ny - 1)

    @property
    def area(self) -> float:
        return self.lx * self.ly

    @cached_property
    def x(self) -> np.ndarray:
        return np.arange(self.nx) * self.hx

    @cached_property
    def y(self) -> np.ndarray:
        return np.arange(self.ny) * self.hy

    @cached_property
    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Node coordinates ``(X, Y)``, each of shape ``(ny, nx)``."""
        return np.meshgrid(self.x, self.y)

    @cached_property
    def wx(self) -> np.ndarray:
        w = np.ones(self.nx)
        w[0] = w[-1] = 0.5
        return w

    @cached_property
    def wy(self) -> np.ndarray:
        w = np.ones(self.ny)
        w[0] = w[-1] = 0.5
        return w

    @cached_property
    def mass(self) -> np.ndarray:
        """Trapezoid quadrature weights ``w_ij * hx * hy`` (1, 1/2, 1/4 pattern)."""
        m = np.outer(self.wy * self.hy, self.wx * self.hx)
        m.flags.writeable = False
        return m

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape)

    def full(self, value: float) -> np.ndarray:
        return np.full(self.shape, float(value))

    def check(self, *fields: np.ndarray) -> None:
        for f in fields:
            if np.shape(f) != self.shape:
                raise GridMismatchError(
                    f"field of shape {np.shape(f)} does not live on a {self.nx}x{self.ny} grid"
                )


def field_inner(grid: Grid2D, f, g) -> float:
    """Trapezoid-weighted discrete L2 inner product."""
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    grid.check(np.broadcast_to(f, grid.shape) if f.ndim == 0 else f,
               np.broadcast_to(g, grid.shape) if g.ndim == 0 else g)
    return float(np.sum(grid.mass * f * g))


def field_norm(grid: Grid2D, f) -> float:
    return math.sqrt(max(field_inner(grid, f, f), 0.0))


def field_mean(grid: Grid2D, f) -> float:
    return field_inner(grid, f, 1.0) / grid.area


@dataclass(frozen=True)
class ModelParams:
    """Physical coefficients, time axis and solver tolerances."""

    tau: float = 0.1
    m: float = 1.0
    c0: float = 1.5
    T: float = 1.0
    nt: int = 200
    newton_tol: float = 1e-10
    newton_max_iter: int = 50
    cg_tol: float = 1e-12
    cg_max_iter: int = 500
    krylov_tol: float = 1e-13
    s_guard: float = S_GUARD
    pos_tol: float = POS_TOL
    strict_positivity: bool = False
    u_cap: float = math.inf

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if not self.m > 0:
            raise ValueError(f"m must be positive, got {self.m}")
        if not self.c0 > 1:
            raise ValueError(f"c0 must exceed 1, got {self.c0}")
        if not self.T > 0:
            raise ValueError(f"final time must be positive, got {self.T}")
        if int(self.nt) != self.nt or self.nt < 0:
            raise ValueError(f"nt must be a nonnegative integer, got {self.nt}")
        if self.nt > 0 and self.dt >= 1.0:
            raise ValueError("dt must be below 1 for the nutrient operator to stay positive")
        if not (0 < self.s_guard < 0.5):
            raise ValueError("s_guard must lie in (0, 0.5)")
        if not (self.newton_tol > 0 and self.cg_tol > 0 and self.krylov_tol > 0):
            raise ValueError("solver tolerances must be positive")

    @property
    def dt(self) -> float:
        return self.T / self.nt if self.nt > 0 else self.T

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.nt + 1) * self.dt


@dataclass
class LogPotential:
    """Flory-Huggins double well ``(1+s)ln(1+s) + (1-s)ln(1-s) - c0 s^2``.

    Arguments are clamped into ``[-1+s_guard, 1-s_guard]`` unless ``strict``;
    ``clamp_events`` counts how many entries were clamped.
    """

    c0: float = 1.5
    s_guard: float = S_GUARD
    strict: bool = False
    clamp_events: int = field(default=0, compare=False)

    def __post_init__(self):
        if not self.c0 > 1:
            raise ValueError(f"c0 must exceed 1, got {self.c0}")

    def _guard(self, s):
        s = np.asarray(s, dtype=float)
        if self.strict:
            if np.any(np.abs(s) >= 1):
                raise DomainError("potential evaluated at |s| >= 1")
            return s
        lim = 1.0 - self.s_guard
        out = np.abs(s) > lim
        if np.any(out):
            self.clamp_events += int(np.count_nonzero(out))
            s = np.clip(s, -lim, lim)
        return s

    def value(self, s):
        s = self._guard(s)
        return xlogy(1 + s, 1 + s) + xlogy(1 - s, 1 - s) - self.c0 * s * s

    def d1(self, s):
        s = self._guard(s)
        return self.convex_d1(s) - 2 * self.c0 * s

    def d2(self, s):
        s = self._guard(s)
        return self.convex_d2(s) - 2 * self.c0

    def d3(self, s):
        s = self._guard(s)
        return 4 * s / (1 - s * s) ** 2

    # convex part of F' and its derivative; no guard, callers keep |s| < 1
    @staticmethod
    def convex_d1(s):
        return np.log1p(s) - np.log1p(-s)

    @staticmethod
    def convex_d2(s):
        return 2.0 / (1.0 - s * s)

    def eval(self, s, order: int = 0):
        if order not in (0, 1, 2, 3):
            raise ValueError(f"order must be 0, 1, 2 or 3, got {order}")
        return (self.value, self.d1, self.d2, self.d3)[order](s)


def potential_eval(pot: LogPotential, s, order: int = 0):
    out = pot.eval(s, order)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class GammaSource:
    """Proliferation source ``a * tanh(k_sigma*sigma - k_phi*phi + shift)``.

    The default coefficients (1, 1, 0) give ``a*tanh(sigma - phi)``; anything
    else is reported as kind ``"custom"``.  ``sup|gamma| = a`` so the bound
    ``sup|gamma| < m`` reduces to ``a < m``.
    """

    amplitude: float = 0.5
    phi_coef: float = 1.0
    sigma_coef: float = 1.0
    shift: float = 0.0

    def __post_init__(self):
        if not self.amplitude >= 0:
            raise ValueError(f"gamma amplitude must be nonnegative, got {self.amplitude}")
        for c in (self.phi_coef, self.sigma_coef, self.shift):
            if not math.isfinite(c):
                raise ValueError("gamma coefficients must be finite")

    @property
    def kind(self) -> str:
        if (self.phi_coef, self.sigma_coef, self.shift) == (1.0, 1.0, 0.0):
            return "tanh"
        return "custom"

    def validate(self, m: float) -> None:
        if not self.amplitude < m:
            raise ValueError(f"need sup|gamma| = {self.amplitude} < m = {m}")

    def _arg(self, phi, sigma):
        return self.sigma_coef * np.asarray(sigma) - self.phi_coef * np.asarray(phi) + self.shift

    def value(self, phi, sigma):
        return self.amplitude * np.tanh(self._arg(phi, sigma))

    def _sech2(self, phi, sigma):
        c = np.cosh(self._arg(phi, sigma))
        return 1.0 / (c * c)

    def d_phi(self, phi, sigma):
        return -self.amplitude * self.phi_coef * self._sech2(phi, sigma)

    def d_sigma(self, phi, sigma):
        return self.amplitude * self.sigma_coef * self._sech2(phi, sigma)


def gamma_eval(g: GammaSource, phi, sigma, order: str = "value"):
    fn = {"value": g.value, "d_phi": g.d_phi, "d_sigma": g.d_sigma}.get(order)
    if fn is None:
        raise ValueError(f"unknown gamma order {order!r}")
    out = fn(phi, sigma)
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# CHKS1 binary field files

_MAGIC = "CHKS1"


def write_chks1(path, grid: Grid2D, values) -> None:
    values = np.asarray(values, dtype="<f8")
    grid.check(values)
    header = f"{_MAGIC} {grid.nx} {grid.ny} {grid.lx!r} {grid.ly!r}\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(values).tobytes())


def read_chks1(path, grid: Grid2D | None = None) -> tuple[Grid2D, np.ndarray]:
    """Read a CHKS1 file; if ``grid`` is given the header must match it."""
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise ValueError(f"{path}: missing CHKS1 header")
    parts = raw[:nl].decode("ascii", errors="replace").split()
    if len(parts) != 5 or parts[0] != _MAGIC:
        raise ValueError(f"{path}: not a CHKS1 file")
    try:
        file_grid = Grid2D(int(parts[1]), int(parts[2]), float(parts[3]), float(parts[4]))
    except ValueError as exc:
        raise ValueError(f"{path}: bad CHKS1 header: {exc}") from None
    if grid is not None and file_grid != grid:
        raise GridMismatchError(f"{path}: header {file_grid} does not match {grid}")
    body = raw[nl + 1:]
    n = file_grid.nx * file_grid.ny
    if len(body) != 8 * n:
        raise ValueError(f"{path}: expected {8 * n} data bytes, found {len(body)}")
    values = np.frombuffer(body, dtype="<f8").astype(float).reshape(file_grid.shape)
    return file_grid, values


def control_hash(u) -> str:
    if u is None:
        return "zero"
    arr = np.ascontiguousarray(np.asarray(u, dtype="<f8"))
    h = hashlib.sha1(repr(arr.shape).encode())
    h.update(arr.tobytes())
    return h.hexdigest()
