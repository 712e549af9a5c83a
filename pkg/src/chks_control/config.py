"""Flat ``key = value`` run configuration with dotted sections.

Example::

    preset = default
    grid.nx = 32
    model.tau = 0.1
    problem.alpha5 = 1e-4

Lines starting with ``#`` are comments.  Unknown keys are errors.  A
``preset`` line selects a base configuration that the remaining keys override.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .control import ControlProblem, OptimizerConfig
from .core import GammaSource, Grid2D, ModelParams, read_chks1
from .state import InitialData, Model, solve_state


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class InitSpec:
    preset: str = "bump"
    phi0: str = "0.0"
    sigma0: str = "0.5"
    delta: float = 1e-3


@dataclass(frozen=True)
class ControlSpec:
    source: str = "zero"
    value: float = 0.0
    dir: str = ""


@dataclass(frozen=True)
class ProblemSpec:
    alpha1: float = 1.0
    alpha2: float = 1.0
    alpha3: float = 1.0
    alpha4: float = 1.0
    alpha5: float = 1e-4
    u_min: float = -0.5
    u_max: float = 0.5
    targets: str = "constant"
    phi_Q: float = 0.0
    phi_Omega: float = 0.0
    sigma_Q: float = 0.5
    sigma_Omega: float = 0.5
    target_dir: str = ""
    u_true_amplitude: float = 0.3


@dataclass(frozen=True)
class OutputSpec:
    dir: str = "out"
    stride: int = 1


@dataclass(frozen=True)
class RunConfig:
    preset: str = "default"
    name: str = "run"
    seed: int = 0
    grid: Grid2D = field(default_factory=lambda: Grid2D(64, 64))
    model: ModelParams = field(default_factory=ModelParams)
    gamma: GammaSource = field(default_factory=GammaSource)
    init: InitSpec = field(default_factory=InitSpec)
    control: ControlSpec = field(default_factory=ControlSpec)
    problem: ProblemSpec = field(default_factory=ProblemSpec)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    output: OutputSpec = field(default_factory=OutputSpec)

    def build_model(self) -> Model:
        return Model(self.grid, self.model, self.gamma)


PRESETS = {
    "default": {},
    "uniform-logistic": {
        "grid.nx": "16", "grid.ny": "16", "model.nt": "1000", "model.T": "1.0",
        "gamma.amplitude": "0.0", "init.preset": "uniform", "init.phi0": "0.0",
        "init.sigma0": "0.5", "control.source": "zero",
    },
    "inverse-problem": {
        "grid.nx": "32", "grid.ny": "32", "model.nt": "100", "model.T": "1.0",
        "problem.targets": "synthesize", "problem.alpha5": "1e-6",
        "optimizer.step_rule": "bb", "optimizer.max_outer_iters": "200",
    },
    "small-check": {
        "grid.nx": "16", "grid.ny": "16", "model.nt": "20", "model.T": "0.2",
        "model.newton_tol": "1e-12", "model.cg_tol": "1e-14", "model.krylov_tol": "1e-14",
        "problem.alpha5": "1e-2",
    },
}

_SECTIONS = {
    "grid": Grid2D, "model": ModelParams, "gamma": GammaSource, "init": InitSpec,
    "control": ControlSpec, "problem": ProblemSpec, "optimizer": OptimizerConfig,
    "output": OutputSpec,
}
_TOP = {"preset": str, "name": str, "seed": int}


def _convert(raw: str, typ, key: str):
    try:
        if typ in (int, "int"):
            return int(raw)
        if typ in (float, "float"):
            return float(raw)
        if typ in (bool, "bool"):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ in ("float | None",):
            return None if raw.lower() in ("none", "") else float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from None


def parse_text(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        out[key] = value
    return out


def build_config(pairs: dict[str, str]) -> RunConfig:
    preset = pairs.get("preset", "default")
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}")
    merged = {**PRESETS[preset], **pairs}

    top = {}
    sections: dict[str, dict] = {k: {} for k in _SECTIONS}
    for key, raw in merged.items():
        if key in _TOP:
            top[key] = _convert(raw, _TOP[key], key)
            continue
        sec, _, name = key.partition(".")
        cls = _SECTIONS.get(sec)
        if cls is None or not name:
            raise ConfigError(f"unknown key {key!r}")
        types = {f.name: f.type for f in fields(cls)}
        if name not in types:
            raise ConfigError(f"unknown key {key!r}")
        sections[sec][name] = _convert(raw, types[name], key)

    try:
        built = {sec: replace(_default(sec), **vals) if vals else _default(sec)
                 for sec, vals in sections.items()}
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
    cfg = RunConfig(**top, **built)
    validate(cfg)
    return cfg


def _default(sec):
    return {
        "grid": Grid2D(64, 64), "model": ModelParams(), "gamma": GammaSource(),
        "init": InitSpec(), "control": ControlSpec(), "problem": ProblemSpec(),
        "optimizer": OptimizerConfig(), "output": OutputSpec(),
    }[sec]


def validate(cfg: RunConfig) -> None:
    try:
        cfg.gamma.validate(cfg.model.m)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if cfg.init.preset not in ("uniform", "bump", "seeded-noise", "files"):
        raise ConfigError(f"unknown init.preset {cfg.init.preset!r}")
    if cfg.control.source not in ("zero", "constant", "files", "preset"):
        raise ConfigError(f"unknown control.source {cfg.control.source!r}")
    if cfg.problem.targets not in ("constant", "synthesize", "files"):
        raise ConfigError(f"unknown problem.targets {cfg.problem.targets!r}")
    if cfg.output.stride < 1:
        raise ConfigError("output.stride must be >= 1")
    if cfg.problem.u_min > cfg.problem.u_max:
        raise ConfigError("problem.u_min exceeds problem.u_max")


def load_config(path, overrides: dict[str, str] | None = None) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    pairs = parse_text(p.read_text(), str(p))
    pairs.update(overrides or {})
    return build_config(pairs)


# ---------------------------------------------------------------------------
# synthesized data

def _read_field(path: str, grid: Grid2D) -> np.ndarray:
    try:
        return read_chks1(path, grid)[1]
    except (OSError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def initial_data(cfg: RunConfig) -> InitialData:
    grid = cfg.grid
    X, Y = grid.mesh
    spec = cfg.init
    bound = 1.0 - spec.delta
    if spec.preset == "uniform":
        try:
            phi0, sigma0 = grid.full(float(spec.phi0)), grid.full(float(spec.sigma0))
        except ValueError:
            raise ConfigError("init.phi0/init.sigma0 must be numbers for the uniform preset") from None
    elif spec.preset == "bump":
        phi0 = min(0.5, bound) * np.cos(np.pi * X / grid.lx) * np.cos(np.pi * Y / grid.ly)
        sigma0 = 0.5 + 0.25 * np.cos(np.pi * X / grid.lx)
    elif spec.preset == "seeded-noise":
        rng = np.random.default_rng(cfg.seed)
        noise = rng.uniform(-1.0, 1.0, grid.shape)
        for _ in range(4):  # 5-point smoothing passes with mirror edges
            pad = np.pad(noise, 1, mode="reflect")
            noise = (pad[1:-1, 1:-1] * 4 + pad[2:, 1:-1] + pad[:-2, 1:-1]
                     + pad[1:-1, 2:] + pad[1:-1, :-2]) / 8.0
        phi0 = 0.5 * bound * noise / max(np.max(np.abs(noise)), 1e-300)
        sigma0 = 0.5 + 0.25 * rng.uniform(0.0, 1.0) * np.cos(np.pi * X / grid.lx)
    else:
        phi0, sigma0 = _read_field(spec.phi0, grid), _read_field(spec.sigma0, grid)
    init = InitialData(phi0, sigma0)
    try:
        init.validate(grid, spec.delta)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return init


def synthetic_control(grid: Grid2D, params: ModelParams, amplitude: float) -> np.ndarray:
    """Smooth reference control ``A cos(pi x) cos(pi y) + A/3 sin(pi t/T)``."""
    X, Y = grid.mesh
    t = params.times[:-1][:, None, None]
    space = amplitude * np.cos(np.pi * X / grid.lx) * np.cos(np.pi * Y / grid.ly)
    return space[None] + (amplitude / 3.0) * np.sin(np.pi * t / params.T) + np.zeros(
        (params.nt,) + grid.shape)


def read_control_dir(path, grid: Grid2D, nt: int) -> np.ndarray:
    d = Path(path)
    return np.stack([_read_field(str(d / f"u_{n}.chks1"), grid) for n in range(nt)]) if nt else \
        np.zeros((0,) + grid.shape)


def control_from_config(cfg: RunConfig):
    spec, nt = cfg.control, cfg.model.nt
    shape = (nt,) + cfg.grid.shape
    if spec.source == "zero":
        return None
    if spec.source == "constant":
        return np.full(shape, float(spec.value))
    if spec.source == "preset":
        return synthetic_control(cfg.grid, cfg.model, spec.value)
    return read_control_dir(spec.dir, cfg.grid, nt)


def control_problem(cfg: RunConfig, model: Model | None = None, init: InitialData | None = None):
    """Build the ``ControlProblem``; also returns the reference control when synthesized."""
    ps = cfg.problem
    alphas = (ps.alpha1, ps.alpha2, ps.alpha3, ps.alpha4, ps.alpha5)
    u_true = None
    if ps.targets == "constant":
        targets = dict(phi_Q=ps.phi_Q, phi_Omega=ps.phi_Omega, sigma_Q=ps.sigma_Q,
                       sigma_Omega=ps.sigma_Omega)
    elif ps.targets == "synthesize":
        model = model or cfg.build_model()
        init = init or initial_data(cfg)
        u_true = np.clip(synthetic_control(cfg.grid, cfg.model, ps.u_true_amplitude),
                         ps.u_min, ps.u_max)
        ref = solve_state(model, init, u_true)
        targets = dict(phi_Q=ref.phi, phi_Omega=ref.phi[-1], sigma_Q=ref.sigma,
                       sigma_Omega=ref.sigma[-1])
    else:
        d = Path(ps.target_dir)
        nt = cfg.model.nt
        targets = dict(
            phi_Q=np.stack([_read_field(str(d / f"phi_Q_{n}.chks1"), cfg.grid) for n in range(nt + 1)]),
            sigma_Q=np.stack([_read_field(str(d / f"sigma_Q_{n}.chks1"), cfg.grid)
                              for n in range(nt + 1)]),
            phi_Omega=_read_field(str(d / "phi_Omega.chks1"), cfg.grid),
            sigma_Omega=_read_field(str(d / "sigma_Omega.chks1"), cfg.grid),
        )
    try:
        prob = ControlProblem(alphas, u_min=ps.u_min, u_max=ps.u_max, **targets)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return prob, u_true


def describe(cfg: RunConfig) -> dict[str, str]:
    """Flat key/value view of the parameters recorded in ``meta.txt``."""
    g, p, gm = cfg.grid, cfg.model, cfg.gamma
    vals = {
        "nx": g.nx, "ny": g.ny, "lx": g.lx, "ly": g.ly, "T": p.T, "nt": p.nt, "tau": p.tau,
        "m": p.m, "c0": p.c0, "gamma_kind": gm.kind, "gamma_amplitude": gm.amplitude,
        "gamma_phi_coef": gm.phi_coef, "gamma_sigma_coef": gm.sigma_coef,
        "gamma_shift": gm.shift, "s_guard": p.s_guard, "stride": cfg.output.stride,
    }
    return {k: (repr(v) if isinstance(v, float) and math.isfinite(v) else str(v))
            for k, v in vals.items()}
