"""On-disk layout for trajectories, adjoints, controls and logs.

::

    <out>/traj/<name>/meta.txt            key=value, '#' comments
    <out>/traj/<name>/phi_<n>.chks1       every stride-th step, plus the last
    <out>/traj/<name>/sigma_<n>.chks1
    <out>/traj/<name>/monitors.csv
    <out>/adj/<name>/{p,q,r,z}_<n>.chks1
    <out>/ctrl/<name>/u_<n>.chks1         n = 0..nt-1
    <out>/opt_<name>.csv                  optimization log

Floats in CSV files are written with 17 significant digits so reruns compare
byte for byte.
"""
from __future__ import annotations

import csv
import re
from pathlib import Path

import numpy as np

from .core import Grid2D, LogPotential, field_mean, read_chks1, write_chks1
from .state import MONITOR_COLUMNS, StateTrajectory, free_energy

OPT_COLUMNS = ("iter", "J", "J_phiQ", "J_phiT", "J_sigmaQ", "J_sigmaT", "J_u", "stationarity",
               "step", "armijo_rejects")
REPORT_COLUMNS = ("step", "time", "energy_total", "energy_GL", "energy_M", "mass_phi",
                  "mass_sigma", "phi_min", "phi_max", "sigma_min", "sigma_max",
                  "separation_margin")


def fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def saved_steps(nt: int, stride: int) -> list[int]:
    steps = list(range(0, nt + 1, stride))
    if steps[-1] != nt:
        steps.append(nt)
    return steps


def write_meta(path: Path, meta: dict) -> None:
    lines = ["# chks_control trajectory metadata"]
    lines += [f"{k}={v}" for k, v in meta.items()]
    path.write_text("\n".join(lines) + "\n")


def read_meta(path: Path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        k, sep, v = line.partition("=")
        if not sep:
            raise ValueError(f"{path}: malformed line {line!r}")
        out[k.strip()] = v.strip()
    return out


def write_trajectory(directory, traj: StateTrajectory, meta: dict, stride: int = 1) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    grid = traj.grid
    meta = {**meta, "stride": str(stride), "control_hash": traj.control_hash}
    write_meta(d / "meta.txt", meta)
    for n in saved_steps(len(traj) - 1, stride):
        write_chks1(d / f"phi_{n}.chks1", grid, traj.phi[n])
        write_chks1(d / f"sigma_{n}.chks1", grid, traj.sigma[n])
    cols = traj.monitors
    _write_csv(d / "monitors.csv", MONITOR_COLUMNS,
               zip(*(cols[c] for c in MONITOR_COLUMNS)))
    return d


def write_adjoint(directory, grid: Grid2D, adj, stride: int = 1) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for n in saved_steps(len(adj.times) - 1, stride):
        for name in ("p", "q", "r", "z"):
            write_chks1(d / f"{name}_{n}.chks1", grid, getattr(adj, name)[n])
    return d


def write_control(directory, grid: Grid2D, u) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for n, un in enumerate(u):
        write_chks1(d / f"u_{n}.chks1", grid, un)
    return d


class OptimizationLog:
    """Appends one CSV row per optimizer iteration and flushes immediately."""

    def __init__(self, path):
        self.path = Path(path)
        self._fh = open(self.path, "w", newline="")
        self._w = csv.writer(self._fh, lineterminator="\n")
        self._w.writerow(OPT_COLUMNS)

    def __call__(self, rec) -> None:
        c = rec.cost
        self._w.writerow([fmt(v) for v in (rec.iter, c.J, c.phi_Q, c.phi_T, c.sigma_Q,
                                            c.sigma_T, c.u, rec.stationarity, rec.step,
                                            rec.armijo_rejects)])
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


_FIELD_RE = re.compile(r"^phi_(\d+)\.chks1$")


def load_saved_states(directory):
    """Read ``meta.txt`` and every saved ``(phi, sigma)`` pair, ordered by step."""
    d = Path(directory)
    meta = read_meta(d / "meta.txt")
    grid = Grid2D(int(meta["nx"]), int(meta["ny"]), float(meta["lx"]), float(meta["ly"]))
    steps = sorted(int(m.group(1)) for p in d.iterdir() if (m := _FIELD_RE.match(p.name)))
    states = []
    for n in steps:
        _, phi = read_chks1(d / f"phi_{n}.chks1", grid)
        _, sigma = read_chks1(d / f"sigma_{n}.chks1", grid)
        states.append((n, phi, sigma))
    return meta, grid, states


def report_rows(directory):
    """Diagnostics for every saved state in a trajectory directory."""
    meta, grid, states = load_saved_states(directory)
    dt = float(meta["T"]) / int(meta["nt"]) if int(meta["nt"]) else 0.0
    c0 = float(meta.get("c0", 1.5))
    s_guard = float(meta.get("s_guard", 1e-9))
    pot = LogPotential(c0, s_guard)
    rows = []
    for n, phi, sigma in states:
        total, gl, m = free_energy(grid, phi, sigma, pot, s_guard)
        rows.append((n, n * dt, total, gl, m, field_mean(grid, phi) * grid.area,
                     field_mean(grid, sigma) * grid.area, float(phi.min()), float(phi.max()),
                     float(sigma.min()), float(sigma.max()), 1.0 - float(np.max(np.abs(phi)))))
    return rows


def write_report(directory) -> Path:
    rows = report_rows(directory)
    path = Path(directory) / "report.csv"
    _write_csv(path, REPORT_COLUMNS, rows)
    return path
