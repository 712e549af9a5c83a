import csv
import math

import pytest

from chks_control.cli import main


def _cfg(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_missing_config_exits_2(tmp_path, capsys):
    assert main(["simulate", "--config", str(tmp_path / "absent.cfg")]) == 2
    assert "absent.cfg" in capsys.readouterr().err


def test_unknown_key_exits_2(tmp_path):
    assert main(["simulate", "--config", _cfg(tmp_path, "model.viscosity = 1\n")]) == 2


def test_bad_subcommand_exits_2():
    assert main(["frobnicate"]) == 2
    assert main(["check", "everything"]) == 2


def test_simulate_logistic_preset(tmp_path):
    cfg = _cfg(tmp_path, "preset = uniform-logistic\nname = logi\n")
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path), "--stride", "250"]) == 0
    rows = _read_csv(tmp_path / "traj" / "logi" / "monitors.csv")
    assert len(rows) == 1001
    assert abs(float(rows[-1]["sigma_max"]) - 1 / (1 + math.exp(-1))) <= 2e-3
    files = sorted(p.name for p in (tmp_path / "traj" / "logi").glob("phi_*.chks1"))
    assert files == ["phi_0.chks1", "phi_1000.chks1", "phi_250.chks1", "phi_500.chks1",
                     "phi_750.chks1"]


def test_simulate_nt_zero_writes_initial_snapshot_only(tmp_path):
    cfg = _cfg(tmp_path, "preset = small-check\nmodel.nt = 0\nname = z\n")
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path)]) == 0
    d = tmp_path / "traj" / "z"
    assert sorted(p.name for p in d.glob("*.chks1")) == ["phi_0.chks1", "sigma_0.chks1"]
    assert len(_read_csv(d / "monitors.csv")) == 1


def test_simulate_is_byte_deterministic(tmp_path):
    text = "preset = small-check\ninit.preset = seeded-noise\ncontrol.source = preset\n" \
           "control.value = 0.2\nname = d\n"
    cfg = _cfg(tmp_path, text)
    for out in ("a", "b"):
        assert main(["simulate", "--config", cfg, "--out", str(tmp_path / out), "--seed", "7"]) == 0
    da, db = tmp_path / "a" / "traj" / "d", tmp_path / "b" / "traj" / "d"
    names = sorted(p.name for p in da.iterdir())
    assert names == sorted(p.name for p in db.iterdir())
    for n in names:
        assert (da / n).read_bytes() == (db / n).read_bytes(), n


def test_strict_positivity_flag_turns_warning_fatal(tmp_path):
    text = ("preset = small-check\ninit.preset = uniform\ninit.sigma0 = 0.01\n"
            "control.source = constant\ncontrol.value = -0.5\nname = neg\n")
    cfg = _cfg(tmp_path, text)
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path)]) == 0
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path), "--strict-positivity"]) == 3


def test_optimize_rejects_vanishing_weights(tmp_path):
    text = "preset = small-check\n" + "".join(f"problem.alpha{k} = 0\n" for k in range(1, 6))
    assert main(["optimize", "--config", _cfg(tmp_path, text), "--out", str(tmp_path)]) == 2


def test_optimize_rejects_infeasible_bounds(tmp_path):
    text = "preset = small-check\nproblem.u_min = 0.5\nproblem.u_max = -0.5\n"
    assert main(["optimize", "--config", _cfg(tmp_path, text), "--out", str(tmp_path)]) == 2


def test_optimize_zero_budget_logs_initial_row(tmp_path):
    text = "preset = small-check\noptimizer.max_outer_iters = 0\nname = o\n"
    assert main(["optimize", "--config", _cfg(tmp_path, text), "--out", str(tmp_path)]) == 0
    rows = _read_csv(tmp_path / "opt_o.csv")
    assert len(rows) == 1 and rows[0]["iter"] == "0"
    assert len(list((tmp_path / "ctrl" / "o").glob("u_*.chks1"))) == 20
    assert (tmp_path / "adj" / "o" / "z_0.chks1").exists()


def test_optimize_inverse_problem_reduces_cost(tmp_path):
    text = "preset = inverse-problem\noptimizer.max_outer_iters = 25\nname = inv\n"
    assert main(["optimize", "--config", _cfg(tmp_path, text), "--out", str(tmp_path)]) == 0
    J = [float(r["J"]) for r in _read_csv(tmp_path / "opt_inv.csv")]
    assert J[-1] <= 1e-2 * J[0]
    assert all(b <= a for a, b in zip(J, J[1:]))


@pytest.mark.parametrize("which", ["gradient", "duality", "transpose", "mass"])
def test_checks_pass_on_small_config(tmp_path, capsys, which):
    cfg = _cfg(tmp_path, "preset = small-check\n")
    assert main(["check", which, "--config", cfg]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out and "FAIL" not in out


def test_convergence_check_passes(capsys):
    assert main(["check", "convergence"]) == 0


def test_check_fails_with_exit_1(tmp_path):
    # loose inner solves push the finite-difference gradient error above 1e-8
    text = "preset = small-check\nmodel.newton_tol = 1e-4\nmodel.cg_tol = 1e-6\n"
    assert main(["check", "gradient", "--config", _cfg(tmp_path, text)]) == 1


def test_check_guard_on_large_configs(tmp_path):
    cfg = _cfg(tmp_path, "grid.nx = 65\ngrid.ny = 64\n")
    assert main(["check", "mass", "--config", cfg]) == 2


def test_report_outputs(tmp_path):
    cfg = _cfg(tmp_path, "preset = small-check\nname = r\n")
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path), "--stride", "5"]) == 0
    d = tmp_path / "traj" / "r"
    assert main(["report", str(d)]) == 0
    rows = _read_csv(d / "report.csv")
    assert [int(r["step"]) for r in rows] == [0, 5, 10, 15, 20]
    assert all(float(r["phi_max"]) < 1 for r in rows)
    assert all(float(r["separation_margin"]) > 0 for r in rows)


def test_report_zero_nutrient_has_no_chemotaxis_energy(tmp_path):
    text = "preset = small-check\ninit.preset = uniform\ninit.phi0 = 0.2\ninit.sigma0 = 0\nname = s0\n"
    assert main(["simulate", "--config", _cfg(tmp_path, text), "--out", str(tmp_path)]) == 0
    d = tmp_path / "traj" / "s0"
    assert main(["report", str(d)]) == 0
    assert all(float(r["energy_M"]) == 0.0 for r in _read_csv(d / "report.csv"))


def test_report_errors(tmp_path):
    assert main(["report", str(tmp_path / "nowhere")]) == 2
    (tmp_path / "meta.txt").write_text("nx=4\n")
    assert main(["report", str(tmp_path)]) == 2


def test_presets_listed(capsys):
    assert main(["presets"]) == 0
    assert "inverse-problem" in capsys.readouterr().out
