import copy
import json

import numpy as np
import pytest

from densteer import cli, model
from densteer.config import DEFAULTS, ConfigError, load_config, parse_config, with_override

COARSE = {
    "name": "small",
    "grid": {"M": 61, "N": 20},
    "target": {"type": "normal", "mean": 6, "sd": 1},
    "cost": {"type": "quadratic_shift", "box": {"A_max": 6, "B_min": -3, "B_max": 3}},
    "penalty": {"type": "squared_l2", "lam": 2.0},
    "optimizer": {"max_outer_iter": 60},
}


def _write(tmp_path, raw, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(raw))
    return path


def _read_csv(path):
    lines = path.read_text().splitlines()
    assert lines[0] == cli.SCHEMA
    header = lines[1].split(",")
    data = np.array([[float(v) for v in ln.split(",")] for ln in lines[2:]]).reshape(-1, len(header))
    return header, data


class TestConfig:
    def test_defaults_materialized(self):
        cfg = parse_config({"target": {"type": "normal", "mean": 6, "sd": 1}})
        assert cfg.tol.grad_tol == 1e-5 and cfg.tol.max_outer_iter == 500
        assert cfg.materialized["optimizer"]["grad_tol"] == 1e-5
        assert (cfg.grid.M, cfg.grid.N, cfg.x0) == (241, 100, 5.0)
        assert isinstance(cfg.penalty, model.Indicator)
        assert cfg.cost == model.QuadraticShift()
        assert cfg.stencil == "upwind" and cfg.fp_scheme == "implicit"

    def test_defaults_not_mutated(self):
        before = copy.deepcopy(DEFAULTS)
        parse_config({**COARSE, "grid": {"M": 11, "N": 3}})
        assert DEFAULTS == before

    def test_cash_schedule(self):
        raw = {**COARSE, "cost": {"type": "cash_input", "K_schedule": [[0, 0.95, 5], [0.95, 1, 0.1]]}}
        cost = parse_config(raw).cost
        assert cost.schedule(0.5) == 5.0 and cost.schedule(0.97) == 0.1

    @pytest.mark.parametrize(
        "patch, field",
        [
            ({"cost": {"type": "cash_input", "K_schedule": [[0, 0.6, 5], [0.5, 1, 0.1]]}}, "cost.K_schedule"),
            ({"cost": {"type": "cash_input", "K": 1, "K_schedule": [[0, 1, 5]]}}, "cost.K"),
            ({"cost": {"type": "cash_input"}}, "cost.K"),
            ({"grid": {"M": 61, "N": 20, "dx": 0.1}}, "grid.dx"),
            ({"grid": {"M": 60.5}}, "grid.M"),
            ({"penalty": {"type": "wasserstein"}}, "penalty.type"),
            ({"penalty": {"type": "kl", "lam": -1}}, "penalty"),
            ({"target": {"type": "normal", "mean": 6}}, "target.sd"),
            ({"target": {"type": "normal", "mean": 11.8, "sd": 1}}, "target"),
            ({"initial": {"x0": 20}}, "initial.x0"),
            ({"optimizer": {"grad_tol": 0}}, "optimizer.grad_tol"),
            ({"solver": {"stencil": "weno"}}, "solver.stencil"),
            ({"montecarlo": {"enabled": "yes"}}, "montecarlo.enabled"),
            ({"colour": 1}, "colour"),
            ({"market": {"sigma": "high"}}, "market.sigma"),
        ],
    )
    def test_validation_names_field(self, patch, field):
        with pytest.raises(ConfigError) as info:
            parse_config({**COARSE, **patch})
        assert str(info.value).startswith(field)

    def test_missing_target(self):
        with pytest.raises(ConfigError, match="target"):
            parse_config({"name": "x"})

    def test_parse_error_has_line(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{\n  "name": "x",\n  "grid": {,}\n}')
        with pytest.raises(ConfigError, match="line 3"):
            load_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "nope.json")

    def test_override(self):
        cfg = parse_config(COARSE)
        sub = with_override(cfg, "lambda", 20)
        assert sub.penalty == model.SquaredL2(20.0)
        assert sub.materialized["penalty"]["lam"] == 20.0
        with pytest.raises(ConfigError):
            with_override(cfg, "K", 4)
        cash = parse_config({**COARSE, "cost": {"type": "cash_input", "K_schedule": [[0, 1, 5]]}})
        assert with_override(cash, "K", 4).cost.schedule(0.3) == 4.0

    def test_echo_round_trip(self):
        cfg = parse_config(COARSE)
        again = parse_config(json.loads(json.dumps(cfg.materialized)))
        assert again.materialized == cfg.materialized


class TestCli:
    def test_validate(self, tmp_path, capsys):
        assert cli.main(["validate", str(_write(tmp_path, COARSE))]) == cli.EXIT_OK
        echoed = json.loads(capsys.readouterr().out)
        assert echoed["optimizer"]["grad_tol"] == 1e-5

    def test_invalid_exit_code(self, tmp_path, capsys):
        path = _write(tmp_path, {**COARSE, "penalty": {"type": "nope"}})
        assert cli.main(["validate", str(path)]) == cli.EXIT_INVALID
        assert "penalty.type" in capsys.readouterr().err

    def test_solve_artifacts(self, tmp_path):
        out = tmp_path / "run"
        assert cli.main(["solve", str(_write(tmp_path, COARSE)), "--out", str(out)]) == cli.EXIT_OK
        header, data = _read_csv(out / "terminal_densities.csv")
        assert header == ["x", "rho1", "target", "p1"]
        dx = data[1, 0] - data[0, 0]
        for col in (1, 2, 3):
            assert np.sum(data[:, col]) * dx == pytest.approx(1.0, abs=1e-6)
        header, data = _read_csv(out / "controls.csv")
        assert header == ["t", "x", "B_star", "A_star"] and data.shape == (20 * 61, 4)
        header, _ = _read_csv(out / "convergence.csv")
        assert header == ["iter", "V_tilde", "grad_inf_norm", "step"]
        snaps = sorted(p.name for p in (out / "density_snapshots").iterdir())
        assert snaps == ["t_0.0000.csv", "t_0.2500.csv", "t_0.5000.csv", "t_0.7500.csv", "t_1.0000.csv"]
        header, data = _read_csv(out / "density_snapshots" / "t_0.5000.csv")
        assert header == ["t", "x", "rho", "p"] and np.all(data[:, 0] == 0.5)
        report = json.loads((out / "report.json").read_text())
        assert report["termination_reason"] == "converged"
        assert report["diagnostics"]["mass_drift"] <= 1e-6
        assert json.loads((out / "config_echo.json").read_text())["grid"]["M"] == 61

    def test_cash_columns(self, tmp_path):
        raw = {**COARSE, "cost": {"type": "cash_input", "K": 4}, "optimizer": {"max_outer_iter": 5}}
        cfg = parse_config(raw)
        cli.run_experiment(cfg, tmp_path / "cash")
        header, _ = _read_csv(tmp_path / "cash" / "terminal_densities.csv")
        assert header == ["x", "rho1", "target", "q1"]

    def test_nonconverged_exit_code(self, tmp_path):
        raw = {**COARSE, "optimizer": {"max_outer_iter": 2}}
        out = tmp_path / "run"
        assert cli.main(["solve", str(_write(tmp_path, raw)), "--out", str(out)]) == cli.EXIT_NONCONVERGED
        assert json.loads((out / "report.json").read_text())["termination_reason"] == "max_iterations"

    def test_solver_failure_flagged(self, tmp_path):
        raw = {**COARSE, "market": {"mu": 0.0}, "cost": {"type": "quadratic_shift", "box": {"A_max": 1, "B_min": 0.5, "B_max": 1}}}
        out = tmp_path / "run"
        assert cli.main(["solve", str(_write(tmp_path, raw)), "--out", str(out)]) == cli.EXIT_NONCONVERGED
        assert json.loads((out / "report.json").read_text())["partial"] is True

    def test_determinism(self, tmp_path):
        path = _write(tmp_path, {**COARSE, "montecarlo": {"enabled": True, "n_paths": 2000, "seed": 3}})
        for d in ("a", "b"):
            assert cli.main(["solve", str(path), "--out", str(tmp_path / d)]) == cli.EXIT_OK
        files = [p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*.csv")]
        assert len(files) == 8
        for f in files:
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
        report = json.loads((tmp_path / "a" / "report.json").read_text())
        assert 0 <= report["montecarlo"]["ks_distance"] <= 1

    def test_sweep(self, tmp_path, capsys):
        out = tmp_path / "sweep"
        code = cli.main(["sweep", str(_write(tmp_path, COARSE)), "--param", "lambda", "--values", "1,10", "--out", str(out)])
        assert code == cli.EXIT_OK
        header, data = _read_csv(out / "sweep_summary.csv")
        assert header == ["value", "l2_distance", "dual_value", "expected_input", "expected_saving", "converged"]
        assert list(data[:, 0]) == [1.0, 10.0]
        assert data[1, 1] < data[0, 1]
        assert (out / "lambda_10" / "terminal_densities.csv").exists()

    def test_empty_sweep(self, tmp_path):
        out = tmp_path / "sweep"
        code = cli.main(["sweep", str(_write(tmp_path, COARSE)), "--param", "lambda", "--values", "", "--out", str(out)])
        assert code == cli.EXIT_OK
        header, data = _read_csv(out / "sweep_summary.csv")
        assert data.size == 0 and header[0] == "value"

    def test_sweep_records_failures(self, tmp_path):
        rows = cli.sweep(parse_config(COARSE), "K", [1.0], tmp_path)
        assert rows[0]["converged"] == 0.0 and np.isnan(rows[0]["l2_distance"])

    def test_mc_command(self, tmp_path, capsys):
        path = _write(tmp_path, COARSE)
        code = cli.main(["mc", str(path), "--paths", "1000", "--seed", "5", "--out", str(tmp_path / "mc")])
        assert code == cli.EXIT_OK
        out = capsys.readouterr().out
        summary = json.loads(out[: out.rindex("}") + 1])
        assert summary["n_paths"] == 1000 and summary["seed"] == 5
