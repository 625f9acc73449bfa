"""Command-line behaviour: outputs, exit codes and reproducibility."""

import csv
import json

import pytest
from click.testing import CliRunner

from jumpns.cli import main
from jumpns.config import load_config
from jumpns.prm import ControlField

SIM_TOML = """
[grid]
n_modes = 8

[noise]
weights = [0.5, 0.5]
sigma = [1.0, -0.6]
linear_gain = 0.3
base_field = { kind = "random", seed = 11, amplitude = 1.0 }

[initial]
kind = "random"
seed = 5
amplitude = 1.5

[solver]
dt = 0.05
T = 1.0
eps = 0.2

[experiment]
seed = 3
n_paths = 4
n_samples = 300
optimizer = { n_intervals = 1, bound_n = 10, max_evals = 100 }

[experiment.event]
kind = "terminal_energy_above"
threshold = 0.0
"""


def invoke(*args, env=None):
    return CliRunner().invoke(main, list(args), env=env, catch_exceptions=False)


def run_dir(root, command):
    dirs = sorted(root.glob(f"{command}-*"))
    assert len(dirs) == 1, dirs
    return dirs[0]


@pytest.fixture
def sim_config(tmp_path):
    path = tmp_path / "sim.toml"
    path.write_text(SIM_TOML)
    return path


def write_config(tmp_path, text, name="c.toml"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestSimulate:
    def test_outputs(self, sim_config, tmp_path):
        out = tmp_path / "out"
        res = invoke("--config", str(sim_config), "--out", str(out), "simulate")
        assert res.exit_code == 0, res.output
        d = run_dir(out, "simulate")
        rows = list(csv.DictReader((d / "paths" / "traj_00000.csv").open()))
        assert len(rows) == 21 and float(rows[-1]["t"]) == 1.0
        assert len(list((d / "paths").iterdir())) == 4
        manifest = json.loads((d / "manifest.json").read_text())
        assert "summary.json" in manifest and "paths/traj_00003.csv" in manifest

    def test_reproducible_across_roots(self, sim_config, tmp_path):
        for root in ("a", "b"):
            assert invoke("--config", str(sim_config), "--out", str(tmp_path / root),
                          "simulate").exit_code == 0
        a, b = run_dir(tmp_path / "a", "simulate"), run_dir(tmp_path / "b", "simulate")
        assert a.name == b.name
        assert (a / "manifest.json").read_bytes() == (b / "manifest.json").read_bytes()

    def test_seed_override_changes_run(self, sim_config, tmp_path):
        invoke("--config", str(sim_config), "--out", str(tmp_path / "o"), "simulate")
        invoke("--config", str(sim_config), "--out", str(tmp_path / "o"), "--seed", "4", "simulate")
        dirs = list((tmp_path / "o").glob("simulate-*"))
        assert len(dirs) == 2

    def test_env_output_root(self, sim_config, tmp_path):
        res = invoke("--config", str(sim_config), "simulate", env={"JUMPNS_OUT": str(tmp_path / "env")})
        assert res.exit_code == 0
        run_dir(tmp_path / "env", "simulate")

    def test_config_echo_round_trips(self, sim_config, tmp_path):
        invoke("--config", str(sim_config), "--out", str(tmp_path), "simulate")
        record = json.loads((run_dir(tmp_path, "simulate") / "record.json").read_text())
        again = write_config(tmp_path, json.dumps(record["config"]), "echo.json")
        assert load_config(again).canonical() == record["config"]

    def test_blowup_exit_code(self, tmp_path):
        cfg = write_config(tmp_path, SIM_TOML.replace("eps = 0.2", "eps = 0.2\nguard = 0.5"))
        res = invoke("--config", str(cfg), "--out", str(tmp_path / "o"), "simulate")
        assert res.exit_code == 3
        assert (run_dir(tmp_path / "o", "simulate") / "summary.json").is_file()


class TestConfigErrors:
    def test_missing_config(self, tmp_path):
        assert invoke("--out", str(tmp_path), "simulate").exit_code == 2

    def test_unknown_key(self, tmp_path):
        cfg = write_config(tmp_path, SIM_TOML.replace("[grid]", "[grid]\nmodes = 3"))
        res = invoke("--config", str(cfg), "--out", str(tmp_path), "simulate")
        assert res.exit_code == 2 and "config error" in res.output
        assert not list(tmp_path.glob("simulate-*"))

    def test_unknown_benchmark(self, tmp_path):
        assert invoke("--config", "benchmark:nope", "--out", str(tmp_path), "rate").exit_code == 2

    def test_missing_control_file(self, tmp_path):
        cfg = write_config(tmp_path, SIM_TOML.replace("n_paths = 4", "n_paths = 4\ncontrol_file = \"g.json\""))
        assert invoke("--config", str(cfg), "--out", str(tmp_path), "skeleton").exit_code == 2

    def test_tilted_mc_needs_control(self, tmp_path):
        cfg = write_config(tmp_path, SIM_TOML.replace("n_paths = 4", "n_paths = 4\ntilted = true"))
        assert invoke("--config", str(cfg), "--out", str(tmp_path), "mc").exit_code == 2


class TestSkeleton:
    def test_unit_control_equals_deterministic(self, tmp_path):
        unit = ControlField.unit(1.0, 2)
        unit.save(tmp_path / "g.json")
        a = write_config(tmp_path, SIM_TOML.replace("n_paths = 4", "n_paths = 4\ncontrol_file = \"g.json\""), "a.toml")
        b = write_config(tmp_path, SIM_TOML.replace("n_paths = 4", "n_paths = 4\ndeterministic = true"), "b.toml")
        for cfg, root in ((a, "ra"), (b, "rb")):
            assert invoke("--config", str(cfg), "--out", str(tmp_path / root), "skeleton").exit_code == 0
        sa = (run_dir(tmp_path / "ra", "skeleton") / "skeleton.csv").read_bytes()
        sb = (run_dir(tmp_path / "rb", "skeleton") / "skeleton.csv").read_bytes()
        assert sa == sb

    def test_probe_benchmark(self, tmp_path):
        res = invoke("--config", "benchmark:continuity_probe", "--out", str(tmp_path), "skeleton")
        assert res.exit_code == 0
        summary = json.loads((run_dir(tmp_path, "skeleton") / "summary.json").read_text())
        assert summary["probe"]["strictly_decreasing"]
        assert (run_dir(tmp_path, "skeleton") / "probe.csv").is_file()


class TestRateAndMc:
    def test_zero_rate_event(self, sim_config, tmp_path):
        res = invoke("--config", str(sim_config), "--out", str(tmp_path), "rate")
        assert res.exit_code == 0, res.output
        d = run_dir(tmp_path, "rate")
        summary = json.loads((d / "summary.json").read_text())
        assert summary["rate"]["rate_value"] == 0.0
        assert ControlField.load(d / "control.json").is_unit

    def test_zero_budgets_write_header_only(self, tmp_path):
        text = SIM_TOML.replace("n_paths = 4", "n_paths = 4\neps_grid = [0.2, 0.1, 0.05]\nbudgets = [0, 0, 0]")
        cfg = write_config(tmp_path, text)
        res = invoke("--config", str(cfg), "--out", str(tmp_path / "o"), "rate")
        assert res.exit_code == 0
        lines = (run_dir(tmp_path / "o", "rate") / "scaling.csv").read_text().splitlines()
        assert len(lines) == 1 and lines[0].startswith("eps,")

    def test_infeasible_exit_code(self, tmp_path):
        text = SIM_TOML.replace("threshold = 0.0", "threshold = 1e6")
        cfg = write_config(tmp_path, text)
        assert invoke("--config", str(cfg), "--out", str(tmp_path), "rate").exit_code == 3

    def test_mc_certain_event(self, sim_config, tmp_path):
        assert invoke("--config", str(sim_config), "--out", str(tmp_path), "mc").exit_code == 0
        rows = list(csv.DictReader((run_dir(tmp_path, "mc") / "estimates.csv").open()))
        assert len(rows) == 1 and float(rows[0]["p_hat"]) == 1.0 and rows[0]["method"] == "plain"

    def test_mc_tilted(self, tmp_path):
        ControlField.constant(1.0, 2, 1.5).save(tmp_path / "g.json")
        text = SIM_TOML.replace("n_paths = 4", "n_paths = 4\ntilted = true\ncontrol_file = \"g.json\"")
        cfg = write_config(tmp_path, text)
        assert invoke("--config", str(cfg), "--out", str(tmp_path), "mc").exit_code == 0
        rows = list(csv.DictReader((run_dir(tmp_path, "mc") / "estimates.csv").open()))
        assert [r["method"] for r in rows] == ["plain", "tilted"]


class TestVerify:
    def test_list(self, tmp_path):
        res = invoke("--out", str(tmp_path), "verify", "--list")
        assert res.exit_code == 0 and "spectral.antisymmetry" in res.output
        assert not list(tmp_path.iterdir())

    def test_suite_selector(self, tmp_path):
        res = invoke("--out", str(tmp_path), "verify", "spectral")
        assert res.exit_code == 0, res.output
        report = json.loads((run_dir(tmp_path, "verify") / "report.json").read_text())
        assert report["passed"] and all(c["name"].startswith("spectral.") for c in report["checks"])

    def test_tightened_tolerance_fails(self, tmp_path):
        res = invoke("--out", str(tmp_path), "verify", "jump.determinism",
                     "--tolerance", "jump.determinism=-1")
        assert res.exit_code == 4 and "FAIL" in res.output

    @pytest.mark.parametrize("args", [("nope",), ("spectral", "--tolerance", "x=1"),
                                      ("spectral", "--tolerance", "spectral.parseval")])
    def test_bad_arguments(self, tmp_path, args):
        assert invoke("--out", str(tmp_path), "verify", *args).exit_code == 2
