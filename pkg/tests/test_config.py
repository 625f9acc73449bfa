"""Config schema, loading and object construction."""

import json

import numpy as np
import pytest

from jumpns.benchmarks import NAMES, benchmark_path, load_benchmark
from jumpns.config import (ConfigError, build_control, build_event, build_field, build_grid,
                           build_probe, build_template, load_config, parse_config)
from jumpns.prm import ControlField
from jumpns.spectral import norms, save_snapshot, single_mode

MINIMAL = {
    "grid": {"n_modes": 8},
    "noise": {"weights": [0.3, 0.2], "sigma": [-1.0, -1.0],
              "base_field": {"kind": "modes", "modes": [{"kx": 1, "ky": 0, "amplitude": 0.3}]}},
    "solver": {"dt": 0.05, "T": 1.0, "eps": 0.1},
}


def with_changes(**sections):
    data = json.loads(json.dumps(MINIMAL))
    for name, value in sections.items():
        data.setdefault(name, {}).update(value)
    return data


class TestSchema:
    def test_minimal(self):
        cfg = parse_config(MINIMAL)
        assert cfg.initial.kind == "zero" and cfg.experiment.seed == 0
        assert cfg.solver.scheme == "integrating_factor"

    @pytest.mark.parametrize("section,payload", [
        ("grid", {"n_points": 8}),
        ("solver", {"timestep": 0.1}),
        ("experiment", {"samples": 3}),
        ("output", {"dir": "x"}),
    ])
    def test_unknown_keys_rejected(self, section, payload):
        with pytest.raises(ConfigError, match="Extra inputs"):
            parse_config(with_changes(**{section: payload}))

    def test_unknown_section_rejected(self):
        data = dict(MINIMAL, extras={"a": 1})
        with pytest.raises(ConfigError):
            parse_config(data)

    @pytest.mark.parametrize("section,payload,msg", [
        ("grid", {"n_modes": 9}, "even"),
        ("grid", {"n_modes": 6}, "greater than or equal"),
        ("solver", {"dt": 0.3}, "does not divide"),
        ("noise", {"weights": [0.3, 0.0]}, "positive"),
        ("noise", {"sigma": [1.0]}, "one entry per mark"),
        ("experiment", {"eps_grid": [0.2, 0.1]}, "three"),
        ("experiment", {"eps_grid": [0.1, 0.2, 0.05], "budgets": [1, 1, 1]}, "decreasing"),
        ("experiment", {"eps_grid": [0.2, 0.1, 0.05], "budgets": [1, 1]}, "one entry"),
        ("experiment", {"event": {"kind": "terminal_distance_below", "threshold": 0.1}}, "reference"),
    ])
    def test_invalid_values(self, section, payload, msg):
        with pytest.raises(ConfigError, match=msg):
            parse_config(with_changes(**{section: payload}))

    def test_canonical_round_trip(self):
        cfg = parse_config(MINIMAL)
        again = parse_config(cfg.canonical())
        assert again.canonical() == cfg.canonical()

    def test_with_seed(self):
        cfg = parse_config(MINIMAL).with_seed(42)
        assert cfg.experiment.seed == 42


class TestLoading:
    def test_toml_and_json_agree(self, tmp_path):
        (tmp_path / "a.json").write_text(json.dumps(MINIMAL))
        (tmp_path / "b.toml").write_text(
            "[grid]\nn_modes = 8\n[noise]\nweights = [0.3, 0.2]\nsigma = [-1.0, -1.0]\n"
            "base_field = { kind = \"modes\", modes = [{ kx = 1, ky = 0, amplitude = 0.3 }] }\n"
            "[solver]\ndt = 0.05\nT = 1.0\neps = 0.1\n")
        assert load_config(tmp_path / "a.json").canonical() == load_config(tmp_path / "b.toml").canonical()

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "nope.toml")

    def test_syntax_error(self, tmp_path):
        p = tmp_path / "bad.toml"
        p.write_text("[grid\nn_modes = 8\n")
        with pytest.raises(ConfigError):
            load_config(p)

    @pytest.mark.parametrize("name", NAMES)
    def test_benchmarks_load(self, name):
        cfg = load_benchmark(name)
        assert load_config(benchmark_path(name)).canonical() == cfg.canonical()


class TestConstruction:
    def test_modes_field(self):
        cfg = parse_config(MINIMAL)
        grid = build_grid(cfg)
        spec = cfg.noise.base_field
        u = build_field(spec, grid)
        assert u.equals(single_mode(grid, 1, 0, 0.3))

    def test_random_amplitude_is_h_norm(self):
        data = with_changes(initial={"kind": "random", "seed": 3, "amplitude": 1.7})
        tm = build_template(parse_config(data))
        assert norms(tm.u0).h == pytest.approx(1.7, rel=1e-12)

    def test_snapshot_relative_to_config(self, tmp_path):
        cfg = parse_config(MINIMAL)
        u = single_mode(build_grid(cfg), 2, 1, 0.5)
        save_snapshot(tmp_path / "u.jnsf", u)
        data = with_changes(initial={"kind": "snapshot", "path": "u.jnsf"})
        (tmp_path / "c.json").write_text(json.dumps(data))
        tm = build_template(load_config(tmp_path / "c.json"))
        assert tm.u0.equals(u)

    def test_missing_snapshot(self, tmp_path):
        data = with_changes(initial={"kind": "snapshot", "path": "missing.jnsf"})
        with pytest.raises(ConfigError, match="not found"):
            build_template(parse_config(data, tmp_path))

    def test_control_file(self, tmp_path):
        g = ControlField([0, 0.5, 1.0], [[2.0, 1.0], [1.0, 0.5]])
        g.save(tmp_path / "g.json")
        cfg = parse_config(with_changes(experiment={"control_file": "g.json"}), tmp_path)
        assert build_control(cfg).to_dict() == g.to_dict()

    def test_control_horizon_mismatch(self):
        data = with_changes(experiment={"control": {"breakpoints": [0, 2.0], "values": [[1.0, 1.0]]}})
        with pytest.raises(ConfigError, match="horizon"):
            build_control(parse_config(data))

    def test_control_required(self):
        with pytest.raises(ConfigError, match="control"):
            build_control(parse_config(MINIMAL), required=True)

    def test_planted_event_reference(self):
        cfg = load_benchmark("planted_rate")
        tm = build_template(cfg)
        event, planted = build_event(cfg, tm)
        assert planted is not None and event.reference is not None
        from jumpns.skeleton import solve_skeleton
        assert event.margin(solve_skeleton(tm.with_control(planted))) > 0

    def test_probe_sequence(self):
        cfg = load_benchmark("continuity_probe")
        seq, limit, levels = build_probe(cfg)
        assert len(seq) == len(levels) and limit.is_unit
        h0 = seq[0].values - 1
        assert np.allclose(seq[-1].values - 1, h0 / levels[-1] * levels[0])
