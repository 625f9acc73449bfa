"""Rate bounds, Monte Carlo estimators and the scaling table."""

import math

import numpy as np
import pytest

from jumpns.benchmarks import load_benchmark
from jumpns.config import build_event, build_optimizer, build_template
from jumpns.ldp import (EventFunctional, InfeasibleError, OptimizerConfig, ScalingRow,
                        ScalingTable, importance_sampled_probability, ldp_scaling_table,
                        mc_probability, minimize_rate, wilson_interval)
from jumpns.prm import ControlField, entropy_LT
from jumpns.skeleton import solve_skeleton


@pytest.fixture(scope="module")
def scaling_case():
    cfg = load_benchmark("ldp_scaling")
    template = build_template(cfg)
    event, _ = build_event(cfg, template)
    return template, event, build_optimizer(cfg)


@pytest.fixture(scope="module")
def scaling_rate(scaling_case):
    template, event, opt = scaling_case
    return minimize_rate(event, template, opt, seed=1)


def planted_event(pb, g_star, delta):
    ref = solve_skeleton(pb.with_control(g_star)).final
    return EventFunctional("terminal_distance_below", delta, ref)


G_STAR = ControlField([0, 0.5, 1.0], [[1.8, 0.7], [0.8, 1.5]])
QUICK = OptimizerConfig(n_intervals=2, bound_n=20, restarts=1, max_evals=300)


class TestEvents:
    def test_margins_and_indicator(self, small_problem):
        traj = solve_skeleton(small_problem)
        e_T = traj.norms[-1, 0] ** 2
        assert EventFunctional("terminal_energy_above", e_T - 0.1).indicator(traj)
        assert not EventFunctional("terminal_energy_above", e_T + 0.1).indicator(traj)
        sup_v = traj.norms[:, 1].max()
        ev = EventFunctional("sup_V_norm_above", sup_v)
        assert ev.margin(traj) == 0 and ev.score(traj) == sup_v
        near = EventFunctional("terminal_distance_below", 0.0, traj.final)
        assert near.margin(traj) == 0

    def test_validation(self, small_problem):
        with pytest.raises(ValueError, match="unknown event"):
            EventFunctional("energy", 1.0)
        with pytest.raises(ValueError, match="reference"):
            EventFunctional("terminal_distance_below", 1.0)


class TestMinimizeRate:
    def test_zero_rate(self, small_problem):
        traj = solve_skeleton(small_problem)
        ev = EventFunctional("terminal_energy_above", traj.norms[-1, 0] ** 2 - 0.01)
        est = minimize_rate(ev, small_problem, QUICK)
        assert est.rate_value == 0.0 and est.control.is_unit and est.feasible

    def test_planted_control(self, small_problem):
        ev = planted_event(small_problem, G_STAR, 0.01)
        est = minimize_rate(ev, small_problem, QUICK, seed=3)
        assert est.rate_value <= entropy_LT(G_STAR, small_problem.space) + 1e-3
        assert est.constraint_residual <= 1e-4

    def test_soundness(self, small_problem):
        ev = planted_event(small_problem, G_STAR, 0.02)
        est = minimize_rate(ev, small_problem, QUICK, seed=4)
        assert est.rate_value == pytest.approx(entropy_LT(est.control, small_problem.space), abs=1e-12)
        assert ev.indicator(solve_skeleton(small_problem.with_control(est.control)))
        assert est.optimizer_trace[0]["stage"] == "unit"

    def test_shrinking_target_costs_more(self, small_problem):
        rates = []
        warm = None
        for delta in (0.08, 0.04, 0.01):
            est = minimize_rate(planted_event(small_problem, G_STAR, delta), small_problem, QUICK,
                                seed=5, warm_start=warm)
            rates.append(est.rate_value)
            warm = est.control
        assert all(b >= a - 1e-3 for a, b in zip(rates, rates[1:]))

    def test_infeasible(self, small_problem):
        ev = EventFunctional("terminal_energy_above", 1e6)
        cfg = OptimizerConfig(n_intervals=1, bound_n=2, max_evals=50, mu_max=1e3)
        with pytest.raises(InfeasibleError):
            minimize_rate(ev, small_problem, cfg)

    def test_dimension_limit(self, small_problem):
        ev = EventFunctional("terminal_energy_above", 1e6)
        with pytest.raises(ValueError, match="64"):
            minimize_rate(ev, small_problem, OptimizerConfig(n_intervals=40))


class TestWilson:
    @pytest.mark.parametrize("k,n", [(0, 50), (7, 100), (100, 100), (31, 2000)])
    def test_closed_form(self, k, n):
        z = 1.959963984540054
        p = k / n
        centre = (p + z * z / (2 * n)) / (1 + z * z / n)
        half = z / (1 + z * z / n) * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
        lo, hi = wilson_interval(k, n)
        assert lo == pytest.approx(max(0.0, centre - half), abs=1e-12)
        assert hi == pytest.approx(min(1.0, centre + half), abs=1e-12)


class TestMonteCarlo:
    def test_certain_and_impossible_events(self, small_problem):
        pb = small_problem
        sure = mc_probability(EventFunctional("terminal_energy_above", -math.inf), 0.5, 200, 1, pb)
        never = mc_probability(EventFunctional("terminal_energy_above", math.inf), 0.5, 200, 1, pb)
        assert sure.p_hat == 1.0 and sure.hits == 200
        assert never.p_hat == 0.0 and never.ci_low == 0.0 and never.ci_high > 0

    def test_reproducible(self, small_problem):
        traj = solve_skeleton(small_problem)
        ev = EventFunctional("terminal_energy_above", traj.norms[-1, 0] ** 2 * 1.1)
        a = mc_probability(ev, 0.5, 1000, 17, small_problem)
        b = mc_probability(ev, 0.5, 1000, 17, small_problem)
        assert 0 < a.p_hat < 1
        assert a.p_hat == b.p_hat and np.array_equal(a.indicators, b.indicators)

    def test_unit_tilt_reproduces_plain(self, small_problem):
        traj = solve_skeleton(small_problem)
        ev = EventFunctional("terminal_energy_above", traj.norms[-1, 0] ** 2 * 1.1)
        plain = mc_probability(ev, 0.5, 500, 4, small_problem)
        tilted = importance_sampled_probability(ev, 0.5, ControlField.unit(1.0, 2), 500, 4,
                                                small_problem)
        assert not tilted.log_weights.any()
        assert np.array_equal(plain.indicators, tilted.indicators)
        assert tilted.p_hat == plain.p_hat

    def test_rejects_empty_budget(self, small_problem):
        with pytest.raises(ValueError):
            mc_probability(EventFunctional("terminal_energy_above", 0.0), 0.5, 0, 1, small_problem)


class TestBenchmarkEstimators:
    def test_rate_is_positive_and_feasible(self, scaling_case, scaling_rate):
        template, event, _ = scaling_case
        assert scaling_rate.feasible and scaling_rate.rate_value > 0
        assert event.indicator(solve_skeleton(template.with_control(scaling_rate.control)))

    def test_tilted_overlaps_plain(self, scaling_case, scaling_rate):
        template, event, _ = scaling_case
        plain = mc_probability(event, 0.1, 100_000, 1, template)
        assert 1e-3 <= plain.p_hat <= 1e-2
        tilted = importance_sampled_probability(event, 0.1, scaling_rate.control, 10_000, 2,
                                                template)
        assert plain.ci_low <= tilted.ci_high and tilted.ci_low <= plain.ci_high

    def test_effective_sample_size_beats_hits(self, scaling_case, scaling_rate):
        template, event, _ = scaling_case
        n = 10_000
        plain = mc_probability(event, 0.1, n, 3, template)
        tilted = importance_sampled_probability(event, 0.1, scaling_rate.control, n, 4, template)
        assert tilted.ess > 10 * plain.hits


class TestScalingTable:
    def rows(self, values, eps=(0.2, 0.1, 0.05), hits=(100, 100, 100)):
        out = []
        for e, v, h in zip(eps, values, hits):
            p = math.exp(-v / e)
            out.append(ScalingRow(e, 10**6, h, p, p * 0.9, p * 1.1, v, 0.4, h >= 30))
        return out

    def test_selects_smallest_sufficient_eps(self):
        table = ScalingTable(self.rows([0.5, 0.45, 0.2], hits=(100, 40, 5)), 0.4)
        assert table.selected().eps == 0.1
        assert table.band_error() == pytest.approx(0.125)
        assert table.within_band()

    def test_no_sufficient_rows(self):
        table = ScalingTable(self.rows([0.5, 0.45, 0.2], hits=(1, 2, 3)), 0.4)
        assert table.selected() is None and not table.within_band()

    def test_monotone(self):
        assert ScalingTable(self.rows([0.6, 0.5, 0.42]), 0.4).monotone()
        assert not ScalingTable(self.rows([0.6, 0.3, 0.55]), 0.4).monotone()

    def test_csv_and_summary(self, tmp_path):
        table = ScalingTable(self.rows([0.6, 0.5, 0.42]), 0.4)
        lines = table.to_csv(tmp_path / "s.csv").read_text().splitlines()
        assert lines[0].startswith("eps,n_samples,hits,p_hat") and len(lines) == 4
        assert table.summary()["selected_eps"] == 0.05

    def test_zero_rate_event(self, small_problem):
        traj = solve_skeleton(small_problem)
        ev = EventFunctional("terminal_energy_above", traj.norms[-1, 0] ** 2 * 0.5)
        rate = minimize_rate(ev, small_problem, QUICK)
        table = ldp_scaling_table(ev, [0.2, 0.1, 0.05], 400, rate, 3, small_problem)
        assert rate.rate_value == 0
        last = table.rows[-1]
        assert last.p_hat > 0.95 and last.neg_eps_log_p < 0.01
        assert table.within_band()

    def test_grid_validation(self, small_problem):
        ev = EventFunctional("terminal_energy_above", 0.0)
        rate = minimize_rate(ev, small_problem, QUICK)
        with pytest.raises(ValueError, match="three"):
            ldp_scaling_table(ev, [0.2, 0.1], 10, rate, 1, small_problem)
        with pytest.raises(ValueError, match="decreasing"):
            ldp_scaling_table(ev, [0.1, 0.2, 0.05], 10, rate, 1, small_problem)
