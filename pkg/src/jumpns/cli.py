"""
Command-line front end.

    jumpns [--config PATH] [--out DIR] [--seed N] [--threads N] [--quiet] COMMAND

Commands: ``simulate``, ``skeleton``, ``rate``, ``mc``, ``verify``. ``--config``
takes a TOML/JSON file or ``benchmark:<name>`` for a frozen in-package
benchmark. Outputs go to ``<root>/<command>-<run id>/`` where the root is
``--out``, else ``$JUMPNS_OUT``, else the config's ``output.directory``, else
``./runs``.

Exit codes: 0 success, 2 config error, 3 numerical failure (non-finite state,
blow-up guard, infeasible rate problem), 4 verify failure.
"""

from __future__ import annotations

import logging
import math
import os
import sys
from pathlib import Path

import click
import numpy as np
from scipy import fft as sfft

from . import config as C
from .benchmarks import NAMES as BENCHMARKS, benchmark_path
from .ldp import (InfeasibleError, ScalingTable, importance_sampled_probability,
                  ldp_scaling_table, mc_probability, minimize_rate)
from .prm import entropy_LT
from .runs import close_run, open_run, write_json
from .skeleton import skeleton_continuity_probe, solve_deterministic, solve_skeleton
from .spde import NumericalError, energy_diagnostic, simulate, simulate_ensemble
from .spectral import save_snapshot

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_VERIFY = 0, 2, 3, 4
OUT_ENV = "JUMPNS_OUT"

log = logging.getLogger("jumpns")


class _Failure(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _resolve_config_path(spec: str) -> Path:
    if spec.startswith("benchmark:"):
        name = spec.split(":", 1)[1]
        if name not in BENCHMARKS:
            raise C.ConfigError(f"unknown benchmark {name!r}; choose from {', '.join(BENCHMARKS)}")
        return benchmark_path(name)
    return Path(spec)


class _State:
    def __init__(self, config, out, seed, threads, quiet):
        self.config_spec = config
        self.explicit_out = out or os.environ.get(OUT_ENV)
        self.out = Path(self.explicit_out or "runs")
        self.seed = seed
        self.threads = threads
        self.quiet = quiet

    def load(self) -> C.RunConfig:
        if self.config_spec is None:
            raise C.ConfigError("this command needs --config")
        cfg = C.load_config(_resolve_config_path(self.config_spec))
        if self.seed is not None:
            cfg = cfg.with_seed(self.seed)
        return cfg

    def out_root(self, cfg: C.RunConfig | None) -> Path:
        """``--out``, then ``$JUMPNS_OUT``, then ``output.directory``, then ``./runs``."""
        if not self.explicit_out and cfg is not None and cfg.output.directory:
            return cfg.base_dir / cfg.output.directory
        return self.out

    def echo(self, msg: str):
        if not self.quiet:
            click.echo(msg)


def _run(ctx, body):
    """Execute ``body`` with the shared error handling and thread setting."""
    state: _State = ctx.obj
    try:
        with sfft.set_workers(state.threads):
            code = body(state)
    except C.ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        ctx.exit(EXIT_CONFIG)
    except NumericalError as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        if exc.diagnostic:
            click.echo(f"diagnostic: {exc.diagnostic}", err=True)
        ctx.exit(EXIT_NUMERICAL)
    except InfeasibleError as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        ctx.exit(EXIT_NUMERICAL)
    except _Failure as exc:
        click.echo(str(exc), err=True)
        ctx.exit(exc.code)
    ctx.exit(code or EXIT_OK)


@click.group()
@click.option("--config", "config", type=str, default=None,
              help="Run config (TOML or JSON), or benchmark:<name>.")
@click.option("--out", type=click.Path(file_okay=False), default=None,
              help=f"Output root (default ${OUT_ENV}, then ./runs).")
@click.option("--seed", type=int, default=None, help="Override experiment.seed.")
@click.option("--threads", type=click.IntRange(min=1), default=1, help="FFT worker threads.")
@click.option("--quiet", is_flag=True, help="Only report errors.")
@click.pass_context
def main(ctx, config, out, seed, threads, quiet):
    """Jump-driven stochastic Navier-Stokes: simulation and small-noise checks."""
    logging.basicConfig(level=logging.WARNING if quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    ctx.obj = _State(config, out, seed, threads, quiet)


# ---------------------------------------------------------------------------
# simulate


@main.command("simulate")
@click.pass_context
def simulate_cmd(ctx):
    """Ensemble of stochastic trajectories with per-path norm series."""

    def body(state: _State):
        cfg = state.load()
        tm = C.build_template(cfg)
        control = C.build_control(cfg)
        exp = cfg.experiment
        rec = open_run(state.out_root(cfg), "simulate", cfg.canonical())
        ens = simulate_ensemble(tm.u0, tm.params, tm.noise, tm.space, exp.seed, exp.n_paths,
                                control=control)
        paths_dir = rec.directory / "paths"
        paths_dir.mkdir()
        n_write = min(exp.n_paths, cfg.output.write_paths)
        for i in range(n_write):
            ens.trajectory(i).to_csv(paths_dir / f"traj_{i:05d}.csv")
        stride = cfg.output.snapshot_stride
        if stride:
            first = simulate(tm.u0, tm.params, tm.noise, tm.space, exp.seed, control=control,
                             store_stride=stride)
            snap_dir = rec.directory / "snapshots"
            snap_dir.mkdir()
            for k, (t, u) in enumerate(first.states):
                save_snapshot(snap_dir / f"path00000_{k * stride:06d}.jnsf", u,
                              {"seed": exp.seed, "path": 0, "t": t})
        diags = [energy_diagnostic(ens.trajectory(i)) for i in range(ens.n_paths)]
        ups = np.array([d["sup_h2"] + d["int_v2"] for d in diags])
        blown = int((ens.blowup_step >= 0).sum())
        summary = {
            "n_paths": exp.n_paths,
            "paths_written": n_write,
            "seed": exp.seed,
            "eps": cfg.solver.eps,
            "tilted": control is not None,
            "mean_upsilon_h": float(ups.mean()),
            "max_upsilon_h": float(ups.max()),
            "mean_terminal_energy": float((ens.norms[:, -1, 0] ** 2).mean()),
            "mean_jumps": float(ens.jumps.sum(axis=1).mean()),
            "blowups": blown,
        }
        close_run(rec, summary)
        state.echo(f"simulate: {exp.n_paths} path(s) -> {rec.directory}")
        if blown:
            raise _Failure(EXIT_NUMERICAL,
                           f"numerical failure: blow-up guard fired on {blown} path(s); "
                           f"outputs kept in {rec.directory}")
        return EXIT_OK

    _run(ctx, body)


# ---------------------------------------------------------------------------
# skeleton


@main.command("skeleton")
@click.pass_context
def skeleton_cmd(ctx):
    """Skeleton solve under a control, plus the optional continuity probe."""

    def body(state: _State):
        cfg = state.load()
        exp = cfg.experiment
        grid = C.build_grid(cfg)
        if exp.deterministic:
            u0 = C.build_field(cfg.initial, grid, cfg)
            traj = solve_deterministic(u0, C.build_params(cfg, grid))
            control, entropy = None, 0.0
        else:
            tm = C.build_template(cfg)
            control = C.build_control(cfg)
            traj = solve_skeleton(tm.with_control(control))
            entropy = entropy_LT(control, tm.space) if control is not None else 0.0
        probe = C.build_probe(cfg)
        rec = open_run(state.out_root(cfg), "skeleton", cfg.canonical())
        traj.to_csv(rec.directory / "skeleton.csv")
        summary = {"entropy": entropy, "terminal_norms": traj.norms[-1].tolist(),
                   "status": traj.status}
        if probe is not None:
            seq, limit, levels = probe
            d = skeleton_continuity_probe(seq, limit, C.build_template(cfg))
            with (rec.directory / "probe.csv").open("w") as fh:
                fh.write("n,d_n\n")
                for n, dn in zip(levels, d):
                    fh.write(f"{n},{dn!r}\n")
            summary["probe"] = {"levels": levels, "d_n": d,
                                "strictly_decreasing": bool(np.all(np.diff(d) < 0))}
        close_run(rec, summary)
        state.echo(f"skeleton: L_T = {entropy:.6g} -> {rec.directory}")
        return EXIT_OK

    _run(ctx, body)


# ---------------------------------------------------------------------------
# rate


@main.command("rate")
@click.pass_context
def rate_cmd(ctx):
    """Variational rate bound and, when an eps grid is given, the scaling table."""

    def body(state: _State):
        cfg = state.load()
        exp = cfg.experiment
        tm = C.build_template(cfg)
        event, planted = C.build_event(cfg, tm)
        warm = C.build_control(cfg)
        rate = minimize_rate(event, tm, C.build_optimizer(cfg), seed=exp.seed, warm_start=warm)
        rec = open_run(state.out_root(cfg), "rate", cfg.canonical())
        rate.control.save(rec.directory / "control.json")
        summary = {"rate": rate.summary(), "trace": rate.optimizer_trace}
        if planted is not None:
            lp = entropy_LT(planted, tm.space)
            summary["planted"] = {"entropy": lp, "bound_holds": rate.rate_value <= lp + 1e-3}
        if exp.eps_grid:
            budgets = list(exp.budgets)
            if sum(budgets) == 0:
                log.warning("all Monte Carlo budgets are zero; scaling table left empty")
                table = ScalingTable([], rate.rate_value, exp.band, exp.min_hits)
            else:
                table = ldp_scaling_table(event, exp.eps_grid, budgets, rate, exp.seed, tm,
                                          band=exp.band, min_hits=exp.min_hits,
                                          tilted_budgets=exp.tilted_budgets)
            table.to_csv(rec.directory / "scaling.csv")
            summary["scaling"] = table.summary()
        close_run(rec, summary)
        state.echo(f"rate: {rate.rate_value:.6g} (residual {rate.constraint_residual:.2g}) "
                   f"-> {rec.directory}")
        return EXIT_OK

    _run(ctx, body)


# ---------------------------------------------------------------------------
# mc


@main.command("mc")
@click.pass_context
def mc_cmd(ctx):
    """Plain (and optionally tilted) Monte Carlo estimate at ``solver.eps``."""

    def body(state: _State):
        cfg = state.load()
        exp = cfg.experiment
        tm = C.build_template(cfg)
        event, _ = C.build_event(cfg, tm)
        eps = cfg.solver.eps
        if exp.n_samples < 1:
            raise C.ConfigError("experiment.n_samples must be at least 1 for mc")
        plain = mc_probability(event, eps, exp.n_samples, exp.seed, tm)
        rows = [plain]
        if exp.tilted:
            control = C.build_control(cfg, required=True)
            rows.append(importance_sampled_probability(event, eps, control, exp.n_samples,
                                                       exp.seed + 500, tm))
        rec = open_run(state.out_root(cfg), "mc", cfg.canonical())
        with (rec.directory / "estimates.csv").open("w") as fh:
            fh.write("method,eps,n_samples,hits,p_hat,ci_low,ci_high,ess,neg_eps_log_p\n")
            for r in rows:
                nlp = -eps * math.log(r.p_hat) if r.p_hat > 0 else math.inf
                fh.write(f"{r.method},{eps!r},{r.n_samples},{r.hits},{r.p_hat!r},"
                         f"{r.ci_low!r},{r.ci_high!r},{r.ess!r},{nlp!r}\n")
        close_run(rec, {"estimates": [r.summary() for r in rows]})
        state.echo(f"mc: p_hat = {plain.p_hat:.4g} [{plain.ci_low:.3g}, {plain.ci_high:.3g}] "
                   f"-> {rec.directory}")
        return EXIT_OK

    _run(ctx, body)


# ---------------------------------------------------------------------------
# verify


@main.command("verify")
@click.argument("selectors", nargs=-1)
@click.option("--tolerance", "overrides", multiple=True, metavar="NAME=VALUE",
              help="Override the tolerance of one invariant (repeatable).")
@click.option("--list", "list_only", is_flag=True, help="List invariants and exit.")
@click.pass_context
def verify_cmd(ctx, selectors, overrides, list_only):
    """Run the invariant suite. SELECTORS: all (default) or suite/invariant names."""
    from . import verify as V

    def body(state: _State):
        parsed = {}
        for item in overrides:
            name, sep, value = item.partition("=")
            try:
                if not sep:
                    raise ValueError
                parsed[name.strip()] = float(value)
            except ValueError:
                raise C.ConfigError(f"bad --tolerance {item!r}; expected NAME=VALUE") from None
        try:
            chosen = V.select(selectors or ("all",))
        except KeyError as exc:
            raise C.ConfigError(str(exc.args[0])) from None
        unknown = set(parsed) - set(V.REGISTRY)
        if unknown:
            raise C.ConfigError(f"unknown invariant(s) in --tolerance: {sorted(unknown)}")
        if list_only:
            for inv in chosen:
                click.echo(f"{inv.name:40s} tol={inv.tolerance:g}  {inv.description}")
            return EXIT_OK
        echo = None if state.quiet else click.echo
        report = V.run(chosen, parsed, echo=echo)
        key = {"selectors": sorted(selectors or ("all",)), "overrides": parsed}
        rec = open_run(state.out, "verify", key)
        write_json(rec.directory / "report.json", report)
        close_run(rec, {"passed": report["passed"], "n_checks": len(report["checks"]),
                        "n_failed": sum(not c["passed"] for c in report["checks"])})
        state.echo(f"verify: {'PASS' if report['passed'] else 'FAIL'} -> {rec.directory}")
        return EXIT_OK if report["passed"] else EXIT_VERIFY

    _run(ctx, body)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
