"""Command line front end: scenario files, single solves, seeded sweeps.

Exit codes: 0 ok, 1 internal error, 2 bad usage, 3 malformed scenario file,
4 unreachable output path.
"""

from __future__ import annotations

import json
import math

import click

from .channel import build_channels
from .joint_solver import JoaConfig, solve_joa
from .scenario import default_scenario, load_scenario, save_scenario
from .sequential_solver import SoaConfig, solve_soa
from .sweep import SweepPlan, baseline_report, report_metrics, run_sweep
from .waveform import problem_spec


class ScenarioFileError(click.ClickException):
    exit_code = 3


class OutputPathError(click.ClickException):
    exit_code = 4


def _load_or_default(path, desk: bool, seed: int):
    if path is None:
        return default_scenario(seed=seed, desk=desk)
    try:
        return load_scenario(path)
    except FileNotFoundError:
        raise ScenarioFileError(f"scenario file {path} not found")
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ScenarioFileError(f"malformed scenario file {path}: {exc}")


def _parse_grid(text: str) -> tuple:
    """'a:b:step' (inclusive) or 'v1,v2,...' or a single value."""
    try:
        if ":" in text:
            a, b, step = (float(p) for p in text.split(":"))
            if step <= 0:
                raise ValueError("step must be positive")
            if b < a:
                raise ValueError("range end before start")
            n = int(math.floor((b - a) / step + 1e-9)) + 1
            return tuple(a + i * step for i in range(n))
        return tuple(float(p) for p in text.split(","))
    except ValueError as exc:
        raise click.BadParameter(f"grid {text!r}: {exc}")


_common = [
    click.option("--scenario", "scenario_path", type=click.Path(), default=None,
                 help="Scenario JSON (default: built-in full-size preset)."),
    click.option("--desk", is_flag=True,
                 help="Use the small desk preset when no scenario is given."),
    click.option("--constraint", type=click.Choice(["tpc", "ppc", "cmc"]),
                 default="tpc", show_default=True),
    click.option("--interference", type=click.Choice(["di", "ci"]),
                 default="di", show_default=True),
    click.option("--zeta-c-db", type=float, default=10.0, show_default=True,
                 help="Communication SINR threshold (dB)."),
    click.option("--zeta-r-db", type=float, default=10.0, show_default=True,
                 help="Radar SINR threshold (dB)."),
    click.option("--eps", type=float, default=0.5, show_default=True,
                 help="Relative similarity radius (CMC)."),
    click.option("--pf", type=float, default=1e-7, show_default=True,
                 help="False-alarm probability for detection metrics."),
    click.option("--seed", type=int, default=0, show_default=True),
]


def _with_options(options):
    def wrap(fn):
        for opt in reversed(options):
            fn = opt(fn)
        return fn
    return wrap


@click.group()
def main():
    """Synthesize three-cell ISAC channel drops and solve the collaborative
    precoding problems over them."""


@main.command()
@_with_options(_common)
@click.option("--param", type=click.Choice(["zeta_c", "zeta_r", "eps",
                                            "n_t", "k"]), required=True,
              help="Swept parameter (threshold grids in dB).")
@click.option("--grid", required=True,
              help="Value grid, 'a:b:step' inclusive or 'v1,v2,...'.")
@click.option("--alg", "algs", type=click.Choice(["joa", "soa", "none"]),
              multiple=True, default=("joa", "soa"), show_default=True,
              help="Algorithms to run (repeatable).")
@click.option("--trials", type=int, default=50, show_default=True)
@click.option("--out", type=click.Path(), default="sweep.csv",
              show_default=True)
@click.option("--workers", type=int, default=1, show_default=True,
              help="Worker processes over grid points.")
@click.option("--soa-cycles", type=int, default=100, show_default=True)
@click.option("--figures", is_flag=True,
              help="Render trend PNGs alongside the CSV.")
def sweep(scenario_path, desk, constraint, interference, zeta_c_db,
          zeta_r_db, eps, pf, seed, param, grid, algs, trials, out,
          workers, soa_cycles, figures):
    """Run a seeded Monte Carlo sweep and write one CSV row per
    (grid point, trial, algorithm)."""
    sc = _load_or_default(scenario_path, desk, seed)
    try:
        plan = SweepPlan(scenario=sc, param=param, grid=_parse_grid(grid),
                         algorithms=tuple(algs), trials=trials, seed=seed,
                         out=out, constraint=constraint,
                         interference=interference, zeta_c_db=zeta_c_db,
                         zeta_r_db=zeta_r_db, eps=eps, p_f=pf,
                         workers=workers, soa_max_cycles=soa_cycles)
    except ValueError as exc:
        raise click.UsageError(str(exc))
    try:
        path = run_sweep(plan)
    except (FileNotFoundError, PermissionError, OSError) as exc:
        raise OutputPathError(f"cannot write {out}: {exc}")
    n_rows = len(plan.grid) * plan.trials * len(plan.algorithms)
    click.echo(f"wrote {path} ({n_rows} data rows)")
    if figures:
        from .plots import render_figures
        for fig_path in render_figures(path, param=param):
            click.echo(f"wrote {fig_path}")


@main.command()
@_with_options(_common)
@click.option("--alg", type=click.Choice(["joa", "soa", "none"]),
              default="joa", show_default=True)
@click.option("--soa-cycles", type=int, default=100, show_default=True)
def solve(scenario_path, desk, constraint, interference, zeta_c_db,
          zeta_r_db, eps, pf, seed, alg, soa_cycles):
    """Solve one precoding problem on one channel drop and print the
    report."""
    sc = _load_or_default(scenario_path, desk, seed)
    ch = build_channels(sc)
    spec = problem_spec(interference, constraint,
                        10.0 ** (zeta_c_db / 10.0),
                        10.0 ** (zeta_r_db / 10.0), sc.n_users, eps=eps)
    if alg == "joa":
        report = solve_joa(ch, JoaConfig(spec=spec))
    elif alg == "soa":
        report = solve_soa(ch, SoaConfig(spec=spec, max_cycles=soa_cycles))
    else:
        report = baseline_report(ch, spec)
    click.echo(report.summary())
    if report.waveforms is not None:
        rec = report_metrics(report, pf)
        pd = ", ".join(f"{v:.4f}" for v in rec.detection)
        click.echo(f"avg rate     : {rec.avg_rate:.4f} bit/s/Hz")
        click.echo(f"detection    : {pd} (P_f={pf:g})")
        click.echo(f"waveform MSE : {rec.mse:.6g}")


@main.group()
def scenario():
    """Scenario file helpers."""


@scenario.command("init")
@click.option("--out", type=click.Path(), default="scenario.json",
              show_default=True)
@click.option("--desk", is_flag=True, help="Small preset (7 antennas, K=2).")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--n-t", "n_t", type=int, default=None,
              help="Transmit antennas (default 10, desk 7).")
@click.option("--k", type=int, default=None,
              help="Users per BS (default 5, desk 2).")
@click.option("--stream-len", type=int, default=None,
              help="Slots per frame (default 50, desk 16).")
def scenario_init(out, desk, seed, n_t, k, stream_len):
    """Write a scenario JSON built from the reference presets."""
    try:
        sc = default_scenario(seed=seed, desk=desk, n_antennas=n_t,
                              users_per_bs=k, stream_len=stream_len)
    except ValueError as exc:
        raise click.UsageError(str(exc))
    try:
        save_scenario(sc, out)
    except (FileNotFoundError, PermissionError, OSError) as exc:
        raise OutputPathError(f"cannot write {out}: {exc}")
    click.echo(f"wrote {out} (N_t={sc.geometry.n_antennas}, "
               f"K={sc.users_per_bs}, L={sc.stream_len})")


if __name__ == "__main__":
    main()
