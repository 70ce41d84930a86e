"""Seeded Monte Carlo sweeps over thresholds, similarity radius, array size
and load, one CSV row per (grid point, trial, algorithm).

Determinism contract: a plan rerun with the same seed produces byte-identical
CSV except for the wall_ms column.  Every per-trial randomness source is a
child of SeedSequence(plan.seed, spawn_key=(point, trial)), so grid points
are independent and may be dispatched to worker processes; rows are always
assembled in (point, trial, algorithm) order regardless of completion order.
"""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .channel import ChannelSet, build_channels
from .joint_solver import JoaConfig, solve_joa
from .metrics import MetricRecord, avg_rate, detection_probability, waveform_mse
from .reports import SolveReport
from .scenario import (Scenario, db_to_linear, default_scenario,
                       load_scenario, watt_to_dbm)
from .sequential_solver import (SoaConfig, _chirp_comb_splits, _init_scale,
                                solve_soa)
from .waveform import (ProblemSpec, Waveforms, all_sinrs, avg_power,
                       problem_spec, reference_chirp)

CSV_COLUMNS = ("seed", "param", "algorithm", "constraint",
               "interference_model", "P_t", "C_a", "Pd_1", "Pd_2", "Pd_3",
               "MSE", "iterations", "wall_ms", "flops", "status")

SWEEP_PARAMS = ("zeta_c", "zeta_r", "eps", "n_t", "k")
ALGORITHMS = ("joa", "soa", "none")


@dataclass
class SweepPlan:
    """One sweep: a value grid for a single parameter, crossed with seeded
    trials and algorithms.

    `param` picks what the grid values mean: zeta_c / zeta_r grids are in dB,
    eps is the relative similarity radius, n_t and k are integer array /
    load sizes.  The non-swept knobs stay at zeta_c_db / zeta_r_db / eps.
    `scenario` may be a Scenario or a JSON file path; it supplies the fixed
    physical parameters (carrier, bandwidth, noise floors, slot count), and
    each trial redraws user positions and fades from its own seed stream.
    """

    scenario: Scenario | str | Path
    param: str
    grid: tuple
    algorithms: tuple = ("joa", "soa")
    trials: int = 50
    seed: int = 0
    out: str | Path = "sweep.csv"
    constraint: str = "tpc"
    interference: str = "di"
    zeta_c_db: float = 10.0
    zeta_r_db: float = 10.0
    eps: float = 0.5
    p_f: float = 1e-7
    workers: int = 1
    soa_max_cycles: int = 100

    def __post_init__(self):
        if not isinstance(self.scenario, Scenario):
            self.scenario = load_scenario(self.scenario)
        if self.param not in SWEEP_PARAMS:
            raise ValueError(f"unknown sweep parameter {self.param!r}; "
                             f"choose from {SWEEP_PARAMS}")
        self.grid = tuple(float(v) for v in self.grid)
        if not self.grid:
            raise ValueError("grid must be nonempty")
        self.algorithms = tuple(self.algorithms)
        if not self.algorithms:
            raise ValueError("need at least one algorithm")
        for a in self.algorithms:
            if a not in ALGORITHMS:
                raise ValueError(f"unknown algorithm {a!r}")
        if len(set(self.algorithms)) != len(self.algorithms):
            raise ValueError("duplicate algorithm in plan")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.constraint not in ("tpc", "ppc", "cmc"):
            raise ValueError(f"unknown constraint {self.constraint!r}")
        if self.interference not in ("di", "ci"):
            raise ValueError(f"unknown interference model {self.interference!r}")
        if not 0.0 < self.p_f < 1.0:
            raise ValueError("p_f must lie in (0, 1)")


def _point_scenario(plan: SweepPlan, value: float, seed: int) -> Scenario:
    base = plan.scenario
    n_t = base.geometry.n_antennas
    k = base.users_per_bs
    if plan.param == "n_t":
        n_t = int(round(value))
    elif plan.param == "k":
        k = int(round(value))
    return default_scenario(
        seed=seed, n_antennas=n_t, users_per_bs=k,
        stream_len=base.stream_len, num_paths=base.num_paths,
        carrier_hz=base.carrier_hz, bandwidth_hz=base.bandwidth_hz,
        noise_comm_dbm=watt_to_dbm(base.noise_comm_w),
        noise_radar_dbm=watt_to_dbm(base.noise_radar_w))


def _point_spec(plan: SweepPlan, value: float, n_users: int) -> ProblemSpec:
    zc_db, zr_db, eps = plan.zeta_c_db, plan.zeta_r_db, plan.eps
    if plan.param == "zeta_c":
        zc_db = value
    elif plan.param == "zeta_r":
        zr_db = value
    elif plan.param == "eps":
        eps = value
    return problem_spec(plan.interference, plan.constraint,
                        db_to_linear(zc_db), db_to_linear(zr_db),
                        n_users, eps=eps)


def baseline_report(ch: ChannelSet, spec: ProblemSpec,
                    power: float | None = None) -> SolveReport:
    """No-precoding reference: every BS transmits the chirp on interleaved
    per-user slot combs at per-BS average power `power` (default: four times
    the worst single-link closed-form floor, same rule as the sequential
    solver's start point)."""
    t0 = time.perf_counter()
    if power is None or not math.isfinite(power) or power <= 0:
        power = ch.n_antennas * _init_scale(ch, spec, 4.0) ** 2
    s = math.sqrt(power / ch.n_antennas)
    wf = Waveforms.from_splits(_chirp_comb_splits(ch, s))
    comm, radar = all_sinrs(ch, wf, spec.interference)
    bs_power = np.array([avg_power(x) for x in wf.xs])
    feasible = bool((comm >= spec.zeta_c).all() and (radar >= spec.zeta_r).all())
    return SolveReport(
        algorithm="none", constraint=spec.constraint,
        interference=spec.interference, status="baseline", feasible=feasible,
        waveforms=wf, power=float(bs_power.max()), bs_power=bs_power,
        comm_sinr=comm, radar_sinr=radar, iterations=0, flops=0.0,
        wall_ms=(time.perf_counter() - t0) * 1e3,
        notes="chirp combs, no precoding")


def report_metrics(report: SolveReport, p_f: float) -> MetricRecord:
    """Figure-of-merit bundle for one solve.  MSE is measured against the
    run's own similarity reference when one exists (CMC), else against the
    chirp scaled to the realized peak per-BS power."""
    if report.waveforms is None:
        raise ValueError("report carries no waveforms")
    wf = report.waveforms
    scale = report.trace.get("reference_scale")
    if scale is None:
        scale = math.sqrt(max(report.power, 0.0) / wf.n_antennas)
    x0 = scale * reference_chirp(wf.n_antennas, wf.stream_len)
    return MetricRecord(
        avg_rate=avg_rate(report.comm_sinr),
        detection=detection_probability(report.radar_sinr, p_f),
        mse=waveform_mse(wf, x0),
        comm_sinr_db=10.0 * np.log10(report.comm_sinr),
        radar_sinr_db=10.0 * np.log10(report.radar_sinr),
        flops=report.flops,
        wall_s=report.wall_ms * 1e-3)


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else "nan"
    return str(v)


def _format_row(report: SolveReport, seed: int, value: float,
                p_f: float) -> str:
    if report.waveforms is None:
        ca = mse = float("nan")
        pd = [float("nan")] * 3
    else:
        rec = report_metrics(report, p_f)
        ca, mse, pd = rec.avg_rate, rec.mse, list(rec.detection)
    status = report.status if report.feasible or report.algorithm == "none" \
        else f"{report.status}:infeasible"
    cells = (seed, value, report.algorithm, report.constraint,
             report.interference, report.power, ca, pd[0], pd[1], pd[2],
             mse, report.iterations, report.wall_ms, report.flops, status)
    return ",".join(_fmt(c) for c in cells)


def _point_rows(plan: SweepPlan, point_idx: int) -> list:
    value = plan.grid[point_idx]
    rows = []
    for trial in range(plan.trials):
        ss = np.random.SeedSequence(entropy=plan.seed,
                                    spawn_key=(point_idx, trial))
        seed = int(ss.generate_state(1, np.uint64)[0])
        sc = _point_scenario(plan, value, seed)
        ch = build_channels(sc)
        spec = _point_spec(plan, value, sc.n_users)
        reports = {}
        # baseline runs last so it can reuse the optimized power level
        for alg in ("joa", "soa", "none"):
            if alg not in plan.algorithms:
                continue
            if alg == "joa":
                reports[alg] = solve_joa(ch, JoaConfig(spec=spec))
            elif alg == "soa":
                reports[alg] = solve_soa(
                    ch, SoaConfig(spec=spec, max_cycles=plan.soa_max_cycles))
            else:
                p_ref = None
                for other in ("joa", "soa"):
                    r = reports.get(other)
                    if r is not None and math.isfinite(r.power):
                        p_ref = r.power
                        break
                reports[alg] = baseline_report(ch, spec, power=p_ref)
        for alg in plan.algorithms:
            rows.append(_format_row(reports[alg], seed, value, plan.p_f))
    return rows


def run_sweep(plan: SweepPlan) -> Path:
    """Execute the plan and write its CSV; returns the output path."""
    out = Path(plan.out)
    if out.parent and not out.parent.exists():
        raise FileNotFoundError(f"output directory {out.parent} does not exist")
    indices = range(len(plan.grid))
    if plan.workers > 1:
        with ProcessPoolExecutor(max_workers=plan.workers) as pool:
            chunks = list(pool.map(_point_rows, [plan] * len(plan.grid),
                                   indices))
    else:
        chunks = [_point_rows(plan, i) for i in indices]
    lines = [",".join(CSV_COLUMNS)]
    for chunk in chunks:
        lines.extend(chunk)
    out.write_bytes(("\n".join(lines) + "\n").encode("utf-8"))
    return out


def load_rows(path) -> list:
    """Parse a sweep CSV back into typed dicts (one per row)."""
    with open(path, newline="", encoding="utf-8") as fh:
        raw = list(csv.DictReader(fh))
    typed = []
    for r in raw:
        if set(r) != set(CSV_COLUMNS):
            raise ValueError("unexpected CSV columns")
        typed.append({
            "seed": int(r["seed"]),
            "param": float(r["param"]),
            "algorithm": r["algorithm"],
            "constraint": r["constraint"],
            "interference_model": r["interference_model"],
            "P_t": float(r["P_t"]),
            "C_a": float(r["C_a"]),
            "Pd_1": float(r["Pd_1"]),
            "Pd_2": float(r["Pd_2"]),
            "Pd_3": float(r["Pd_3"]),
            "MSE": float(r["MSE"]),
            "iterations": int(r["iterations"]),
            "wall_ms": float(r["wall_ms"]),
            "flops": float(r["flops"]),
            "status": r["status"],
        })
    return typed
