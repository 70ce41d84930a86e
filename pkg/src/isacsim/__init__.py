"""Mutual-interference channel synthesis and collaborative precoding for
three adjacent ISAC base stations.

Two solvers cover the six problem variants (decoupled or constructive
interference handling, crossed with total / per-antenna / similarity power
constraints): a joint semidefinite relaxation and a sequential Lagrangian
gradient method.
"""

from .channel import ChannelSet, build_channels, steering_vector
from .conic import SdpProblem, SdpSolution, rank1_extract, solve_sdp
from .joint_solver import JoaConfig, solve_cmc, solve_joa
from .metrics import (FlopCounter, MetricRecord, avg_rate,
                      detection_probability, flop_estimate, marcum_q1,
                      waveform_mse)
from .reports import SolveReport
from .scenario import (Scenario, UcaGeometry, db_to_linear, dbm_to_watt,
                       default_scenario, desk_scenario, linear_to_db,
                       load_scenario, save_scenario, uca_layout, watt_to_dbm)
from .sequential_solver import SoaConfig, solve_soa, split_thresholds
from .sweep import (SweepPlan, baseline_report, load_rows, report_metrics,
                    run_sweep)
from .waveform import (ProblemSpec, Waveforms, all_sinrs, avg_power,
                       check_cmc, check_ppc, check_tpc, covariance,
                       problem_spec, reference_chirp, sinr_comm_ci,
                       sinr_comm_di, sinr_radar)

__version__ = "0.1.0"

__all__ = [
    "ChannelSet", "build_channels", "steering_vector",
    "SdpProblem", "SdpSolution", "rank1_extract", "solve_sdp",
    "JoaConfig", "solve_cmc", "solve_joa",
    "FlopCounter", "MetricRecord", "avg_rate", "detection_probability",
    "flop_estimate", "marcum_q1", "waveform_mse",
    "SolveReport",
    "Scenario", "UcaGeometry", "db_to_linear", "dbm_to_watt",
    "default_scenario", "desk_scenario", "linear_to_db", "load_scenario",
    "save_scenario", "uca_layout", "watt_to_dbm",
    "SoaConfig", "solve_soa", "split_thresholds",
    "SweepPlan", "baseline_report", "load_rows", "report_metrics",
    "run_sweep",
    "ProblemSpec", "Waveforms", "all_sinrs", "avg_power", "check_cmc",
    "check_ppc", "check_tpc", "covariance", "problem_spec",
    "reference_chirp", "sinr_comm_ci", "sinr_comm_di", "sinr_radar",
]
