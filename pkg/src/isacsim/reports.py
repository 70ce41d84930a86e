"""Solver run reports shared by both optimizers and the CLI."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .waveform import Waveforms


@dataclass
class SolveReport:
    """Outcome of one precoding solve.

    power is the per-slot objective value in W: max over BSs of average
    transmit power, except under the per-antenna constraint where it is the
    certified budget N_t times the worst antenna's average power (equal to
    the total only for a perfectly even profile).  bs_power always holds
    the physical per-BS averages.  relaxation_bound is the covariance-level
    objective when the run went through the semidefinite relaxation, a
    lower bound on any rank-constrained solution.  rescale_db records the
    uniform post-extraction power lift applied to restore SINR feasibility
    (capped at 3 dB; shortfall is flagged instead of silently exceeding
    it).
    """

    algorithm: str
    constraint: str
    interference: str
    status: str
    feasible: bool
    waveforms: Waveforms | None
    power: float
    bs_power: np.ndarray
    comm_sinr: np.ndarray
    radar_sinr: np.ndarray
    iterations: int
    flops: float
    wall_ms: float
    relaxation_bound: float | None = None
    rescale_db: float = 0.0
    shortfall: bool = False
    stalled: bool = False
    ci_margins: np.ndarray | None = None
    trace: dict = field(default_factory=dict)
    notes: str = ""

    def __post_init__(self) -> None:
        if self.algorithm not in ("joa", "soa", "none"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.constraint not in ("tpc", "ppc", "cmc"):
            raise ValueError(f"unknown constraint {self.constraint!r}")
        if self.interference not in ("di", "ci"):
            raise ValueError(f"unknown interference model {self.interference!r}")
        self.bs_power = np.asarray(self.bs_power, dtype=float)
        self.comm_sinr = np.asarray(self.comm_sinr, dtype=float)
        self.radar_sinr = np.asarray(self.radar_sinr, dtype=float)

    def summary(self) -> str:
        lines = [
            f"{self.algorithm.upper()} {self.constraint.upper()}/"
            f"{self.interference.upper()}: status={self.status} "
            f"feasible={self.feasible}",
            f"  power: {self.power:.6g} W per slot "
            f"(per BS: {np.array2string(self.bs_power, precision=4)})",
            f"  comm SINR [dB]: "
            f"{np.array2string(10 * np.log10(np.maximum(self.comm_sinr, 1e-300)), precision=2)}",
            f"  radar SINR [dB]: "
            f"{np.array2string(10 * np.log10(np.maximum(self.radar_sinr, 1e-300)), precision=2)}",
            f"  iterations={self.iterations} flops={self.flops:.3g} "
            f"wall={self.wall_ms:.1f} ms",
        ]
        if self.relaxation_bound is not None:
            lines.append(f"  relaxation bound: {self.relaxation_bound:.6g} W")
        if self.rescale_db:
            lines.append(f"  post-extraction rescale: {self.rescale_db:.2f} dB")
        if self.shortfall:
            lines.append("  WARNING: SINR shortfall beyond the 3 dB rescale cap")
        if self.stalled:
            lines.append("  WARNING: line search stalled before convergence")
        if self.notes:
            lines.append(f"  {self.notes}")
        return "\n".join(lines)
