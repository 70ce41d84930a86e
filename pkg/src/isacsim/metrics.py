"""Performance metrics: average rate, detection probability, waveform MSE,
and the leading-order flop model for both solvers.

Detection probability uses the nonfluctuating-target CFAR expression
P_d = Q1(sqrt(2*sinr), sqrt(-2 ln P_f)).  Q1 is evaluated by the Poisson
mixture series

    Q1(a, b) = sum_k e^{-a^2/2} (a^2/2)^k / k! * Q(k+1, b^2/2)

with Q(n, x) the regularized upper incomplete gamma of integer order,
accumulated in log space and truncated once the remaining Poisson mass is
below 1e-14 of the running sum (all terms positive, so the truncation bound
is also a relative error bound; documented target < 1e-10).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .waveform import Waveforms


def avg_rate(sinrs) -> float:
    """Mean of log2(1 + sinr) over all users."""
    arr = np.asarray(sinrs, dtype=float)
    if arr.size == 0:
        raise ValueError("need at least one SINR")
    if (not np.all(np.isfinite(arr))) or arr.min() < 0:
        raise ValueError("SINRs must be finite and nonnegative")
    return float(np.mean(np.log2(1.0 + arr)))


def marcum_q1(a: float, b: float) -> float:
    a = float(a)
    b = float(b)
    if not (math.isfinite(a) and math.isfinite(b)) or a < 0 or b < 0:
        raise ValueError("marcum_q1 arguments must be finite and nonnegative")
    if b == 0.0:
        return 1.0
    hb = 0.5 * b * b
    if a == 0.0:
        return math.exp(-hb)
    ha = 0.5 * a * a
    lha = math.log(ha)
    lhb = math.log(hb)

    total = 0.0
    lgk = 0.0      # log k!
    q_acc = 0.0    # Q(k+1, hb) accumulated term by term
    k = 0
    kmax = int(ha + hb + 60.0 * math.sqrt(ha + hb + 1.0) + 200.0)
    while True:
        if k > 0:
            lgk += math.log(k)
        q_acc += math.exp(-hb + k * lhb - lgk)
        p_cur = math.exp(-ha + k * lha - lgk)
        total += p_cur * min(q_acc, 1.0)
        if k + 2 > ha:
            # past the Poisson mode the weights decay at ratio <= r, and the
            # gamma factors are <= 1, so the discarded sum is <= tail
            r = ha / (k + 2)
            tail = p_cur * r / (1.0 - r)
            if tail <= 1e-14 * max(total, 1e-300):
                break
        if k >= kmax:
            raise RuntimeError("Marcum Q1 series did not converge")
        k += 1
    return min(total, 1.0)


def detection_probability(sinr, p_f: float):
    """P_d for linear sensing SINR(s) at false-alarm rate p_f; array in,
    array out."""
    p_f = float(p_f)
    if not (0.0 < p_f < 1.0):
        raise ValueError("false alarm probability must lie in (0, 1)")
    b = math.sqrt(-2.0 * math.log(p_f))
    arr = np.asarray(sinr, dtype=float)
    if (not np.all(np.isfinite(arr))) or (arr < 0).any():
        raise ValueError("SINRs must be finite and nonnegative")
    flat = [marcum_q1(math.sqrt(2.0 * s), b) for s in arr.flat]
    if arr.ndim == 0:
        return float(flat[0])
    return np.array(flat).reshape(arr.shape)


def waveform_mse(xs, x0: np.ndarray) -> float:
    """Mean over the 3 BSs of the squared Frobenius distance to x0.  No
    normalization by matrix size (the sum over BSs is divided by 3 only)."""
    if isinstance(xs, Waveforms):
        xs = xs.xs
    x0 = np.asarray(x0)
    total = 0.0
    for xj in xs:
        xj = np.asarray(xj)
        if xj.shape != x0.shape:
            raise ValueError(f"waveform shape {xj.shape} != reference {x0.shape}")
        d = xj - x0
        total += float(np.vdot(d, d).real)
    return total / 3.0


def flop_estimate(algorithm: str, n_antennas: int, users_per_bs: int,
                  constraint: str = "tpc") -> float:
    """Leading-order per-iteration flop model.

    joa: 3 N_t^2 K + 9 N_t K^2, soa: 3 N_t^2 K; an exhaustive 2^{N_t} term
    is added for the constant-modulus constraint in either case.
    """
    n_t = int(n_antennas)
    k = int(users_per_bs)
    if n_t < 1 or k < 1:
        raise ValueError("sizes must be >= 1")
    if constraint not in ("tpc", "ppc", "cmc"):
        raise ValueError(f"unknown constraint {constraint!r}")
    if algorithm == "joa":
        est = 3.0 * n_t ** 2 * k + 9.0 * n_t * k ** 2
    elif algorithm == "soa":
        est = 3.0 * n_t ** 2 * k
    else:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    if constraint == "cmc":
        est += 2.0 ** n_t
    return est


class FlopCounter:
    """Additive counter threaded through the solvers so the model above can
    be cross-checked on real runs."""

    def __init__(self) -> None:
        self.count = 0.0

    def add(self, n: float) -> None:
        self.count += float(n)


@dataclass
class MetricRecord:
    avg_rate: float                 # bit/s/Hz
    detection: np.ndarray           # per-BS P_d
    mse: float
    comm_sinr_db: np.ndarray        # per-user, dB
    radar_sinr_db: np.ndarray       # per-BS, dB
    flops: float
    wall_s: float

    def __post_init__(self) -> None:
        if self.avg_rate < 0 or self.mse < 0:
            raise ValueError("rate and MSE must be nonnegative")
        det = np.asarray(self.detection, dtype=float)
        if ((det < 0) | (det > 1)).any():
            raise ValueError("detection probabilities must lie in [0, 1]")
        self.detection = det
