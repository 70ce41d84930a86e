"""Waveform containers, SINR evaluators and constraint checks.

Conventions: a BS waveform X is N_t x L (antennas x symbol slots).  Energies
are Frobenius norms over the whole frame; the noise floor enters every SINR
as L * sigma^2 so the ratio is the per-slot power ratio and does not depend
on the frame length.  tr(conj(h) h^T X X^H) == ||h^T X||_F^2 is used
throughout instead of forming covariances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import ChannelSet

DEFAULT_PSK_ORDER = 4


@dataclass
class ProblemSpec:
    """One of the six precoding problems: interference model x power
    constraint, with per-user comm thresholds and per-BS radar thresholds
    (linear SINR)."""

    interference: str                 # 'di' or 'ci'
    constraint: str                   # 'tpc', 'ppc' or 'cmc'
    zeta_c: np.ndarray                # (3K,) linear
    zeta_r: np.ndarray                # (3,) linear
    eps: float = 0.5                  # CMC elementwise tolerance, relative to |X0|
    psk_order: int = DEFAULT_PSK_ORDER
    x0: np.ndarray | None = None      # CMC/CI reference (defaults to the chirp)

    def __post_init__(self):
        if self.interference not in ("di", "ci"):
            raise ValueError(f"unknown interference model {self.interference!r}")
        if self.constraint not in ("tpc", "ppc", "cmc"):
            raise ValueError(f"unknown constraint {self.constraint!r}")
        self.zeta_c = np.atleast_1d(np.asarray(self.zeta_c, dtype=float))
        self.zeta_r = np.atleast_1d(np.asarray(self.zeta_r, dtype=float))
        for arr in (self.zeta_c, self.zeta_r):
            if (not np.all(np.isfinite(arr))) or arr.min() <= 0:
                raise ValueError("SINR thresholds must be finite and positive")
        if not (math.isfinite(self.eps) and self.eps >= 0):
            raise ValueError("CMC tolerance must be >= 0")
        if self.psk_order < 2 or (self.psk_order & (self.psk_order - 1)) != 0:
            raise ValueError("PSK order must be a power of two >= 2")

    @property
    def psi(self) -> float:
        return math.pi / self.psk_order


def problem_spec(interference: str, constraint: str, zeta_c, zeta_r,
                 n_users: int, **kwargs) -> ProblemSpec:
    """ProblemSpec with scalar thresholds broadcast to all users/BSs."""
    zc = np.broadcast_to(np.asarray(zeta_c, dtype=float), (n_users,)).copy()
    zr = np.broadcast_to(np.asarray(zeta_r, dtype=float), (3,)).copy()
    return ProblemSpec(interference, constraint, zc, zr, **kwargs)


@dataclass
class Waveforms:
    """Transmit waveforms of the three BSs, optionally split per user.

    xs[j] is the aggregate N_t x L waveform of BS j.  splits[j], when
    present, is (K, N_t, L) with splits[j].sum(axis=0) == xs[j]; the split is
    required by the decoupled-interference evaluators and by the CI region.
    """

    xs: list
    splits: list | None = None

    def __post_init__(self):
        if len(self.xs) != 3:
            raise ValueError("need one waveform per BS")
        shape = self.xs[0].shape
        for x in self.xs:
            if x.shape != shape:
                raise ValueError("waveform shapes differ between BSs")
            if not np.all(np.isfinite(x.view(float))):
                raise ValueError("waveform entries must be finite")
        if self.splits is not None:
            if len(self.splits) != 3:
                raise ValueError("need one split per BS")
            for x, s in zip(self.xs, self.splits):
                if s.shape[1:] != x.shape:
                    raise ValueError("split shape mismatch")
                resid = np.linalg.norm(s.sum(axis=0) - x)
                if resid > 1e-9 * max(1.0, np.linalg.norm(x)):
                    raise ValueError("split does not sum to the aggregate")

    @classmethod
    def from_splits(cls, splits):
        splits = [np.asarray(s) for s in splits]
        return cls(xs=[s.sum(axis=0) for s in splits], splits=splits)

    @property
    def n_antennas(self):
        return self.xs[0].shape[0]

    @property
    def stream_len(self):
        return self.xs[0].shape[1]

    def split(self, bs: int) -> np.ndarray:
        if self.splits is None:
            raise ValueError("per-user waveform split not available")
        return self.splits[bs]


def covariance(x: np.ndarray) -> np.ndarray:
    """Frame covariance X X^H (unnormalized energy form)."""
    return x @ x.conj().T


def validate_covariance(t: np.ndarray, herm_tol: float = 1e-12,
                        eig_tol: float = 1e-10) -> None:
    scale = max(1.0, float(np.abs(t).max()))
    if np.abs(t - t.conj().T).max() > herm_tol * scale:
        raise ValueError("covariance is not Hermitian")
    w = np.linalg.eigvalsh((t + t.conj().T) / 2.0)
    if w.min() < -eig_tol * scale:
        raise ValueError("covariance has a significantly negative eigenvalue")


def reference_chirp(n_antennas: int, stream_len: int) -> np.ndarray:
    """Unit-modulus quadratic-phase rows exp(j*pi*(n-l)^2/N_t); rows are
    mutually orthogonal whenever N_t divides L (X0 X0^H = L*I at L = N_t)."""
    n = np.arange(n_antennas)[:, None]
    l = np.arange(stream_len)[None, :]
    return np.exp(1j * math.pi * (n - l) ** 2 / n_antennas)


def _energy(rows: np.ndarray) -> float:
    return float(np.vdot(rows, rows).real)


def sinr_comm_di(ch: ChannelSet, wf: Waveforms, user: int) -> float:
    """Downlink SINR of `user` with every interference term kept: same-BS
    multiuser energy, both other BSs' aggregates, and the noise floor."""
    j = ch.serving_bs(user)
    k_users = ch.users_per_bs
    if k_users > 1 and wf.splits is None:
        raise ValueError("decoupled-interference SINR needs the per-user split")
    h_own = ch.h[j, :, user]
    own = wf.split(j)[user - j * k_users] if k_users > 1 else wf.xs[j]
    num = _energy(h_own.T @ own)
    den = wf.stream_len * ch.noise_comm_w
    if k_users > 1:
        for idx, i2 in enumerate(ch.users_of(j)):
            if i2 == user:
                continue
            den += _energy(h_own.T @ wf.split(j)[idx])
    for k in range(3):
        if k == j:
            continue
        den += _energy(ch.h[k, :, user].T @ wf.xs[k])
    return num / den


def sinr_comm_ci(ch: ChannelSet, wf: Waveforms, user: int) -> float:
    """Downlink SINR when same-BS multiuser energy counts as useful
    (constructive) signal: aggregate numerator, only cross-BS terms and the
    noise floor in the denominator."""
    j = ch.serving_bs(user)
    num = _energy(ch.h[j, :, user].T @ wf.xs[j])
    den = wf.stream_len * ch.noise_comm_w
    for k in range(3):
        if k == j:
            continue
        den += _energy(ch.h[k, :, user].T @ wf.xs[k])
    return num / den


def sinr_radar(ch: ChannelSet, wf: Waveforms, bs: int) -> float:
    """Echo SINR at `bs`: own target LOS echoes over own scatterer paths,
    both neighbors' bistatic leakage, and the radar noise floor."""
    num = _energy(ch.mono[bs, 0].T @ wf.xs[bs])
    den = wf.stream_len * ch.noise_radar_w
    for l in range(1, ch.num_paths):
        den += _energy(ch.mono[bs, l].T @ wf.xs[bs])
    for k in range(3):
        if k == bs:
            continue
        den += _energy(ch.cross[bs, k].T @ wf.xs[k])
    return num / den


def all_sinrs(ch: ChannelSet, wf: Waveforms, interference: str = "di"):
    """(comm SINRs over all users, radar SINRs over the three BSs)."""
    if interference == "di":
        comm = [sinr_comm_di(ch, wf, i) for i in range(ch.n_users)]
    elif interference == "ci":
        comm = [sinr_comm_ci(ch, wf, i) for i in range(ch.n_users)]
    else:
        raise ValueError(f"unknown interference model {interference!r}")
    radar = [sinr_radar(ch, wf, j) for j in range(3)]
    return np.array(comm), np.array(radar)


# ---------------------------------------------------------------------------
# Constraint checks.  Each returns (ok, slack); slack >= 0 means satisfied.

def avg_power(x: np.ndarray) -> float:
    return _energy(x) / x.shape[1]


def check_tpc(x: np.ndarray, p_t: float) -> tuple[bool, float]:
    slack = p_t - avg_power(x)
    return slack >= 0.0, slack


def check_ppc(x: np.ndarray, p_t: float) -> tuple[bool, float]:
    per_antenna = np.sum(np.abs(x) ** 2, axis=1) / x.shape[1]
    slack = p_t / x.shape[0] - float(per_antenna.max())
    return slack >= 0.0, slack


def check_cmc(x: np.ndarray, x0: np.ndarray, eps: float) -> tuple[bool, float]:
    if x.shape != x0.shape:
        raise ValueError("waveform and reference shapes differ")
    slack = eps - float(np.abs(x - x0).max())
    return slack >= 0.0, slack


def project_cmc(x: np.ndarray, x0: np.ndarray, eps: float) -> np.ndarray:
    """Nearest waveform inside the elementwise |X - X0| <= eps ball."""
    d = x - x0
    mag = np.abs(d)
    with np.errstate(invalid="ignore", divide="ignore"):
        shrink = np.where(mag > eps, eps / np.where(mag == 0, 1.0, mag), 1.0)
    return x0 + d * shrink


def project_cmc_split(split: np.ndarray, x0: np.ndarray, eps: float) -> np.ndarray:
    """Project the aggregate of a (K, N_t, L) split onto the similarity ball
    and spread the correction over the users in proportion to their local
    energy (uniformly where all are silent), preserving split-sum == aggregate."""
    agg = split.sum(axis=0)
    delta = project_cmc(agg, x0, eps) - agg
    k = split.shape[0]
    energy = np.abs(split) ** 2
    tot = energy.sum(axis=0)
    weight = np.where(tot > 0, energy / np.where(tot == 0, 1.0, tot), 1.0 / k)
    return split + weight * delta[None, :, :]


def psk_phases(k_users: int, order: int = DEFAULT_PSK_ORDER) -> np.ndarray:
    """Deterministic per-user PSK symbol phases, user k gets 2*pi*(k mod M)/M."""
    if order < 2 or (order & (order - 1)) != 0:
        raise ValueError("PSK order must be a power of two >= 2")
    return 2.0 * math.pi * (np.arange(k_users) % order) / order


def ci_region_satisfied(ch: ChannelSet, split: np.ndarray, phases: np.ndarray,
                        user: int, threshold: float, psi: float):
    """Constructive-interference region test for one user.

    `split` is the serving BS's (K, N_t, L) unmodulated per-user beams and
    `phases` the K PSK symbol phases.  The rotated noiseless symbol at slot l
    is z_l = sum_k h^T split[k,:,l] * exp(j(phase_k - phase_user)); the region
    requires |Im z|^2 <= (Re z - threshold) * tan(psi) at every slot.
    Returns (ok, margin) with margin the minimum slot slack.
    """
    j = ch.serving_bs(user)
    k_users = ch.users_per_bs
    if split.shape[0] != k_users or phases.shape[0] != k_users:
        raise ValueError("split/phases must cover the serving BS's users")
    local = user - j * k_users
    h = ch.h[j, :, user]
    rot = np.exp(1j * (phases - phases[local]))
    z = np.einsum("k,kl->l", rot, np.einsum("n,knl->kl", h, split))
    tan = math.tan(psi)
    slack = (z.real - threshold) * tan - z.imag ** 2
    margin = float(slack.min())
    return margin >= 0.0, margin


def simulate_rx(ch: ChannelSet, wf: Waveforms, rng: np.random.Generator):
    """One noisy receive frame: per-user downlink rows (3K x L) and the
    per-BS echo rows (list of three 3K x L arrays)."""
    n_u, L = ch.n_users, wf.stream_len
    y_ue = np.zeros((n_u, L), dtype=np.complex128)
    for k in range(3):
        y_ue += ch.h[k].T @ wf.xs[k]
    y_ue += _cn(rng, (n_u, L), ch.noise_comm_w)

    y_bs = []
    for j in range(3):
        y = ch.mono[j, 0].T @ wf.xs[j]
        for l in range(1, ch.num_paths):
            y += ch.mono[j, l].T @ wf.xs[j]
        for k in range(3):
            if k != j:
                y += ch.cross[j, k].T @ wf.xs[k]
        y += _cn(rng, (n_u, L), ch.noise_radar_w)
        y_bs.append(y)
    return y_ue, y_bs


def _cn(rng: np.random.Generator, shape, power: float) -> np.ndarray:
    s = math.sqrt(power / 2.0)
    return s * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def recover_precoder(x: np.ndarray, symbols: np.ndarray):
    """Least-squares precoder W with W^T symbols ~= x.

    symbols is K x L; requires full row rank (so L >= K).  Returns (W, resid)
    with W of shape (K, N_t) and resid the relative reconstruction error.
    """
    s = np.asarray(symbols)
    if s.ndim != 2:
        raise ValueError("symbols must be a K x L matrix")
    if s.shape[1] < s.shape[0]:
        raise ValueError("need at least as many slots as streams")
    sv = np.linalg.svd(s, compute_uv=False)
    if sv[-1] < 1e-10 * sv[0]:
        raise ValueError("symbol matrix is rank deficient")
    gram = s @ s.conj().T
    w_t = x @ s.conj().T @ np.linalg.inv(gram)
    resid = np.linalg.norm(w_t @ s - x) / max(np.linalg.norm(x), 1e-300)
    return w_t.T, float(resid)
