"""Mutual-interference channel synthesis for the three-cell drop.

Communication downlink channels follow the multipath model
    h = sqrt(N_t) * sum_l fade_l * F_l * exp(-j*2*pi*f_c*d_l/c0) * a(az_l, pitch_l)
with large-scale factor F = lambda^2 / ((4*pi)^2 * d^2).

Radar echo channels reuse the same path table: the echo direction is the
communication direction offset by pi in both angles, the monostatic phase is
the two-way 2*pi*f_c*2d/c0 with large-scale lambda^2/((4*pi)^3 * d^4), and the
bistatic LOS phase is the sum of the two one-way phases with large-scale
lambda^2/((4*pi)^3 * d_rx^2 * d_tx^2).  Each target contributes one column
g = sqrt(N_t)*rcs*alpha*(a ⊙ a), the elementwise product of the two identical
steering factors of a two-way pass over the same array.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .scenario import (N_BS, SPEED_OF_LIGHT, PathParam, Scenario, UcaGeometry)

FOUR_PI = 4.0 * math.pi


def steering_vector(geometry: UcaGeometry, azimuth: float, pitch: float) -> np.ndarray:
    """Array response of the concentric circular array toward (azimuth, pitch).

    Entry 0 is the center reference element (phase 0, value exactly 1); the
    element at layer m, slot n sits at radius m*layer_spacing, polar angle
    2*pi*n/q, and contributes exp(-j*(2*pi/lambda) * u^T v) with
    v = [cos(pitch)*sin(azimuth), sin(pitch)*sin(azimuth)].
    """
    if not (math.isfinite(azimuth) and math.isfinite(pitch)):
        raise ValueError("steering angles must be finite")
    p, q, b = geometry.layers, geometry.elements_per_layer, geometry.layer_spacing
    n_t = geometry.n_antennas
    a = np.empty(n_t, dtype=np.complex128)
    a[0] = 1.0
    if p > 1:
        m = np.repeat(np.arange(1, p), q).astype(float)
        n = np.tile(np.arange(q), p - 1).astype(float)
        ring = 2.0 * math.pi * n / q
        ux = np.cos(ring) * m * b
        uy = np.sin(ring) * m * b
        v = (math.cos(pitch) * math.sin(azimuth),
             math.sin(pitch) * math.sin(azimuth))
        phase = -(2.0 * math.pi / geometry.wavelength) * (ux * v[0] + uy * v[1])
        a[1:] = np.exp(1j * phase)
    return a


def comm_large_scale(wavelength: float, distance: float) -> float:
    return wavelength ** 2 / (FOUR_PI ** 2 * distance ** 2)


def radar_large_scale_mono(wavelength: float, distance: float) -> float:
    return wavelength ** 2 / (FOUR_PI ** 3 * distance ** 4)


def radar_large_scale_bistatic(wavelength: float, d_rx: float, d_tx: float) -> float:
    return wavelength ** 2 / (FOUR_PI ** 3 * d_rx ** 2 * d_tx ** 2)


def subchannel_from_paths(geometry: UcaGeometry, carrier_hz: float,
                          paths: list[PathParam]) -> np.ndarray:
    """Communication channel vector for one BS-user link (sum over paths)."""
    if not paths:
        raise ValueError("a link needs at least one path")
    wavelength = SPEED_OF_LIGHT / carrier_hz
    h = np.zeros(geometry.n_antennas, dtype=np.complex128)
    for p in paths:
        alpha = (p.fade * comm_large_scale(wavelength, p.length)
                 * np.exp(-1j * 2.0 * math.pi * carrier_hz * p.length / SPEED_OF_LIGHT))
        h += alpha * steering_vector(geometry, p.azimuth, p.pitch)
    return math.sqrt(geometry.n_antennas) * h


def comm_subchannel(scenario: Scenario, bs: int, user: int) -> np.ndarray:
    return subchannel_from_paths(scenario.geometry, scenario.carrier_hz,
                                 scenario.paths[bs][user])


def _two_way_steering(geometry: UcaGeometry, path: PathParam) -> np.ndarray:
    # Echo angles are the comm angles offset by pi in azimuth and pitch.
    a = steering_vector(geometry, path.azimuth + math.pi, path.pitch + math.pi)
    return a * a


def radar_column_mono(geometry: UcaGeometry, carrier_hz: float,
                      path: PathParam) -> np.ndarray:
    """Monostatic echo column for one target/scatterer path."""
    wavelength = SPEED_OF_LIGHT / carrier_hz
    alpha = (path.fade * radar_large_scale_mono(wavelength, path.length)
             * np.exp(-1j * 2.0 * math.pi * carrier_hz
                      * (2.0 * path.length) / SPEED_OF_LIGHT))
    return (math.sqrt(geometry.n_antennas) * path.rcs * alpha
            * _two_way_steering(geometry, path))


def radar_column_bistatic(geometry: UcaGeometry, carrier_hz: float,
                          path_rx: PathParam, path_tx: PathParam) -> np.ndarray:
    """Bistatic LOS echo column: transmitter's LOS leg in, receiver's leg back.

    Steering is evaluated at the receiving BS's echo angles (the path table
    carries only per-receiver angles); the fading combines both one-way
    distances and the transmitter leg's small-scale factor.
    """
    wavelength = SPEED_OF_LIGHT / carrier_hz
    alpha = (path_tx.fade
             * radar_large_scale_bistatic(wavelength, path_rx.length, path_tx.length)
             * np.exp(-1j * 2.0 * math.pi * carrier_hz
                      * (path_rx.length + path_tx.length) / SPEED_OF_LIGHT))
    return (math.sqrt(geometry.n_antennas) * path_rx.rcs * alpha
            * _two_way_steering(geometry, path_rx))


@dataclass
class ChannelSet:
    """All synthesized channels of one drop.

    h[j]          : (N_t, 3K) downlink channels of BS j to every user.
    mono[j, l]    : (N_t, 3K) monostatic echo columns at BS j, path l
                    (l = 0 target LOS, l >= 1 scatterers).
    cross[j, k]   : (N_t, 3K) bistatic LOS echo columns at BS j caused by
                    BS k's transmission (k != j; the diagonal is zero).
    """

    h: np.ndarray
    mono: np.ndarray
    cross: np.ndarray
    users_per_bs: int
    stream_len: int
    noise_comm_w: float
    noise_radar_w: float
    geometry: UcaGeometry
    carrier_hz: float

    @property
    def n_antennas(self) -> int:
        return self.h.shape[1]

    @property
    def n_users(self) -> int:
        return self.h.shape[2]

    @property
    def num_paths(self) -> int:
        return self.mono.shape[1]

    def serving_bs(self, user: int) -> int:
        return user // self.users_per_bs

    def users_of(self, bs: int) -> range:
        return range(bs * self.users_per_bs, (bs + 1) * self.users_per_bs)


def build_channels(scenario: Scenario) -> ChannelSet:
    """Deterministically synthesize every channel of the drop."""
    g = scenario.geometry
    n_t, n_u, n_p = g.n_antennas, scenario.n_users, scenario.num_paths
    h = np.zeros((N_BS, n_t, n_u), dtype=np.complex128)
    mono = np.zeros((N_BS, n_p, n_t, n_u), dtype=np.complex128)
    cross = np.zeros((N_BS, N_BS, n_t, n_u), dtype=np.complex128)

    for j in range(N_BS):
        for i in range(n_u):
            plist = scenario.paths[j][i]
            h[j, :, i] = subchannel_from_paths(g, scenario.carrier_hz, plist)
            for l, p in enumerate(plist):
                mono[j, l, :, i] = radar_column_mono(g, scenario.carrier_hz, p)

    for j in range(N_BS):
        for k in range(N_BS):
            if k == j:
                continue
            for i in range(n_u):
                cross[j, k, :, i] = radar_column_bistatic(
                    g, scenario.carrier_hz,
                    scenario.paths[j][i][0], scenario.paths[k][i][0])

    return ChannelSet(
        h=h, mono=mono, cross=cross,
        users_per_bs=scenario.users_per_bs,
        stream_len=scenario.stream_len,
        noise_comm_w=scenario.noise_comm_w,
        noise_radar_w=scenario.noise_radar_w,
        geometry=g,
        carrier_hz=scenario.carrier_hz,
    )
