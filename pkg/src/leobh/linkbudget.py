"""Satellite-to-UE link budget: Bessel antenna pattern, path loss, received
power, thermal noise and per-beam SINR under reuse-3 frequency colouring.

Powers are in watts or dBW, gains in dB(i) unless noted ``_lin``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.special import j1

from .errors import AssociationError, ParameterError
from .geometry import (BeamLayout, SatelliteState, elevation_matrix, lattice_colors,
                       off_boresight_angles)

BOLTZMANN = 1.380649e-23
SPEED_OF_LIGHT_M_S = 299792458.0
INTERFERENCE_MODES = ("co-channel", "literal")


@dataclass(frozen=True)
class LinkParams:
    """Link-budget parameters; defaults describe a 2 GHz S-band NTN downlink.

    ``noise_bandwidth`` is the bandwidth over which N0 is integrated; ``None``
    selects the positioning-signal bandwidth ``K * subcarrier_spacing``.
    ``sf_sigma_table`` maps an elevation bucket upper edge (deg) to the
    shadow-fading standard deviation (dB).
    """

    f0: float = 2e9
    W: float = 30e6
    rho: int = 3
    aperture_radius: float = 0.5
    G_T: float = 30.0
    G_R: float = 0.0
    NF: float = 7.0
    antenna_temp: float = 290.0
    PL_g: float = 0.1
    PL_s: float = 2.2
    subcarrier_spacing: float = 15e3
    noise_bandwidth: float | None = None
    sf_sigma_table: Mapping[float, float] | None = None
    interference: str = "co-channel"

    def __post_init__(self):
        if not (self.f0 > 0 and self.W > 0):
            raise ParameterError("f0 and W must be positive")
        if self.rho < 1:
            raise ParameterError("rho must be >= 1")
        if not self.aperture_radius > 0:
            raise ParameterError("aperture radius must be positive")
        if self.noise_bandwidth is not None and not self.noise_bandwidth > 0:
            raise ParameterError("noise_bandwidth must be positive")
        if self.interference not in INTERFERENCE_MODES:
            raise ParameterError(f"unknown interference mode {self.interference!r}")

    def noise_dbw(self, subcarriers: int = 240) -> float:
        bw = self.noise_bandwidth or subcarriers * self.subcarrier_spacing
        return noise_power(self.NF, self.antenna_temp, bw)


def antenna_gain(theta, a: float, f0: float):
    """Normalised Bessel aperture pattern (linear, peak 1)."""
    theta = np.asarray(theta, dtype=float)
    x = 2.0 * np.pi * f0 * a * np.sin(theta) / SPEED_OF_LIGHT_M_S
    with np.errstate(invalid="ignore", divide="ignore"):
        g = (2.0 * j1(x) / x) ** 2
    g = np.where(np.abs(x) < 1e-12, 1.0, g)
    return float(g) if g.ndim == 0 else g


def beam_radius_uv(a: float = 0.5, f0: float = 2e9, drop_db: float = 3.0) -> float:
    """sin of the off-boresight angle where the pattern is ``drop_db`` down."""
    target = 10.0 ** (-drop_db / 10.0)
    x = brentq(lambda x: (2.0 * j1(x) / x) ** 2 - target, 1e-6, 3.8)
    return x * SPEED_OF_LIGHT_M_S / (2.0 * np.pi * f0 * a)


def path_loss(d, f0: float, sf=0.0, pl_g: float = 0.0, pl_s: float = 0.0):
    """Total path loss (dB) with ``d`` in km and ``f0`` in Hz."""
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise ParameterError("distance must be positive")
    pl = 32.45 + 20.0 * np.log10(f0 / 1e6 * d) + sf + pl_g + pl_s
    return float(pl) if np.ndim(pl) == 0 else pl


def received_power(P_ib, G_T, theta, G_R, PL, W, rho, a=0.5, f0=2e9):
    """Received power in dBW; ``-inf`` when the beam carries no power.

    The EIRP density (P_ib + G_T) is spread over W, so integrating it over a
    W/rho sub-band yields P_ib + G_T - 10 log10(rho).
    """
    P_ib = np.asarray(P_ib, dtype=float)
    if np.any(P_ib < 0):
        raise ParameterError("beam power must be non-negative")
    with np.errstate(divide="ignore"):
        eirp_density = 10.0 * np.log10(P_ib) + G_T - 10.0 * np.log10(W)
        gain_db = 10.0 * np.log10(antenna_gain(theta, a, f0))
    out = eirp_density + 10.0 * np.log10(W / rho) + gain_db + G_R - PL
    out = np.where(P_ib > 0, out, -np.inf)
    return float(out) if out.ndim == 0 else out


def noise_power(NF: float, T: float, bandwidth: float) -> float:
    if not bandwidth > 0:
        raise ParameterError("bandwidth must be positive")
    return 10.0 * np.log10(BOLTZMANN * T * bandwidth) + NF


def reuse3_coloring(layout: BeamLayout) -> np.ndarray:
    """3-colouring of the hex lattice, recovered from the beam centres."""
    rel = layout.centers - layout.centers[0]
    d = layout.spacing
    r = rel[:, 1] / (d * np.sqrt(3.0) / 2.0)
    q = rel[:, 0] / d - r / 2.0
    lat = np.stack([np.rint(q), np.rint(r)], axis=1).astype(int) + layout.lattice[0]
    return lattice_colors(lat)


def db(x):
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(x)


def shadow_fading_sigma(elevation_deg, table: Mapping[float, float] | None):
    """Per-link SF sigma (dB) from an elevation-bucket table (upper edges)."""
    elevation_deg = np.asarray(elevation_deg, dtype=float)
    if not table:
        return np.zeros_like(elevation_deg)
    edges = np.array(sorted(float(k) for k in table))
    sig = np.array([float(table[k]) for k in sorted(table, key=float)])
    idx = np.clip(np.searchsorted(edges, elevation_deg, side="left"), 0, len(edges) - 1)
    return sig[idx]


@dataclass
class LinkTable:
    """Per (user j, satellite i, beam b) link quantities for one beam plan.

    Beam axes are padded to the largest layout; ``valid[i, b]`` marks real
    beams. ``coupling`` is the linear ratio of received to transmitted power.
    """

    sat_ids: np.ndarray
    theta: np.ndarray          # (J, I, B) rad
    distance: np.ndarray       # (J, I) km
    coupling: np.ndarray       # (J, I, B)
    colors: np.ndarray         # (I, B)
    valid: np.ndarray          # (I, B)
    beam_ids: np.ndarray       # (I, B) original layout index, -1 on padding
    power: np.ndarray          # (I, B) W
    noise_w: float
    mode: str = "co-channel"

    @property
    def shape(self):
        return self.theta.shape

    def with_power(self, power) -> "LinkTable":
        power = np.where(self.valid, np.asarray(power, dtype=float), 0.0)
        return LinkTable(self.sat_ids, self.theta, self.distance, self.coupling, self.colors,
                         self.valid, self.beam_ids, power, self.noise_w, self.mode)

    def rx_w(self) -> np.ndarray:
        return self.coupling * self.power[None, :, :]

    def rx_dbw(self) -> np.ndarray:
        return db(self.rx_w())

    def interference_w(self, mode: str | None = None, power=None) -> np.ndarray:
        mode = mode or self.mode
        power = self.power if power is None else power
        rx = self.coupling * power[None, :, :]
        if mode == "literal":
            total = rx.sum(axis=2, keepdims=True)
            return np.maximum(total - rx, 0.0)
        if mode != "co-channel":
            raise ParameterError(f"unknown interference mode {mode!r}")
        out = np.zeros_like(rx)
        for c in range(3):
            same = (self.colors == c)[None, :, :]
            tot = np.where(same, rx, 0.0).sum(axis=2, keepdims=True)
            out = np.where(same, tot - rx, out)
        return np.maximum(out, 0.0)

    def sinr(self, mode: str | None = None) -> np.ndarray:
        """Linear SINR of every (j, i, b); zero for unpowered beams."""
        return self.rx_w() / (self.interference_w(mode) + self.noise_w)

    def snr(self) -> np.ndarray:
        return self.rx_w() / self.noise_w

    def to_csv(self, path, mode: str | None = None):
        sinr = db(self.sinr(mode))
        rx = self.rx_dbw()
        J, I, B = self.shape
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["user", "sat", "beam", "theta_deg", "dist_km", "rx_dBW", "sinr_dB"])
            for j in range(J):
                for i in range(I):
                    for b in range(B):
                        if not self.valid[i, b]:
                            continue
                        w.writerow([j, int(self.sat_ids[i]), int(self.beam_ids[i, b]),
                                    f"{np.degrees(self.theta[j, i, b]):.6g}",
                                    f"{self.distance[j, i]:.6g}", f"{rx[j, i, b]:.6g}",
                                    f"{sinr[j, i, b]:.6g}"])


def sinr(j: int, i: int, b: int, table: LinkTable, mode: str | None = None) -> float:
    """SINR of user ``j`` on beam ``b`` of the ``i``-th satellite."""
    J, I, B = table.shape
    if not (0 <= j < J and 0 <= i < I and 0 <= b < B) or not table.valid[i, b]:
        raise AssociationError(f"no beam ({i}, {b}) for user {j}")
    if table.power[i, b] <= 0:
        raise AssociationError(f"beam ({i}, {b}) carries no power")
    return float(table.sinr(mode)[j, i, b])


def build_link_table(sats: Sequence[SatelliteState], layouts: Sequence[BeamLayout],
                     ue_ecef, params: LinkParams, power=None, sf_db=None,
                     noise_w: float | None = None) -> LinkTable:
    ue_ecef = np.atleast_2d(ue_ecef)
    J, I = len(ue_ecef), len(sats)
    B = max(len(l) for l in layouts)
    theta = np.full((J, I, B), np.pi / 2)
    coupling = np.zeros((J, I, B))
    colors = np.full((I, B), -1, dtype=int)
    valid = np.zeros((I, B), dtype=bool)
    beam_ids = np.full((I, B), -1, dtype=int)
    distance = np.linalg.norm(np.stack([s.position for s in sats])[None] - ue_ecef[:, None],
                              axis=2)
    pl = path_loss(distance, params.f0, 0.0 if sf_db is None else sf_db,
                   params.PL_g, params.PL_s)
    # linear coupling excluding the pattern: G_T/rho * G_R / PL
    base = 10.0 ** ((params.G_T - 10 * np.log10(params.rho) + params.G_R - pl) / 10.0)
    for i, (sat, lay) in enumerate(zip(sats, layouts)):
        n = len(lay)
        th = off_boresight_angles(sat, lay.centers, ue_ecef)
        theta[:, i, :n] = th
        coupling[:, i, :n] = base[:, i, None] * antenna_gain(th, params.aperture_radius,
                                                              params.f0)
        colors[i, :n] = lay.colors
        valid[i, :n] = True
        beam_ids[i, :n] = lay.beam_ids
    if noise_w is None:
        noise_w = 10.0 ** (params.noise_dbw() / 10.0)
    p = np.zeros((I, B)) if power is None else np.where(valid, power, 0.0)
    return LinkTable(np.array([s.sat_id for s in sats]), theta, distance, coupling, colors,
                     valid, beam_ids, p, noise_w, params.interference)


def sample_shadow_fading(rng: np.random.Generator, sats, ue_ecef, params: LinkParams):
    """Log-normal SF draws (dB) per (user, satellite); zeros when disabled."""
    if not params.sf_sigma_table:
        return None
    el = elevation_matrix(np.stack([s.position for s in sats]), ue_ecef)
    sig = shadow_fading_sigma(el, params.sf_sigma_table)
    return rng.standard_normal(sig.shape) * sig
