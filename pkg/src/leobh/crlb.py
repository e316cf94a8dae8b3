"""TOA variance and TDOA Cramér-Rao bound.

Time is in seconds and distance in km inside the matrix routines (``A`` has
units s/km); bounds are reported in metres.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from .errors import (DegenerateGeometryError, InsufficientAnchorsError, ParameterError,
                     UnusableSatelliteError)
from .geometry import SPEED_OF_LIGHT_KM_S, GroundPosition, SatelliteState

SPEED_OF_LIGHT_M_S = SPEED_OF_LIGHT_KM_S * 1e3


@dataclass(frozen=True)
class SignalSpec:
    """Positioning reference signal; defaults describe a flat SSB-like block."""

    Ns: int = 4
    K: int = 240
    symbol_energy: float | np.ndarray = 1.0
    Ts: float = 1.0 / 15000.0

    def __post_init__(self):
        if self.Ns < 1:
            raise ParameterError("Ns must be >= 1")
        if self.K < 2 or self.K % 2:
            raise ParameterError("K must be even and >= 2")
        if not self.Ts > 0:
            raise ParameterError("Ts must be positive")


@dataclass(frozen=True)
class CrlbReport:
    user_id: int
    I_j: int
    crlb_m: float
    ref_sat: int
    condition: float


def gamma_term(spec: SignalSpec) -> float:
    k = np.arange(-spec.K // 2, spec.K // 2, dtype=float)
    energy = np.broadcast_to(np.asarray(spec.symbol_energy, dtype=float), (spec.Ns, spec.K))
    return float(np.sum(energy * k[None, :] ** 2))


def toa_variance(beta, delta=1, spec: SignalSpec | None = None, gamma: float | None = None):
    """TOA variance in s^2; ``inf`` where the satellite is not associated."""
    spec = spec or SignalSpec()
    beta = np.asarray(beta, dtype=float)
    delta = np.broadcast_to(np.asarray(delta), beta.shape)
    if np.any((delta != 0) & ~(beta > 0)):
        raise ParameterError("SINR must be positive for an associated satellite")
    g = gamma_term(spec) if gamma is None else gamma
    with np.errstate(divide="ignore"):
        var = spec.Ts ** 2 / (8.0 * np.pi ** 2 * np.where(delta != 0, beta, 1.0) * g)
    var = np.where(delta != 0, var, np.inf)
    return float(var) if var.ndim == 0 else var


def _positions(sats):
    return np.stack([s.position if isinstance(s, SatelliteState) else np.asarray(s, float)
                     for s in sats])


def unit_vectors(ue, sats) -> np.ndarray:
    """Rows (s - s_i)/d_i for each satellite."""
    s = ue.ecef if isinstance(ue, GroundPosition) else np.asarray(ue, dtype=float)
    diff = s[None, :] - _positions(sats)
    d = np.linalg.norm(diff, axis=1)
    if np.any(d <= 0):
        raise DegenerateGeometryError("UE coincides with a satellite")
    return diff / d[:, None]


def build_A(ue, sats, ref: int = 0) -> np.ndarray:
    if len(sats) < 4:
        raise InsufficientAnchorsError(f"need >= 4 satellites, got {len(sats)}")
    g = unit_vectors(ue, sats)
    others = [k for k in range(len(sats)) if k != ref]
    return (g[others] - g[ref]) / SPEED_OF_LIGHT_KM_S


def _ordered(sigma_sq, ref):
    sigma_sq = np.asarray(sigma_sq, dtype=float)
    if np.any(~np.isfinite(sigma_sq)) or np.any(sigma_sq <= 0):
        raise UnusableSatelliteError("every TOA variance must be finite and positive")
    return np.concatenate([[sigma_sq[ref]], np.delete(sigma_sq, ref)])


def build_R(sigma_sq, ref: int = 0) -> np.ndarray:
    """diag(sigma_2^2, ...) + sigma_1^2 * 11^T with the reference first."""
    s = _ordered(sigma_sq, ref)
    return np.diag(s[1:]) + s[0]


def tdoa_crlb(A, R) -> float:
    """sqrt(tr{(A^T R^-1 A)^-1}) converted from km to metres."""
    try:
        L = np.linalg.cholesky(R)
    except np.linalg.LinAlgError as exc:
        raise ParameterError("R is not positive definite") from exc
    At = solve_triangular(L, A, lower=True)
    F = At.T @ At
    ev = np.linalg.eigvalsh(F)
    if ev[0] <= 1e-12 * ev[-1]:
        raise DegenerateGeometryError(
            f"Fisher information is rank deficient (eigenvalues {ev})")
    Lf = np.linalg.cholesky(F)
    Linv = solve_triangular(Lf, np.eye(3), lower=True)
    return float(np.sqrt(np.sum(Linv ** 2)) * 1e3)


def inv_R_decomposition(sigma_sq, ref: int = 0):
    """(R0^-1, H, Omega) with R^-1 = R0^-1 - H (matrix inversion lemma)."""
    s = _ordered(sigma_sq, ref)
    inv = 1.0 / s
    omega = float(inv.sum())
    R0_inv = np.diag(inv[1:])
    H = np.outer(inv[1:], inv[1:]) / omega
    return R0_inv, H, omega


def crlb_decomposed(A, sigma_sq, ref: int = 0, rcond: float = 1e-10):
    """(tr{Y^-1}, correction) with Y = A^T R0^-1 A and Z = A^T H A.

    The correction uses a pseudo-inverse of (Z - Z Y^-1 Z), which is rank one
    since H is.
    """
    R0_inv, H, _ = inv_R_decomposition(sigma_sq, ref)
    Y = A.T @ R0_inv @ A
    Z = A.T @ H @ A
    try:
        cY = cho_factor(Y)
    except np.linalg.LinAlgError as exc:
        raise DegenerateGeometryError("Y = A^T R0^-1 A is singular") from exc
    Yi = cho_solve(cY, np.eye(3))
    mid = Z - Z @ Yi @ Z
    mid = 0.5 * (mid + mid.T)
    w, V = np.linalg.eigh(mid)
    keep = np.abs(w) > rcond * np.max(np.abs(w)) if np.any(w) else np.zeros_like(w, bool)
    pinv = (V[:, keep] / w[keep]) @ V[:, keep].T
    corr = Yi @ Z @ pinv @ Z @ Yi
    return float(np.trace(Yi)), float(np.trace(corr))


def augmented_fim(unit_vecs, weights) -> np.ndarray:
    """TOA information with an unknown common offset, in range units.

    ``weights`` are 1/sigma_r^2 (1/m^2); the 3x3 Schur complement of the
    returned 4x4 matrix equals the TDOA Fisher information.
    """
    h = np.hstack([np.asarray(unit_vecs, float), np.ones((len(unit_vecs), 1))])
    return np.einsum("i,ij,ik->jk", np.asarray(weights, float), h, h)


def crlb_from_augmented(M) -> float:
    """sqrt of the trace of the position block of M^-1, in the units of M."""
    try:
        Mi = np.linalg.inv(M)
    except np.linalg.LinAlgError as exc:
        raise DegenerateGeometryError("singular augmented information") from exc
    t = np.trace(Mi[:3, :3])
    if not t > 0 or not np.isfinite(t):
        raise DegenerateGeometryError("non-positive bound")
    return float(np.sqrt(t))


def user_crlb(ue, sats, beta, spec: SignalSpec | None = None, ref: int | None = None,
              user_id: int = -1) -> CrlbReport:
    """Full pipeline for one user: SINRs -> TOA variances -> TDOA bound.

    The reference defaults to the satellite with the highest SINR.
    """
    beta = np.asarray(beta, dtype=float)
    if ref is None:
        ref = int(np.argmax(beta))
    var = toa_variance(beta, 1, spec)
    A = build_A(ue, sats, ref)
    R = build_R(var, ref)
    crlb = tdoa_crlb(A, R)
    F = A.T @ np.linalg.solve(R, A)
    ev = np.linalg.eigvalsh(F)
    sat_ids = [getattr(s, "sat_id", k) for k, s in enumerate(sats)]
    return CrlbReport(user_id, len(sats), crlb, int(sat_ids[ref]), float(ev[-1] / ev[0]))


def write_reports_csv(reports, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user_id", "I_j", "crlb_m", "ref_sat"])
        for r in reports:
            w.writerow([r.user_id, r.I_j, f"{r.crlb_m:.6g}", r.ref_sat])
