"""Joint association / beam-hopping / power control for multi-satellite TDOA.

Users are grouped by their serving satellite (the highest-elevation one).
Each group forms a *slot*: the set of satellites that any of its users
measures, each with its own beam layout, activation and powers.  Slots are
independent: inter-satellite interference is not modelled, and a satellite
that cooperates in several slots serves them in different hopping periods.

Three schemes share the same evaluation path:

* TMCB - nadir layouts, beams lit over each satellite's own service area,
  equal power ``P_tot_sat / B_cov``.
* UVBHS-EPA - cooperating satellites translate their layout onto the serving
  satellite's nadir, Voronoi beam hopping, equal power over active beams.
* FBHCA - as UVBHS, with SDP power allocation iterated ``M`` times.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import crlb as crlb_mod
from . import geometry as geo
from .crlb import SPEED_OF_LIGHT_M_S, SignalSpec, gamma_term
from .errors import AssociationError, CoverageError, ParameterError, SolverConditioningError
from .geometry import BeamLayout, SatelliteState
from .linkbudget import LinkParams, LinkTable, build_link_table, db
from .sdp import PowerModel, UserTerm, assemble_power_sdp, solve

log = logging.getLogger(__name__)

ALGORITHMS = ("TMCB", "UVBHS-EPA", "FBHCA")


@dataclass(frozen=True)
class AlgoConfig:
    M: int = 5
    N_pos: int = 4
    P_tot_beam: float = 110.0
    P_tot_sat: float = 6100.0
    B_cov: int = 61
    B: int = 61
    interference: str = "co-channel"
    seed: int = 0
    min_elevation: float = 0.0
    scan_limit_uv: float | None = None
    min_separation_km: float = 100.0
    tmcb_activation: str = "served-users"
    linearization: str = "taylor"
    sdp_tol: float = 1e-7
    sdp_max_iter: int = 200

    def __post_init__(self):
        if self.M < 1:
            raise ParameterError("M must be >= 1")
        if self.N_pos < 4:
            raise ParameterError("N_pos must be >= 4")
        if not (self.P_tot_beam > 0 and self.P_tot_sat > 0):
            raise ParameterError("power budgets must be positive")
        if self.B < 1:
            raise ParameterError("active-beam budget B must be >= 1")
        if self.linearization not in ("taylor", "frozen"):
            raise ParameterError(f"unknown linearization {self.linearization!r}")
        if self.tmcb_activation not in ("served-users", "service-area"):
            raise ParameterError(f"unknown tmcb_activation {self.tmcb_activation!r}")


@dataclass
class Scenario:
    """One snapshot: satellites, users and the radio configuration."""

    sats: Sequence[SatelliteState]
    ue_ecef: np.ndarray
    link: LinkParams
    layout: BeamLayout
    signal: SignalSpec = field(default_factory=SignalSpec)
    sf_db: np.ndarray | None = None      # (J, len(sats)) shadow fading draws
    _positions: np.ndarray | None = field(default=None, repr=False)
    _service: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.ue_ecef = np.atleast_2d(np.asarray(self.ue_ecef, dtype=float))

    @property
    def positions(self) -> np.ndarray:
        if self._positions is None:
            self._positions = np.stack([s.position for s in self.sats])
        return self._positions

    @property
    def J(self) -> int:
        return len(self.ue_ecef)

    def noise_w(self) -> float:
        return 10.0 ** (self.link.noise_dbw(self.signal.K) / 10.0)


@dataclass
class SlotPlan:
    target: int
    users: np.ndarray
    sats: np.ndarray
    layouts: list
    table: LinkTable
    gamma: np.ndarray
    power: np.ndarray
    delta: np.ndarray
    sel: np.ndarray

    @property
    def association(self) -> np.ndarray:
        """Layout beam id per (user, satellite column), -1 when unassociated."""
        out = np.full(self.delta.shape, -1)
        for j, i in zip(*np.nonzero(self.delta >= 0)):
            out[j, i] = self.table.beam_ids[i, self.delta[j, i]]
        return out


@dataclass
class Solution:
    algorithm: str
    slots: list
    crlb_m: np.ndarray
    snr_db: np.ndarray
    sinr_db: np.ndarray
    covered: np.ndarray
    avg_crlb: float
    iterate: int = 0
    history: list = field(default_factory=list)

    @property
    def delta(self):
        return {int(s.target): s.association for s in self.slots}

    @property
    def gamma(self):
        return {int(s.target): s.gamma for s in self.slots}

    @property
    def power(self):
        return {int(s.target): s.power for s in self.slots}

    def to_csv(self, users_path, beams_path):
        with open(users_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["user", "slot", "rank", "sat", "beam", "snr_dB", "sinr_dB", "crlb_m"])
            for s in self.slots:
                assoc = s.association
                for ju, j in enumerate(s.users):
                    for k, col in enumerate(s.sel[ju]):
                        w.writerow([int(j), int(s.target), k, int(s.sats[col]),
                                    int(assoc[ju, col]), f"{self.snr_db[j, k]:.6g}",
                                    f"{self.sinr_db[j, k]:.6g}", f"{self.crlb_m[j]:.6g}"])
        with open(beams_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["slot", "sat", "beam", "u", "v", "gamma", "power_w"])
            for s in self.slots:
                for i, lay in enumerate(s.layouts):
                    for b in range(len(lay)):
                        w.writerow([int(s.target), int(s.sats[i]), int(lay.beam_ids[b]),
                                    f"{lay.centers[b, 0]:.6g}", f"{lay.centers[b, 1]:.6g}",
                                    int(s.gamma[i, b]), f"{s.power[i, b]:.6g}"])


# -- positioning satellites ---------------------------------------------------------

def serving_satellites(el, ids, min_elevation: float = 0.0):
    """Highest-elevation satellite per user (ties on id), -1 when none is up."""
    order = np.lexsort((np.broadcast_to(ids, el.shape), -el), axis=1)[:, 0]
    up = el[np.arange(len(el)), order] > min_elevation
    return np.where(up, order, -1)


def cooperating_sats(positions, target: int, N_pos: int, visible=None,
                     min_separation_km: float = 1.0, ids=None) -> list[int]:
    """``target`` followed by its nearest satellites, ``N_pos`` in total.

    Candidates must be ``visible`` (boolean mask) and at least
    ``min_separation_km`` away from every satellite already chosen; a
    co-located pair adds no TDOA information.  Fewer than ``N_pos`` entries
    are returned when the constellation runs out of candidates.
    """
    positions = np.asarray(positions, dtype=float)
    ids = np.arange(len(positions)) if ids is None else np.asarray(ids)
    d = np.linalg.norm(positions - positions[target], axis=1)
    order = np.lexsort((ids, d))
    chosen = [int(target)]
    for k in order:
        if len(chosen) == N_pos:
            break
        if k == target or (visible is not None and not visible[k]):
            continue
        if np.min(np.linalg.norm(positions[chosen] - positions[k], axis=1)) < min_separation_km:
            continue
        chosen.append(int(k))
    return chosen


def select_positioning_sats(ue, sats, N_pos: int, min_elevation: float = 0.0,
                            min_separation_km: float = 1.0, rule: str = "nearest") -> list[int]:
    """Positioning satellites of one user, serving satellite first.

    ``rule="nearest"`` takes the serving satellite plus its ``N_pos - 1``
    nearest visible peers (the set used by the algorithms); ``"elevation"``
    takes the ``N_pos`` highest visible satellites, ties on id.
    """
    ue_ecef = ue.ecef if isinstance(ue, geo.GroundPosition) else np.asarray(ue, float)
    pos = np.stack([s.position for s in sats])
    ids = np.array([s.sat_id for s in sats])
    el = geo.elevation_matrix(pos, ue_ecef)
    visible = el[0] > min_elevation
    if visible.sum() < N_pos:
        raise CoverageError(f"fewer than {N_pos} satellites visible")
    if rule == "elevation":
        order = np.lexsort((ids, -el[0]))
        return [int(k) for k in order[:N_pos]]
    if rule != "nearest":
        raise ParameterError(f"unknown selection rule {rule!r}")
    target = serving_satellites(el, ids, min_elevation)[0]
    chosen = cooperating_sats(pos, target, N_pos, visible, min_separation_km, ids)
    if len(chosen) < N_pos:
        raise CoverageError(f"fewer than {N_pos} separated satellites visible")
    return chosen


def positioning_sets(scn: Scenario, N_pos: int, min_elevation: float = 0.0,
                     min_separation_km: float = 1.0):
    """(J, N_pos) positioning satellites per user and a coverage mask.

    All users sharing a serving satellite share the same set, so the sets are
    computed once per serving satellite.
    """
    el = geo.elevation_matrix(scn.positions, scn.ue_ecef)
    ids = np.array([s.sat_id for s in scn.sats])
    serving = serving_satellites(el, ids, min_elevation)
    sel = np.zeros((scn.J, N_pos), dtype=int)
    covered = np.zeros(scn.J, dtype=bool)
    for target in np.unique(serving[serving >= 0]):
        users = np.nonzero(serving == target)[0]
        visible = np.all(el[users] > min_elevation, axis=0)
        chosen = cooperating_sats(scn.positions, int(target), N_pos, visible,
                                  min_separation_km, ids)
        if len(chosen) == N_pos:
            sel[users] = chosen
            covered[users] = True
    return sel, covered


# -- association and beam hopping ----------------------------------------------------

def associate_users(table: LinkTable, mode: str | None = None) -> np.ndarray:
    """Max-SINR beam per (user, satellite); -1 when the satellite has no lit beam.

    Ties go to the lowest beam column.
    """
    s = table.sinr(mode)
    s = np.where((table.power > 0)[None, :, :], s, -np.inf)
    best = np.argmax(s, axis=2)
    none = ~np.isfinite(np.max(s, axis=2))
    return np.where(none, -1, best)


def voronoi_assign(beam_centers, user_uv) -> np.ndarray:
    """Voronoi cell (nearest site, lowest index on ties) of each user."""
    c = np.atleast_2d(np.asarray(beam_centers, dtype=float))
    p = np.atleast_2d(np.asarray(user_uv, dtype=float))
    if len(c) == 0:
        raise ParameterError("need at least one beam center")
    d2 = ((p[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1)


def voronoi_polygons(sites, bbox=(-1.5, 1.5, -1.5, 1.5)) -> list[np.ndarray]:
    """Explicit Voronoi cells clipped to ``bbox`` by half-plane intersection."""
    sites = np.atleast_2d(np.asarray(sites, dtype=float))
    x0, x1, y0, y1 = bbox
    box = np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=float)
    cells = []
    for k, s in enumerate(sites):
        poly = box
        for m, t in enumerate(sites):
            if m == k:
                continue
            n = t - s
            if not np.any(n):
                continue
            poly = _clip(poly, n, 0.5 * (t @ t - s @ s))
            if len(poly) == 0:
                break
        cells.append(poly)
    return cells


def _clip(poly, n, off):
    """Keep the part of a convex polygon with n.x <= off."""
    out = []
    k = len(poly)
    for a in range(k):
        p, q = poly[a], poly[(a + 1) % k]
        fp, fq = n @ p - off, n @ q - off
        if fp <= 0:
            out.append(p)
        if (fp < 0 < fq) or (fq < 0 < fp):
            out.append(p + (q - p) * (fp / (fp - fq)))
    return np.array(out).reshape(-1, 2)


def bh_design(assignment, n_beams: int, B: int, user_uv=None, centers=None) -> np.ndarray:
    """Activate every occupied Voronoi cell, at most ``B`` of them.

    Over budget, the ``B`` most populated cells (ties by index) stay lit and
    the remaining users move to their nearest lit cell (returned in place when
    ``user_uv``/``centers`` are given).
    """
    if B < 1:
        raise ParameterError("beam budget B must be >= 1")
    assignment = np.asarray(assignment)
    counts = np.bincount(assignment, minlength=n_beams)
    gamma = counts > 0
    if gamma.sum() > B:
        order = np.lexsort((np.arange(n_beams), -counts))
        gamma = np.zeros(n_beams, dtype=bool)
        gamma[order[:B]] = True
        if user_uv is not None and centers is not None:
            lit = np.nonzero(gamma)[0]
            orphan = ~gamma[assignment]
            assignment[orphan] = lit[voronoi_assign(centers[lit], np.atleast_2d(user_uv)[orphan])]
    return gamma


# -- slot construction ---------------------------------------------------------------

def _scan_limit(layout, config):
    return config.scan_limit_uv if config.scan_limit_uv is not None else geo.scan_limit(layout)


def _layouts(scn: Scenario, target: int, sats: np.ndarray, cooperative: bool, config):
    limit = _scan_limit(scn.layout, config)
    out = []
    nadir = geo.GroundPosition.from_latlon(*scn.sats[target].nadir, scn.sats[target].earth)
    for i in sats:
        if not cooperative or i == target:
            out.append(scn.layout)
            continue
        off = geo.direction_to_uv(scn.sats[i], nadir, check=False)
        lay = geo.crop_layout(geo.translate_layout(scn.layout, off, drop_outside=True), limit)
        out.append(lay if len(lay) else scn.layout)
    return out


def _service_gamma(scn: Scenario, i: int, layout: BeamLayout, B: int) -> np.ndarray:
    """Beams whose boresight lands where satellite ``i`` is the highest."""
    key = (i, id(layout))
    if key not in scn._service:
        pts, hit = geo.boresight_ground_points(scn.sats[i], layout.centers)
        el = geo.elevation_matrix(scn.positions, pts)
        gamma = hit & (np.argmax(el, axis=1) == i)
        if gamma.sum() > B:
            gamma[np.nonzero(gamma)[0][B:]] = False
        scn._service[key] = gamma
    return scn._service[key]


def _voronoi_gamma(scn, sats, layouts, users, sel_cols, B):
    I = len(sats)
    Bmax = max(len(l) for l in layouts)
    gamma = np.zeros((I, Bmax), dtype=bool)
    for i, (si, lay) in enumerate(zip(sats, layouts)):
        mine = np.array([i in sel_cols[ju] for ju in range(len(users))])
        if not mine.any():
            continue
        uv = geo.uv_of_points(scn.sats[si], scn.ue_ecef[users[mine]])
        assign = voronoi_assign(lay.centers, uv)
        gamma[i, :len(lay)] = bh_design(assign, len(lay), B, uv, lay.centers)
    return gamma


def build_slots(scn: Scenario, config: AlgoConfig):
    """Group covered users by serving satellite; returns (slots, sel, covered)."""
    sel, covered = positioning_sets(scn, config.N_pos, config.min_elevation,
                                    config.min_separation_km)
    slots = []
    for target in np.unique(sel[covered, 0]):
        users = np.nonzero(covered & (sel[:, 0] == target))[0]
        sats = sel[users[0]].astype(int)
        sel_cols = np.tile(np.arange(config.N_pos), (len(users), 1))
        slots.append((int(target), users, sats, sel_cols))
    return slots, sel, covered


def _table(scn, sats, layouts, users, config):
    sf = None if scn.sf_db is None else scn.sf_db[np.ix_(users, sats)]
    link = scn.link if scn.link.interference == config.interference else replace(
        scn.link, interference=config.interference)
    return build_link_table([scn.sats[i] for i in sats], layouts, scn.ue_ecef[users], link,
                            sf_db=sf, noise_w=scn.noise_w())


# -- evaluation ----------------------------------------------------------------------

def _precision_scale(signal: SignalSpec) -> float:
    """1/sigma_r^2 (1/m^2) per unit linear SINR."""
    return 8.0 * np.pi ** 2 * gamma_term(signal) / (signal.Ts ** 2 * SPEED_OF_LIGHT_M_S ** 2)


def evaluate_slot(scn: Scenario, table: LinkTable, delta, sats, users, sel_cols,
                  mode=None):
    """Per-user CRLB (m), SINR and SNR (linear) on each positioning satellite."""
    sinr = table.sinr(mode)
    snr = table.snr()
    Ju, N = sel_cols.shape
    out = np.empty(Ju)
    beta = np.empty((Ju, N))
    snr_out = np.empty((Ju, N))
    for ju in range(Ju):
        cols = sel_cols[ju]
        b = delta[ju, cols]
        if np.any(b < 0):
            raise AssociationError(f"user {users[ju]} lacks an associated beam")
        beta[ju] = sinr[ju, cols, b]
        snr_out[ju] = snr[ju, cols, b]
        rep = crlb_mod.user_crlb(scn.ue_ecef[users[ju]], [scn.sats[i] for i in sats[cols]],
                                 beta[ju], scn.signal, user_id=int(users[ju]))
        out[ju] = rep.crlb_m
    return out, beta, snr_out


def _finish(name, scn, slot_plans, sel, covered, config, history=None, iterate=0):
    J = scn.J
    crlb = np.full(J, np.nan)
    snr = np.full((J, config.N_pos), np.nan)
    sinr = np.full((J, config.N_pos), np.nan)
    for sp, (c, b, s) in slot_plans:
        crlb[sp.users] = c
        sinr[sp.users] = db(b)
        snr[sp.users] = db(s)
    avg = float(np.mean(crlb[covered])) if covered.any() else float("nan")
    return Solution(name, [sp for sp, _ in slot_plans], crlb, snr, sinr, covered, avg,
                    iterate, history or [avg])


# -- baselines -----------------------------------------------------------------------

def _served_gamma(scn: Scenario, i: int, layout: BeamLayout, served, B: int) -> np.ndarray:
    """Cells holding users that satellite ``i`` serves; its nadir beam if none."""
    gamma = np.zeros(len(layout), dtype=bool)
    if len(served):
        uv = geo.uv_of_points(scn.sats[i], scn.ue_ecef[served])
        inside = np.hypot(uv[:, 0], uv[:, 1]) <= geo.scan_limit(layout) + layout.beam_radius_uv
        if inside.any():
            assign = voronoi_assign(layout.centers, uv[inside])
            gamma = bh_design(assign, len(layout), B)
    if not gamma.any():
        gamma[np.argmin(np.hypot(layout.centers[:, 0], layout.centers[:, 1]))] = True
    return gamma


def run_tmcb(scn: Scenario, config: AlgoConfig) -> Solution:
    """Communication beams: nadir layouts lit for the satellite's own traffic."""
    slots, sel, covered = build_slots(scn, config)
    served = {}
    for j in np.nonzero(covered)[0]:
        served.setdefault(int(sel[j, 0]), []).append(int(j))
    p_each = config.P_tot_sat / config.B_cov
    plans = []
    for target, users, sats, sel_cols in slots:
        layouts = _layouts(scn, target, sats, False, config)
        table = _table(scn, sats, layouts, users, config)
        gamma = np.zeros(table.valid.shape, dtype=bool)
        for i, si in enumerate(sats):
            if config.tmcb_activation == "service-area":
                g = _service_gamma(scn, int(si), layouts[i], config.B)
            else:
                g = _served_gamma(scn, int(si), layouts[i], served.get(int(si), []), config.B)
            gamma[i, :len(layouts[i])] = g
        power = np.where(table.valid, p_each, 0.0)
        table = table.with_power(np.where(gamma, power, 0.0))
        delta = associate_users(table)
        res = evaluate_slot(scn, table, delta, sats, users, sel_cols)
        plans.append((SlotPlan(target, users, sats, layouts, table, gamma, power, delta,
                               sel_cols), res))
    return _finish("TMCB", scn, plans, sel, covered, config)


def equal_power(gamma, config: AlgoConfig) -> np.ndarray:
    """P_tot_sat split over the lit beams of each satellite, capped per beam."""
    n = gamma.sum(axis=1, keepdims=True)
    each = np.minimum(config.P_tot_beam, config.P_tot_sat / np.maximum(n, 1))
    return np.where(gamma, each, 0.0)


def _cooperative_slot(scn, config, target, users, sats, sel_cols):
    layouts = _layouts(scn, target, sats, True, config)
    table = _table(scn, sats, layouts, users, config)
    gamma = _voronoi_gamma(scn, sats, layouts, users, sel_cols, config.B)
    return layouts, table, gamma


def run_uvbhs_epa(scn: Scenario, config: AlgoConfig) -> Solution:
    slots, sel, covered = build_slots(scn, config)
    plans = []
    for target, users, sats, sel_cols in slots:
        layouts, table, gamma = _cooperative_slot(scn, config, target, users, sats, sel_cols)
        power = equal_power(gamma, config)
        table = table.with_power(power)
        delta = associate_users(table)
        res = evaluate_slot(scn, table, delta, sats, users, sel_cols)
        plans.append((SlotPlan(target, users, sats, layouts, table, gamma, power, delta,
                               sel_cols), res))
    return _finish("UVBHS-EPA", scn, plans, sel, covered, config)


# -- power allocation ------------------------------------------------------------------

def power_model(scn: Scenario, table: LinkTable, delta, gamma, prev, sats, users, sel_cols,
                config: AlgoConfig):
    """Affine model of each TOA precision in the free beam powers, around ``prev``.

    ``frozen`` keeps interference at its ``prev`` level; ``taylor`` also
    linearises the co-channel interference from the other free beams.  Lit
    beams that carry no associated user keep their previous power.
    """
    I, B = gamma.shape
    used = np.zeros((I, B), dtype=bool)
    for ju in range(len(users)):
        cols = sel_cols[ju]
        used[cols, delta[ju, cols]] = True
    var_of = -np.ones((I, B), dtype=int)
    var_of[used] = np.arange(used.sum())
    ii = np.nonzero(used)[0]
    fixed = np.where(gamma & ~used, prev, 0.0)
    budget = config.P_tot_sat - fixed.sum(axis=1)
    interf = table.with_power(prev).interference_w()
    scale = _precision_scale(scn.signal)
    literal = (config.interference == "literal")
    terms = []
    for ju in range(len(users)):
        cols = sel_cols[ju]
        b = delta[ju, cols]
        denom = interf[ju, cols, b] + table.noise_w
        slope = scale * table.coupling[ju, cols, b] / denom
        uv = crlb_mod.unit_vectors(scn.ue_ecef[users[ju]], [scn.sats[i] for i in sats[cols]])
        offset = np.zeros(len(cols))
        cross = []
        if config.linearization == "taylor":
            for r, (i, bb) in enumerate(zip(cols, b)):
                peers = used[i].copy()
                peers[bb] = False
                if not literal:
                    peers &= table.colors[i] == table.colors[i, bb]
                w0 = slope[r] * prev[i, bb]
                for b2 in np.nonzero(peers)[0]:
                    a = -w0 * table.coupling[ju, i, b2] / denom[r]
                    cross.append((r, int(var_of[i, b2]), a))
                    offset[r] -= a * prev[i, b2]
        terms.append(UserTerm(uv, var_of[cols, b], slope, offset, cross))
    return PowerModel(terms, ii, budget, config.P_tot_beam, start=prev[used]), var_of


def allocate_power(scn: Scenario, table: LinkTable, delta, gamma, prev, sats, users,
                   sel_cols, config: AlgoConfig, return_info: bool = False):
    """One SDP power update with a backtracking safeguard on the true bound."""
    prev = np.where(gamma, prev, 0.0)
    if len(users) == 0:
        return (prev, {}) if return_info else prev
    model, var_of = power_model(scn, table, delta, gamma, prev, sats, users, sel_cols, config)
    prob = assemble_power_sdp(model)
    try:
        sol = solve(prob, tol=config.sdp_tol, max_iter=config.sdp_max_iter)
    except SolverConditioningError as exc:
        log.warning("power SDP ill-conditioned (%s); keeping previous powers", exc)
        return (prev, {"status": "ill-conditioned"}) if return_info else prev
    info = {"status": sol.status, "iterations": sol.iterations, "sdp_objective": sol.objective}
    if sol.status not in ("optimal", "max_iter", "stalled"):
        log.warning("power SDP returned %s; keeping previous powers", sol.status)
        return (prev, info) if return_info else prev
    cand = prev.copy()
    used = var_of >= 0
    cand[used] = np.clip(sol.x[var_of[used]] * config.P_tot_beam, 0.0, config.P_tot_beam)
    over = cand.sum(axis=1) / config.P_tot_sat
    cand = np.where(over[:, None] > 1.0, cand / np.maximum(over, 1.0)[:, None], cand)

    def objective(p):
        t = table.with_power(p)
        return float(np.mean(evaluate_slot(scn, t, delta, sats, users, sel_cols)[0]))

    f_prev = objective(prev)
    step = 1.0
    best = prev
    for _ in range(8):
        trial = prev + step * (cand - prev)
        if objective(trial) <= f_prev:
            best = trial
            break
        step *= 0.5
    info["step"] = step if best is not prev else 0.0
    return (best, info) if return_info else best


def run_fbhca(scn: Scenario, config: AlgoConfig) -> Solution:
    slots, sel, covered = build_slots(scn, config)
    per_iter = [[] for _ in range(config.M)]
    for target, users, sats, sel_cols in slots:
        layouts, table, gamma = _cooperative_slot(scn, config, target, users, sats, sel_cols)
        # Voronoi activation does not depend on delta, so gamma is fixed; the
        # first iterate linearises around equal power on the lit beams
        P = equal_power(gamma, config)
        for m in range(config.M):
            lin = np.where(gamma, P, 0.0)
            delta = associate_users(table.with_power(lin))
            P = allocate_power(scn, table, delta, gamma, lin, sats, users, sel_cols, config)
            t = table.with_power(P)
            delta = associate_users(t)
            res = evaluate_slot(scn, t, delta, sats, users, sel_cols)
            per_iter[m].append((SlotPlan(target, users, sats, layouts, t, gamma, P, delta,
                                         sel_cols), res))
            if np.array_equal(P, lin):
                # fixed point: the remaining iterations would repeat this one
                for rest in per_iter[m + 1:]:
                    rest.append(per_iter[m][-1])
                break
    history = []
    for m in range(config.M):
        c = np.full(scn.J, np.nan)
        for sp, res in per_iter[m]:
            c[sp.users] = res[0]
        history.append(float(np.mean(c[covered])) if covered.any() else float("nan"))
    best = int(np.nanargmin(history)) if covered.any() else 0
    return _finish("FBHCA", scn, per_iter[best], sel, covered, config, history, best)


RUNNERS = {"TMCB": run_tmcb, "UVBHS-EPA": run_uvbhs_epa, "FBHCA": run_fbhca}


def audit_constraints(sol: Solution, config: AlgoConfig, tol: float = 1e-6) -> list[str]:
    """Constraint violations of a solution; an empty list means admissible."""
    issues = []
    for s in sol.slots:
        if np.any(s.power < -tol) or np.any(s.power > config.P_tot_beam + tol):
            issues.append(f"beam power out of range in slot {s.target}")
        if np.any(np.where(s.gamma, s.power, 0.0).sum(axis=1) > config.P_tot_sat + tol):
            issues.append(f"satellite power budget exceeded in slot {s.target}")
        if s.gamma.dtype != bool:
            issues.append("beam activation not binary")
        if np.any(s.gamma.sum(axis=1) > config.B):
            issues.append(f"active-beam budget exceeded in slot {s.target}")
        for ju in range(len(s.users)):
            for col in s.sel[ju]:
                b = s.delta[ju, col]
                # one beam per (user, satellite) holds by the array shape
                if b < 0 or not s.gamma[col, b]:
                    issues.append(f"user {s.users[ju]} associated with an unlit beam")
    return issues
