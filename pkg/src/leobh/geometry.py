"""Constellation geometry: circular-orbit propagation, ECEF/geodetic/UV
transforms and hexagonal beam layouts on the satellite UV plane.

All lengths are kilometres, angles are degrees unless a name says ``_rad``.
The Earth is a sphere that may rotate about +z.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .errors import HorizonError, ParameterError, VisibilityError

EARTH_RADIUS_KM = 6371.0
EARTH_ROTATION_RATE = 7.2921159e-5  # rad/s
MU_EARTH = 398600.4418  # km^3/s^2
SPEED_OF_LIGHT_KM_S = 299792.458


@dataclass(frozen=True)
class EarthModel:
    radius: float = EARTH_RADIUS_KM
    rotation_rate: float = EARTH_ROTATION_RATE

    def __post_init__(self):
        if not self.radius > 0:
            raise ParameterError(f"Earth radius must be positive, got {self.radius}")
        if self.rotation_rate < 0:
            raise ParameterError(f"rotation_rate must be >= 0, got {self.rotation_rate}")


@dataclass(frozen=True)
class ConstellationParams:
    num_planes: int = 40
    sats_per_plane: int = 60
    inclination: float = 87.5
    altitude: float = 1200.0
    phasing_factor: int = 1
    raan_spread: float = 360.0

    def __post_init__(self):
        if self.num_planes < 1 or self.sats_per_plane < 1:
            raise ParameterError("num_planes and sats_per_plane must be >= 1")
        if not 0.0 <= self.inclination <= 180.0:
            raise ParameterError(f"inclination {self.inclination} outside [0, 180]")
        if not self.altitude > 0:
            raise ParameterError(f"altitude must be positive, got {self.altitude}")

    @property
    def total(self) -> int:
        return self.num_planes * self.sats_per_plane


@dataclass(frozen=True)
class Constellation:
    """Walker-type constellation in terms of per-satellite orbital elements.

    ``raan`` and ``arg_latitude`` are the right ascension of the ascending
    node and the argument of latitude at t = 0, both in degrees.
    """

    params: ConstellationParams
    earth: EarthModel
    plane: np.ndarray
    slot: np.ndarray
    raan: np.ndarray
    arg_latitude: np.ndarray

    def __len__(self):
        return len(self.raan)

    @property
    def radius(self) -> float:
        return self.earth.radius + self.params.altitude

    @property
    def period(self) -> float:
        """Orbital period in seconds."""
        return orbital_period(self.params.altitude, self.earth)

    def elements(self):
        return [
            dict(sat_id=k, plane=int(self.plane[k]), slot=int(self.slot[k]),
                 raan=float(self.raan[k]), arg_latitude=float(self.arg_latitude[k]),
                 inclination=self.params.inclination, altitude=self.params.altitude)
            for k in range(len(self))
        ]


@dataclass(frozen=True)
class SatelliteState:
    sat_id: int
    position: np.ndarray
    velocity: np.ndarray
    earth: EarthModel = field(default_factory=EarthModel)

    @property
    def altitude(self) -> float:
        return float(np.linalg.norm(self.position)) - self.earth.radius

    @property
    def nadir(self) -> tuple[float, float]:
        return ecef_to_latlon(self.position)

    def nadir_point(self) -> "GroundPosition":
        lat, lon = self.nadir
        return GroundPosition.from_latlon(lat, lon, self.earth)


class SatelliteSnapshot(Sequence):
    """All satellites of a constellation at one instant (vectorised storage)."""

    def __init__(self, ids, positions, velocities, earth: EarthModel):
        self.ids = np.asarray(ids, dtype=int)
        self.positions = np.asarray(positions, dtype=float)
        self.velocities = np.asarray(velocities, dtype=float)
        self.earth = earth

    def __len__(self):
        return len(self.ids)

    def __getitem__(self, k):
        if isinstance(k, slice):
            return [self[i] for i in range(*k.indices(len(self)))]
        return SatelliteState(int(self.ids[k]), self.positions[k].copy(),
                              self.velocities[k].copy(), self.earth)

    def __iter__(self) -> Iterator[SatelliteState]:
        for k in range(len(self)):
            yield self[k]


@dataclass(frozen=True)
class GroundPosition:
    lat: float
    lon: float
    ecef: np.ndarray

    @classmethod
    def from_latlon(cls, lat: float, lon: float, earth: EarthModel | None = None):
        earth = earth or EarthModel()
        return cls(float(lat), float(lon), latlon_to_ecef(lat, lon, earth.radius))


@dataclass(frozen=True)
class UvCoordinate:
    u: float
    v: float

    def __post_init__(self):
        if self.u * self.u + self.v * self.v > 1.0 + 1e-12:
            raise HorizonError(f"UV point ({self.u}, {self.v}) outside the unit disk")

    def as_array(self):
        return np.array([self.u, self.v])


@dataclass(frozen=True)
class BeamLayout:
    """Beam boresights on the UV plane.

    ``lattice`` holds the axial hex coordinates (q, r) of each beam relative to
    the untranslated layout, ``beam_ids`` the index of each beam in the
    original layout (stable under translation and cropping).
    """

    centers: np.ndarray
    beam_radius_uv: float
    colors: np.ndarray
    lattice: np.ndarray
    beam_ids: np.ndarray

    def __len__(self):
        return len(self.centers)

    @property
    def spacing(self) -> float:
        return 2.0 * self.beam_radius_uv

    def subset(self, mask) -> "BeamLayout":
        mask = np.asarray(mask)
        return BeamLayout(self.centers[mask], self.beam_radius_uv, self.colors[mask],
                          self.lattice[mask], self.beam_ids[mask])


# -- coordinates -----------------------------------------------------------

def latlon_to_ecef(lat, lon, radius=EARTH_RADIUS_KM):
    lat = np.radians(lat)
    lon = np.radians(lon)
    return radius * np.stack([np.cos(lat) * np.cos(lon), np.cos(lat) * np.sin(lon),
                              np.sin(lat)], axis=-1)


def ecef_to_latlon(p):
    p = np.asarray(p, dtype=float)
    r = np.linalg.norm(p, axis=-1)
    lat = np.degrees(np.arcsin(np.clip(p[..., 2] / r, -1.0, 1.0)))
    lon = np.degrees(np.arctan2(p[..., 1], p[..., 0]))
    if np.ndim(lat) == 0:
        return float(lat), float(lon)
    return lat, lon


def orbital_period(altitude, earth: EarthModel | None = None) -> float:
    earth = earth or EarthModel()
    return 2.0 * np.pi * np.sqrt((earth.radius + altitude) ** 3 / MU_EARTH)


# -- constellation -----------------------------------------------------------

def build_constellation(params: ConstellationParams,
                        earth: EarthModel | None = None) -> Constellation:
    """Planes evenly spaced in RAAN over ``raan_spread``; Walker phasing
    ``phasing_factor * 360 / total`` degrees between adjacent planes."""
    if not isinstance(params, ConstellationParams):
        raise ParameterError("params must be a ConstellationParams")
    earth = earth or EarthModel()
    P, S = params.num_planes, params.sats_per_plane
    plane, slot = np.divmod(np.arange(P * S), S)
    raan = plane * params.raan_spread / P
    phase = params.phasing_factor * 360.0 / (P * S)
    arg_lat = np.mod(slot * 360.0 / S + plane * phase, 360.0)
    return Constellation(params, earth, plane, slot, raan.astype(float), arg_lat)


def _eci_state(raan_deg, inc_deg, u_deg, radius):
    raan = np.radians(raan_deg)
    inc = np.radians(inc_deg)
    u = np.radians(u_deg)
    cO, sO, ci, si = np.cos(raan), np.sin(raan), np.cos(inc), np.sin(inc)
    cu, su = np.cos(u), np.sin(u)
    pos = radius * np.stack([cO * cu - sO * su * ci, sO * cu + cO * su * ci, su * si], axis=-1)
    # unit along-track direction d(pos)/du
    vel = np.stack([-cO * su - sO * cu * ci, -sO * su + cO * cu * ci, cu * si], axis=-1)
    return pos, vel


def _rotate_z(vectors, angle):
    c, s = np.cos(angle), np.sin(angle)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return vectors @ rot.T


def propagate(constellation: Constellation, snapshot_index: int, S: int) -> SatelliteSnapshot:
    """Satellite ECEF states after ``snapshot_index / S`` of an orbital period."""
    if S < 1 or not 0 <= snapshot_index <= S:
        # snapshot_index == S is accepted: it closes the period
        raise ParameterError(f"snapshot_index {snapshot_index} outside [0, {S})")
    earth = constellation.earth
    elapsed = constellation.period * snapshot_index / S
    n = 360.0 * snapshot_index / S
    pos, vel = _eci_state(constellation.raan, constellation.params.inclination,
                          constellation.arg_latitude + n, constellation.radius)
    theta = -earth.rotation_rate * elapsed
    speed = 2.0 * np.pi * constellation.radius / constellation.period
    return SatelliteSnapshot(np.arange(len(constellation)), _rotate_z(pos, theta),
                             _rotate_z(vel, theta) * speed, earth)


# -- sat/ground relations -----------------------------------------------------

def _ecef(x):
    return x.ecef if isinstance(x, GroundPosition) else np.asarray(x, dtype=float)


def _pos(sat):
    return sat.position if isinstance(sat, SatelliteState) else np.asarray(sat, dtype=float)


def slant_distance(sat, ue) -> float:
    return float(np.linalg.norm(_pos(sat) - _ecef(ue)))


def elevation_angle(sat, ue) -> float:
    p = _ecef(ue)
    los = _pos(sat) - p
    s = np.dot(p / np.linalg.norm(p), los / np.linalg.norm(los))
    return float(np.degrees(np.arcsin(np.clip(s, -1.0, 1.0))))


def elevation_matrix(sat_positions, ue_ecef) -> np.ndarray:
    """Elevation (deg) of every satellite seen from every UE, shape (J, N)."""
    sat_positions = np.atleast_2d(sat_positions)
    ue_ecef = np.atleast_2d(ue_ecef)
    up = ue_ecef / np.linalg.norm(ue_ecef, axis=1, keepdims=True)
    los = sat_positions[None, :, :] - ue_ecef[:, None, :]
    dist = np.linalg.norm(los, axis=2)
    s = np.einsum("jnk,jk->jn", los, up) / dist
    return np.degrees(np.arcsin(np.clip(s, -1.0, 1.0)))


def uv_frame(sat: SatelliteState):
    """Orthonormal (x, y, z) axes of the satellite UV frame; z points to nadir,
    x is the along-track direction projected onto the UV plane."""
    z = -sat.position / np.linalg.norm(sat.position)
    x = sat.velocity - np.dot(sat.velocity, z) * z
    nx = np.linalg.norm(x)
    if nx < 1e-12:
        # no usable velocity: any axis perpendicular to nadir
        trial = np.array([0.0, 0.0, 1.0]) if abs(z[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
        x = trial - np.dot(trial, z) * z
        nx = np.linalg.norm(x)
    x = x / nx
    y = np.cross(z, x)
    return x, y, z


def _check_visible(sat, target_ecef):
    if elevation_angle(sat, target_ecef) <= 0.0:
        raise VisibilityError("target is not above the satellite's horizon")


def direction_to_uv(sat: SatelliteState, target, check: bool = True) -> UvCoordinate:
    t = _ecef(target)
    if check:
        _check_visible(sat, t)
    d = t - sat.position
    d = d / np.linalg.norm(d)
    x, y, _ = uv_frame(sat)
    return UvCoordinate(float(np.dot(d, x)), float(np.dot(d, y)))


def uv_to_direction(sat: SatelliteState, uv) -> np.ndarray:
    """Unit ECEF direction(s) for UV point(s); accepts (2,) or (B, 2)."""
    uv = uv.as_array() if isinstance(uv, UvCoordinate) else np.asarray(uv, dtype=float)
    u, v = uv[..., 0], uv[..., 1]
    w2 = 1.0 - u * u - v * v
    if np.any(w2 < -1e-12):
        raise HorizonError("UV point outside the unit disk")
    w = np.sqrt(np.clip(w2, 0.0, None))
    x, y, z = uv_frame(sat)
    return u[..., None] * x + v[..., None] * y + w[..., None] * z


def uv_of_points(sat: SatelliteState, points_ecef) -> np.ndarray:
    """UV coordinates of ground points (no visibility check), shape (J, 2)."""
    d = np.atleast_2d(points_ecef) - sat.position
    d = d / np.linalg.norm(d, axis=1, keepdims=True)
    x, y, _ = uv_frame(sat)
    return np.stack([d @ x, d @ y], axis=1)


def boresight_ground_points(sat: SatelliteState, centers) -> tuple[np.ndarray, np.ndarray]:
    """Intersection of each beam boresight with the Earth sphere.

    Returns (points, hit) where ``hit`` is False for rays that miss the Earth.
    """
    d = uv_to_direction(sat, np.atleast_2d(centers))
    p = sat.position
    b = d @ p
    disc = b * b - (p @ p - sat.earth.radius ** 2)
    hit = disc >= 0.0
    t = -b - np.sqrt(np.clip(disc, 0.0, None))
    return p + t[:, None] * d, hit


def off_boresight_angle(sat: SatelliteState, beam_center, ue, check: bool = True) -> float:
    t = _ecef(ue)
    if check:
        _check_visible(sat, t)
    b = uv_to_direction(sat, beam_center)
    d = t - sat.position
    d = d / np.linalg.norm(d)
    return float(np.arccos(np.clip(np.dot(b, d), -1.0, 1.0)))


def off_boresight_angles(sat: SatelliteState, centers, ue_ecef) -> np.ndarray:
    """Vectorised off-boresight angles (rad), shape (J, B)."""
    b = uv_to_direction(sat, np.atleast_2d(centers))
    d = np.atleast_2d(ue_ecef) - sat.position
    d = d / np.linalg.norm(d, axis=1, keepdims=True)
    return np.arccos(np.clip(d @ b.T, -1.0, 1.0))


# -- beam layouts ---------------------------------------------------------------

_HEX_DIRS = [(1, 0), (0, 1), (-1, 1), (-1, 0), (0, -1), (1, -1)]


def hex_ring_count(B_cov: int) -> int:
    r = 0
    while 3 * r * (r + 1) + 1 < B_cov:
        r += 1
    if 3 * r * (r + 1) + 1 != B_cov:
        raise ParameterError(f"B_cov={B_cov} is not a centered hexagonal number")
    return r


def hex_lattice(rings: int) -> np.ndarray:
    """Axial coordinates, centre first then ring by ring."""
    cells = [(0, 0)]
    for k in range(1, rings + 1):
        q, r = _HEX_DIRS[4][0] * k, _HEX_DIRS[4][1] * k
        for d in range(6):
            for _ in range(k):
                cells.append((q, r))
                q += _HEX_DIRS[d][0]
                r += _HEX_DIRS[d][1]
    return np.array(cells, dtype=int)


def lattice_colors(lattice) -> np.ndarray:
    lattice = np.asarray(lattice)
    return np.mod(lattice[:, 0] - lattice[:, 1], 3)


def hex_beam_layout(B_cov: int, beam_radius_uv: float) -> BeamLayout:
    if not beam_radius_uv > 0:
        raise ParameterError("beam_radius_uv must be positive")
    rings = hex_ring_count(B_cov)
    lat = hex_lattice(rings)
    d = 2.0 * beam_radius_uv
    centers = np.stack([d * (lat[:, 0] + 0.5 * lat[:, 1]),
                        d * (np.sqrt(3.0) / 2.0) * lat[:, 1]], axis=1)
    if np.any(np.einsum("ij,ij->i", centers, centers) > 1.0):
        raise HorizonError("hex layout does not fit inside the UV unit disk")
    return BeamLayout(centers, float(beam_radius_uv), lattice_colors(lat), lat,
                      np.arange(len(lat)))


def translate_layout(layout: BeamLayout, offset, drop_outside: bool = False) -> BeamLayout:
    off = offset.as_array() if isinstance(offset, UvCoordinate) else np.asarray(offset, float)
    centers = layout.centers + off
    inside = np.einsum("ij,ij->i", centers, centers) <= 1.0
    if not np.all(inside) and not drop_outside:
        raise HorizonError("translated beam center leaves the UV unit disk")
    moved = BeamLayout(centers, layout.beam_radius_uv, layout.colors, layout.lattice,
                       layout.beam_ids)
    return moved.subset(inside) if drop_outside else moved


def scan_limit(layout: BeamLayout) -> float:
    """Farthest beam centre of an untranslated layout.

    Steered beams must keep their centres inside this UV radius, i.e. within
    the satellite's own coverage area.
    """
    return float(np.max(np.linalg.norm(layout.centers, axis=1)))


def crop_layout(layout: BeamLayout, radius: float) -> BeamLayout:
    return layout.subset(np.linalg.norm(layout.centers, axis=1) <= radius + 1e-9)


def lattice_neighbors(layout: BeamLayout) -> list[tuple[int, int]]:
    """Index pairs of lattice-adjacent beams."""
    pos = {tuple(c): k for k, c in enumerate(layout.lattice.tolist())}
    pairs = []
    for k, (q, r) in enumerate(layout.lattice.tolist()):
        for dq, dr in _HEX_DIRS[:3]:
            m = pos.get((q + dq, r + dr))
            if m is not None:
                pairs.append((k, m))
    return pairs
