"""Scenario configuration, user deployment and the experiment sweeps.

Config files are TOML::

    seed = 7
    J = 50
    S = 20

    [region]
    lon = [-70.0, -60.0]
    lat = [-5.0, 5.0]

    [constellation]     # ConstellationParams fields
    [link]              # LinkParams fields; sf_sigma = {"20" = 2.0, ...}
    [algo]              # AlgoConfig fields
    [signal]            # Ns, K, Ts
    [sweep]
    heights = [800, 900, 1000]
    snapshot_height = 1200
    snapshots = [0, 20]           # half-open range
    n_pos = [4, 6, 8]
    algorithms = ["TMCB", "UVBHS-EPA", "FBHCA"]

Omitted fields take the defaults below.
"""
from __future__ import annotations

import csv
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import fbhca
from . import geometry as geo
from .crlb import SignalSpec
from .errors import ConfigError, LeoBHError, ParameterError
from .fbhca import ALGORITHMS, AlgoConfig, Scenario
from .geometry import ConstellationParams, GroundPosition
from .linkbudget import LinkParams, beam_radius_uv, sample_shadow_fading

log = logging.getLogger(__name__)

# below this the 2400-satellite shell leaves coverage gaps
COVERAGE_WARN_ALTITUDE_KM = 1100.0
CSV_COLUMNS = ["sweep_value", "algorithm", "n_pos", "avg_crlb_m", "covered_users"]


@dataclass(frozen=True)
class Region:
    lon: tuple[float, float] = (-70.0, -60.0)
    lat: tuple[float, float] = (-5.0, 5.0)

    def __post_init__(self):
        (lo0, lo1), (la0, la1) = self.lon, self.lat
        if lo0 > lo1 or la0 > la1:
            raise ParameterError("region bounds must be ordered (min, max)")
        if not (-90.0 <= la0 and la1 <= 90.0):
            raise ParameterError("latitude outside [-90, 90]")


@dataclass(frozen=True)
class ScenarioConfig:
    constellation: ConstellationParams = field(default_factory=ConstellationParams)
    link: LinkParams = field(default_factory=LinkParams)
    algo: AlgoConfig = field(default_factory=AlgoConfig)
    signal: SignalSpec = field(default_factory=SignalSpec)
    region: Region = field(default_factory=Region)
    J: int = 50
    S: int = 20
    heights: tuple[float, ...] = tuple(float(h) for h in range(800, 1501, 100))
    snapshot_height: float = 1200.0
    snapshots: tuple[int, int] | None = None
    n_pos: tuple[int, ...] = (4, 6, 8)
    algorithms: tuple[str, ...] = ALGORITHMS
    output_dir: str = "out"
    seed: int = 0
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        if self.J < 1:
            raise ParameterError("J must be >= 1")
        if self.S < 1:
            raise ParameterError("S must be >= 1")
        if not self.heights:
            raise ParameterError("heights must be nonempty")
        if any(n < 4 for n in self.n_pos) or not self.n_pos:
            raise ParameterError("n_pos entries must be >= 4")
        lo, hi = self.snapshot_range
        if not 0 <= lo < hi <= self.S:
            raise ParameterError(f"snapshots must satisfy 0 <= start < stop <= S, got {lo, hi}")
        bad = [a for a in self.algorithms if a not in ALGORITHMS]
        if bad:
            raise ParameterError(f"unknown algorithms {bad}")
        if self.seed < 0:
            raise ParameterError("seed must be non-negative")

    @property
    def snapshot_range(self) -> tuple[int, int]:
        return tuple(self.snapshots) if self.snapshots is not None else (0, self.S)


# -- config loading ------------------------------------------------------------------

_SECTIONS = {
    "constellation": ConstellationParams,
    "link": LinkParams,
    "algo": AlgoConfig,
    "signal": SignalSpec,
}
_TOP = {"J", "S", "seed", "output_dir"}
_SWEEP = {"heights", "snapshot_height", "snapshots", "n_pos", "algorithms"}


def _build(cls, section: str, data: dict):
    names = {f.name for f in fields(cls) if not f.name.startswith("_")}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"[{section}] unknown field(s): {', '.join(unknown)}")
    try:
        return cls(**data)
    except (ParameterError, TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {exc}") from exc


def config_from_dict(raw: dict) -> ScenarioConfig:
    raw = dict(raw)
    kw = {}
    for name, cls in _SECTIONS.items():
        data = dict(raw.pop(name, {}))
        if name == "link" and "sf_sigma" in data:
            data["sf_sigma_table"] = {float(k): float(v) for k, v in data.pop("sf_sigma").items()}
        if name == "constellation" and "phasing_factor" in data:
            data["phasing_factor"] = int(data["phasing_factor"])
        kw[name] = _build(cls, name, data)
    region = dict(raw.pop("region", {}))
    region = {k: tuple(float(x) for x in v) for k, v in region.items()}
    kw["region"] = _build(Region, "region", region)
    sweep = dict(raw.pop("sweep", {}))
    unknown = sorted(set(sweep) - _SWEEP)
    if unknown:
        raise ConfigError(f"[sweep] unknown field(s): {', '.join(unknown)}")
    for key in ("heights", "n_pos", "algorithms"):
        if key in sweep:
            sweep[key] = tuple(sweep[key])
    if "heights" in sweep:
        sweep["heights"] = tuple(float(h) for h in sweep["heights"])
    if "snapshots" in sweep:
        sweep["snapshots"] = tuple(int(k) for k in sweep["snapshots"])
    unknown = sorted(set(raw) - _TOP)
    if unknown:
        raise ConfigError(f"unknown top-level field(s): {', '.join(unknown)}")
    kw.update(sweep)
    kw.update(raw)
    try:
        cfg = ScenarioConfig(**kw)
    except (ParameterError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    low = sorted({h for h in (*cfg.heights, cfg.snapshot_height, cfg.constellation.altitude)
                  if h < COVERAGE_WARN_ALTITUDE_KM})
    if low:
        msg = (f"altitudes {low} km are below {COVERAGE_WARN_ALTITUDE_KM:g} km: "
               "expect coverage failures")
        cfg = replace(cfg, warnings=cfg.warnings + (msg,))
    return cfg


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    try:
        return config_from_dict(raw)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


# -- users ---------------------------------------------------------------------------

def deploy_users(region: Region, J: int, seed: int) -> list[GroundPosition]:
    """Uniform in longitude and latitude over the box (not area-uniform)."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    lon = rng.uniform(region.lon[0], region.lon[1], J)
    lat = rng.uniform(region.lat[0], region.lat[1], J)
    return [GroundPosition.from_latlon(float(a), float(o)) for a, o in zip(lat, lon)]


def users_ecef(users) -> np.ndarray:
    return np.stack([u.ecef for u in users])


# -- experiment core ----------------------------------------------------------------

@dataclass
class ExperimentRow:
    sweep_value: float
    algorithm: str
    n_pos: int
    avg_crlb_m: float
    covered_users: int
    excluded_users: int
    snr_db: tuple
    runtime_ms: float

    @property
    def coverage_failure(self) -> bool:
        return self.covered_users == 0 or not math.isfinite(self.avg_crlb_m)


@dataclass
class ExperimentResult:
    kind: str
    rows: list = field(default_factory=list)

    def row(self, sweep_value, algorithm, n_pos=None) -> ExperimentRow:
        for r in self.rows:
            if r.sweep_value == sweep_value and r.algorithm == algorithm and (
                    n_pos is None or r.n_pos == n_pos):
                return r
        raise KeyError((sweep_value, algorithm, n_pos))

    def curve(self, algorithm, n_pos=None):
        rows = [r for r in self.rows if r.algorithm == algorithm and
                (n_pos is None or r.n_pos == n_pos)]
        return (np.array([r.sweep_value for r in rows]),
                np.array([r.avg_crlb_m for r in rows]))


def _layout(cfg: ScenarioConfig):
    r = beam_radius_uv(cfg.link.aperture_radius, cfg.link.f0)
    return geo.hex_beam_layout(cfg.algo.B_cov, r)


def build_scenario(cfg: ScenarioConfig, height: float, k: int, ue_ecef) -> Scenario:
    const = geo.build_constellation(replace(cfg.constellation, altitude=float(height)))
    snap = geo.propagate(const, k, cfg.S)
    sf = None
    if cfg.link.sf_sigma_table:
        ss = np.random.SeedSequence([cfg.seed, 1, int(round(height)), k])
        sf = sample_shadow_fading(np.random.default_rng(ss), snap, ue_ecef, cfg.link)
    return Scenario(snap, ue_ecef, cfg.link, _layout(cfg), cfg.signal, sf)


def _snapshot_task(args):
    cfg, height, k, ue_ecef, n_pos_list = args
    scn = build_scenario(cfg, height, k, ue_ecef)
    out = {}
    for n_pos in n_pos_list:
        algo = replace(cfg.algo, N_pos=n_pos)
        for name in cfg.algorithms:
            t0 = time.perf_counter()
            sol = fbhca.RUNNERS[name](scn, algo)
            dt = (time.perf_counter() - t0) * 1e3
            out[(n_pos, name)] = (sol.crlb_m, sol.snr_db, sol.covered, dt)
    return out


def _map(tasks, threads):
    if threads is None or threads <= 1 or len(tasks) <= 1:
        return [_snapshot_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=threads) as ex:
        # map() yields in submission order whatever the completion order
        return list(ex.map(_snapshot_task, tasks))


def _aggregate(sweep_value, name, n_pos, parts, J) -> ExperimentRow:
    crlb = np.concatenate([p[0][p[2]] for p in parts])
    snr = np.concatenate([p[1][p[2]] for p in parts]) if len(crlb) else np.empty((0, n_pos))
    covered_all = np.logical_and.reduce([p[2] for p in parts])
    avg = float(np.mean(crlb)) if len(crlb) else float("nan")
    snr_mean = tuple(float(x) for x in np.mean(snr, axis=0)) if len(snr) else (math.nan,) * n_pos
    n_cov = int(covered_all.sum())
    return ExperimentRow(float(sweep_value), name, int(n_pos), avg, n_cov, J - n_cov, snr_mean,
                         float(sum(p[3] for p in parts)))


def run_orbit_height_sweep(cfg: ScenarioConfig, threads: int | None = None) -> ExperimentResult:
    """Average CRLB over users and snapshots, per height and algorithm.

    ``covered_users`` counts users covered in every snapshot; the average runs
    over all covered (user, snapshot) pairs.
    """
    ue = users_ecef(deploy_users(cfg.region, cfg.J, cfg.seed))
    lo, hi = cfg.snapshot_range
    n_pos = cfg.algo.N_pos
    tasks = [(cfg, h, k, ue, (n_pos,)) for h in cfg.heights for k in range(lo, hi)]
    outs = _map(tasks, threads)
    res = ExperimentResult("height")
    per = hi - lo
    for hi_idx, h in enumerate(cfg.heights):
        chunk = outs[hi_idx * per:(hi_idx + 1) * per]
        for name in cfg.algorithms:
            parts = [o[(n_pos, name)] for o in chunk]
            row = _aggregate(h, name, n_pos, parts, cfg.J)
            if row.coverage_failure:
                log.warning("no covered users at %g km for %s", h, name)
            res.rows.append(row)
    return res


def run_snapshot_sweep(cfg: ScenarioConfig, threads: int | None = None,
                       n_pos: tuple[int, ...] | None = None) -> ExperimentResult:
    """Per-snapshot average CRLB at ``snapshot_height`` for each N_pos."""
    ue = users_ecef(deploy_users(cfg.region, cfg.J, cfg.seed))
    lo, hi = cfg.snapshot_range
    n_pos = tuple(n_pos or cfg.n_pos)
    tasks = [(cfg, cfg.snapshot_height, k, ue, n_pos) for k in range(lo, hi)]
    outs = _map(tasks, threads)
    res = ExperimentResult("snapshot")
    for n in n_pos:
        for k, o in zip(range(lo, hi), outs):
            for name in cfg.algorithms:
                res.rows.append(_aggregate(k, name, n, [o[(n, name)]], cfg.J))
    return res


def snapshot_average(result: ExperimentResult, algorithm: str, n_pos: int) -> float:
    """Mean over snapshots of the per-snapshot average CRLB."""
    vals = [r.avg_crlb_m for r in result.rows if r.algorithm == algorithm and r.n_pos == n_pos
            and not r.coverage_failure]
    return float(np.mean(vals)) if vals else float("nan")


def snr_table(result: ExperimentResult, n_pos: int = 4) -> dict:
    """Per-algorithm mean SNR (dB) of each positioning satellite rank."""
    out = {}
    for name in dict.fromkeys(r.algorithm for r in result.rows):
        rows = [r for r in result.rows if r.algorithm == name and r.n_pos == n_pos
                and not r.coverage_failure]
        if rows:
            w = np.array([r.covered_users for r in rows], float)
            snr = np.array([r.snr_db for r in rows])
            out[name] = tuple(float(x) for x in np.average(snr, axis=0, weights=np.maximum(w, 1e-12)))
    return out


def run_table2(cfg: ScenarioConfig, threads: int | None = None) -> dict:
    res = run_snapshot_sweep(cfg, threads, n_pos=(4,))
    return snr_table(res, 4)


def run_single(cfg: ScenarioConfig, height: float, k: int, algorithm: str,
               n_pos: int | None = None) -> fbhca.Solution:
    """One algorithm on one snapshot with the configured users."""
    ue = users_ecef(deploy_users(cfg.region, cfg.J, cfg.seed))
    scn = build_scenario(cfg, height, k, ue)
    algo = cfg.algo if n_pos is None else replace(cfg.algo, N_pos=n_pos)
    return fbhca.RUNNERS[algorithm](scn, algo)


# -- output --------------------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if not math.isfinite(x):
        return "nan"
    return f"{x:.6g}"


def emit_csv(result: ExperimentResult, path) -> Path:
    """Deterministic result table; runtimes go to a ``*_timing.csv`` sibling."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for r in result.rows:
                w.writerow([_fmt(r.sweep_value), r.algorithm, r.n_pos, _fmt(r.avg_crlb_m),
                            r.covered_users])
    except OSError as exc:
        raise LeoBHError(f"cannot write {path}: {exc.strerror}") from exc
    return path


def emit_timing_csv(result: ExperimentResult, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sweep_value", "algorithm", "n_pos", "runtime_ms"])
        for r in result.rows:
            w.writerow([_fmt(r.sweep_value), r.algorithm, r.n_pos, _fmt(r.runtime_ms)])
    return path


def emit_snr_csv(table: dict, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = max((len(v) for v in table.values()), default=0)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["algorithm"] + [f"sat{k + 1}_snr_db" for k in range(n)])
        for name, vals in table.items():
            w.writerow([name] + [_fmt(v) for v in vals])
    return path


_PLOT_STUB = '''"""Plot {csv_name}; run with a Python that has matplotlib."""
import csv
import sys
from collections import defaultdict

import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else "{csv_name}"
curves = defaultdict(lambda: ([], []))
with open(path) as fh:
    for row in csv.DictReader(fh):
        key = row["algorithm"] + " N=" + row["n_pos"]
        curves[key][0].append(float(row["sweep_value"]))
        curves[key][1].append(float(row["avg_crlb_m"]))
for key, (x, y) in curves.items():
    plt.plot(x, y, marker="o", label=key)
plt.xlabel("{xlabel}")
plt.ylabel("average CRLB (m)")
plt.yscale("log")
plt.legend()
plt.grid(True, alpha=0.3)
plt.savefig(path.replace(".csv", ".png"), dpi=150)
'''


def write_plot_stub(csv_path, xlabel: str) -> Path:
    csv_path = Path(csv_path)
    out = csv_path.with_name(f"plot_{csv_path.stem}.py")
    out.write_text(_PLOT_STUB.format(csv_name=csv_path.name, xlabel=xlabel))
    return out
