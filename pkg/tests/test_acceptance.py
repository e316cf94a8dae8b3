"""End-to-end acceptance checks; each test prints one PASS/FAIL line."""
import itertools
import time

import numpy as np
import pytest

from leobh import crlb, fbhca, runner, sdp
from leobh import geometry as geo
from leobh.crlb import SPEED_OF_LIGHT_M_S, SignalSpec, gamma_term
from leobh.linkbudget import LinkParams, beam_radius_uv

ALGOS = ("TMCB", "UVBHS-EPA", "FBHCA")


@pytest.fixture()
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} ({detail})")
        assert ok, detail
    return emit


def _geometry(rng, n, h=1200.0):
    lat, lon = rng.uniform(-40, 40), rng.uniform(-180, 180)
    ue = geo.latlon_to_ecef(lat, lon)
    sats = geo.latlon_to_ecef(lat + rng.uniform(-12, 12, n), lon + rng.uniform(-12, 12, n),
                              geo.EARTH_RADIUS_KM + h)
    return ue, sats


def test_1_matrix_identities(report):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst_rec = worst_tot = 0.0
    for _ in range(1000):
        n = int(rng.integers(2, 9))
        var = rng.uniform(0.2, 5.0, n) * 1e-19
        R0_inv, H, _ = crlb.inv_R_decomposition(var)
        Rinv = np.linalg.inv(crlb.build_R(var))
        worst_rec = max(worst_rec, np.linalg.norm(R0_inv - H - Rinv) / np.linalg.norm(Rinv))
        if n >= 4:
            ue, sats = _geometry(rng, n)
            A = crlb.build_A(ue, sats)
            ty, corr = crlb.crlb_decomposed(A, var)
            direct = crlb.tdoa_crlb(A, crlb.build_R(var)) ** 2 / 1e6
            worst_tot = max(worst_tot, abs(ty + corr - direct) / direct)
    dt = time.perf_counter() - t0
    ok = worst_rec <= 1e-10 and worst_tot <= 1e-8 and dt < 5.0
    report(1, ok, f"reconstruction {worst_rec:.1e}, total {worst_tot:.1e}, {dt:.2f} s")


def test_2_crlb_decreases_in_each_snr(report):
    rng = np.random.default_rng(102)
    violations = checks = 0
    for _ in range(500):
        n = int(rng.integers(4, 9))
        ue, sats = _geometry(rng, n)
        A = crlb.build_A(ue, sats)
        beta = 10 ** (rng.uniform(-10, 20, n) / 10)
        base = crlb.tdoa_crlb(A, crlb.build_R(crlb.toa_variance(beta)))
        for i in range(n):
            b = beta.copy()
            b[i] *= 1.1
            checks += 1
            violations += not crlb.tdoa_crlb(A, crlb.build_R(crlb.toa_variance(b))) < base
    report(2, violations == 0, f"{violations} violations in {checks} perturbations")


def _in_convex(poly, p):
    q = np.roll(poly, -1, axis=0)
    cross = (q[:, 0] - poly[:, 0]) * (p[1] - poly[:, 1]) - (q[:, 1] - poly[:, 1]) * (p[0] - poly[:, 0])
    return bool(np.all(cross >= -1e-12))


def test_3_voronoi_oracle(report):
    rng = np.random.default_rng(103)
    mismatches = 0
    for _ in range(100):
        sites = rng.uniform(-1, 1, (int(rng.integers(2, 30)), 2))
        polys = fbhca.voronoi_polygons(sites)
        pts = rng.uniform(-1.2, 1.2, (100, 2))
        got = fbhca.voronoi_assign(sites, pts)
        for p, g in zip(pts, got):
            owner = next(k for k, poly in enumerate(polys) if len(poly) and _in_convex(poly, p))
            mismatches += owner != g
    report(3, mismatches == 0, f"{mismatches} mismatches over 10000 points")


def _eigen_problem(C):
    m = len(C)
    basis = []
    for a in range(m):
        for b in range(a, m):
            E = np.zeros((m, m))
            E[a, b] = E[b, a] = 1.0
            basis.append((a == b, E))
    c = np.array([np.sum(C * E) for _, E in basis])
    row = np.array([1.0 if diag else 0.0 for diag, _ in basis])
    blk = sdp.LmiBlock(np.zeros((m, m)), np.arange(len(basis)), [E for _, E in basis])
    return sdp.SdpProblem(c, [blk], [(row, 1.0, "==")])


def _diagonal_problem(c, lo, hi):
    # lo <= x <= hi as one diagonal LMI; optimum sits on a box vertex
    n = len(c)
    const = np.diag(np.concatenate([-lo, hi]))
    mats = []
    for k in range(n):
        d = np.zeros(2 * n)
        d[k], d[n + k] = 1.0, -1.0
        mats.append(np.diag(d))
    p = sdp.SdpProblem(c, [sdp.LmiBlock(const, np.arange(n), mats)], x0=(lo + hi) / 2)
    return p, float(np.sum(np.where(c > 0, c * lo, c * hi)))


def test_4_sdp_analytic_instances(report):
    rng = np.random.default_rng(104)
    worst, unverified = 0.0, 0
    for k in range(20):
        B = rng.standard_normal((3 + k % 4, 3 + k % 4))
        C = B + B.T
        cases = [(_eigen_problem(C), np.linalg.eigvalsh(C)[0])]
        n = 2 + k % 5
        lo = rng.uniform(-2, 0, n)
        cases.append(_diagonal_problem(rng.standard_normal(n), lo, lo + rng.uniform(0.5, 3, n)))
        for p, opt in cases:
            s = sdp.solve(p)
            worst = max(worst, abs(s.objective - opt) if s.status == "optimal" else np.inf)
            unverified += s.status == "optimal" and not sdp.verify_solution(p, s).ok
    report(4, worst <= 1e-6 and unverified == 0, f"max gap {worst:.1e}, {unverified} failed verification")


@pytest.mark.slow
def test_5_snr_pattern(report):
    cfg = runner.ScenarioConfig()
    tab = runner.run_table2(cfg)
    serving = all(12 <= tab[a][0] <= 17 for a in ALGOS)
    tmcb = all(x <= -4 for x in tab["TMCB"][1:])
    coop = all(x >= 8 for a in ("UVBHS-EPA", "FBHCA") for x in tab[a][1:])
    text = "; ".join(f"{a} " + "/".join(f"{x:.1f}" for x in tab[a]) for a in ALGOS)
    report(5, serving and tmcb and coop, text)


@pytest.fixture(scope="module")
def height_sweeps(tmp_path_factory):
    cfg = runner.ScenarioConfig()
    out = tmp_path_factory.mktemp("sweep")
    t0 = time.perf_counter()
    res1 = runner.run_orbit_height_sweep(cfg, threads=1)
    dt = time.perf_counter() - t0
    res2 = runner.run_orbit_height_sweep(cfg, threads=2)
    return res1, dt, runner.emit_csv(res1, out / "t1.csv"), runner.emit_csv(res2, out / "t2.csv")


@pytest.mark.slow
def test_6_height_sweep_shape(report, height_sweeps):
    res, dt, _, _ = height_sweeps
    heights = runner.ScenarioConfig().heights
    c = {a: dict(zip(*res.curve(a))) for a in ALGOS}
    ordered = all(c["TMCB"][h] >= c["UVBHS-EPA"][h] >= c["FBHCA"][h] for h in heights)
    ratio = c["TMCB"][1200.0] / c["FBHCA"][1200.0]
    h_min = min(heights, key=lambda h: c["FBHCA"][h])
    interior = h_min not in (heights[0], heights[-1]) and 1000 <= h_min <= 1300
    ok = ordered and ratio >= 3 and interior and dt <= 600
    report(6, ok, f"ordering {ordered}, ratio {ratio:.1f} at 1200 km, FBHCA min at {h_min:.0f} km, {dt:.0f} s")


@pytest.mark.slow
def test_7_more_positioning_sats_help(report):
    res = runner.run_snapshot_sweep(runner.ScenarioConfig(), n_pos=(4, 6, 8))
    avg = {a: [runner.snapshot_average(res, a, n) for n in (4, 6, 8)] for a in ALGOS}
    ok = all(v[0] >= v[1] >= v[2] for v in avg.values())
    report(7, ok, "; ".join(f"{a} " + "/".join(f"{x:.2f}" for x in v) for a, v in avg.items()))


def _toy_instance():
    lp = LinkParams()
    lay = geo.hex_beam_layout(7, beam_radius_uv(lp.aperture_radius, lp.f0))
    snap = geo.propagate(geo.build_constellation(geo.ConstellationParams()), 0, 20)
    pos = np.stack([s.position for s in snap])
    el = geo.elevation_matrix(pos, geo.latlon_to_ecef(np.array([0.0]), np.array([-65.0])))
    target = int(fbhca.serving_satellites(el, np.arange(len(pos)))[0])
    chosen = fbhca.cooperating_sats(pos, target, 4, el[0] > 0, 300.0)
    users, _ = geo.boresight_ground_points(snap[target], lay.centers[[1, 3, 5]] * 0.8)
    scn = fbhca.Scenario([snap[i] for i in chosen], users, lp, lay, SignalSpec())
    cfg = fbhca.AlgoConfig(P_tot_sat=220.0, B_cov=7, B=7, scan_limit_uv=1.0)
    return scn, cfg


def _pareto(beta):
    b = beta[np.argsort(-beta[:, 0])]
    keep = []
    for row in b:
        if not keep or not np.any(np.all(np.array(keep) >= row, axis=1)):
            keep.append(row)
    return np.array(keep)


def _grid_optimum(scn, cfg):
    """Exhaustive 8-level power grid; association is max-SINR given powers."""
    slots, _, _ = fbhca.build_slots(scn, cfg)
    assert len(slots) == 1
    target, users, sats, _ = slots[0]
    layouts = fbhca._layouts(scn, target, sats, True, cfg)
    table = fbhca._table(scn, sats, layouts, users, cfg)
    nb = cfg.B_cov
    levels = np.arange(8) / 7 * cfg.P_tot_beam
    combos = np.array(list(itertools.product(range(8), repeat=nb)))
    combos = combos[combos.sum(1) <= int(cfg.P_tot_sat / cfg.P_tot_beam * 7 + 1e-9)]
    P = levels[combos]
    fronts = []
    for i in range(len(sats)):
        rx = table.coupling[:, i, :nb][:, None, :] * P[None]
        col = table.colors[i, :nb]
        same = (col[:, None] == col[None, :]).astype(float)
        sinr = rx / (rx @ same - rx + table.noise_w)
        beta = sinr.max(axis=2).T
        fronts.append(_pareto(beta[(beta > 0).all(axis=1)]))
    sig = SignalSpec()
    scale = 8 * np.pi ** 2 * gamma_term(sig) / (sig.Ts ** 2 * SPEED_OF_LIGHT_M_S ** 2)
    K = np.zeros((len(users), len(sats), 4, 4))
    for j, u in enumerate(users):
        d = scn.positions[sats] - scn.ue_ecef[u]
        h = np.hstack([-d / np.linalg.norm(d, axis=1)[:, None], np.ones((len(sats), 1))])
        K[j] = np.einsum("ia,ib->iab", h, h)
    best = np.inf
    idx = np.meshgrid(*[np.arange(len(f)) for f in fronts[1:]], indexing="ij")
    idx = [g.ravel() for g in idx]
    for a in range(len(fronts[0])):
        tot = 0.0
        for j in range(len(users)):
            M = scale * fronts[0][a, j] * K[j, 0]
            for i, g in enumerate(idx, start=1):
                M = M + (scale * fronts[i][g, j])[:, None, None] * K[j, i]
            tot = tot + np.sqrt(np.trace(np.linalg.inv(M)[:, :3, :3], axis1=1, axis2=2))
        best = min(best, float((tot / len(users)).min()))
    return best


@pytest.mark.slow
def test_8_fbhca_near_grid_optimum(report):
    t0 = time.perf_counter()
    scn, cfg = _toy_instance()
    sol = fbhca.run_fbhca(scn, cfg)
    opt = _grid_optimum(scn, cfg)
    dt = time.perf_counter() - t0
    ratio = sol.avg_crlb / opt
    report(8, ratio <= 1.05 and dt <= 120,
           f"FBHCA {sol.avg_crlb:.4f} m vs grid {opt:.4f} m, ratio {ratio:.3f}, {dt:.0f} s")


@pytest.mark.slow
def test_9_deterministic_across_threads(report, height_sweeps):
    _, _, a, b = height_sweeps
    same = a.read_bytes() == b.read_bytes()
    report(9, same, f"threads 1 vs 2 CSVs {'identical' if same else 'differ'}, {len(a.read_bytes())} bytes")
