"""Small dense SDP solver (primal log-barrier) and the power-allocation model.

Standard form::

    minimize    c^T x
    subject to  F_k(x) = F_k0 + sum_i x_i F_ki  >= 0   (LMI blocks)
                g_r^T x (<=, >=, ==) h_r            (linear rows)

Each block only stores coefficient matrices for the variables it touches
(``idx``), so per-user blocks of the power problem stay cheap.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import AssemblyError, ParameterError, SolverConditioningError

log = logging.getLogger(__name__)


@dataclass
class LmiBlock:
    F0: np.ndarray
    idx: np.ndarray
    coeffs: np.ndarray

    def __post_init__(self):
        self.F0 = np.asarray(self.F0, dtype=float)
        self.idx = np.asarray(self.idx, dtype=int)
        self.coeffs = np.asarray(self.coeffs, dtype=float).reshape(
            len(self.idx), *self.F0.shape)
        m = self.F0.shape[0]
        if self.F0.shape != (m, m):
            raise ParameterError("LMI blocks must be square")
        if not np.allclose(self.F0, self.F0.T) or not np.allclose(
                self.coeffs, self.coeffs.transpose(0, 2, 1)):
            raise ParameterError("LMI block coefficients must be symmetric")

    @property
    def dim(self) -> int:
        return self.F0.shape[0]

    def value(self, x) -> np.ndarray:
        return self.F0 + np.einsum("k,kab->ab", np.asarray(x)[self.idx], self.coeffs)


@dataclass
class SdpProblem:
    c: np.ndarray
    blocks: list[LmiBlock] = field(default_factory=list)
    linear: list[tuple[np.ndarray, float, str]] = field(default_factory=list)
    x0: np.ndarray | None = None
    names: list[str] | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        for blk in self.blocks:
            if blk.idx.size and (blk.idx.min() < 0 or blk.idx.max() >= self.n):
                raise ParameterError("block variable index out of range")
        for coef, _, sense in self.linear:
            if len(coef) != self.n:
                raise ParameterError("linear constraint has wrong length")
            if sense not in ("<=", ">=", "=="):
                raise ParameterError(f"unknown constraint sense {sense!r}")

    @property
    def n(self) -> int:
        return len(self.c)

    def inequalities(self):
        """(G, h) with G x <= h."""
        rows, rhs = [], []
        for coef, bound, sense in self.linear:
            if sense == "<=":
                rows.append(coef); rhs.append(bound)
            elif sense == ">=":
                rows.append(-np.asarray(coef)); rhs.append(-bound)
        G = np.array(rows, dtype=float).reshape(-1, self.n)
        return G, np.array(rhs, dtype=float)

    def equalities(self):
        rows = [(coef, bound) for coef, bound, sense in self.linear if sense == "=="]
        A = np.array([r[0] for r in rows], dtype=float).reshape(-1, self.n)
        return A, np.array([r[1] for r in rows], dtype=float)

    def to_text(self) -> str:
        """Plain-text listing: objective, linear rows, sparse block entries."""
        lines = [f"* variables {self.n}", f"* blocks {len(self.blocks)}",
                 "c " + " ".join(f"{v:.17g}" for v in self.c)]
        for coef, bound, sense in self.linear:
            nz = " ".join(f"{i}:{v:.17g}" for i, v in enumerate(coef) if v != 0)
            lines.append(f"lin {nz} {sense} {bound:.17g}")
        for k, blk in enumerate(self.blocks):
            lines.append(f"block {k} dim {blk.dim}")
            for var, mat in [(-1, blk.F0)] + list(zip(blk.idx.tolist(), blk.coeffs)):
                a, b = np.nonzero(np.triu(mat))
                for i, j in zip(a, b):
                    lines.append(f"  {var} {i} {j} {mat[i, j]:.17g}")
        return "\n".join(lines) + "\n"


@dataclass
class SdpSolution:
    x: np.ndarray
    objective: float
    status: str
    residuals: dict
    history: list = field(default_factory=list)
    iterations: int = 0


@dataclass
class VerificationReport:
    min_eigenvalues: list
    linear_violation: float
    equality_residual: float
    objective_recomputed: float
    objective_error: float
    gap: float | None
    ok: bool


# -- barrier machinery ---------------------------------------------------------

class _Compiled:
    """Blocks grouped by (dim, number of touched variables) for batching."""

    def __init__(self, blocks: Sequence[LmiBlock], G, h, A, b, n):
        groups = {}
        for blk in blocks:
            groups.setdefault((blk.dim, len(blk.idx)), []).append(blk)
        self.groups = []
        for (m, k), bl in groups.items():
            F0 = np.stack([b_.F0 for b_ in bl])
            idx = np.stack([b_.idx for b_ in bl]).reshape(len(bl), k)
            C = np.stack([b_.coeffs for b_ in bl]).reshape(len(bl), k, m, m)
            self.groups.append((F0, idx, C))
        self.G, self.h, self.A, self.b, self.n = G, h, A, b, n
        self.barrier_dim = sum(b_.dim for b_ in blocks) + len(h)

    def values(self, x):
        return [F0 + np.einsum("bk,bkmn->bmn", x[idx], C) for F0, idx, C in self.groups]

    def strictly_feasible(self, x) -> bool:
        if len(self.h) and np.any(self.h - self.G @ x <= 0):
            return False
        try:
            for F in self.values(x):
                np.linalg.cholesky(F)
        except np.linalg.LinAlgError:
            return False
        return True

    def barrier(self, x) -> float:
        val = 0.0
        if len(self.h):
            s = self.h - self.G @ x
            if np.any(s <= 0):
                return np.inf
            val -= np.sum(np.log(s))
        for F in self.values(x):
            try:
                L = np.linalg.cholesky(F)
            except np.linalg.LinAlgError:
                return np.inf
            val -= 2.0 * np.sum(np.log(np.diagonal(L, axis1=1, axis2=2)))
        return val

    def max_step(self, x, dx) -> float:
        """Largest s with x + s dx still feasible (inf when unbounded)."""
        smax = np.inf
        if len(self.h):
            r = self.G @ dx
            pos = r > 0
            if np.any(pos):
                smax = min(smax, float(np.min((self.h - self.G @ x)[pos] / r[pos])))
        for (F0, idx, C), F in zip(self.groups, self.values(x)):
            D = np.einsum("bk,bkmn->bmn", dx[idx], C)
            try:
                Li = np.linalg.inv(np.linalg.cholesky(F))
            except np.linalg.LinAlgError:
                return 0.0
            lam = np.linalg.eigvalsh(Li @ D @ np.swapaxes(Li, 1, 2))[:, 0]
            if np.any(lam < 0):
                smax = min(smax, float(np.min(-1.0 / lam[lam < 0])))
        return smax

    def derivatives(self, x):
        g = np.zeros(self.n)
        H = np.zeros((self.n, self.n))
        if len(self.h):
            s = self.h - self.G @ x
            Gs = self.G / s[:, None]
            g += Gs.sum(axis=0)
            H += Gs.T @ Gs
        for (F0, idx, C), F in zip(self.groups, self.values(x)):
            Finv = np.linalg.inv(F)
            S = np.einsum("bmn,bknp->bkmp", Finv, C)
            gl = -np.einsum("bkmm->bk", S)
            Hl = np.einsum("bkmp,blpm->bkl", S, S)
            np.add.at(g, idx, gl)
            rows = np.repeat(idx[:, :, None], idx.shape[1], axis=2)
            cols = np.repeat(idx[:, None, :], idx.shape[1], axis=1)
            np.add.at(H, (rows, cols), Hl)
        return g, H


def _regularised_cholesky(H):
    """Cholesky of H, nudging the diagonal when round-off breaks positivity."""
    n = len(H)
    scale = np.trace(H) / n
    for eps in (0.0, 1e-12, 1e-10, 1e-8):
        try:
            return np.linalg.cholesky(H + eps * scale * np.eye(n) if eps else H)
        except np.linalg.LinAlgError:
            continue
    raise np.linalg.LinAlgError("Hessian is not positive definite")


def _newton_step(H, g, A, r=None):
    """Newton direction; ``r = A x - b`` pulls drifted iterates back onto A x = b."""
    n = len(g)
    p = A.shape[0]
    try:
        if p == 0:
            L = _regularised_cholesky(H)
            dx = -np.linalg.solve(L.T, np.linalg.solve(L, g))
        else:
            K = np.block([[H, A.T], [A, np.zeros((p, p))]])
            rhs = np.zeros(p) if r is None else -r
            sol = np.linalg.solve(K, np.concatenate([-g, rhs]))
            dx = sol[:n]
    except np.linalg.LinAlgError as exc:
        raise SolverConditioningError(
            "singular Newton system",
            {"hessian_cond": float(np.linalg.cond(H)), "n": n}) from exc
    if not np.all(np.isfinite(dx)):
        raise SolverConditioningError("non-finite Newton step",
                                      {"hessian_cond": float(np.linalg.cond(H))})
    return dx


def _center(comp: _Compiled, c, x, t, max_steps, stop=None, eps=1e-10):
    """Equality-constrained Newton minimisation of t c^T x + barrier(x)."""
    steps = 0
    f = t * (c @ x) + comp.barrier(x)
    while steps < max_steps:
        g, H = comp.derivatives(x)
        g = g + t * c
        dx = _newton_step(H, g, comp.A, comp.A @ x - comp.b if comp.A.shape[0] else None)
        lam2 = -(g @ dx)
        steps += 1
        if lam2 / 2.0 <= eps:
            break
        s = min(1.0, 0.99 * comp.max_step(x, dx))
        if s <= 0:
            return x, steps, True
        while True:
            xn = x + s * dx
            fn = t * (c @ xn) + comp.barrier(xn)
            if fn <= f - 0.01 * s * lam2:
                break
            s *= 0.5
            if s < 1e-14:
                return x, steps, True
        stalled = f - fn <= 1e-14 * max(1.0, abs(f))
        x, f = xn, fn
        if stalled:
            break
        if stop is not None and stop(x):
            return x, steps, True
    return x, steps, False


def _phase_one(p: SdpProblem, comp: _Compiled, tol, max_iter):
    """Find a strictly feasible point by minimising a uniform slack s."""
    n = p.n
    if comp.A.shape[0]:
        x = np.linalg.lstsq(comp.A, comp.b, rcond=None)[0]
    else:
        x = np.zeros(n)
    worst = 0.0
    for F in comp.values(x):
        worst = max(worst, -np.min(np.linalg.eigvalsh(F)))
    if len(comp.h):
        worst = max(worst, np.max(comp.G @ x - comp.h))
    s0 = worst + 1.0
    blocks = []
    for blk in p.blocks:
        blocks.append(LmiBlock(blk.F0, np.append(blk.idx, n),
                               np.concatenate([blk.coeffs, np.eye(blk.dim)[None]])))
    lin = [(np.append(g_, -1.0), h_, "<=") for g_, h_ in zip(comp.G, comp.h)]
    lin += [(np.append(a_, 0.0), b_, "==") for a_, b_ in zip(comp.A, comp.b)]
    lin.append((np.append(np.zeros(n), -1.0), 1.0, "<="))
    # a wide box keeps the auxiliary problem bounded when the feasible set is not
    radius = 1e3 * (1.0 + np.max(np.abs(x), initial=0.0))
    for i in range(n):
        e = np.zeros(n + 1); e[i] = 1.0
        lin.append((e, x[i] + radius, "<="))
        lin.append((e.copy(), x[i] - radius, ">="))
    aux = SdpProblem(np.append(np.zeros(n), 1.0), blocks, lin, np.append(x, s0))
    sol = _barrier_solve(aux, tol, max_iter, stop=lambda z: z[-1] < 0.0)
    if sol.x[-1] < 0.0:
        return sol.x[:n]
    return None


def _initial_t(comp: _Compiled, c, x):
    g, H = comp.derivatives(x)
    try:
        if comp.A.shape[0]:
            dc = _newton_step(H, c, comp.A)
            dg = _newton_step(H, g, comp.A)
            num, den = c @ dg, -(c @ dc)
        else:
            Hc = np.linalg.solve(H, c)
            num, den = -(g @ Hc), c @ Hc
        t = num / den if den > 0 else 1.0
    except (SolverConditioningError, np.linalg.LinAlgError):
        t = 1.0
    return float(np.clip(t, 1e-3, 1e6)) if np.isfinite(t) else 1.0


def _barrier_solve(p: SdpProblem, tol, max_iter, stop=None, mu=20.0):
    G, h = p.inequalities()
    A, b = p.equalities()
    comp = _Compiled(p.blocks, G, h, A, b, p.n)
    x = np.asarray(p.x0, dtype=float).copy()
    t = _initial_t(comp, p.c, x)
    m = max(comp.barrier_dim, 1)
    history, total = [], 0
    status = "max_iter"
    while total < max_iter:
        try:
            x, steps, halted = _center(comp, p.c, x, t, max_iter - total, stop)
        except SolverConditioningError:
            if not history:
                raise
            # x is still strictly feasible; report how far we got
            status = "stalled"
            t /= mu
            break
        total += steps
        history.append(float(p.c @ x))
        if stop is not None and stop(x):
            status = "stopped"
            break
        if m / t <= tol * max(1.0, abs(history[-1])):
            status = "optimal"
            break
        t *= mu
    return SdpSolution(x, float(p.c @ x), status, {"gap": m / t, "t": t}, history, total)


def solve(p: SdpProblem, tol: float = 1e-7, max_iter: int = 200) -> SdpSolution:
    """Primal log-barrier interior-point method.

    ``max_iter`` bounds the total number of Newton steps. A phase-I search runs
    when no strictly feasible ``x0`` is supplied.
    """
    G, h = p.inequalities()
    A, b = p.equalities()
    comp = _Compiled(p.blocks, G, h, A, b, p.n)
    x0 = None if p.x0 is None else np.asarray(p.x0, dtype=float)
    if x0 is not None and A.shape[0] and np.max(np.abs(A @ x0 - b)) > 1e-9:
        x0 = None
    if x0 is None or not comp.strictly_feasible(x0):
        x0 = _phase_one(p, comp, tol, max_iter)
        if x0 is None:
            return SdpSolution(np.full(p.n, np.nan), np.nan, "infeasible", {})
    work = SdpProblem(p.c, p.blocks, p.linear, x0, p.names)
    sol = _barrier_solve(work, tol, max_iter)
    sol.residuals.update(_residuals(p, sol.x))
    return sol


def _residuals(p: SdpProblem, x):
    G, h = p.inequalities()
    A, b = p.equalities()
    eig = [float(np.min(np.linalg.eigvalsh(blk.value(x)))) for blk in p.blocks]
    return {
        "min_eig": min(eig) if eig else 0.0,
        "linear": float(np.max(G @ x - h, initial=0.0)),
        "equality": float(np.max(np.abs(A @ x - b), initial=0.0)),
    }


def verify_solution(p: SdpProblem, s: SdpSolution, tol: float = 1e-7,
                    reference_objective: float | None = None) -> VerificationReport:
    G, h = p.inequalities()
    A, b = p.equalities()
    x = np.asarray(s.x, dtype=float)
    eig = [float(np.min(np.linalg.eigvalsh(blk.value(x)))) for blk in p.blocks]
    lin = float(np.max(G @ x - h, initial=0.0))
    eq = float(np.max(np.abs(A @ x - b), initial=0.0))
    obj = float(p.c @ x)
    err = abs(obj - s.objective)
    gap = None if reference_objective is None else obj - reference_objective
    ok = (all(e >= -tol for e in eig) and lin <= tol and eq <= tol
          and err <= tol * max(1.0, abs(obj)))
    return VerificationReport(eig, lin, eq, obj, err, gap, ok)


# -- power allocation model ----------------------------------------------------------

@dataclass
class UserTerm:
    """One user's contribution: unit vectors (s - s_i)/d_i, the power variable
    driving each satellite's precision, and the affine precision model
    ``w_i = slope_i * P_var + offset_i`` (1/m^2, P in watts)."""

    unit_vecs: np.ndarray
    var: np.ndarray
    slope: np.ndarray
    offset: np.ndarray | None = None
    cross: Sequence[tuple[int, int, float]] = ()   # (row, variable, 1/(m^2 W))

    def coefficients(self) -> dict:
        """Variable -> per-row coefficient vector (1/(m^2 W))."""
        out = {}
        for r, (v, a) in enumerate(zip(self.var, self.slope)):
            out.setdefault(int(v), np.zeros(len(self.var)))[r] += a
        for r, v, a in self.cross:
            out.setdefault(int(v), np.zeros(len(self.var)))[r] += a
        return out


@dataclass
class PowerModel:
    """Linearised power-allocation scenario (interference frozen)."""

    users: list[UserTerm]
    var_sat: np.ndarray        # satellite (row) index of each power variable
    sat_budget: np.ndarray     # remaining per-satellite budget (W)
    p_beam: float
    start: np.ndarray | None = None   # strictly feasible powers (W)

    @property
    def n_power(self) -> int:
        return len(self.var_sat)


_SYM = [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)]


def assemble_power_sdp(model: PowerModel) -> SdpProblem:
    """Variables: scaled beam powers x = P / p_beam, then six entries per user
    of the epigraph matrix Y_j.  Each user contributes the LMI

        [[ tau_j M_j(x), E ], [ E^T, Y_j ]] >= 0,   E = [I_3; 0],

    whose Schur complement states tau_j Y_j >= position block of M_j^-1, so
    tr(tau_j Y_j) bounds CRLB_j^2 (in m^2).  Objective: mean of tau_j tr Y_j.
    tau_j is CRLB_j^2 / 3 at the start point, which keeps every block O(1).
    """
    nP = model.n_power
    J = len(model.users)
    if J == 0:
        raise AssemblyError("no users to allocate power for")
    xp = None
    if model.start is not None:
        xp = _start_powers(model, np.asarray(model.start, float) / model.p_beam)
    n = nP + 6 * J
    c = np.zeros(n)
    blocks = []
    E = np.zeros((4, 3))
    E[:3, :3] = np.eye(3)
    taus = np.ones(J)
    for j, ut in enumerate(model.users):
        if len(ut.var) == 0:
            raise AssemblyError(f"user {j} has no associated active beam")
        if xp is not None:
            tr = np.trace(_position_block(model, ut, xp))
            taus[j] = tr / 3.0 if np.isfinite(tr) and tr > 0 else 1.0
        tau = taus[j]
        h = np.hstack([ut.unit_vecs, np.ones((len(ut.var), 1))])
        offset = np.zeros(len(ut.var)) if ut.offset is None else ut.offset
        F0 = np.zeros((7, 7))
        F0[:4, :4] = tau * np.einsum("i,ia,ib->ab", offset, h, h)
        F0[:4, 4:] = E
        F0[4:, :4] = E.T
        terms = ut.coefficients()
        pvars = np.array(sorted(terms), dtype=int)
        coeffs = []
        for v in pvars:
            C = np.zeros((7, 7))
            C[:4, :4] = tau * np.einsum("i,ia,ib->ab", terms[v] * model.p_beam, h, h)
            coeffs.append(C)
        xbase = nP + 6 * j
        for k, (a, b) in enumerate(_SYM):
            C = np.zeros((7, 7))
            C[4 + a, 4 + b] = C[4 + b, 4 + a] = 1.0
            coeffs.append(C)
            if a == b:
                c[xbase + k] = tau / J
        blocks.append(LmiBlock(F0, np.concatenate([pvars, xbase + np.arange(6)]), coeffs))
    linear = []
    for v in range(nP):
        e = np.zeros(n); e[v] = 1.0
        linear.append((e, 0.0, ">="))
        linear.append((e.copy(), 1.0, "<="))
    for s in np.unique(model.var_sat):
        e = np.zeros(n)
        e[:nP] = (model.var_sat == s).astype(float)
        linear.append((e, float(model.sat_budget[s]) / model.p_beam, "<="))
    prob = SdpProblem(c, blocks, linear)
    if xp is not None:
        prob.x0 = _interior_start(model, xp, taus)
    return prob


def _start_powers(model: PowerModel, xp):
    xp = np.clip(xp, 1e-6, 1.0 - 1e-6) * (1.0 - 1e-3)
    for s in np.unique(model.var_sat):
        sel = model.var_sat == s
        cap = float(model.sat_budget[s]) / model.p_beam
        tot = xp[sel].sum()
        if tot >= cap:
            xp[sel] *= (1.0 - 1e-3) * cap / tot
    return xp


def _position_block(model: PowerModel, ut: UserTerm, xp):
    offset = np.zeros(len(ut.var)) if ut.offset is None else ut.offset
    w = offset.copy()
    for v, a in ut.coefficients().items():
        w += a * model.p_beam * xp[v]
    h = np.hstack([ut.unit_vecs, np.ones((len(ut.var), 1))])
    M = np.einsum("i,ia,ib->ab", w, h, h)
    try:
        return np.linalg.inv(M)[:3, :3]
    except np.linalg.LinAlgError:
        return np.full((3, 3), np.nan)


def _interior_start(model: PowerModel, xp, taus):
    nP, J = model.n_power, len(model.users)
    x = np.zeros(nP + 6 * J)
    x[:nP] = xp
    for j, ut in enumerate(model.users):
        P = _position_block(model, ut, xp)
        if not np.all(np.isfinite(P)):
            return None
        Y = P / taus[j]
        Y = Y + (0.05 * np.trace(Y) / 3.0 + 1e-9) * np.eye(3)
        x[nP + 6 * j: nP + 6 * j + 6] = [Y[a, b] for a, b in _SYM]
    return x
