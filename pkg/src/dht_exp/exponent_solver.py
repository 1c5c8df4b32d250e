"""Single-letter exponent functionals and the convex programs behind them.

The random-coding programs are minimised over the pair of conditional
channels (Q_{Y|UX}, Qbar_{Y|UX}) with Q_UX held fixed. They are solved in
epigraph form by a batched log-barrier Newton method: each max{...} term
becomes an auxiliary scalar with smooth convex constraints, and the
marginal-coupling constraints are linear equalities kept exact by feasible
Newton steps. Many problems sharing a support pattern are solved at once.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linprog

from .prob_core import (
    INF,
    HypothesisPair,
    ProbError,
    as_joint,
    chernoff_matrix,
    entropy,
    info_measures,
    lam_to_tau,
)

BARRIER_MU0 = 0.1
BARRIER_MU_END = 1e-12
BARRIER_SHRINK = 0.1


@dataclass(frozen=True, eq=False)
class RcProblem:
    """Arguments (R, R_b, Q_UX, tau) of the random-coding programs."""

    R: float
    R_b: float
    q_ux: np.ndarray
    tau: float
    pair: HypothesisPair

    def __post_init__(self):
        if self.R < 0 or self.R_b < 0:
            raise ProbError("rates must be nonnegative")
        if self.tau < 0 or not math.isfinite(self.tau):
            raise ProbError("tau must be finite and nonnegative")
        q = as_joint(self.q_ux)
        if q.shape[1] != self.pair.nx:
            raise ProbError("Q_UX does not match the source alphabet")
        object.__setattr__(self, "q_ux", q)


@dataclass
class SolveReport:
    value: float
    witness: tuple | None = None
    kkt_residual: float = 0.0
    method: str = "barrier"
    info: dict = field(default_factory=dict)


# --------------------------------------------------------------------------
# objective functionals evaluated at explicit joint triples

def _cond_div(q_uxy: np.ndarray, w_y_x: np.ndarray) -> float:
    """D(Q_{Y|UX} || W_{Y|X} | Q_UX) computed from the joint triple."""
    ref = q_uxy.sum(2, keepdims=True) * w_y_x[None]
    pos = q_uxy > 0
    if np.any(ref[pos] <= 0):
        return INF
    return float(max(0.0, np.sum(q_uxy[pos] * np.log(q_uxy[pos] / ref[pos]))))


def _pos(v: float) -> float:
    return v if v > 0 else 0.0


def _mul(a: float, b: float) -> float:
    # 0 * inf = 0 for zero weights
    return 0.0 if a == 0 else a * b


def brc_prime_objective(q, qb, R, R_b, tau, pair) -> float:
    """Objective of B_rc' at the pair (Q_UXY, Qbar_UXY); constraints not checked."""
    iq, iqb = info_measures(q), info_measures(qb)
    c = iq.h_x - R
    m = max(_pos(iq.i_u_y - R_b), iq.i_ux_y - c)
    mb = max(_pos(iqb.i_u_y - R_b), iqb.i_ux_y - c)
    return (_mul(tau, _cond_div(q, pair.p_y_x)) + _cond_div(qb, pair.pbar_y_x)
            + m + tau * mb)


def brc_doubleprime_objective(q, qb, R, R_b, tau, pair) -> float:
    """Objective of B_rc'' (open constraint not checked)."""
    iq, iqb = info_measures(q), info_measures(qb)
    k = iq.h_x - R - R_b
    return (_mul(tau, _cond_div(q, pair.p_y_x)) + _cond_div(qb, pair.pbar_y_x)
            + _pos(iq.i_x_y_given_u - k) + tau * _pos(iqb.i_x_y_given_u - k))


def arc_prime_objective(q, qb, rho, rho_c, lam, pair) -> float:
    """Objective of the CD-code form A_rc' written directly in lambda."""
    iq, iqb = info_measures(q), info_measures(qb)
    m = max(_pos(iq.i_u_y - rho_c), iq.i_ux_y - rho)
    mb = max(_pos(iqb.i_u_y - rho_c), iqb.i_ux_y - rho)
    return (_mul(1 - lam, _cond_div(q, pair.p_y_x)) + lam * _cond_div(qb, pair.pbar_y_x)
            + lam * m + (1 - lam) * mb)


def arc_doubleprime_objective(q, qb, rho, rho_c, lam, pair) -> float:
    iq, iqb = info_measures(q), info_measures(qb)
    return (_mul(1 - lam, _cond_div(q, pair.p_y_x)) + lam * _cond_div(qb, pair.pbar_y_x)
            + lam * _pos(iq.i_x_y_given_u - rho + rho_c)
            + (1 - lam) * _pos(iqb.i_x_y_given_u - rho + rho_c))


def bex_objective(q_xxt, R, tau, pair) -> float:
    """(tau+1) * (E_Q[d_tau(X,Xt)] + R - H(X|Xt)) for a coupling Q."""
    q = np.asarray(q_xxt, dtype=float)
    d = chernoff_matrix(tau, pair)
    pos = q > 0
    if np.any(np.isinf(d[pos])):
        return INF
    h_cond = entropy(q) - entropy(q.sum(0))
    return (tau + 1.0) * (float(np.sum(q[pos] * d[pos])) + R - h_cond)


# --------------------------------------------------------------------------
# structure of a batch: support pattern of Q_UX and channel masks

class _Structure:
    """Positive cells of Q_UX, channel supports and the parameter maps."""

    def __init__(self, pair: HypothesisPair, cells: np.ndarray, nu: int):
        nx, ny = pair.nx, pair.ny
        self.pair = pair
        self.ny = ny
        self.nu_full, self.nx = nu, nx
        self.cells = cells                      # flat indices into U x X
        us, xs = np.divmod(cells, nx)
        ulist = np.unique(us)
        self.u_of = np.searchsorted(ulist, us)  # compact cloud labels
        self.nu = ulist.size
        self.K = cells.size
        self.Uk = (self.u_of[None, :] == np.arange(self.nu)[:, None]).astype(float)
        self.logp = np.log(np.where(pair.p_y_x[xs] > 0, pair.p_y_x[xs], 1.0))
        self.logpb = np.log(np.where(pair.pbar_y_x[xs] > 0, pair.pbar_y_x[xs], 1.0))
        self.act = pair.p_y_x[xs] > 0
        self.actb = pair.pbar_y_x[xs] > 0
        self._maps()

    def _side_map(self, act):
        K, Y = act.shape
        cols = []
        v0 = np.zeros((K, Y))
        for k in range(K):
            ys = np.flatnonzero(act[k])
            last = ys[-1]
            v0[k, last] = 1.0
            for y in ys[:-1]:
                col = np.zeros((K, Y))
                col[k, y] = 1.0
                col[k, last] = -1.0
                cols.append(col)
        M = np.stack(cols, axis=-1) if cols else np.zeros((K, Y, 0))
        return M, v0

    def _maps(self):
        self.M, self.v0 = self._side_map(self.act)
        self.Mb, self.v0b = self._side_map(self.actb)
        self.n1 = self.M.shape[2]
        self.n2 = self.Mb.shape[2]

    def start(self):
        """Row-uniform channels on each side's support."""
        V = self.act / self.act.sum(1, keepdims=True)
        Vb = self.actb / self.actb.sum(1, keepdims=True)
        return V, Vb


def _coupling_rows(st: _Structure, kind: str, w: np.ndarray):
    """Equality rows A x = b (over p, pbar) for a batch of cell weights w (B,K)."""
    B = w.shape[0]
    Y = st.ny
    groups = [np.ones(st.K, bool)] if kind == "prime" else [st.u_of == u for u in range(st.nu)]
    rows, rhs = [], []
    for g in groups:
        # sums over y of these rows are implied by the row-sum parametrisation
        ys = [y for y in range(Y) if (st.act[g, y].any() or st.actb[g, y].any())]
        for y in ys[:-1]:
            a1 = np.einsum("bk,ki->bi", w[:, g], st.M[g, y, :])
            a2 = -np.einsum("bk,ki->bi", w[:, g], st.Mb[g, y, :])
            r = -(w[:, g] @ st.v0[g, y] - w[:, g] @ st.v0b[g, y])
            rows.append(np.concatenate([a1, a2], axis=1))
            rhs.append(r)
    if not rows:
        return np.zeros((B, 0, st.n1 + st.n2)), np.zeros((B, 0))
    return np.stack(rows, axis=1), np.stack(rhs, axis=1)


def _interior_start(st: _Structure, kind: str, w: np.ndarray):
    """Strictly feasible (p, pbar) per item, or None where the set is empty."""
    V, Vb = st.start()
    p0 = np.array([V[k, y] for k in range(st.K) for y in np.flatnonzero(st.act[k])[:-1]])
    pb0 = np.array([Vb[k, y] for k in range(st.K) for y in np.flatnonzero(st.actb[k])[:-1]])
    x0 = np.concatenate([p0, pb0])
    A, b = _coupling_rows(st, kind, w)
    B = w.shape[0]
    X = np.repeat(x0[None], B, axis=0)
    ok = np.ones(B, bool)
    if A.shape[1] == 0:
        return X, ok
    resid = np.abs(np.einsum("bmi,bi->bm", A, X) - b).max(axis=1)
    for i in np.flatnonzero(resid > 1e-12):
        xi = _lp_interior(st, A[i], b[i])
        if xi is None:
            ok[i] = False
        else:
            X[i] = xi
    return X, ok


def _lp_interior(st, A, b):
    """Maximise the smallest active channel entry subject to the couplings."""
    n = st.n1 + st.n2
    Mfull = np.zeros((st.K * st.ny * 2, n))
    Mfull[: st.K * st.ny, : st.n1] = st.M.reshape(-1, st.n1)
    Mfull[st.K * st.ny:, st.n1:] = st.Mb.reshape(-1, st.n2)
    v0 = np.concatenate([st.v0.ravel(), st.v0b.ravel()])
    act = np.concatenate([st.act.ravel(), st.actb.ravel()])
    # variables (x, s): maximise s with v0 + M x >= s on active entries
    G = np.hstack([-Mfull[act], np.ones((act.sum(), 1))])
    h = v0[act]
    res = linprog(np.r_[np.zeros(n), -1.0], A_ub=G, b_ub=h,
                  A_eq=np.hstack([A, np.zeros((A.shape[0], 1))]), b_eq=b,
                  bounds=[(None, None)] * n + [(None, 1.0)], method="highs")
    if res.status != 0 or res.x[-1] <= 1e-10:
        return None
    return res.x[:n]


# --------------------------------------------------------------------------
# batched barrier solver

def _side_terms(st, M, v0, act, logref, p, w, hess):
    """Values, gradients (w.r.t. params) and Hessians of one side's functionals."""
    B = p.shape[0]
    K, Y, n = M.shape
    Mf = M.reshape(K * Y, n)
    V = v0[None] + (p @ Mf.T).reshape(B, K, Y)
    V = np.where(act[None], V, 0.0)
    Vs = np.where(act[None], V, 1.0)
    logV = np.where(act[None], np.log(np.maximum(Vs, 1e-300)), 0.0)
    wk = w[:, :, None]
    wV = wk * V
    q = wV.sum(1)
    r = np.matmul(st.Uk[None], wV)                               # (B,U,Y)
    wu = w @ st.Uk.T
    logq = np.log(np.where(q > 0, q, 1.0))
    logr = np.log(np.where(r > 0, r, 1.0))
    lr_k = logr[:, st.u_of, :]                                   # (B,K,Y)
    D = np.sum(wV * (logV - logref[None]), axis=(1, 2))
    Iuxy = np.sum(wV * (logV - logq[:, None, :]), axis=(1, 2))
    Iuy = np.sum(r * (logr - np.log(wu)[:, :, None] - logq[:, None, :]), axis=(1, 2))
    flat = lambda g: np.where(act[None], g, 0.0).reshape(B, K * Y) @ Mf
    out = {
        "V": V, "D": D, "Iuxy": Iuxy, "Iuy": Iuy,
        "gD": flat(wk * (logV - logref[None] + 1.0)),
        "gUXY": flat(wk * (logV - logq[:, None, :])),
        "gUY": flat(wk * (lr_k - logq[:, None, :])),
        "gLog": flat(1.0 / Vs),
    }
    if hess:
        am = act.astype(float)
        diag = np.where(act[None], wk / Vs, 0.0).reshape(B, K * Y)
        qinv = np.where(q > 0, 1.0 / np.where(q > 0, q, 1.0), 0.0)  # (B,Y)
        rinv = np.where(r > 0, 1.0 / np.where(r > 0, r, 1.0), 0.0)  # (B,U,Y)
        same_u = (st.u_of[:, None] == st.u_of[None, :]).astype(float)
        # second derivatives of -H(Y) and H(Y|U)-type terms in the (k,y) coordinates:
        # entries couple (k,y) with (l,y) for the same y only
        wam = w[:, :, None] * am[None]                           # (B,K,Y)
        Fq = -(wam[:, :, None, :] * wam[:, None, :, :]) * qinv[:, None, None, :]   # (B,K,L,Y)
        rin_k = rinv[:, st.u_of, :]                              # (B,K,Y)
        Fr = (wam[:, :, None, :] * wam[:, None, :, :]) * same_u[None, :, :, None] * rin_k[:, :, None, :]
        eye_y = np.eye(Y)

        def proj_block(F):
            full = (F[:, :, :, :, None] * eye_y[None, None, None]).transpose(0, 1, 3, 2, 4)
            full = full.reshape(B, K * Y, K * Y)
            return Mf.T[None] @ full @ Mf

        def proj_diag(d):
            return (Mf.T[None] * d[:, None, :]) @ Mf

        hD = proj_diag(diag)
        out["hD"] = hD
        out["hUXY"] = hD + proj_block(Fq)
        out["hUY"] = proj_block(Fr + Fq)
        out["hLog"] = proj_diag(np.where(act[None], 1.0 / Vs ** 2, 0.0).reshape(B, K * Y))
    return out


class _BatchProblem:
    """Epigraph barrier formulation for a batch sharing structure and kind."""

    def __init__(self, st, kind, w, tau, rb, c):
        self.st, self.kind = st, kind
        self.w, self.tau, self.rb, self.c = w, tau, rb, c
        self.has_tb = bool(np.all(tau > 0))
        self.n1, self.n2 = st.n1, st.n2
        self.N = self.n1 + self.n2 + 1 + int(self.has_tb)
        A, b = _coupling_rows(st, kind, w)
        pad = np.zeros((A.shape[0], A.shape[1], self.N - A.shape[2]))
        self.A = np.concatenate([A, pad], axis=2)
        self.b = b

    def split(self, x):
        p = x[:, : self.n1]
        pb = x[:, self.n1: self.n1 + self.n2]
        t = x[:, self.n1 + self.n2]
        tb = x[:, self.n1 + self.n2 + 1] if self.has_tb else None
        return p, pb, t, tb

    def sides(self, x, hess):
        st = self.st
        p, pb, _, _ = self.split(x)
        a = _side_terms(st, st.M, st.v0, st.act, st.logp, p, self.w, hess)
        ab = _side_terms(st, st.Mb, st.v0b, st.actb, st.logpb, pb, self.w, hess)
        return a, ab

    def constraint_funcs(self, a, ab):
        """List of (side, G value, grad key combo) with s = t_side - G."""
        if self.kind == "prime":
            fs = [(0, a["Iuy"] - self.rb, (("gUY", 1.0),), (("hUY", 1.0),)),
                  (0, a["Iuxy"] - self.c, (("gUXY", 1.0),), (("hUXY", 1.0),))]
            if self.has_tb:
                fs += [(1, ab["Iuy"] - self.rb, (("gUY", 1.0),), (("hUY", 1.0),)),
                       (1, ab["Iuxy"] - self.c, (("gUXY", 1.0),), (("hUXY", 1.0),))]
        else:
            k = self.c - self.rb
            comb = (("gUXY", 1.0), ("gUY", -1.0))
            hcomb = (("hUXY", 1.0), ("hUY", -1.0))
            fs = [(0, a["Iuxy"] - a["Iuy"] - k, comb, hcomb)]
            if self.has_tb:
                fs += [(1, ab["Iuxy"] - ab["Iuy"] - k, comb, hcomb)]
        return fs

    def slacks(self, x, a, ab):
        _, _, t, tb = self.split(x)
        s = [t] + ([tb] if self.has_tb else [])
        for side, G, _, _ in self.constraint_funcs(a, ab):
            s.append((t if side == 0 else tb) - G)
        return np.stack(s, axis=1)

    def objective(self, x, a, ab):
        _, _, t, tb = self.split(x)
        f = self.tau * a["D"] + ab["D"] + t
        if self.has_tb:
            f = f + self.tau * tb
        return f

    def phi(self, x, mu):
        a, ab = self.sides(x, False)
        s = self.slacks(x, a, ab)
        V, Vb = a["V"], ab["V"]
        st = self.st
        vmin = np.minimum(np.where(st.act[None], V, 1.0).min(axis=(1, 2)),
                          np.where(st.actb[None], Vb, 1.0).min(axis=(1, 2)))
        feas = (s.min(axis=1) > 0) & (vmin > 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            bar = -np.sum(np.log(np.where(s > 0, s, 1.0)), axis=1)
            bar -= np.sum(np.where(st.act[None], np.log(np.where(V > 0, V, 1.0)), 0.0), axis=(1, 2))
            bar -= np.sum(np.where(st.actb[None], np.log(np.where(Vb > 0, Vb, 1.0)), 0.0), axis=(1, 2))
        val = self.objective(x, a, ab) + mu * bar
        return np.where(feas, val, np.inf)

    def grad_hess(self, x, mu):
        a, ab = self.sides(x, True)
        B = x.shape[0]
        N, n1, n2 = self.N, self.n1, self.n2
        sl1 = slice(0, n1)
        sl2 = slice(n1, n1 + n2)
        it, itb = n1 + n2, n1 + n2 + 1
        g = np.zeros((B, N))
        H = np.zeros((B, N, N))
        tau = self.tau
        g[:, sl1] += tau[:, None] * a["gD"] - mu * a["gLog"]
        g[:, sl2] += ab["gD"] - mu * ab["gLog"]
        H[:, sl1, sl1] += tau[:, None, None] * a["hD"] + mu * a["hLog"]
        H[:, sl2, sl2] += ab["hD"] + mu * ab["hLog"]
        g[:, it] += 1.0
        if self.has_tb:
            g[:, itb] += tau
        s_all = self.slacks(x, a, ab)
        # t >= 0 and tb >= 0
        for j, idx in enumerate([it] + ([itb] if self.has_tb else [])):
            s = s_all[:, j]
            g[:, idx] -= mu / s
            H[:, idx, idx] += mu / s ** 2
        off = 1 + int(self.has_tb)
        for j, (side, _, gk, hk) in enumerate(self.constraint_funcs(a, ab)):
            s = s_all[:, off + j]
            src = a if side == 0 else ab
            sl = sl1 if side == 0 else sl2
            tix = it if side == 0 else itb
            gG = sum(coef * src[key] for key, coef in gk)
            hG = sum(coef * src[key] for key, coef in hk)
            ds = np.zeros((B, N))
            ds[:, sl] = -gG
            ds[:, tix] = 1.0
            g -= (mu / s)[:, None] * ds
            H += (mu / s ** 2)[:, None, None] * ds[:, :, None] * ds[:, None, :]
            H[:, sl, sl] += (mu / s)[:, None, None] * hG
        return g, H, a, ab

    def newton_step(self, x, mu):
        g, H, _, _ = self.grad_hess(x, mu)
        B, N = g.shape
        m = self.A.shape[1]
        K = np.zeros((B, N + m, N + m))
        K[:, :N, :N] = H
        K[:, :N, N:] = np.transpose(self.A, (0, 2, 1))
        K[:, N:, :N] = self.A
        rhs = np.zeros((B, N + m))
        rhs[:, :N] = -g
        # keep the equality residual at zero (feasible start)
        rhs[:, N:] = self.b - np.matmul(self.A, x[:, :, None])[..., 0]
        try:
            sol = np.linalg.solve(K, rhs[..., None])[..., 0]
        except np.linalg.LinAlgError:
            sol = np.stack([np.linalg.lstsq(K[i], rhs[i], rcond=None)[0] for i in range(B)])
        dx = sol[:, :N]
        dec = -np.einsum("bi,bi->b", g, dx)
        return dx, dec, g


def _barrier_solve(prob: _BatchProblem, x0: np.ndarray):
    """Path-following barrier method; returns x and a duality-gap bound per item."""
    x = x0.copy()
    B = x.shape[0]
    mu = BARRIER_MU0
    n_ineq = prob.st.act.sum() + prob.st.actb.sum() + prob.slacks(x, *prob.sides(x, False)).shape[1]
    while True:
        final = mu <= BARRIER_MU_END * 1.0001
        tol = 1e-13 if final else 1e-9
        active = np.ones(B, bool)
        for _ in range(60 if final else 40):
            if not active.any():
                break
            idx = np.flatnonzero(active)
            sub = _subproblem(prob, idx)
            xs = x[idx]
            dx, dec, g = sub.newton_step(xs, mu)
            stop = ~(dec / 2 > tol) | ~np.isfinite(dec)
            phi0 = sub.phi(xs, mu)
            alpha = np.ones(idx.size)
            accepted = np.zeros(idx.size, bool)
            accepted[stop] = True
            slope = -dec
            for _ls in range(50):
                todo = ~accepted
                if not todo.any():
                    break
                ti = np.flatnonzero(todo)
                xn = xs[ti] + alpha[ti, None] * dx[ti]
                sub_t = _subproblem(sub, ti)
                ph = sub_t.phi(xn, mu)
                okk = ph <= phi0[ti] + 0.25 * alpha[ti] * slope[ti] + 1e-15 * np.abs(phi0[ti])
                good = ti[okk]
                xs[good] = xn[okk]
                accepted[good] = True
                alpha[ti[~okk]] *= 0.5
            failed = alpha < 2.0 ** -45
            x[idx] = xs
            still = ~stop & ~failed
            active[idx] = still
        if final:
            break
        mu = max(mu * BARRIER_SHRINK, BARRIER_MU_END)
    return x, n_ineq * mu


def _subproblem(prob: _BatchProblem, idx: np.ndarray) -> _BatchProblem:
    sub = object.__new__(_BatchProblem)
    sub.__dict__.update(prob.__dict__)
    sub.w, sub.tau, sub.rb, sub.c = prob.w[idx], prob.tau[idx], prob.rb[idx], prob.c[idx]
    sub.A, sub.b = prob.A[idx], prob.b[idx]
    return sub


def _witness(st: _Structure, w, V):
    q = np.zeros((st.nu_full * st.nx, st.ny))
    q[st.cells] = w[:, None] * V
    return q.reshape(st.nu_full, st.nx, st.ny)


def _structure_for(pair, q_ux) -> _Structure:
    q_ux = np.asarray(q_ux)
    cells = np.flatnonzero(np.asarray(q_ux).ravel() > 0)
    return _Structure(pair, cells, q_ux.shape[0])


def solve_rc_batch(pair: HypothesisPair, kind: str, q_ux, taus, rbs, R,
                   return_witness: bool = False):
    """Solve one of the relaxed random-coding programs for many items at once.

    ``q_ux`` is one joint (U, X) array or a stack (B, U, X); ``taus``, ``rbs``
    and ``R`` broadcast against the batch. ``kind`` is "prime" or
    "doubleprime" (the latter without its open constraint). Items are grouped
    by support pattern. Returns values, I_Q(U;Y) at the optimiser, gap bounds
    and optionally the witnesses.
    """
    q_ux = np.asarray(q_ux, dtype=float)
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    rbs = np.atleast_1d(np.asarray(rbs, dtype=float))
    Rs = np.atleast_1d(np.asarray(R, dtype=float))
    if q_ux.ndim == 2:
        B = np.broadcast_shapes(taus.shape, rbs.shape, Rs.shape)[0]
        q_all = np.broadcast_to(q_ux, (B,) + q_ux.shape)
    else:
        B = np.broadcast_shapes(taus.shape, rbs.shape, Rs.shape, q_ux.shape[:1])[0]
        q_all = np.broadcast_to(q_ux, (B,) + q_ux.shape[1:])
    taus, rbs, Rs = (np.broadcast_to(v, (B,)) for v in (taus, rbs, Rs))
    nu = q_all.shape[1]
    flat = q_all.reshape(B, -1)
    pattern = flat > 0
    vals = np.full(B, INF)
    iuy = np.zeros(B)
    gaps = np.zeros(B)
    wit = [None] * B
    keys = {}
    for i in range(B):
        keys.setdefault((pattern[i].tobytes(), bool(taus[i] == 0)), []).append(i)
    obj = brc_prime_objective if kind == "prime" else brc_doubleprime_objective
    for (_, _), members in sorted(keys.items()):
        sel = np.array(members)
        cells = np.flatnonzero(pattern[sel[0]])
        st = _Structure(pair, cells, nu)
        w = flat[sel][:, cells]
        hx = np.array([entropy(q_all[i].sum(0)) for i in sel])
        X0, ok = _interior_start(st, kind, w)
        sel, w, X0, hx = sel[ok], w[ok], X0[ok], hx[ok]
        if sel.size == 0:
            continue
        prob = _BatchProblem(st, kind, w, taus[sel], rbs[sel], hx - Rs[sel])
        # initial epigraph variables strictly above their constraints
        p, pb = X0[:, : st.n1], X0[:, st.n1:]
        a = _side_terms(st, st.M, st.v0, st.act, st.logp, p, w, False)
        ab = _side_terms(st, st.Mb, st.v0b, st.actb, st.logpb, pb, w, False)
        zero = np.zeros(sel.size)
        if kind == "prime":
            t0 = np.maximum.reduce([zero, a["Iuy"] - prob.rb, a["Iuxy"] - prob.c]) + 1.0
            tb0 = np.maximum.reduce([zero, ab["Iuy"] - prob.rb, ab["Iuxy"] - prob.c]) + 1.0
        else:
            k = prob.c - prob.rb
            t0 = np.maximum(0.0, a["Iuxy"] - a["Iuy"] - k) + 1.0
            tb0 = np.maximum(0.0, ab["Iuxy"] - ab["Iuy"] - k) + 1.0
        cols = [X0, t0[:, None]] + ([tb0[:, None]] if prob.has_tb else [])
        x, gap = _barrier_solve(prob, np.concatenate(cols, axis=1))
        a, ab = prob.sides(x, False)
        for j, i in enumerate(sel):
            q = _witness(st, w[j], a["V"][j])
            qb = _witness(st, w[j], ab["V"][j])
            vals[i] = obj(q, qb, Rs[i], rbs[i], taus[i], pair)
            iuy[i] = info_measures(q).i_u_y
            gaps[i] = gap
            if return_witness:
                wit[i] = (q, qb)
    out = {"value": vals, "i_u_y": iuy, "gap": gaps}
    if return_witness:
        out["witness"] = wit
    return out


def _report(out, i, method="barrier"):
    wit = out.get("witness", [None])[i] if "witness" in out else None
    return SolveReport(float(out["value"][i]), wit, float(out["gap"][i]), method,
                       {"i_u_y": float(out["i_u_y"][i])})


def solve_brc_prime(p: RcProblem) -> SolveReport:
    """B_rc': random-coding program with Q_Y = Qbar_Y."""
    out = solve_rc_batch(p.pair, "prime", p.q_ux, [p.tau], [p.R_b], p.R, return_witness=True)
    return _report(out, 0)


def solve_brc_doubleprime(p: RcProblem) -> SolveReport:
    """B_rc'': relaxed program, then the open constraint I_Q(U;Y) > R_b is checked.

    If the relaxed optimiser violates the constraint the value is +inf.
    """
    out = solve_rc_batch(p.pair, "doubleprime", p.q_ux, [p.tau], [p.R_b], p.R, return_witness=True)
    rep = _report(out, 0)
    rep.info["relaxed_value"] = rep.value
    if not rep.info["i_u_y"] > p.R_b:
        rep.value = INF
    return rep


def three_step(vp: np.ndarray, vpp_relaxed: np.ndarray, iuy: np.ndarray, rbs: np.ndarray) -> np.ndarray:
    """min{B_rc', B_rc''} with B_rc'' = +inf where the open constraint fails."""
    vpp = np.where(iuy > rbs, vpp_relaxed, INF)
    return np.minimum(vp, vpp)


def solve_brc(p: RcProblem) -> SolveReport:
    """B_rc = min{B_rc', B_rc''}; ties go to B_rc'."""
    a = solve_brc_prime(p)
    b = solve_brc_doubleprime(p)
    if b.value < a.value:
        b.info["branch"] = "doubleprime"
        return b
    a.info["branch"] = "prime"
    return a


# --------------------------------------------------------------------------
# expurgated exponent

def _sinkhorn(K, a, iters=20000, tol=1e-15):
    u = np.ones_like(a)
    v = np.ones_like(a)
    for _ in range(iters):
        Kv = K @ v
        if np.any(Kv <= 0):
            return None
        u = a / Kv
        KTu = K.T @ u
        if np.any(KTu <= 0):
            return None
        v = a / KTu
        Q = u[:, None] * K * v[None, :]
        if np.abs(Q.sum(1) - a).max() < tol:
            return Q
    return Q


def _ent_coupling(d, a, temp):
    dd = np.where(np.isinf(d), np.inf, d)
    K = np.exp(-(dd - np.nanmin(np.where(np.isinf(dd), np.nan, dd))) / temp)
    return _sinkhorn(K, a)


def solve_bex(R: float, q_x, tau: float, pair: HypothesisPair) -> SolveReport:
    """Expurgated exponent via entropic couplings.

    For fixed marginals, -H(X|Xt) differs from -H(X,Xt) by a constant, so the
    Lagrangian minimiser is Q ~ a_x b_xt exp(-d/(1+nu)). The multiplier nu of
    the constraint H(X|Xt) >= R is found by bisection.
    """
    q_x = np.asarray(q_x, dtype=float)
    hx = entropy(q_x)
    if R > hx + 1e-12:
        raise ProbError("expurgated branch needs R <= H(Q_X)")
    keep = q_x > 0
    a = q_x[keep] / q_x[keep].sum()
    d = chernoff_matrix(tau, pair)[np.ix_(keep, keep)]
    full = np.zeros((q_x.size, q_x.size))

    def embed(Q):
        out = full.copy()
        out[np.ix_(keep, keep)] = Q
        return out

    def hcond(Q):
        return entropy(Q) - entropy(a)

    prod = a[:, None] * a[None, :]
    if R >= hx - 1e-12:
        Q = prod
        return SolveReport(bex_objective(embed(Q), R, tau, pair), (embed(Q),), 0.0, "sinkhorn")
    Q0 = _ent_coupling(d, a, 1.0)
    if Q0 is None:
        return SolveReport(INF, None, 0.0, "sinkhorn")
    if hcond(Q0) >= R:
        Q = Q0
    else:
        lo, hi = 0.0, 1.0
        while True:
            Qh = _ent_coupling(d, a, 1.0 + hi)
            if Qh is not None and hcond(Qh) >= R:
                break
            lo, hi = hi, hi * 2.0
            if hi > 1e8:
                Qh = prod
                break
        Q = Qh
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            Qm = _ent_coupling(d, a, 1.0 + mid)
            if Qm is not None and hcond(Qm) >= R:
                hi, Q = mid, Qm
            else:
                lo = mid
            if hi - lo <= 1e-13 * max(1.0, hi):
                break
    return SolveReport(bex_objective(embed(Q), R, tau, pair), (embed(Q),), 0.0, "sinkhorn")


# --------------------------------------------------------------------------
# lambda-parameterised forms

@dataclass(frozen=True)
class ArcForms:
    a_rc_prime: float
    a_rc_doubleprime: float
    a_rc: float
    a_ex: float


def arc_forms(rho: float, rho_c: float, q_ux, lam: float, pair: HypothesisPair) -> ArcForms:
    """A_rc', A_rc'', A_rc and A_ex through A = lam * B with tau = (1-lam)/lam.

    The rates map as R = H(Q_X) - rho and R_b = rho_c.
    """
    if not 0.0 < lam <= 1.0:
        raise ProbError("lambda must lie in (0, 1]")
    q_ux = as_joint(q_ux)
    tau = lam_to_tau(lam)
    hx = entropy(q_ux.sum(0))
    R = hx - rho
    if R < 0:
        raise ProbError("rho exceeds H(Q_X)")
    p = RcProblem(R, rho_c, q_ux, tau, pair)
    bp = solve_brc_prime(p).value
    bpp = solve_brc_doubleprime(p).value
    bex = solve_bex(R, q_ux.sum(0), tau, pair).value if rho >= 0 else INF
    return ArcForms(lam * bp, lam * bpp, lam * min(bp, bpp), lam * bex)


# --------------------------------------------------------------------------
# grid oracles (binary observation alphabet)
#
# A point is described by, for each coupling group g (all cells for B_rc',
# one cloud for B_rc''), the shared value Q(Y=1 | g) and on each side the
# conditionals Q(Y=1 | u, x) of all but the last cell of the group; the last
# one follows from the coupling. Everything below goes through the explicit
# objective functions above and shares no code with the barrier solver.

def _hb(v):
    v = np.clip(v, 0.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        return -np.where(v > 0, v * np.log(v), 0.0) - np.where(v < 1, (1 - v) * np.log1p(-v), 0.0)


def _db(v, p):
    """Binary divergence d(v||p) with +inf on support violation."""
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(v > 0, v * (np.log(v) - np.log(p)), 0.0)
        b = np.where(v < 1, (1 - v) * (np.log1p(-v) - np.log1p(-p)), 0.0)
    out = a + b
    bad = ((v > 0) & (p <= 0)) | ((v < 1) & (p >= 1))
    return np.where(bad, np.inf, out)


def _group_options(wl, target, vals):
    """Grid conditionals of one group whose weighted mean equals ``target``."""
    k = wl.size
    if k == 1:
        free = np.zeros((1, 0))
    else:
        free = np.stack(np.meshgrid(*([vals] * (k - 1)), indexing="ij"), -1).reshape(-1, k - 1)
    last = (wl.sum() * target - free @ wl[:-1]) / wl[-1]
    ok = (last >= -1e-12) & (last <= 1 + 1e-12)
    return np.concatenate([free[ok], np.clip(last[ok], 0, 1)[:, None]], axis=1)


class _GridModel:
    def __init__(self, p: RcProblem, kind: str):
        pair = p.pair
        if pair.ny != 2:
            raise NotImplementedError("grid oracle supports binary Y only")
        self.p, self.kind = p, kind
        self.st = _structure_for(pair, p.q_ux)
        self.w = p.q_ux.ravel()[self.st.cells]
        xs = self.st.cells % pair.nx
        self.pk = (pair.p_y_x[xs, 1], pair.pbar_y_x[xs, 1])
        u_of = self.st.u_of
        self.groups = ([np.arange(self.st.K)] if kind == "prime"
                       else [np.flatnonzero(u_of == u) for u in range(self.st.nu)])
        self.wu = np.array([self.w[u_of == u].sum() for u in range(self.st.nu)])

    def triple(self, v):
        """Joint triple from the per-cell conditionals Q(Y=1|u,x)."""
        V = np.stack([1 - v, v], axis=1)
        return _witness(self.st, self.w, V)

    def value(self, v, vb):
        p = self.p
        q, qb = self.triple(v), self.triple(vb)
        if self.kind == "prime":
            return brc_prime_objective(q, qb, p.R, p.R_b, p.tau, p.pair)
        return brc_doubleprime_objective(q, qb, p.R, p.R_b, p.tau, p.pair)

    def i_u_y(self, v):
        return info_measures(self.triple(v)).i_u_y

    def unpack(self, z):
        """Map (targets, free coords side 1, free coords side 2) to conditionals."""
        G = len(self.groups)
        tg = z[:G]
        out, pos = [], G
        for _side in range(2):
            v = np.zeros(self.st.K)
            for g, idx in enumerate(self.groups):
                nf = idx.size - 1
                f = z[pos: pos + nf]
                pos += nf
                wl = self.w[idx]
                v[idx[:-1]] = f
                v[idx[-1]] = (wl.sum() * tg[g] - f @ wl[:-1]) / wl[-1]
            out.append(v)
        return out

    def pack(self, tg, v, vb):
        parts = [np.asarray(tg, float)]
        for vv in (v, vb):
            parts += [vv[idx[:-1]] for idx in self.groups]
        return np.concatenate(parts)


def _side_objective(gm: _GridModel, side: int, V):
    """Per-side part of the objective for candidate conditionals V (n, K)."""
    p, w, u_of = gm.p, gm.w, gm.st.u_of
    a_div, b_max = (p.tau, 1.0) if side == 0 else (1.0, p.tau)
    div = np.sum(w * _db(V, gm.pk[side]), axis=1)
    q = V @ w
    ru = np.stack([(V[:, u_of == u] @ w[u_of == u]) / gm.wu[u] for u in range(gm.wu.size)], 1)
    h_y_u = np.sum(gm.wu * _hb(ru), axis=1)
    h_y_ux = np.sum(w * _hb(V), axis=1)
    c = entropy(p.q_ux.sum(0)) - p.R
    if gm.kind == "prime":
        pen = np.maximum(np.maximum(_hb(q) - h_y_u - p.R_b, 0.0), _hb(q) - h_y_ux - c)
    else:
        pen = np.maximum(h_y_u - h_y_ux - (c - p.R_b), 0.0)
    return np.where(a_div == 0, 0.0, a_div * div) + b_max * pen


def _grid_scan(gm: _GridModel, m: int, constrained: bool):
    """Exhaustive scan; returns (value, v, vb) of the best grid point."""
    vals = np.arange(m + 1) / m
    G = len(gm.groups)
    best = (INF, None, None)
    for tix in np.stack(np.meshgrid(*([np.arange(m + 1)] * G), indexing="ij"), -1).reshape(-1, G):
        tg = vals[tix]
        opts = [_group_options(gm.w[idx], tg[g], vals) for g, idx in enumerate(gm.groups)]
        if any(o.shape[0] == 0 for o in opts):
            continue
        # product of per-group options -> full conditional vectors
        cand = opts[0]
        for o in opts[1:]:
            cand = np.concatenate([np.repeat(cand, o.shape[0], 0), np.tile(o, (cand.shape[0], 1))], 1)
        V = np.zeros((cand.shape[0], gm.st.K))
        V[:, np.concatenate(gm.groups)] = cand
        if constrained and gm.kind == "doubleprime":
            # I(U;Y) depends on the shared targets only
            if not gm.i_u_y(V[0]) > gm.p.R_b:
                continue
        s0 = _side_objective(gm, 0, V)
        s1 = _side_objective(gm, 1, V)
        i0, i1 = int(np.argmin(s0)), int(np.argmin(s1))
        val = float(s0[i0] + s1[i1])
        if val < best[0]:
            best = (val, V[i0].copy(), V[i1].copy())
    return best


def _polish(gm: _GridModel, v, vb, constrained: bool):
    """Nelder-Mead from a grid point on the explicit objective."""
    from scipy.optimize import minimize

    st_groups = gm.groups
    tg = np.array([(v[idx] @ gm.w[idx]) / gm.w[idx].sum() for idx in st_groups])

    def f(z):
        if np.any(z < 0) or np.any(z > 1):
            return 1e6
        a, b = gm.unpack(z)
        if np.any(a < 0) or np.any(a > 1) or np.any(b < 0) or np.any(b > 1):
            return 1e6
        if constrained and gm.kind == "doubleprime" and not gm.i_u_y(a) > gm.p.R_b:
            return 1e6
        val = gm.value(a, b)
        return val if math.isfinite(val) else 1e6

    z0 = gm.pack(tg, v, vb)
    res = minimize(f, z0, method="Nelder-Mead",
                   options={"xatol": 1e-10, "fatol": 1e-13, "maxiter": 20000, "maxfev": 40000,
                            "adaptive": True})
    a, b = gm.unpack(res.x)
    return float(res.fun), a, b


def _grid_solve(p: RcProblem, kind: str, m: int, constrained: bool, refine: bool) -> SolveReport:
    gm = _GridModel(p, kind)
    val, v, vb = _grid_scan(gm, m, constrained)
    info = {"grid_value": val}
    if v is None:
        return SolveReport(INF, None, 0.0, "grid", info)
    # re-evaluate through the explicit objective at the grid point
    val = gm.value(v, vb)
    info["grid_value"] = val
    method = "grid"
    if refine:
        pv, pa, pb = _polish(gm, v, vb, constrained)
        method = "grid_refined"
        if pv < val:
            val, v, vb = pv, pa, pb
    info["i_u_y"] = gm.i_u_y(v)
    return SolveReport(float(val), (gm.triple(v), gm.triple(vb)), 0.0, method, info)


def solve_brc_prime_grid(p: RcProblem, m: int = 24, refine: bool = False) -> SolveReport:
    """Exhaustive grid for B_rc' on binary Y (Q_Y(1) and conditionals on the 1/m mesh).

    With ``refine`` the best grid point is polished by Nelder-Mead.
    """
    return _grid_solve(p, "prime", m, False, refine)


def solve_brc_doubleprime_grid(p: RcProblem, m: int = 24, constrained: bool = True,
                               refine: bool = False) -> SolveReport:
    """Exhaustive grid for B_rc'' on binary Y.

    Q(Y=1|U=u) runs over the mesh; within each cloud all but one conditional
    are on the mesh. With ``constrained`` only points with I_Q(U;Y) > R_b count.
    """
    return _grid_solve(p, "doubleprime", m, constrained, refine)
