"""Achievable and converse bounds on the DHT reliability function.

The achievable bound needs, for every candidate input type Q_X and every
tau on the grid, the capped exponent min{(tau+1) d_tau(Q_X), B(R, Q_X, tau)}.
The random-coding part of B is expensive, so the outer min over Q_X and sup
over tau are resolved lazily: each (Q_X, tau) cell starts with the bracket
[min{cap, B_ex}, cap] and is only solved exactly when the bracket can still
change the result. The final numbers are those of the exhaustive search.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from .exponent_solver import solve_bex, solve_rc_batch, three_step
from .ordinary_ht import d2_primal, default_tau_grid
from .prob_core import (
    INF,
    HypothesisPair,
    ProbError,
    as_pmf,
    chernoff_diag,
    conditional_kl,
    entropy,
    kl,
    simplex_grid,
)

RATE_TOL = 1e-12
BALL_TOL = 1e-12
RB_ITERS = 60
RB_XTOL = 1e-13
RB_VTOL = 1e-10


@dataclass(frozen=True)
class OperatingPoint:
    R: float
    E1: float

    def __post_init__(self):
        if self.R < 0 or self.E1 < 0:
            raise ProbError("rate and type-1 exponent must be nonnegative")


@dataclass(frozen=True)
class SearchConfig:
    """Search grids for the achievable bound.

    ``scheme`` selects the full bound, pure binning (|U| = 1 with
    R_b = H(Q_X) - R) or quantisation only (R_b = 0, I(U;X) <= R).
    ``rb_search`` is "crossing" (continuous search for the balance point of
    B_rc' and B_rc'') or "grid" (``rb_grid_size`` linear points).
    """

    qx_resolution: int | None = None
    u_cardinality: int | None = None
    u_resolution: int = 8
    rb_grid_size: int = 17
    rb_search: str = "crossing"
    tau_max: float = 64.0
    tau_points: int = 21
    symmetry_reduction: bool | None = None
    restrict_qx_ball: bool = True
    include_expurgated: bool = True
    scheme: str = "full"

    def __post_init__(self):
        if self.scheme not in ("full", "binning", "quantization"):
            raise ProbError(f"unknown scheme {self.scheme!r}")
        if self.rb_search not in ("crossing", "grid"):
            raise ProbError(f"unknown R_b search {self.rb_search!r}")
        if self.u_cardinality is not None and self.u_cardinality < 1:
            raise ProbError("u_cardinality must be >= 1")
        for name in ("u_resolution", "rb_grid_size", "tau_points"):
            if getattr(self, name) < 1:
                raise ProbError(f"{name} must be positive")
        if self.qx_resolution is not None and self.qx_resolution < 1:
            raise ProbError("qx_resolution must be positive")
        if not self.tau_max > 0:
            raise ProbError("tau_max must be positive")

    def qx_res(self, nx: int) -> int:
        if self.qx_resolution is not None:
            return self.qx_resolution
        return {1: 1, 2: 64, 3: 24}.get(nx, 12)

    def u_card(self, nx: int) -> int:
        return self.u_cardinality if self.u_cardinality is not None else nx + 1

    def taus(self) -> np.ndarray:
        return default_tau_grid(self.tau_max, self.tau_points)

    def doubled(self, nx: int) -> "SearchConfig":
        """The same search with every grid twice as dense."""
        return replace(self, qx_resolution=2 * self.qx_res(nx), u_resolution=2 * self.u_resolution,
                       rb_grid_size=2 * self.rb_grid_size - 1, tau_points=2 * self.tau_points - 1)


# --------------------------------------------------------------------------
# symmetry

def automorphisms(pair: HypothesisPair, tol: float = 1e-12) -> list[tuple[tuple, tuple]]:
    """Pairs (sigma on X, pi on Y) leaving both joint laws invariant."""
    nx, ny = pair.nx, pair.ny
    if nx > 6 or ny > 6:
        return [(tuple(range(nx)), tuple(range(ny)))]
    out = []
    for s in itertools.permutations(range(nx)):
        for p in itertools.permutations(range(ny)):
            ok = all(np.abs(m[np.ix_(s, p)] - m).max() <= tol for m in (pair.p_xy, pair.pbar_xy))
            if ok:
                out.append((s, p))
    return out


def _x_symmetries(pair):
    return sorted({s for s, _ in automorphisms(pair)})


def _symmetric_instance(pair) -> bool:
    return len(_x_symmetries(pair)) > 1


# --------------------------------------------------------------------------
# candidate sets

def qx_candidates(pair: HypothesisPair, cfg: SearchConfig, e1_max: float) -> np.ndarray:
    """Input types searched by the outer minimisation.

    Grid points plus P_X, restricted to supp(Pbar_X) and (optionally) to the
    ball D(Q_X||P_X) <= e1_max. With symmetry reduction one representative
    per orbit of the instance's symmetries is kept.
    """
    px, pbx = pair.p_x, pair.pbar_x
    g = simplex_grid(pair.nx, cfg.qx_res(pair.nx))
    g = np.vstack([g, px[None]])
    keep = []
    for q in g:
        dp = kl(q, px)
        if not math.isfinite(dp) or not math.isfinite(kl(q, pbx)):
            continue
        if cfg.restrict_qx_ball and dp > e1_max + BALL_TOL:
            continue
        keep.append(q)
    keep = np.array(keep).reshape(-1, pair.nx)
    sym = cfg.symmetry_reduction if cfg.symmetry_reduction is not None else _symmetric_instance(pair)
    if sym:
        perms = _x_symmetries(pair)
        reps = {}
        for q in keep:
            key = max(tuple(np.round(q[list(s)], 12)) for s in perms)
            reps.setdefault(key, q)
        keep = np.array(list(reps.values())).reshape(-1, pair.nx)
    # drop duplicates (P_X may already be a grid point)
    _, idx = np.unique(np.round(keep, 12), axis=0, return_index=True)
    return keep[np.sort(idx)]


def u_candidates(pair: HypothesisPair, cfg: SearchConfig) -> list[np.ndarray]:
    """Test channels Q_{U|X} as (|X|, |U|) row-stochastic arrays.

    Channels equal up to a relabelling of U are kept once, and all channels
    with U independent of X collapse to the constant one (|U| = 1).
    """
    nx = pair.nx
    const = np.ones((nx, 1))
    if cfg.scheme == "binning":
        return [const]
    nu = cfg.u_card(nx)
    rows = simplex_grid(nu, cfg.u_resolution)
    sym = cfg.symmetry_reduction if cfg.symmetry_reduction is not None else _symmetric_instance(pair)
    sigmas = [s for s in _x_symmetries(pair) if s != tuple(range(nx))] if sym else []
    out = {}
    if sigmas:
        sigma = sigmas[0]
        # symmetric channels: Q(u | sigma x) = Q(nu-1-u | x)
        orbits, seen = [], set()
        for x in range(nx):
            if x not in seen:
                orbits.append(x)
                seen.update({x, sigma[x]})
        choices = []
        for x in orbits:
            if sigma[x] == x:
                choices.append([r for r in rows if np.allclose(r, r[::-1])])
            else:
                choices.append(list(rows))
        combos = itertools.product(*choices)

        def build(c):
            W = np.zeros((nx, nu))
            for x, r in zip(orbits, c):
                W[x] = r
                W[sigma[x]] = r[::-1]
            return W
    else:
        combos = itertools.product(*([list(rows)] * nx))

        def build(c):
            return np.array(c, dtype=float)

    out[_canon(const)] = const
    for c in combos:
        W = build(c)
        W = W[:, W.sum(0) > 0]
        if np.allclose(W, W[:1]):
            continue  # U independent of X
        out.setdefault(_canon(W), W)
    return list(out.values())


def _canon(W):
    cols = sorted(tuple(np.round(c, 12)) for c in W.T)
    return tuple(cols)


# --------------------------------------------------------------------------
# the capped exponent engine

class BoundEngine:
    """Evaluates min{(tau+1) d_tau(Q_X), B(R, Q_X, tau)} with caching.

    One engine serves one (pair, cfg, R). ``cap=False`` requests the full
    value of B without early stopping at the cap.
    """

    def __init__(self, pair: HypothesisPair, R: float, cfg: SearchConfig | None = None):
        if R < 0:
            raise ProbError("rate must be nonnegative")
        self.pair, self.R = pair, float(R)
        self.cfg = cfg or SearchConfig()
        self.ucands = u_candidates(pair, self.cfg)
        self._cache: dict = {}
        self._bex: dict = {}
        self.n_rc_items = 0

    @staticmethod
    def _key(qx, tau):
        return (tuple(np.round(np.asarray(qx, float), 15)), float(tau))

    def cap(self, qx, tau) -> float:
        return (tau + 1.0) * chernoff_diag(qx, tau, self.pair) if tau > 0 else 0.0

    def b_ex(self, qx, tau) -> float:
        if not self.cfg.include_expurgated or self.cfg.scheme != "full":
            return -INF
        k = self._key(qx, tau)
        if k not in self._bex:
            self._bex[k] = solve_bex(min(self.R, entropy(qx)), qx, tau, self.pair).value
        return self._bex[k]

    def no_binning(self, qx) -> bool:
        # a bin holds at most one codeword: the detector sees x^n
        return entropy(qx) - self.R <= RATE_TOL

    def bracket(self, qx, tau):
        """(lower, upper, exact) for the capped value without solving the rc programs."""
        k = self._key(qx, tau)
        if k in self._cache:
            v = self._cache[k]
            return v, v, True
        cap = self.cap(qx, tau)
        if tau == 0 or self.no_binning(qx):
            return cap, cap, True
        bex = self.b_ex(qx, tau)
        if bex >= cap:
            return cap, cap, True
        return max(0.0, bex), cap, False

    def capped(self, items: Sequence[tuple[np.ndarray, float]]) -> np.ndarray:
        """Exact capped values for a list of (Q_X, tau)."""
        out = np.empty(len(items))
        todo = []
        for i, (qx, tau) in enumerate(items):
            lo, hi, ex = self.bracket(qx, tau)
            if ex:
                out[i] = lo
            else:
                todo.append(i)
        if todo:
            caps = np.array([self.cap(*items[i]) for i in todo])
            rc = self.rc_max([items[i] for i in todo], caps)
            for j, i in enumerate(todo):
                qx, tau = items[i]
                v = min(caps[j], max(rc[j], self.b_ex(qx, tau)))
                self._cache[self._key(qx, tau)] = v
                out[i] = v
        return out

    def b_value(self, qx, tau) -> float:
        """Uncapped B(R, Q_X, tau)."""
        if self.no_binning(qx):
            return INF
        rc = self.rc_max([(qx, tau)], np.array([INF]))[0]
        return float(max(rc, self.b_ex(qx, tau)))

    # -- random-coding branch ------------------------------------------------

    def _pairs(self, items):
        """Expand items into (item, Q_UX, R_b interval) pairs."""
        R = self.R
        rows = []
        for i, (qx, tau) in enumerate(items):
            qx = np.asarray(qx, float)
            hx = entropy(qx)
            for W in self.ucands:
                q_ux = (W * qx[:, None]).T          # (U, X)
                hu = entropy(q_ux.sum(1))
                iux = hu + hx - entropy(q_ux)
                if self.cfg.scheme == "binning":
                    lo = hi = hx - R
                elif self.cfg.scheme == "quantization":
                    if iux > R + RATE_TOL:
                        continue
                    lo = hi = 0.0
                else:
                    lo = max(iux - R, 0.0)
                    hi = max(hu, lo)
                rows.append((i, q_ux, float(tau), lo, hi))
        return rows

    def _eval(self, q, taus, rbs):
        self.n_rc_items += len(taus)
        vp = solve_rc_batch(self.pair, "prime", q, taus, rbs, self.R)["value"]
        out = solve_rc_batch(self.pair, "doubleprime", q, taus, rbs, self.R)
        vpp = out["value"]
        g = three_step(vp, vpp, out["i_u_y"], rbs)
        with np.errstate(invalid="ignore"):
            h = vp - vpp
        h = np.where(np.isnan(h), 0.0, h)
        return g, h, vp, vpp

    def rc_max(self, items, caps) -> np.ndarray:
        """max over test channels and R_b of B_rc, stopping early at the caps."""
        rows = self._pairs(items)
        best = np.full(len(items), -INF)
        if not rows:
            return best
        it = np.array([r[0] for r in rows])
        Q = np.stack([self._pad(r[1]) for r in rows])
        T = np.array([r[2] for r in rows])
        lo = np.array([r[3] for r in rows])
        hi = np.array([r[4] for r in rows])
        alive = np.ones(len(rows), bool)

        def record(idx, g):
            np.maximum.at(best, it[idx], g)
            done = best >= caps
            alive[np.isin(it, np.flatnonzero(done))] = False

        if self.cfg.rb_search == "grid":
            m = self.cfg.rb_grid_size
            for j in range(m):
                idx = np.flatnonzero(alive)
                if idx.size == 0:
                    break
                frac = j / (m - 1) if m > 1 else 0.0
                r = lo[idx] + frac * (hi[idx] - lo[idx])
                record(idx, self._eval(Q[idx], T[idx], r)[0])
            return best

        # B_rc' is nonincreasing and B_rc'' nondecreasing in R_b, so on a
        # bracket [a, b] the value min{B_rc', B_rc''} is at most
        # min{B_rc'(a), B_rc''(b)}. A row is finished once that bound cannot
        # improve its item's best value.
        n = len(rows)
        a, b = lo.copy(), hi.copy()
        ha, hb = np.full(n, np.nan), np.full(n, np.nan)
        pa, pb = np.full(n, INF), np.full(n, INF)
        idx = np.flatnonzero(alive)
        g, h, vp, vpp = self._eval(Q[idx], T[idx], lo[idx])
        record(idx, g)
        ha[idx], pa[idx] = h, vp
        act = alive & (ha > 0) & (hi > lo) & (pa > best[it] + RB_VTOL)
        idx = np.flatnonzero(act)
        if idx.size:
            g, h, vp, vpp = self._eval(Q[idx], T[idx], hi[idx])
            record(idx, g)
            hb[idx], pb[idx] = h, vpp
        act &= hb < 0
        side = np.zeros(n, int)
        for _ in range(RB_ITERS):
            ub = np.minimum(pa, pb)
            act &= alive & (ub > best[it] + RB_VTOL)
            idx = np.flatnonzero(act)
            if idx.size == 0:
                break
            fa, fb = ha[idx], hb[idx]
            with np.errstate(invalid="ignore", divide="ignore"):
                c = a[idx] + fa * (b[idx] - a[idx]) / (fa - fb)
            mid = 0.5 * (a[idx] + b[idx])
            c = np.where(np.isfinite(c) & (c > a[idx]) & (c < b[idx]), c, mid)
            g, hc, vp, vpp = self._eval(Q[idx], T[idx], c)
            record(idx, g)
            pos, neg = hc > 0, hc < 0
            ip, ineg = idx[pos], idx[neg]
            a[ip], ha[ip], pa[ip] = c[pos], hc[pos], vp[pos]
            hb[ip] = np.where(side[ip] == 1, hb[ip] / 2, hb[ip])
            side[ip] = 1
            b[ineg], hb[ineg], pb[ineg] = c[neg], hc[neg], vpp[neg]
            ha[ineg] = np.where(side[ineg] == -1, ha[ineg] / 2, ha[ineg])
            side[ineg] = -1
            conv = (~pos & ~neg) | (b[idx] - a[idx] <= RB_XTOL * np.maximum(1.0, b[idx]))
            act[idx[conv]] = False
        return best

    def _pad(self, q_ux):
        nu = max(W.shape[1] for W in self.ucands)
        out = np.zeros((nu, q_ux.shape[1]))
        out[: q_ux.shape[0]] = q_ux
        return out


# --------------------------------------------------------------------------
# lazy min over Q_X of sup over tau

@dataclass
class _Query:
    base: np.ndarray        # per candidate constant term
    slope: np.ndarray       # per candidate multiplier of -tau
    allowed: np.ndarray     # per candidate mask


def _min_sup(engine: BoundEngine, qxs: np.ndarray, taus: np.ndarray, queries: list[_Query],
             refine_per_round: int = 2):
    """For each query: min over allowed q of base[q] + max_tau(-tau*slope[q] + C[q, tau]).

    C is the capped exponent; cells are solved only when needed. Returns
    (values, argmin q, argmax tau) per query.
    """
    nq, nt = len(qxs), len(taus)
    lo = np.zeros((nq, nt))
    hi = np.zeros((nq, nt))
    exact = np.zeros((nq, nt), bool)
    for q in range(nq):
        if not any(Q.allowed[q] for Q in queries):
            continue
        for t, tau in enumerate(taus):
            lo[q, t], hi[q, t], exact[q, t] = engine.bracket(qxs[q], tau)
    while True:
        need = set()
        for Q in queries:
            idx = np.flatnonzero(Q.allowed)
            if idx.size == 0:
                continue
            off = Q.base[idx, None] - taus[None] * Q.slope[idx, None]
            glo = off + lo[idx]
            ghi = off + hi[idx]
            Flo = glo.max(1)
            Fhi = ghi.max(1)
            m = Fhi.min()
            for j, q in enumerate(idx):
                if Flo[j] >= m or Flo[j] >= Fhi[j]:
                    continue
                cand = np.flatnonzero(~exact[q] & (ghi[j] > Flo[j]))
                order = cand[np.argsort(-ghi[j, cand], kind="stable")]
                need.update((int(q), int(t)) for t in order[:refine_per_round])
        if not need:
            break
        cells = sorted(need)
        vals = engine.capped([(qxs[q], taus[t]) for q, t in cells])
        for (q, t), v in zip(cells, vals):
            lo[q, t] = hi[q, t] = v
            exact[q, t] = True
    res, arg_q, arg_t = [], [], []
    for Q in queries:
        idx = np.flatnonzero(Q.allowed)
        if idx.size == 0:
            res.append(INF)
            arg_q.append(-1)
            arg_t.append(-1)
            continue
        g = Q.base[idx, None] - taus[None] * Q.slope[idx, None] + hi[idx]
        F = g.max(1)
        j = int(np.argmin(F))
        res.append(float(F[j]))
        arg_q.append(int(idx[j]))
        arg_t.append(int(np.argmax(g[j])))
    return np.array(res), arg_q, arg_t


# --------------------------------------------------------------------------
# public bounds

@dataclass
class BoundReport:
    value: float
    qx: np.ndarray | None = None
    tau: float | None = None
    info: dict = field(default_factory=dict)


def b_combined(R: float, q_x, tau: float, cfg: SearchConfig | None = None,
               pair: HypothesisPair | None = None, engine: BoundEngine | None = None) -> float:
    """B(R, Q_X, tau): the larger of the expurgated and best random-coding exponents.

    Returns +inf when H(Q_X) <= R (no binning is needed at this type).
    """
    if engine is None:
        if pair is None:
            raise ProbError("a hypothesis pair is required")
        engine = BoundEngine(pair, R, cfg)
    return engine.b_value(as_pmf(q_x), float(tau))


def e2_curve(R: float, e1_values: Sequence[float], pair: HypothesisPair,
             cfg: SearchConfig | None = None, engine: BoundEngine | None = None) -> list[BoundReport]:
    """Achievable E_2 at one rate for several type-1 exponents."""
    cfg = cfg or SearchConfig()
    e1 = np.asarray(e1_values, dtype=float)
    if np.any(e1 < 0):
        raise ProbError("type-1 exponents must be nonnegative")
    engine = engine or BoundEngine(pair, R, cfg)
    qxs = qx_candidates(pair, cfg, float(e1.max()) if e1.size else 0.0)
    taus = cfg.taus()
    dp = np.array([kl(q, pair.p_x) for q in qxs])
    db = np.array([kl(q, pair.pbar_x) for q in qxs])
    queries = []
    for E1 in e1:
        allowed = dp <= E1 + BALL_TOL if cfg.restrict_qx_ball else np.isfinite(dp)
        queries.append(_Query(db, E1 - dp, allowed))
    vals, aq, at = _min_sup(engine, qxs, taus, queries)
    out = []
    for v, q, t in zip(vals, aq, at):
        out.append(BoundReport(float(v), qxs[q] if q >= 0 else None,
                               float(taus[t]) if t >= 0 else None,
                               {"n_qx": int(len(qxs)), "rc_items": engine.n_rc_items}))
    return out


def e2_lower(op: OperatingPoint, pair: HypothesisPair, cfg: SearchConfig | None = None,
             engine: BoundEngine | None = None) -> BoundReport:
    """Achievable type-2 exponent at (R, E1) with its minimising Q_X and maximising tau."""
    return e2_curve(op.R, [op.E1], pair, cfg, engine)[0]


def f2_lower(rho: float, q_x, F1: float, pair: HypothesisPair, cfg: SearchConfig | None = None,
             engine: BoundEngine | None = None) -> float:
    """CD-code bound: sup_tau {-tau F1 + min[(tau+1) d_tau(Q_X), B(H(Q_X)-rho, Q_X, tau)]}.

    tau = (1-lambda)/lambda runs over the configured grid. A negative ``rho``
    means one codeword per bin. No clamping at zero.
    """
    q_x = as_pmf(q_x)
    hx = entropy(q_x)
    if rho >= hx:
        raise ProbError("rho must be below H(Q_X)")
    cfg = cfg or SearchConfig()
    R = hx - rho
    if engine is None or abs(engine.R - R) > 0:
        engine = BoundEngine(pair, R, cfg)
    taus = cfg.taus()
    Q = _Query(np.zeros(1), np.array([float(F1)]), np.ones(1, bool))
    vals, _, _ = _min_sup(engine, q_x[None], taus, [Q])
    return float(vals[0])


def e2_converse(op: OperatingPoint, pair: HypothesisPair) -> float:
    """Unconstrained-rate converse: the ordinary reliability function of the joint laws."""
    return d2_primal(pair.p_xy.ravel(), pair.pbar_xy.ravel(), op.E1)


@dataclass
class SteinReport:
    value: float
    weak_value: float
    weak_flat: bool
    unconstrained_term: float


def stein_lower(R: float, pair: HypothesisPair, cfg: SearchConfig | None = None) -> SteinReport:
    """Achievable Stein exponent and its weakened large-tau random-coding form."""
    cfg = cfg or SearchConfig()
    px = pair.p_x
    eng = BoundEngine(pair, R, cfg)
    taus = cfg.taus()
    caps = eng.capped([(px, t) for t in taus])
    base = kl(px, pair.pbar_x)
    strong = base + float(np.max(caps))
    # tau -> infinity: the cap tends to D(P_{Y|X}||Pbar_{Y|X}|P_X); the rc
    # exponent is taken at tau_max and checked for flatness against tau_max/2
    uncon = kl(pair.p_xy.ravel(), (px[:, None] * pair.pbar_y_x).ravel())
    if eng.no_binning(px):
        weak, flat = uncon, True
    else:
        eng_rc = BoundEngine(pair, R, replace(cfg, include_expurgated=False))
        b1 = eng_rc.rc_max([(px, cfg.tau_max)], np.array([INF]))[0]
        b0 = eng_rc.rc_max([(px, cfg.tau_max / 2)], np.array([INF]))[0]
        flat = bool(abs(b1 - b0) <= 1e-6 * max(1.0, abs(b1)))
        weak = min(uncon, base + b1)
    return SteinReport(strong, float(weak), flat, float(uncon))


# --------------------------------------------------------------------------
# zero-rate bound

def _iproj(P, a, b, iters=5000, tol=1e-14):
    """min D(Q||P) over Q with marginals (a, b) by iterative scaling.

    Returns (value, Q, log u, log v) or None when the marginals are not
    reachable within supp(P).
    """
    P = np.asarray(P, float)
    u = np.ones(P.shape[0])
    v = np.ones(P.shape[1])
    Q = P
    for _ in range(iters):
        Pv = P @ v
        if np.any((Pv <= 0) & (a > 0)):
            return None
        u = np.where(a > 0, a / np.where(Pv > 0, Pv, 1.0), 0.0)
        Pu = P.T @ u
        if np.any((Pu <= 0) & (b > 0)):
            return None
        v = np.where(b > 0, b / np.where(Pu > 0, Pu, 1.0), 0.0)
        Q = u[:, None] * P * v[None, :]
        if np.abs(Q.sum(1) - a).max() < tol:
            break
    if np.abs(Q.sum(1) - a).max() > 1e-9 or np.abs(Q.sum(0) - b).max() > 1e-9:
        return None
    return kl(Q.ravel(), P.ravel()), Q


def zero_rate_bound(E1: float, pair: HypothesisPair, starts: int = 4) -> BoundReport:
    """min D(Qbar_XY||Pbar_XY) over pairs with common X and Y marginals and D(Q_XY||P_XY) <= E1.

    Both inner problems are I-projections onto fixed marginals, so the outer
    search runs over the marginals (a, b) only; it is convex and solved by
    SLSQP from a few starts.
    """
    if E1 < 0:
        raise ProbError("type-1 exponent must be nonnegative")
    P, Pb = pair.p_xy, pair.pbar_xy
    nx, ny = P.shape
    px, py = P.sum(1), P.sum(0)
    if E1 == 0:
        r = _iproj(Pb, px, py)
        return BoundReport(INF if r is None else r[0], px, None, {"a": px, "b": py})

    def split(z):
        a = np.append(z[: nx - 1], 1 - z[: nx - 1].sum())
        b = np.append(z[nx - 1:], 1 - z[nx - 1:].sum())
        return a, b

    def fval(z, M):
        a, b = split(z)
        if np.any(a < 0) or np.any(b < 0):
            return INF
        r = _iproj(M, a, b)
        return INF if r is None else r[0]

    obj = lambda z: min(fval(z, Pb), 1e3)
    con = {"type": "ineq", "fun": lambda z: E1 - min(fval(z, P), 1e3)}
    z_p = np.concatenate([px[:-1], py[:-1]])
    rng = np.random.default_rng(0)
    best = (fval(z_p, Pb), z_p)
    bounds = [(0.0, 1.0)] * (nx + ny - 2)
    inits = [z_p] + [np.concatenate([rng.dirichlet(np.ones(nx))[:-1], rng.dirichlet(np.ones(ny))[:-1]])
                     for _ in range(starts - 1)]
    for z0 in inits:
        res = minimize(obj, z0, method="SLSQP", constraints=[con], bounds=bounds,
                       options={"ftol": 1e-13, "maxiter": 500})
        z = res.x
        if fval(z, P) <= E1 + 1e-9 and fval(z, Pb) < best[0]:
            best = (fval(z, Pb), z)
    a, b = split(best[1])
    return BoundReport(float(best[0]), a, None, {"a": a, "b": b})


# --------------------------------------------------------------------------
# no-loss condition

@dataclass
class NoLossReport:
    holds: bool
    margin: float
    worst_qx: np.ndarray | None
    worst_tau: float | None
    checks: list = field(default_factory=list)


def no_loss_check(R: float, pair: HypothesisPair, cfg: SearchConfig | None = None,
                  e1_samples: Sequence[float] = (0.01, 0.05), tol: float = 5e-3) -> NoLossReport:
    """Check B(R, Q_X, tau) >= (tau+1) d_tau(Q_X) over the search grids.

    When it holds, the achievable and converse bounds are compared at the
    sampled type-1 exponents (they should agree within ``tol``).
    """
    cfg = cfg or SearchConfig()
    eng = BoundEngine(pair, R, cfg)
    qxs = qx_candidates(pair, replace(cfg, restrict_qx_ball=False), INF)
    taus = cfg.taus()[1:]
    items = [(q, float(t)) for q in qxs for t in taus if not eng.no_binning(q)]
    worst = (INF, None, None)
    if items:
        caps = np.array([eng.cap(q, t) for q, t in items])
        vals = eng.capped(items)
        margins = vals - caps
        k = int(np.argmin(margins))
        worst = (float(margins[k]), items[k][0], items[k][1])
    holds = worst[0] >= -1e-9
    rep = NoLossReport(bool(holds), float(worst[0]), worst[1], worst[2])
    if holds:
        for E1 in e1_samples:
            lo = e2_lower(OperatingPoint(R, E1), pair, cfg).value
            hi = e2_converse(OperatingPoint(R, E1), pair)
            rep.checks.append({"E1": float(E1), "e2_lower": lo, "e2_converse": hi,
                               "agree": bool(abs(hi - lo) <= tol)})
    return rep


def pure_binning_b(R: float, q_x, tau: float, pair: HypothesisPair) -> float:
    """The pure-binning exponent through the engine (|U| = 1, R_b = H(Q_X) - R)."""
    eng = BoundEngine(pair, R, SearchConfig(scheme="binning"))
    return eng.b_value(as_pmf(q_x), tau)
