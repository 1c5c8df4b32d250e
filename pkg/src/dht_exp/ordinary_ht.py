"""Ordinary (centralised) binary hypothesis testing between two pmfs."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .prob_core import INF, HypothesisPair, ProbError, as_pmf, compositions, kl, multinomial, simplex_grid

__all__ = [
    "HypothesisPair",
    "TradeoffCurve",
    "default_tau_grid",
    "chernoff_distance",
    "critical_point",
    "d2_primal",
    "d2_chernoff",
    "d2_curve",
    "np_exact",
    "stein",
]

TIE_RTOL = 1e-9


def default_tau_grid(tau_max: float = 64.0, points: int = 21) -> np.ndarray:
    """{0} plus geometric points from 1/16 to tau_max."""
    return np.concatenate([[0.0], np.geomspace(1.0 / 16.0, tau_max, points)])


@dataclass
class TradeoffCurve:
    """Points (abscissa, ordinate, meta) with increasing abscissae."""

    points: list = field(default_factory=list)

    def __post_init__(self):
        xs = [p[0] for p in self.points]
        ys = [p[1] for p in self.points]
        if any(b <= a for a, b in zip(xs, xs[1:])):
            raise ValueError("abscissae must be strictly increasing")
        if any(b > a + 1e-9 for a, b in zip(ys, ys[1:])):
            raise ValueError("ordinates must be nonincreasing")

    @property
    def x(self) -> np.ndarray:
        return np.array([p[0] for p in self.points])

    @property
    def y(self) -> np.ndarray:
        return np.array([p[1] for p in self.points])


def _common(p, pbar):
    p = as_pmf(p)
    pbar = as_pmf(pbar)
    if p.shape != pbar.shape:
        raise ProbError("alphabets differ")
    return p, pbar


def chernoff_distance(p, pbar, tau: float) -> float:
    """-log sum P^(tau/(tau+1)) Pbar^(1/(tau+1)).

    At tau = 0 the right-limit is used (P^0 read as the indicator of P > 0),
    which keeps the dual form continuous.
    """
    p = np.asarray(p, dtype=float)
    pbar = np.asarray(pbar, dtype=float)
    if tau == 0:
        s = pbar[p > 0].sum()
    else:
        lam = 1.0 / (tau + 1.0)
        s = np.sum(np.power(p, 1.0 - lam) * np.power(pbar, lam))
    return INF if s <= 0 else float(-math.log(s))


def _tilt(p, pbar, s, common):
    logq = (1.0 - s) * np.log(p[common]) + s * np.log(pbar[common])
    logq -= logq.max()
    q = np.zeros_like(p)
    q[common] = np.exp(logq)
    return q / q.sum()


def critical_point(p, pbar) -> float:
    """Type-1 exponent beyond which the optimal type-2 exponent stops decreasing."""
    p, pbar = _common(p, pbar)
    common = (p > 0) & (pbar > 0)
    if not common.any():
        return INF
    return kl(_tilt(p, pbar, 1.0, common), p)


def d2_primal(p, pbar, d1: float, grid_resolution: int | None = None) -> float:
    """min D(Q||Pbar) subject to D(Q||P) <= d1.

    Without ``grid_resolution`` the minimiser is located on the tilted family
    Q_s ~ P^(1-s) Pbar^s by a bracketing root find on s. With a resolution the
    simplex grid is scanned instead (used as an oracle).
    """
    if d1 < 0:
        raise ProbError("type-1 exponent must be nonnegative")
    p, pbar = _common(p, pbar)
    if grid_resolution is not None:
        return _d2_grid(p, pbar, d1, grid_resolution)
    if d1 == 0:
        return kl(p, pbar)
    common = (p > 0) & (pbar > 0)
    if not common.any():
        return INF
    f = lambda s: kl(_tilt(p, pbar, s, common), p) - d1
    if f(0.0) > 0:
        return INF
    if f(1.0) <= 0:
        return kl(_tilt(p, pbar, 1.0, common), pbar)
    s = brentq(f, 0.0, 1.0, xtol=1e-13, rtol=1e-13, maxiter=200)
    return kl(_tilt(p, pbar, s, common), pbar)


def _d2_grid(p, pbar, d1, m):
    g = simplex_grid(p.size, m)
    with np.errstate(divide="ignore", invalid="ignore"):
        def div(q, r):
            t = np.where(q > 0, q * np.log(q / r), 0.0)
            return np.where(np.any((q > 0) & (r <= 0), axis=1), INF, t.sum(1))
        dq = div(g, p[None])
        dqb = div(g, pbar[None])
    ok = dq <= d1 + 1e-12
    return float(dqb[ok].min()) if ok.any() else INF


def d2_chernoff(p, pbar, d1: float, tau_grid: Sequence[float] | None = None,
                tau_max: float = 1e6) -> float:
    """sup over tau >= 0 of -tau*d1 + (tau+1)*d_tau, on a grid plus local refinement."""
    if d1 < 0:
        raise ProbError("type-1 exponent must be nonnegative")
    p, pbar = _common(p, pbar)
    if d1 == 0:
        return kl(p, pbar)
    taus = list(default_tau_grid() if tau_grid is None else tau_grid)
    g = lambda t: -t * d1 + (t + 1.0) * chernoff_distance(p, pbar, t)
    vals = [g(t) for t in taus]
    # extend upwards while the maximiser sits on the last point
    while int(np.argmax(vals)) == len(taus) - 1 and taus[-1] < tau_max:
        taus.append(min(taus[-1] * 2.0, tau_max))
        vals.append(g(taus[-1]))
    i = int(np.argmax(vals))
    best = vals[i]
    if not math.isfinite(best):
        return best
    lo = taus[max(i - 1, 0)]
    hi = taus[min(i + 1, len(taus) - 1)]
    if hi > lo:
        res = minimize_scalar(lambda t: -g(t), bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-10 * max(1.0, hi)})
        best = max(best, -float(res.fun))
    return float(best)


def d2_curve(p, pbar, d1_values: Sequence[float]) -> TradeoffCurve:
    """Primal curve with dual values and past-critical flags in the metadata."""
    crit = critical_point(p, pbar)
    pts = []
    for d1 in d1_values:
        pts.append((float(d1), d2_primal(p, pbar, d1),
                    {"dual": d2_chernoff(p, pbar, d1), "past_critical": bool(d1 >= crit)}))
    return TradeoffCurve(pts)


def stein(p, pbar) -> float:
    p, pbar = _common(p, pbar)
    return kl(p, pbar)


def np_decisions(llr: np.ndarray, nT: float) -> tuple[np.ndarray, np.ndarray]:
    """Masks (decide H, tie) of the threshold test for log-likelihood ratios ``llr``.

    Ties are declared within a relative tolerance so that type sums and
    sequence sums classify identically.
    """
    llr = np.asarray(llr, dtype=float)
    if nT == INF:
        return np.zeros(llr.shape, bool), np.zeros(llr.shape, bool)
    if nT == -INF:
        return np.ones(llr.shape, bool), np.zeros(llr.shape, bool)
    with np.errstate(invalid="ignore"):
        diff = llr - nT
        scale = np.maximum(1.0, np.maximum(abs(nT), np.where(np.isfinite(llr), np.abs(llr), 0.0)))
        tie = np.isfinite(diff) & (np.abs(diff) <= TIE_RTOL * scale)
        above = (diff > 0) & ~tie
    return above, tie


def np_exact(p, pbar, n: int, T: float, eta: float = 0.0) -> tuple[float, float]:
    """Exact (p1, p2) of the randomised likelihood-ratio test on n i.i.d. letters.

    The test decides H when P^n > e^{nT} Pbar^n, Hbar when below, and H with
    probability eta on ties. p1 = P(decide Hbar), p2 = Pbar(decide H).
    """
    p, pbar = _common(p, pbar)
    if n < 1 or n > 64:
        raise ProbError("type summation supports 1 <= n <= 64")
    if not 0.0 <= eta <= 1.0:
        raise ProbError("eta must lie in [0, 1]")
    k = p.size
    types = np.array(list(compositions(n, k)), dtype=np.int64)
    mult = np.array([float(multinomial(t)) for t in types])
    with np.errstate(divide="ignore"):
        lp = np.log(p)
        lpb = np.log(pbar)
    def mass(logp):
        with np.errstate(invalid="ignore"):
            s = np.where(types > 0, types * logp[None], 0.0).sum(1)
        return s
    sp = mass(lp)
    spb = mass(lpb)
    mp = mult * np.exp(sp)
    mpb = mult * np.exp(spb)
    keep = (mp > 0) | (mpb > 0)
    with np.errstate(invalid="ignore"):
        llr = np.where(keep, sp - spb, 0.0)
    above, tie = np_decisions(llr, n * T)
    return _np_sums(mp, mpb, above, tie, eta)


def _np_sums(mp, mpb, above, tie, eta):
    # one weight per outcome and a single fixed-order sum keeps p1/p2 exactly
    # monotone in the threshold
    below = ~above & ~tie
    w1 = np.where(below, 1.0, np.where(tie, 1.0 - eta, 0.0))
    w2 = np.where(above, 1.0, np.where(tie, eta, 0.0))
    return float(np.sum(w1 * mp)), float(np.sum(w2 * mpb))
