"""Finite-alphabet probability primitives.

Distributions are plain read-only numpy arrays. Divergences, entropies and
Chernoff parameters are in nats. ``math.inf`` is used as the sentinel for
support violations; it is produced explicitly and never by overflow.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

INF = math.inf
PMF_TOL = 1e-9
# contract for exact type-class sizes: checked 128-bit range
_SIZE_LIMIT = 2**128 - 1


class ProbError(ValueError):
    """Invalid distribution, shape mismatch or similar input error."""


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def as_pmf(values, tol: float = PMF_TOL) -> np.ndarray:
    """Validate a probability vector; renormalise if the sum is off by <= tol."""
    p = np.array(values, dtype=float).ravel()
    if p.size == 0 or not np.all(np.isfinite(p)) or np.any(p < 0):
        raise ProbError("probabilities must be finite and nonnegative")
    s = p.sum()
    if abs(s - 1.0) > tol:
        raise ProbError(f"probabilities sum to {s!r}, not 1")
    return _freeze(p / s)


def as_joint(values, tol: float = PMF_TOL) -> np.ndarray:
    """Validate a joint pmf of any rank (matrix for pairs, 3-array for triples)."""
    a = np.array(values, dtype=float)
    if a.ndim < 2:
        raise ProbError("joint pmf needs at least two axes")
    flat = as_pmf(a.ravel(), tol)
    return _freeze(flat.reshape(a.shape).copy())


def as_channel(rows, tol: float = PMF_TOL) -> np.ndarray:
    """Validate a stochastic matrix (each row a pmf)."""
    w = np.array(rows, dtype=float)
    if w.ndim != 2:
        raise ProbError("channel must be a matrix")
    out = np.vstack([as_pmf(r, tol) for r in w])
    return _freeze(out)


def conditional(joint: np.ndarray, axis_split: int = 1) -> np.ndarray:
    """Conditional of the trailing axes given the leading ``axis_split`` axes.

    Rows with zero marginal are filled with the uniform distribution; callers
    only ever weight them by zero.
    """
    j = np.asarray(joint, dtype=float)
    lead = j.shape[:axis_split]
    tail = j.shape[axis_split:]
    m = j.reshape(int(np.prod(lead)), int(np.prod(tail)))
    marg = m.sum(axis=1, keepdims=True)
    out = np.where(marg > 0, m / np.where(marg > 0, marg, 1.0), 1.0 / m.shape[1])
    return out.reshape(j.shape)


def support(p: np.ndarray) -> np.ndarray:
    return np.asarray(p) > 0


# --------------------------------------------------------------------------
# divergences and entropies

def kl(q, p) -> float:
    """D(q||p) in nats, +inf when supp(q) is not inside supp(p)."""
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    if q.shape != p.shape:
        raise ProbError(f"shape mismatch {q.shape} vs {p.shape}")
    pos = q > 0
    if np.any(p[pos] <= 0):
        return INF
    return float(max(0.0, np.sum(q[pos] * np.log(q[pos] / p[pos]))))


def conditional_kl(q_cond, p_cond, weight) -> float:
    """sum_x weight(x) * D(q_cond[x] || p_cond[x]); zero-weight rows ignored."""
    q_cond = np.asarray(q_cond, dtype=float)
    p_cond = np.asarray(p_cond, dtype=float)
    weight = np.asarray(weight, dtype=float)
    if q_cond.shape != p_cond.shape or q_cond.shape[0] != weight.shape[0]:
        raise ProbError("shape mismatch in conditional_kl")
    total = 0.0
    for x in np.flatnonzero(weight > 0):
        d = kl(q_cond[x], p_cond[x])
        if d == INF:
            return INF
        total += weight[x] * d
    return float(total)


def entropy(p) -> float:
    p = np.asarray(p, dtype=float).ravel()
    p = p[p > 0]
    return float(max(0.0, -np.sum(p * np.log(p))))


@dataclass(frozen=True)
class InfoMeasures:
    h_x: float
    h_x_given_u: float
    i_u_y: float
    i_ux_y: float
    i_x_y_given_u: float
    i_u_x: float


def info_measures(q) -> InfoMeasures:
    """Information quantities of a joint triple Q_UXY (axes U, X, Y)."""
    q = np.asarray(q, dtype=float)
    if q.ndim != 3:
        raise ProbError("expected a U x X x Y array")
    h_uxy = entropy(q)
    h_ux = entropy(q.sum(2))
    h_uy = entropy(q.sum(1))
    h_u = entropy(q.sum((1, 2)))
    h_x = entropy(q.sum((0, 2)))
    h_y = entropy(q.sum((0, 1)))
    i_u_y = max(0.0, h_u + h_y - h_uy)
    i_ux_y = max(0.0, h_ux + h_y - h_uxy)
    i_x_y_u = max(0.0, h_ux + h_uy - h_uxy - h_u)
    i_u_x = max(0.0, h_u + h_x - h_ux)
    return InfoMeasures(h_x, max(0.0, h_ux - h_u), i_u_y, i_ux_y, i_x_y_u, i_u_x)


def mutual_information(q_xy) -> float:
    q = np.asarray(q_xy, dtype=float)
    return max(0.0, entropy(q.sum(1)) + entropy(q.sum(0)) - entropy(q))


# --------------------------------------------------------------------------
# hypothesis pair and Chernoff parameters

@dataclass(frozen=True, eq=False)
class HypothesisPair:
    """The two joint laws P_XY (hypothesis H) and Pbar_XY (hypothesis Hbar)."""

    p_xy: np.ndarray
    pbar_xy: np.ndarray

    def __post_init__(self):
        p = as_joint(self.p_xy)
        pb = as_joint(self.pbar_xy)
        if p.shape != pb.shape or p.ndim != 2:
            raise ProbError("P_XY and Pbar_XY must be matrices of equal shape")
        object.__setattr__(self, "p_xy", p)
        object.__setattr__(self, "pbar_xy", pb)
        if not np.any((p.sum(1) > 0) & (pb.sum(1) > 0)):
            raise ProbError("source marginals have disjoint supports")
        if not np.any((p.sum(0) > 0) & (pb.sum(0) > 0)):
            raise ProbError("observation marginals have disjoint supports")

    @classmethod
    def from_channels(cls, p_x, p_y_x, pbar_x=None, pbar_y_x=None):
        p_x = as_pmf(p_x)
        pbar_x = p_x if pbar_x is None else as_pmf(pbar_x)
        w = as_channel(p_y_x)
        wb = w if pbar_y_x is None else as_channel(pbar_y_x)
        return cls(p_x[:, None] * w, pbar_x[:, None] * wb)

    @property
    def nx(self) -> int:
        return self.p_xy.shape[0]

    @property
    def ny(self) -> int:
        return self.p_xy.shape[1]

    @property
    def p_x(self) -> np.ndarray:
        return self.p_xy.sum(1)

    @property
    def pbar_x(self) -> np.ndarray:
        return self.pbar_xy.sum(1)

    @property
    def p_y_x(self) -> np.ndarray:
        return conditional(self.p_xy)

    @property
    def pbar_y_x(self) -> np.ndarray:
        return conditional(self.pbar_xy)


def binary_example(eps: float = 0.1, eps_bar: float = 0.01) -> HypothesisPair:
    """Uniform binary source observed through BSC(eps) vs BSC(eps_bar)."""
    bsc = lambda e: [[1 - e, e], [e, 1 - e]]
    return HypothesisPair.from_channels([0.5, 0.5], bsc(eps), [0.5, 0.5], bsc(eps_bar))


def tau_to_lam(tau: float) -> float:
    return 0.0 if tau == INF else 1.0 / (tau + 1.0)


def lam_to_tau(lam: float) -> float:
    if lam <= 0:
        return INF
    return (1.0 - lam) / lam


def chernoff_matrix_lam(lam: float, pair: HypothesisPair) -> np.ndarray:
    """d(x, xt) = -log sum_y P(y|x)^(1-lam) Pbar(y|xt)^lam, all pairs at once."""
    if not 0.0 <= lam <= 1.0:
        raise ProbError("lambda must lie in [0, 1]")
    w = pair.p_y_x
    wb = pair.pbar_y_x
    with np.errstate(divide="ignore"):
        s = np.einsum("ay,by->ab", np.power(w, 1.0 - lam), np.power(wb, lam))
        return -np.log(s)


def chernoff_matrix(tau: float, pair: HypothesisPair) -> np.ndarray:
    if tau < 0:
        raise ProbError("tau must be nonnegative")
    return chernoff_matrix_lam(tau_to_lam(tau), pair)


def chernoff_symbol(x: int, xt: int, tau: float, pair: HypothesisPair) -> float:
    """Chernoff parameter of a symbol pair, +inf when the rows share no support."""
    return float(chernoff_matrix(tau, pair)[x, xt])


def _weighted(d: np.ndarray, q: np.ndarray) -> float:
    pos = q > 0
    if np.any(np.isinf(d[pos])):
        return INF
    return float(np.sum(q[pos] * d[pos]))


def chernoff_avg(q_xxt, tau: float, pair: HypothesisPair) -> float:
    """E_Q[d_tau(X, Xt)] for a coupling Q over X x Xt."""
    q = np.asarray(q_xxt, dtype=float)
    return _weighted(chernoff_matrix(tau, pair), q)


def chernoff_diag(q_x, tau: float, pair: HypothesisPair) -> float:
    """E_Q[d_tau(X, X)]."""
    q = np.asarray(q_x, dtype=float)
    return _weighted(np.diag(chernoff_matrix(tau, pair)), q)


def chernoff_diag_lam(q_x, lam: float, pair: HypothesisPair) -> float:
    q = np.asarray(q_x, dtype=float)
    return _weighted(np.diag(chernoff_matrix_lam(lam, pair)), q)


# --------------------------------------------------------------------------
# method of types

@dataclass(frozen=True)
class TypeDescriptor:
    """Integer counts (row-major over ``shape``) of a sequence or joint sequence."""

    counts: tuple
    shape: tuple = ()

    def __post_init__(self):
        c = tuple(int(v) for v in self.counts)
        if any(v < 0 for v in c):
            raise ProbError("type counts must be nonnegative")
        shape = tuple(self.shape) if self.shape else (len(c),)
        if int(np.prod(shape)) != len(c):
            raise ProbError("counts do not match shape")
        object.__setattr__(self, "counts", c)
        object.__setattr__(self, "shape", shape)

    @property
    def n(self) -> int:
        return sum(self.counts)

    def as_array(self) -> np.ndarray:
        return np.array(self.counts, dtype=np.int64).reshape(self.shape)

    def pmf(self) -> np.ndarray:
        return self.as_array() / self.n


def multinomial(counts: Sequence[int]) -> int:
    """Exact multinomial coefficient n! / prod(c!)."""
    out = 1
    tot = 0
    for c in counts:
        tot += int(c)
        out *= math.comb(tot, int(c))
    return out


def type_class_size(t: TypeDescriptor) -> int:
    size = multinomial(t.counts)
    if size > _SIZE_LIMIT:
        raise OverflowError("type class size exceeds the 128-bit contract")
    return size


def type_enumerate(t: TypeDescriptor) -> Iterator[tuple]:
    """All sequences of type ``t`` (flat symbol indices), in lexicographic order."""
    counts = list(t.counts)
    n = t.n
    seq = [0] * n

    def rec(pos):
        if pos == n:
            yield tuple(seq)
            return
        for a, c in enumerate(counts):
            if c:
                counts[a] -= 1
                seq[pos] = a
                yield from rec(pos + 1)
                counts[a] += 1

    yield from rec(0)


def compositions(n: int, k: int) -> Iterator[tuple]:
    """All nonnegative integer vectors of length k summing to n (lexicographic)."""
    for bars in itertools.combinations(range(n + k - 1), k - 1):
        prev = -1
        out = []
        for b in bars:
            out.append(b - prev - 1)
            prev = b
        out.append(n + k - 1 - prev - 1)
        yield tuple(out)


def sequence_type(x: Sequence[int], size: int) -> TypeDescriptor:
    return TypeDescriptor(tuple(np.bincount(np.asarray(x, dtype=int), minlength=size)))


def joint_type(*seqs: Sequence[int], sizes: Sequence[int]) -> TypeDescriptor:
    """Joint type over the product alphabet of several equal-length sequences."""
    if len(seqs) != len(sizes):
        raise ProbError("one alphabet size per sequence")
    arrs = [np.asarray(s, dtype=int) for s in seqs]
    if len({a.size for a in arrs}) != 1:
        raise ProbError("sequences must have equal length")
    idx = np.ravel_multi_index(tuple(arrs), tuple(sizes))
    counts = np.bincount(idx, minlength=int(np.prod(sizes)))
    return TypeDescriptor(tuple(counts), tuple(sizes))


def simplex_grid(k: int, m: int) -> np.ndarray:
    """All points of the k-simplex with coordinates in {0, 1/m, ..., 1}."""
    return np.array(list(compositions(m, k)), dtype=float) / m
