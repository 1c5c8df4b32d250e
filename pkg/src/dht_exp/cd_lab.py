"""Desk-scale laboratory for channel-detection (CD) codes.

Everything here is exact enumeration over Y^n or exact rational counting,
plus a reproducible sampler for the hierarchical random-code ensemble.
Sequences are tuples or int arrays of symbol indices.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Sequence

import numpy as np

from .ordinary_ht import _np_sums, np_decisions
from .prob_core import (
    INF,
    HypothesisPair,
    ProbError,
    TypeDescriptor,
    info_measures,
    joint_type,
    multinomial,
    sequence_type,
    type_class_size,
    type_enumerate,
)

OUTPUT_LIMIT = 2**16        # |Y|^n enumerated at most (binary n = 16, ternary n = 10)
CELL_LIMIT = 2**24          # codewords x outputs held in memory at once
TYPE_TOL = 1e-12


class SizeGuardError(ProbError):
    """Raised when an exact enumeration would exceed the desk-scale limits."""


class CoverError(ProbError):
    """Raised when greedy_cover runs out of permutations."""


# --------------------------------------------------------------------------
# codes

@dataclass(frozen=True)
class CdCode:
    """Distinct codewords of one type class, optionally with cloud centres."""

    codewords: tuple
    nx: int
    clouds: tuple | None = None
    nu: int | None = None

    def __post_init__(self):
        cw = tuple(tuple(int(v) for v in c) for c in self.codewords)
        if not cw:
            raise ProbError("a code needs at least one codeword")
        if len(set(cw)) != len(cw):
            raise ProbError("codewords must be distinct")
        n = len(cw[0])
        if any(len(c) != n for c in cw):
            raise ProbError("codewords must share one blocklength")
        if any(v < 0 or v >= self.nx for c in cw for v in c):
            raise ProbError("symbol out of range")
        t0 = sequence_type(cw[0], self.nx)
        if any(sequence_type(c, self.nx) != t0 for c in cw):
            raise ProbError("codewords must share one type")
        object.__setattr__(self, "codewords", cw)
        if self.clouds is not None:
            cl = tuple(tuple(int(v) for v in c) for c in self.clouds)
            if len(cl) != len(cw) or self.nu is None:
                raise ProbError("one cloud centre per codeword and nu are required")
            jt = {joint_type(u, x, sizes=(self.nu, self.nx)) for u, x in zip(cl, cw)}
            if len(jt) != 1:
                raise ProbError("cloud/codeword pairs must share one joint type")
            object.__setattr__(self, "clouds", cl)

    @property
    def n(self) -> int:
        return len(self.codewords[0])

    @property
    def type(self) -> TypeDescriptor:
        return sequence_type(self.codewords[0], self.nx)

    def __len__(self):
        return len(self.codewords)

    def array(self) -> np.ndarray:
        return np.array(self.codewords, dtype=np.int64)

    def permuted(self, perm: Sequence[int]) -> "CdCode":
        """Apply one coordinate permutation to every codeword (and centre)."""
        p = list(perm)
        cw = tuple(tuple(c[i] for i in p) for c in self.codewords)
        cl = None if self.clouds is None else tuple(tuple(c[i] for i in p) for c in self.clouds)
        return CdCode(cw, self.nx, cl, self.nu)


# --------------------------------------------------------------------------
# induced distributions

def _outputs(n: int, ny: int) -> np.ndarray:
    """All of Y^n in lexicographic order, as an (ny^n, n) array."""
    if ny ** n > OUTPUT_LIMIT:
        raise SizeGuardError(f"|Y|^n = {ny ** n} exceeds {OUTPUT_LIMIT}")
    return np.array(np.unravel_index(np.arange(ny ** n), (ny,) * n)).T


@lru_cache(maxsize=8)
def _onehot(n: int, ny: int) -> np.ndarray:
    ys = _outputs(n, ny)
    out = np.zeros((ys.shape[0], n * ny))
    out[np.arange(ys.shape[0])[:, None], np.arange(n) * ny + ys] = 1.0
    out.setflags(write=False)
    return out


def _rows(code) -> np.ndarray:
    """Codeword rows with multiplicity (a CdCode or a raw ensemble draw)."""
    if isinstance(code, CdCode):
        return code.array()
    if isinstance(code, HierarchicalDraw):
        return code.codewords()
    return np.atleast_2d(np.asarray(code, dtype=np.int64))


def _induced(rows: np.ndarray, w: np.ndarray) -> np.ndarray:
    """(1/m) sum_c prod_i W(y_i | x_ci) for every y^n (lexicographic)."""
    m, n = rows.shape
    ny = w.shape[1]
    onehot = _onehot(n, ny)
    with np.errstate(divide="ignore"):
        lw = np.log(w)
    out = np.zeros(onehot.shape[0])
    step = max(1, CELL_LIMIT // onehot.shape[0])
    for s in range(0, m, step):
        blk = rows[s: s + step]
        tab = lw[blk].reshape(blk.shape[0], n * ny)          # (c, n*ny)
        fin = np.isfinite(tab)
        ll = onehot @ np.where(fin, tab, 0.0).T
        if not fin.all():
            # -inf entries must not meet the zeros of the one-hot matrix
            bad = onehot @ (~fin).astype(float).T
            ll[bad > 0] = -np.inf
        out += np.exp(ll).sum(1)
    return out / m


def induced_distribution(code, channel) -> np.ndarray:
    """Output law over Y^n (lexicographic order) when the input is uniform on the code."""
    w = np.asarray(channel, dtype=float)
    return _induced(_rows(code), w)


def _both(code, pair):
    rows = _rows(code)
    if rows.max() >= pair.nx:
        raise ProbError("code alphabet does not match the pair")
    return _induced(rows, pair.p_y_x), _induced(rows, pair.pbar_y_x), rows.shape[1]


def cd_np_exact(code, pair: HypothesisPair, T: float, eta: float = 0.0) -> tuple[float, float]:
    """Exact (p1, p2) of the test comparing P^(C)(y) with e^{nT} Pbar^(C)(y).

    Ties go to H with probability ``eta``.
    """
    if not 0.0 <= eta <= 1.0:
        raise ProbError("eta must lie in [0, 1]")
    mp, mpb, n = _both(code, pair)
    keep = (mp > 0) | (mpb > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        llr = np.where(keep, np.log(mp) - np.log(mpb), 0.0)
    above, tie = np_decisions(llr, n * T)
    return _np_sums(mp, mpb, above, tie, eta)


def chernoff_parameter_exact(code, pair: HypothesisPair, lam: float) -> float:
    """(1/n) log sum_y P^(C)(y)^(1-lam) Pbar^(C)(y)^lam (nonpositive)."""
    if not 0.0 <= lam <= 1.0:
        raise ProbError("lambda must lie in [0, 1]")
    mp, mpb, n = _both(code, pair)
    return float(np.log(_chernoff_sum(mp, mpb, lam)) / n)


def _chernoff_sum(mp, mpb, lam):
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.power(mp, 1.0 - lam) * np.power(mpb, lam)
    return float(np.sum(s))


# --------------------------------------------------------------------------
# hierarchical ensemble

def rate_count(n: int, rate: float) -> int:
    """e^{n rate} rounded half up, at least 1."""
    return max(1, math.floor(math.exp(n * rate) + 0.5))


@dataclass(frozen=True)
class EnsembleSpec:
    """Hierarchical ensemble: q_ux is the joint (U, X) type of centre and satellite."""

    n: int
    q_ux: TypeDescriptor
    rho_c: float
    rho_s: float
    seed: int

    def __post_init__(self):
        if len(self.q_ux.shape) != 2:
            raise ProbError("q_ux must be a joint (U, X) type")
        if self.q_ux.n != self.n:
            raise ProbError("q_ux must be an n-type")
        if self.rho_c < 0 or self.rho_s < 0:
            raise ProbError("rates must be nonnegative")
        if self.seed is None or int(self.seed) < 0:
            raise ProbError("an explicit nonnegative seed is required")

    @property
    def nu(self) -> int:
        return self.q_ux.shape[0]

    @property
    def nx(self) -> int:
        return self.q_ux.shape[1]

    @property
    def n_clouds(self) -> int:
        return rate_count(self.n, self.rho_c)

    @property
    def n_satellites(self) -> int:
        return rate_count(self.n, self.rho_s)

    def u_type(self) -> TypeDescriptor:
        return TypeDescriptor(tuple(self.q_ux.as_array().sum(1)))


def ensemble_rng(seed: int, index: int) -> np.random.Generator:
    """Counter-based stream for draw ``index``; independent of the thread layout."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(index)])))


@dataclass
class HierarchicalDraw:
    spec: EnsembleSpec
    centers: np.ndarray            # (n_clouds, n)
    satellites: np.ndarray         # (n_clouds, n_satellites, n)
    index: int = 0

    def codewords(self) -> np.ndarray:
        """All satellites with multiplicity, cloud by cloud."""
        return self.satellites.reshape(-1, self.spec.n)

    def dedup(self) -> CdCode:
        """Distinct codewords (first occurrence kept) as a valid CdCode."""
        seen = {}
        for c, sats in enumerate(self.satellites):
            for x in sats:
                seen.setdefault(tuple(int(v) for v in x), tuple(int(v) for v in self.centers[c]))
        return CdCode(tuple(seen), self.spec.nx, tuple(seen.values()), self.spec.nu)


def draw_hierarchical(spec: EnsembleSpec, index: int = 0) -> HierarchicalDraw:
    """One codebook of the fixed-composition hierarchical ensemble.

    Centres are uniform on T_n(Q_U); each cloud gets its own independent
    satellites, uniform on T_n(Q_{X|U}, u^n). Uniformity comes from shuffling a
    canonical arrangement (of the whole sequence, or of each u-block).
    """
    q = spec.q_ux.as_array()
    n = spec.n
    rng = ensemble_rng(spec.seed, index)
    base_u = np.repeat(np.arange(spec.nu), q.sum(1))
    mc, ms = spec.n_clouds, spec.n_satellites
    centers = np.empty((mc, n), dtype=np.int64)
    sats = np.empty((mc, ms, n), dtype=np.int64)
    blocks = [np.repeat(np.arange(spec.nx), q[u]) for u in range(spec.nu)]
    for c in range(mc):
        u = rng.permutation(base_u)
        centers[c] = u
        pos = [np.flatnonzero(u == a) for a in range(spec.nu)]
        for s in range(ms):
            x = np.empty(n, dtype=np.int64)
            for a in range(spec.nu):
                x[pos[a]] = rng.permutation(blocks[a])
            sats[c, s] = x
    return HierarchicalDraw(spec, centers, sats, index)


# --------------------------------------------------------------------------
# type-class enumerators

@dataclass
class EnumeratorTally:
    """M over joint (U, X, Y) types of (centre, satellite, y); N over (U, Y) types of (centre, y)."""

    m: Counter = field(default_factory=Counter)
    n: Counter = field(default_factory=Counter)

    def total_m(self) -> int:
        return sum(self.m.values())

    def total_n(self) -> int:
        return sum(self.n.values())


def enumerate_tally(draw: HierarchicalDraw, y: Sequence[int], ny: int) -> EnumeratorTally:
    """Exact enumerator counts for one output sequence (satellites with multiplicity)."""
    spec = draw.spec
    y = np.asarray(y, dtype=np.int64)
    if y.size != spec.n:
        raise ProbError("y has the wrong length")
    tally = EnumeratorTally()
    sizes3 = (spec.nu, spec.nx, ny)
    for c, u in enumerate(draw.centers):
        tally.n[joint_type(u, y, sizes=(spec.nu, ny))] += 1
        for x in draw.satellites[c]:
            tally.m[joint_type(u, x, y, sizes=sizes3)] += 1
    return tally


def _cond_count(q: np.ndarray, axis: int) -> int:
    """Number of sequences with joint type q given the sequences on the other axes.

    ``axis`` is the free coordinate; the product runs over all conditioning cells.
    """
    q = np.moveaxis(q, axis, -1).reshape(-1, q.shape[axis])
    out = 1
    for row in q:
        out *= multinomial(row)
    return out


def enumerator_expectation_exact(spec: EnsembleSpec, q: TypeDescriptor, y: Sequence[int], ny: int) -> Fraction:
    """Exact E[N_y(Q_UY)] (2-d type) or E[M_y(Q_UXY)] (3-d type); zero for incompatible types."""
    y = np.asarray(y, dtype=np.int64)
    ty = np.bincount(y, minlength=ny)
    a = q.as_array()
    qux = spec.q_ux.as_array()
    qu = qux.sum(1)
    if q.n != spec.n:
        return Fraction(0)
    if a.ndim == 2:
        if a.shape != (spec.nu, ny) or not np.array_equal(a.sum(0), ty) or not np.array_equal(a.sum(1), qu):
            return Fraction(0)
        # P[(U, y) in T(Q_UY)] for U uniform on T(Q_U)
        return spec.n_clouds * Fraction(_cond_count(a, 0), type_class_size(spec.u_type()))
    if a.ndim == 3:
        if a.shape != (spec.nu, spec.nx, ny) or not np.array_equal(a.sum(2), qux) \
                or not np.array_equal(a.sum((0, 1)), ty):
            return Fraction(0)
        auy = a.sum(1)
        p_uy = Fraction(_cond_count(auy, 0), type_class_size(spec.u_type()))
        # X uniform on T(Q_{X|U}, u): the fraction landing in T(Q_{X|UY}, u, y)
        p_x = Fraction(_cond_count(a, 1), _cond_count(qux, 1))
        return spec.n_clouds * spec.n_satellites * p_uy * p_x
    raise ProbError("q must be a (U, Y) or (U, X, Y) type")


def correlation_exponent_formula(q_uxy, qbar_uxy, lam: float, rho: float, rho_c: float) -> float:
    """Exponential order of E[M^(1-lam)(Q) M^lam(Qbar)] for the hierarchical ensemble.

    ``rho`` is the total rate rho_c + rho_s. The expression is piecewise and
    discontinuous as Qbar -> Q.
    """
    q = np.asarray(q_uxy, dtype=float)
    qb = np.asarray(qbar_uxy, dtype=float)
    if q.shape != qb.shape or q.ndim != 3:
        raise ProbError("both arguments must be (U, X, Y) joints")
    if np.abs(q.sum(2) - qb.sum(2)).max() > TYPE_TOL or np.abs(q.sum((0, 1)) - qb.sum((0, 1))).max() > TYPE_TOL:
        raise ProbError("Q_UX and Q_Y must match")
    if not 0.0 <= lam <= 1.0:
        raise ProbError("lambda must lie in [0, 1]")
    iq, ib = info_measures(q), info_measures(qb)
    if np.abs(q - qb).max() <= TYPE_TOL:
        return rho - iq.i_ux_y
    pos = lambda v: max(v, 0.0)
    delta = ((1 - lam) * (rho - iq.i_ux_y) - lam * max(pos(iq.i_u_y - rho_c), iq.i_ux_y - rho)
             + lam * (rho - ib.i_ux_y) - (1 - lam) * max(pos(ib.i_u_y - rho_c), ib.i_ux_y - rho))
    if np.abs(q.sum(1) - qb.sum(1)).max() <= TYPE_TOL:
        # both sides share the cloud-centre event, counted once
        return delta + pos(iq.i_u_y - rho_c)
    return delta


# --------------------------------------------------------------------------
# permutation covering

@dataclass
class CoverResult:
    perms: list
    bins: list
    n_drawn: int


def greedy_cover(q: TypeDescriptor, base: CdCode, seed: int, max_perms: int = 10000) -> CoverResult:
    """Cover T_n(q) by permuted copies of ``base``.

    The identity comes first, then uniformly random permutations. Bin i is
    pi_i(base) minus all earlier bins; permutations adding nothing are skipped.
    """
    if base.type != q:
        raise ProbError("base code is not in T_n(q)")
    size = type_class_size(q)
    if size > OUTPUT_LIMIT:
        raise SizeGuardError(f"type class of size {size} is too large to enumerate")
    rng = ensemble_rng(seed, 0)
    n = base.n
    covered: set = set()
    perms, bins = [], []
    drawn = 0
    while len(covered) < size:
        if drawn >= max_perms:
            raise CoverError(f"no cover within {max_perms} permutations")
        perm = np.arange(n) if drawn == 0 else rng.permutation(n)
        drawn += 1
        image = {tuple(c[i] for i in perm) for c in base.codewords}
        new = sorted(image - covered)
        if new:
            covered.update(new)
            perms.append(tuple(int(i) for i in perm))
            bins.append(CdCode(tuple(new), base.nx))
    return CoverResult(perms, bins, drawn)


def dht_from_cover(bins: Sequence[CdCode], pair: HypothesisPair, T: float, eta: float = 0.0) -> tuple[float, float]:
    """Exact conditional (p1, p2) given X^n uniform on the covered type class.

    The encoder sends the bin index; the detector runs the threshold test on
    the bin's induced laws, so each bin contributes its own CD error
    probabilities weighted by its share of the type class.
    """
    total = sum(len(b) for b in bins)
    seen: set = set()
    for b in bins:
        if seen & set(b.codewords):
            raise ProbError("bins must be disjoint")
        seen.update(b.codewords)
    t = bins[0].type
    if total != type_class_size(t):
        raise ProbError("bins do not cover the type class")
    p1 = p2 = 0.0
    for b in bins:
        a1, a2 = cd_np_exact(b, pair, T, eta)
        p1 += len(b) / total * a1
        p2 += len(b) / total * a2
    return p1, p2


def type_class_code(q: TypeDescriptor, nx: int | None = None) -> CdCode:
    """The whole type class as a code."""
    return CdCode(tuple(type_enumerate(q)), nx or len(q.counts))
