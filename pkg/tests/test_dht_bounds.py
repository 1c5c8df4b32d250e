import math
from dataclasses import replace

import cvxpy as cp
import numpy as np
import pytest

from dht_exp.dht_bounds import (
    BoundEngine,
    OperatingPoint,
    SearchConfig,
    automorphisms,
    b_combined,
    e2_converse,
    e2_curve,
    e2_lower,
    f2_lower,
    no_loss_check,
    pure_binning_b,
    qx_candidates,
    stein_lower,
    u_candidates,
    zero_rate_bound,
)
from dht_exp.prob_core import INF, HypothesisPair, ProbError, binary_example, entropy, kl

FAST = SearchConfig(u_resolution=4, u_cardinality=2, qx_resolution=16, tau_points=11)


def skewed_pair():
    return HypothesisPair.from_channels([0.4, 0.6], [[0.8, 0.2], [0.3, 0.7]], [0.5, 0.5],
                                        [[0.6, 0.4], [0.1, 0.9]])


# --- configuration and candidates ----------------------------------------------------

def test_config_validation_and_doubling():
    with pytest.raises(ProbError):
        SearchConfig(u_resolution=0)
    with pytest.raises(ProbError):
        OperatingPoint(-0.1, 0.0)
    d = SearchConfig().doubled(2)
    assert (d.qx_resolution, d.u_resolution, d.tau_points) == (128, 16, 41)
    # the doubled grids contain the default ones
    assert set(np.round(SearchConfig().taus(), 12)) <= set(np.round(d.taus(), 12))


def test_binary_example_symmetry():
    auts = automorphisms(binary_example())
    assert ((1, 0), (1, 0)) in auts
    assert len(automorphisms(skewed_pair())) == 1


def test_candidates():
    pair = binary_example()
    q = qx_candidates(pair, FAST, 0.0)
    assert np.allclose(q, [[0.5, 0.5]])
    full = qx_candidates(pair, FAST, INF)
    # symmetry keeps one of (a, 1-a)
    assert len(full) == 9
    ws = u_candidates(pair, FAST)
    assert any(w.shape[1] == 1 for w in ws)
    for w in ws:
        assert np.allclose(w.sum(1), 1)
    assert u_candidates(pair, SearchConfig(scheme="binning"))[0].shape == (2, 1)


# --- basic properties -----------------------------------------------------------------

def test_identical_hypotheses_give_zero():
    pair = binary_example()
    same = HypothesisPair(pair.p_xy, pair.p_xy)
    assert e2_lower(OperatingPoint(0.3, 0.0), same, FAST).value == pytest.approx(0.0, abs=1e-9)


def test_no_binning_type_is_infinite():
    assert b_combined(0.8, [0.5, 0.5], 1.0, FAST, binary_example()) == INF


@pytest.mark.parametrize("R", [0.1, 0.3, 0.6])
def test_sandwich(R):
    # a coarse Q_X grid can miss the converse's minimiser, so use the default 1/64
    pair = skewed_pair()
    cfg = replace(FAST, qx_resolution=64)
    for E1, rep in zip((0.0, 0.02, 0.08), e2_curve(R, [0.0, 0.02, 0.08], pair, cfg)):
        assert 0.0 <= rep.value <= e2_converse(OperatingPoint(R, E1), pair) + 1e-9


def test_curve_matches_pointwise_and_reports_argmin():
    pair = skewed_pair()
    reps = e2_curve(0.3, [0.0, 0.05], pair, FAST)
    single = e2_lower(OperatingPoint(0.3, 0.05), pair, FAST)
    assert single.value == pytest.approx(reps[1].value, abs=1e-12)
    assert kl(single.qx, pair.p_x) <= 0.05 + 1e-12
    assert np.allclose(reps[0].qx, pair.p_x)


def test_full_bound_dominates_pure_binning():
    pair = skewed_pair()
    full = e2_lower(OperatingPoint(0.3, 0.02), pair, FAST).value
    pb = e2_lower(OperatingPoint(0.3, 0.02), pair, replace(FAST, scheme="binning")).value
    assert full >= pb - 1e-9


def test_f2_composition():
    # E2 = min over Q_X in the ball of D(Q_X||Pbar_X) + F2(H(Q_X) - R, Q_X, E1 - D(Q_X||P_X))
    pair = skewed_pair()
    cfg = replace(FAST, qx_resolution=8)
    R, E1 = 0.3, 0.03
    eng = BoundEngine(pair, R, cfg)
    best = INF
    for q in qx_candidates(pair, cfg, E1):
        f = f2_lower(entropy(q) - R, q, E1 - kl(q, pair.p_x), pair, cfg, eng)
        best = min(best, kl(q, pair.pbar_x) + f)
    assert e2_lower(OperatingPoint(R, E1), pair, cfg).value == pytest.approx(best, abs=1e-6)


def test_f2_rejects_rho_at_entropy():
    with pytest.raises(ProbError):
        f2_lower(math.log(2), [0.5, 0.5], 0.0, binary_example())


# --- pure binning against a convex program -----------------------------------------------

def _binning_oracle(R, qx, tau, pair):
    nx, ny = pair.p_y_x.shape
    H = entropy(qx)
    Q = cp.Variable((nx, ny), nonneg=True)
    Qb = cp.Variable((nx, ny), nonneg=True)
    base = np.repeat(qx[:, None], ny, 1)
    cons = [cp.sum(Q, 1) == qx, cp.sum(Qb, 1) == qx, cp.sum(Q, 0) == cp.sum(Qb, 0)]

    def mi(M):
        prod = cp.reshape(qx, (nx, 1), order="C") @ cp.reshape(cp.sum(M, 0), (1, ny), order="C")
        return cp.sum(cp.rel_entr(M, prod))

    obj = (tau * cp.sum(cp.rel_entr(Q, base * pair.p_y_x)) + cp.sum(cp.rel_entr(Qb, base * pair.pbar_y_x))
           + cp.maximum(0, mi(Q) - H + R) + tau * cp.maximum(0, mi(Qb) - H + R))
    prob = cp.Problem(cp.Minimize(obj), cons)
    prob.solve(solver="CLARABEL")
    return prob.value


@pytest.mark.parametrize("R,qx,tau", [(0.3, [0.5, 0.5], 1.0), (0.5, [0.4, 0.6], 2.0), (0.1, [0.3, 0.7], 0.5)])
def test_pure_binning_matches_convex_oracle(R, qx, tau):
    pair = binary_example()
    qx = np.array(qx)
    assert pure_binning_b(R, qx, tau, pair) == pytest.approx(_binning_oracle(R, qx, tau, pair), abs=1e-6)


# --- zero rate ------------------------------------------------------------------------------

def _zero_rate_oracle(E1, pair):
    P, Pb = pair.p_xy, pair.pbar_xy
    Qb = cp.Variable(P.shape, nonneg=True)
    if E1 == 0:
        # the divergence ball degenerates to Q = P
        cons = [cp.sum(Qb, 1) == P.sum(1), cp.sum(Qb, 0) == P.sum(0)]
    else:
        Q = cp.Variable(P.shape, nonneg=True)
        cons = [cp.sum(Q) == 1, cp.sum(Q, 1) == cp.sum(Qb, 1), cp.sum(Q, 0) == cp.sum(Qb, 0),
                cp.sum(cp.rel_entr(Q, P)) <= E1]
    prob = cp.Problem(cp.Minimize(cp.sum(cp.rel_entr(Qb, Pb))), cons)
    prob.solve(solver="CLARABEL")
    return prob.value


@pytest.mark.parametrize("seed", [0, 1])
def test_zero_rate_matches_convex_oracle(seed):
    rng = np.random.default_rng(seed)
    pair = HypothesisPair(rng.dirichlet(np.ones(6)).reshape(2, 3), rng.dirichlet(np.ones(6)).reshape(2, 3))
    for E1 in (0.0, 0.02):
        assert zero_rate_bound(E1, pair).value == pytest.approx(_zero_rate_oracle(E1, pair), abs=1e-6)


def test_zero_rate_binary_example_is_zero():
    # equal marginals under both hypotheses: the bound collapses
    assert zero_rate_bound(0.01, binary_example()).value == pytest.approx(0.0, abs=1e-9)


@pytest.mark.slow
def test_binning_bound_tends_to_zero_rate_bound():
    pair = skewed_pair()
    zr = zero_rate_bound(0.02, pair).value
    vals = [e2_lower(OperatingPoint(0.0, 0.02), pair,
                     replace(FAST, qx_resolution=32, tau_max=t, tau_points=p)).value
            for t, p in ((64, 21), (4096, 41))]
    assert vals[0] <= vals[1] + 1e-9 <= zr + 2e-3
    assert zr - vals[1] <= 5e-3


# --- Stein and no-loss ------------------------------------------------------------------------

def test_stein_matches_zero_e1_and_converse():
    pair = skewed_pair()
    rep = stein_lower(0.3, pair, FAST)
    assert rep.value == pytest.approx(e2_lower(OperatingPoint(0.3, 0.0), pair, FAST).value, abs=1e-12)
    assert rep.value <= kl(pair.p_xy.ravel(), pair.pbar_xy.ravel()) + 1e-12
    assert rep.weak_value <= rep.unconstrained_term + 1e-12


def test_stein_without_binning_is_full_divergence():
    pair = binary_example()
    rep = stein_lower(math.log(2), pair, FAST)
    assert rep.weak_value == pytest.approx(rep.unconstrained_term, abs=1e-15)
    assert rep.weak_flat


def test_no_loss_fails_at_zero_rate():
    rep = no_loss_check(0.0, skewed_pair(), FAST)
    assert not rep.holds
    assert rep.margin < 0
    assert rep.checks == []
