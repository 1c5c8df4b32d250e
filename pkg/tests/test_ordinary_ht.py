import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dht_exp.ordinary_ht import (
    INF,
    critical_point,
    d2_chernoff,
    d2_curve,
    d2_primal,
    np_exact,
    stein,
)
from dht_exp.prob_core import ProbError, binary_example, kl

P, PB = np.array([0.9, 0.1]), np.array([0.99, 0.01])


def test_identical_laws_give_zero():
    for d1 in (0.0, 0.01, 0.3):
        assert d2_primal(P, P, d1) == 0.0
        assert d2_chernoff(P, P, d1) == pytest.approx(0.0, abs=1e-12)


def test_stein_limit():
    assert d2_primal(P, PB, 0.0) == pytest.approx(kl(P, PB), abs=1e-15)
    assert d2_chernoff(P, PB, 0.0) == pytest.approx(kl(P, PB), abs=1e-15)
    # sup over tau of (tau+1) d_tau approaches D(P||Pbar) from below as tau grows
    from dht_exp.ordinary_ht import chernoff_distance
    vals = [(t + 1) * chernoff_distance(P, PB, t) for t in (10.0, 100.0, 1e4)]
    assert vals[0] < vals[1] < vals[2] <= kl(P, PB)
    assert vals[2] == pytest.approx(kl(P, PB), abs=1e-4)


def test_primal_dual_example():
    assert d2_primal(P, PB, 0.01) == pytest.approx(d2_chernoff(P, PB, 0.01), abs=2e-3)


def test_primal_matches_grid_oracle():
    for d1 in (0.005, 0.01, 0.03):
        assert d2_primal(P, PB, d1) == pytest.approx(d2_primal(P, PB, d1, grid_resolution=20000), abs=1e-4)


def test_negative_d1_rejected():
    with pytest.raises(ProbError):
        d2_primal(P, PB, -0.1)


def test_stein_examples():
    pair = binary_example()
    assert stein(pair.p_xy.ravel(), pair.pbar_xy.ravel()) == pytest.approx(0.1444797, abs=1e-6)
    assert stein(P, P) == 0.0
    assert stein([0.5, 0.5], [1.0, 0.0]) == INF


def test_curve_flags_past_critical():
    crit = critical_point(P, PB)
    c = d2_curve(P, PB, [0.0, crit / 2, 2 * crit])
    assert [m["past_critical"] for _, _, m in c.points] == [False, False, True]
    assert c.y[-1] == pytest.approx(0.0, abs=1e-12)


binary_pairs = st.tuples(st.floats(0.02, 0.98), st.floats(0.02, 0.98)).filter(lambda t: abs(t[0] - t[1]) > 0.05)


@settings(max_examples=30, deadline=None)
@given(binary_pairs)
def test_d2_convex_nonincreasing(ab):
    p = np.array([ab[0], 1 - ab[0]])
    pb = np.array([ab[1], 1 - ab[1]])
    crit = critical_point(p, pb)
    xs = np.linspace(0, crit, 9)
    ys = np.array([d2_primal(p, pb, x) for x in xs])
    assert np.all(np.diff(ys) <= 1e-12)
    assert np.all(ys[1:-1] <= 0.5 * (ys[:-2] + ys[2:]) + 1e-6)


# --- exact NP -------------------------------------------------------------------

def test_np_degenerate_thresholds():
    assert np_exact(P, PB, 5, INF) == pytest.approx((1.0, 0.0), abs=1e-12)
    assert np_exact(P, PB, 5, -INF) == pytest.approx((0.0, 1.0), abs=1e-12)


def test_np_two_outcomes_by_hand():
    # llr(0) = log(0.9/0.99) < 0, llr(1) = log(10) > 0: decide H only on symbol 1
    p1, p2 = np_exact(P, PB, 1, 0.0, 0.0)
    assert p1 == pytest.approx(0.9, abs=1e-15)
    assert p2 == pytest.approx(0.01, abs=1e-15)


@pytest.mark.parametrize("n", [1, 3, 6, 10])
def test_np_matches_sequence_enumeration(n):
    p = np.array([0.5, 0.3, 0.2]) if n <= 6 else P
    pb = np.array([0.2, 0.3, 0.5]) if n <= 6 else PB
    for T in (-0.4, 0.0, 0.35):
        for eta in (0.0, 0.5):
            a1 = a2 = 0.0
            for seq in itertools.product(range(p.size), repeat=n):
                mp = float(np.prod(p[list(seq)]))
                mb = float(np.prod(pb[list(seq)]))
                llr = math.log(mp) - math.log(mb)
                if abs(llr - n * T) <= 1e-9 * max(1.0, abs(n * T), abs(llr)):
                    a1 += (1 - eta) * mp
                    a2 += eta * mb
                elif llr > n * T:
                    a2 += mb
                else:
                    a1 += mp
            e1, e2 = np_exact(p, pb, n, T, eta)
            assert e1 == pytest.approx(a1, abs=1e-12)
            assert e2 == pytest.approx(a2, abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-1.0, 1.0), min_size=2, max_size=12), st.floats(0.0, 1.0))
def test_np_monotone_in_threshold(ts, eta):
    ts = sorted(ts)
    out = [np_exact(P, PB, 9, t, eta) for t in ts]
    for (a1, a2), (b1, b2) in zip(out, out[1:]):
        assert b1 >= a1
        assert b2 <= a2


def test_np_empirical_exponents_trend():
    # thresholds with -(1/n) log p1 close to D1; the type-2 exponent gap shrinks with n
    d1 = 0.02
    target = d2_primal(P, PB, d1)
    gaps = []
    for n in (8, 16, 32):
        ts = np.linspace(-0.5, 2.5, 3001)
        best = None
        for T in ts:
            p1, p2 = np_exact(P, PB, n, T)
            if p1 > 0 and -math.log(p1) / n >= d1:
                best = (T, p2)
        gaps.append(abs(-math.log(best[1]) / n - target))
    assert gaps[0] > gaps[-1]
