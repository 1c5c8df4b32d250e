import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dht_exp.cd_lab import (
    CdCode,
    CoverError,
    EnsembleSpec,
    SizeGuardError,
    cd_np_exact,
    chernoff_parameter_exact,
    correlation_exponent_formula,
    draw_hierarchical,
    dht_from_cover,
    enumerate_tally,
    enumerator_expectation_exact,
    greedy_cover,
    induced_distribution,
    rate_count,
    type_class_code,
)
from dht_exp.ordinary_ht import np_exact
from dht_exp.prob_core import (
    HypothesisPair,
    ProbError,
    TypeDescriptor,
    binary_example,
    chernoff_diag_lam,
    compositions,
    info_measures,
    type_class_size,
    type_enumerate,
)


def ternary_pair():
    return HypothesisPair.from_channels([0.2, 0.3, 0.5], [[0.7, 0.3], [0.4, 0.6], [0.1, 0.9]], None,
                                        [[0.5, 0.5], [0.9, 0.1], [0.2, 0.8]])


# --- codes --------------------------------------------------------------------

def test_code_validation():
    with pytest.raises(ProbError):
        CdCode(((0, 1), (0, 1)), 2)
    with pytest.raises(ProbError):
        CdCode(((0, 1), (1, 1)), 2)
    with pytest.raises(ProbError):
        CdCode(((0, 2),), 2)
    with pytest.raises(ProbError):
        CdCode((), 2)


def test_induced_distribution_brute_force():
    pair = ternary_pair()
    code = CdCode(((0, 1, 2), (2, 0, 1), (1, 2, 0)), 3)
    got = induced_distribution(code, pair.p_y_x)
    for k, y in enumerate(itertools.product(range(2), repeat=3)):
        want = np.mean([np.prod([pair.p_y_x[x[i], y[i]] for i in range(3)]) for x in code.codewords])
        assert got[k] == pytest.approx(want, abs=1e-15)
    assert got.sum() == pytest.approx(1.0, abs=1e-14)


# --- exact identities -----------------------------------------------------------

@pytest.mark.parametrize("lam", [0.0, 0.3, 0.5, 1.0])
def test_single_codeword_chernoff_is_minus_d_lambda(lam):
    pair = ternary_pair()
    x = (0, 1, 2, 2, 1, 2)
    q = np.bincount(x, minlength=3) / len(x)
    got = chernoff_parameter_exact(CdCode((x,), 3), pair, lam)
    assert got == pytest.approx(-chernoff_diag_lam(q, lam, pair), abs=1e-12)


def test_single_constant_codeword_is_ordinary_np():
    pair = binary_example()
    for T in (-0.3, 0.0, 0.4):
        for eta in (0.0, 0.5):
            a = cd_np_exact(CdCode(((0,) * 6,), 2), pair, T, eta)
            b = np_exact(pair.p_y_x[0], pair.pbar_y_x[0], 6, T, eta)
            assert a == pytest.approx(b, abs=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.permutations(range(6)), st.floats(-0.5, 0.5), st.sampled_from([0.0, 0.25, 1.0]))
def test_permutation_invariance(perm, T, eta):
    pair = ternary_pair()
    code = CdCode(((0, 1, 2, 2, 1, 0), (2, 2, 1, 1, 0, 0), (1, 0, 2, 0, 2, 1)), 3)
    pc = code.permuted(perm)
    assert cd_np_exact(pc, pair, T, eta) == pytest.approx(cd_np_exact(code, pair, T, eta), abs=1e-12)
    assert chernoff_parameter_exact(pc, pair, 0.4) == pytest.approx(
        chernoff_parameter_exact(code, pair, 0.4), abs=1e-12)


def test_chernoff_parameter_nonpositive_and_zero_at_ends():
    pair = binary_example()
    code = type_class_code(TypeDescriptor((3, 3)))
    for lam in (0.0, 1.0):
        assert chernoff_parameter_exact(code, pair, lam) == pytest.approx(0.0, abs=1e-14)
    assert chernoff_parameter_exact(code, pair, 0.5) < 0


def test_bad_arguments():
    pair = binary_example()
    code = CdCode(((0, 1),), 2)
    with pytest.raises(ProbError):
        chernoff_parameter_exact(code, pair, 1.5)
    with pytest.raises(ProbError):
        cd_np_exact(code, pair, 0.0, eta=2.0)
    with pytest.raises(ProbError):
        cd_np_exact(CdCode(((0, 2),), 3), pair, 0.0)


def test_size_guard():
    with pytest.raises(SizeGuardError):
        induced_distribution(CdCode(((0,) * 17,), 2), binary_example().p_y_x)


# --- ensemble ---------------------------------------------------------------------

def spec(n=8, seed=3, rho_c=0.15, rho_s=0.15):
    return EnsembleSpec(n, TypeDescriptor((n // 4, n // 4, 0, n // 2), (2, 2)), rho_c, rho_s, seed)


def test_rate_count_rounding():
    assert rate_count(10, 0.0) == 1
    assert rate_count(10, math.log(2) / 10) == 2
    assert rate_count(1, math.log(2.5)) == 3        # half rounds up
    assert rate_count(8, 0.15) == round(math.exp(1.2))


def test_spec_validation():
    with pytest.raises(ProbError):
        EnsembleSpec(8, TypeDescriptor((4, 4)), 0.1, 0.1, 1)
    with pytest.raises(ProbError):
        EnsembleSpec(8, TypeDescriptor((2, 2, 0, 2), (2, 2)), 0.1, 0.1, 1)
    with pytest.raises(ProbError):
        EnsembleSpec(8, TypeDescriptor((2, 2, 0, 4), (2, 2)), 0.1, 0.1, None)


def test_draws_reproducible_and_typed():
    s = spec()
    a, b = draw_hierarchical(s, 5), draw_hierarchical(s, 5)
    assert np.array_equal(a.satellites, b.satellites)
    assert not np.array_equal(a.satellites, draw_hierarchical(s, 6).satellites)
    q = s.q_ux.as_array()
    for c, u in enumerate(a.centers):
        for x in a.satellites[c]:
            jt = np.zeros((2, 2), int)
            np.add.at(jt, (u, x), 1)
            assert np.array_equal(jt, q)


def test_dedup_gives_valid_code():
    d = draw_hierarchical(spec(), 0)
    code = d.dedup()
    assert len(code) == len({tuple(x) for x in d.codewords()})
    assert code.clouds is not None


def test_distinct_codewords_at_least_half():
    # below the type-class entropy most codewords are distinct
    s = spec(n=12, rho_c=0.12, rho_s=0.12)
    total = s.n_clouds * s.n_satellites
    distinct = [len(draw_hierarchical(s, i).dedup()) for i in range(30)]
    assert min(distinct) >= total / 2


# --- enumerators ------------------------------------------------------------------------

def test_tally_sum_rules():
    s = spec()
    y = [0, 0, 1, 1, 1, 0, 1, 1]
    t = enumerate_tally(draw_hierarchical(s, 2), y, 2)
    assert t.total_n() == s.n_clouds
    assert t.total_m() == s.n_clouds * s.n_satellites
    for k in t.n:
        assert tuple(k.as_array().sum(0)) == (3, 5)


def _all_types(shape, n):
    for c in compositions(n, int(np.prod(shape))):
        yield TypeDescriptor(c, shape)


def test_exact_expectations_sum_to_counts():
    s = spec()
    y = [0, 0, 1, 1, 1, 0, 1, 1]
    tot_n = sum(enumerator_expectation_exact(s, q, y, 2) for q in _all_types((2, 2), 8))
    assert tot_n == s.n_clouds
    tot_m = sum(enumerator_expectation_exact(s, q, y, 2) for q in _all_types((2, 2, 2), 8))
    assert tot_m == s.n_clouds * s.n_satellites


def test_exact_expectation_incompatible_is_zero():
    s = spec()
    assert enumerator_expectation_exact(s, TypeDescriptor((8, 0, 0, 0), (2, 2)), [0] * 8, 2) == Fraction(0)


# --- correlation exponent formula -----------------------------------------------------------

def _joint(seed):
    rng = np.random.default_rng(seed)
    q_ux = np.array([[0.3, 0.2], [0.1, 0.4]])
    w = rng.dirichlet([1, 1], size=(2, 2))
    return q_ux[:, :, None] * w


def test_correlation_formula_diagonal():
    q = _joint(0)
    assert correlation_exponent_formula(q, q, 0.4, 0.5, 0.2) == pytest.approx(
        0.5 - info_measures(q).i_ux_y, abs=1e-15)


def test_correlation_formula_lambda_one():
    q = _joint(1)
    # move mass between u=0 and u=1 at fixed (U, X) and Y marginals: Q_UY changes
    qb = q.copy()
    e = 0.02
    qb[0, 0, 0] += e
    qb[0, 0, 1] -= e
    qb[1, 0, 0] -= e
    qb[1, 0, 1] += e
    iq, ib = info_measures(q), info_measures(qb)
    rho, rho_c = 0.5, 0.1
    want = (rho - ib.i_ux_y) - max(max(iq.i_u_y - rho_c, 0.0), iq.i_ux_y - rho)
    assert correlation_exponent_formula(q, qb, 1.0, rho, rho_c) == pytest.approx(want, abs=1e-14)


def test_correlation_formula_shared_centre_term():
    q = _joint(2)
    qb = q.copy()
    e = 0.01
    # same Q_UY, different Q_UXY
    qb[0, 0, 0] += e
    qb[0, 0, 1] -= e
    qb[0, 1, 0] -= e
    qb[0, 1, 1] += e
    iq, ib = info_measures(q), info_measures(qb)
    rho, rho_c, lam = 0.5, 0.0, 0.3
    pos = lambda v: max(v, 0.0)
    delta = ((1 - lam) * (rho - iq.i_ux_y) - lam * max(pos(iq.i_u_y - rho_c), iq.i_ux_y - rho)
             + lam * (rho - ib.i_ux_y) - (1 - lam) * max(pos(ib.i_u_y - rho_c), ib.i_ux_y - rho))
    got = correlation_exponent_formula(q, qb, lam, rho, rho_c)
    assert got == pytest.approx(delta + pos(iq.i_u_y - rho_c), abs=1e-14)


def test_correlation_formula_rejects_mismatched_marginals():
    q = _joint(0)
    qb = _joint(3)
    with pytest.raises(ProbError):
        correlation_exponent_formula(q, qb, 0.5, 0.5, 0.1)


# --- permutation covering ---------------------------------------------------------------------

def test_cover_with_full_class_is_identity():
    q = TypeDescriptor((3, 3))
    res = greedy_cover(q, type_class_code(q), seed=0)
    assert len(res.perms) == 1 and res.perms[0] == tuple(range(6))
    assert len(res.bins) == 1


@pytest.mark.parametrize("seed", range(5))
def test_cover_partitions_exactly(seed):
    q = TypeDescriptor((4, 4))
    base = CdCode(tuple(list(type_enumerate(q))[seed::10]), 2)
    res = greedy_cover(q, base, seed)
    words = [w for b in res.bins for w in b.codewords]
    assert len(words) == len(set(words)) == type_class_size(q)


def test_cover_permutation_count_calibration():
    # ceil((70/7) ln 70) + 5 = 48 permutations kept in >= 95% of seeds
    q = TypeDescriptor((4, 4))
    base = CdCode(tuple(list(type_enumerate(q))[:7]), 2)
    bound = math.ceil(70 / 7 * math.log(70)) + 5
    assert bound == 48
    used = [len(greedy_cover(q, base, s).perms) for s in range(100)]
    assert np.mean(np.array(used) <= bound) >= 0.95


def test_cover_limits():
    q = TypeDescriptor((4, 4))
    with pytest.raises(CoverError):
        greedy_cover(q, CdCode(((0, 0, 0, 0, 1, 1, 1, 1),), 2), seed=0, max_perms=5)
    with pytest.raises(ProbError):
        greedy_cover(q, CdCode(((0, 1),), 2), seed=0)


def test_dht_from_cover():
    pair = binary_example()
    q = TypeDescriptor((3, 3))
    full = type_class_code(q)
    assert dht_from_cover([full], pair, 0.1) == pytest.approx(cd_np_exact(full, pair, 0.1), abs=1e-15)
    base = CdCode(tuple(list(type_enumerate(q))[:5]), 2)
    res = greedy_cover(q, base, seed=1)
    p1, p2 = dht_from_cover(res.bins, pair, 0.1)
    want = [cd_np_exact(b, pair, 0.1) for b in res.bins]
    w = np.array([len(b) for b in res.bins]) / 20
    assert p1 == pytest.approx(float(w @ [a for a, _ in want]), abs=1e-15)
    assert p2 == pytest.approx(float(w @ [b for _, b in want]), abs=1e-15)
    assert 0 <= p1 <= 1 and 0 <= p2 <= 1
    with pytest.raises(ProbError):
        dht_from_cover(res.bins[:-1], pair, 0.1)
    with pytest.raises(ProbError):
        dht_from_cover([full, full], pair, 0.1)
