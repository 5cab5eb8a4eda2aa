import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_chain_min
from shapeline import subadd
from shapeline.errors import InvalidArgumentError, PropertyViolationError
from shapeline.netbuild import SpatialNetwork, build_rng
from shapeline.ppgen import PointSet, Region, Window, sample_poisson, stream
from shapeline.routes import RouteEngine
from shapeline.subadd import (MissingValueArray, extract_array, lemma_l2_check, penalized_matrix, penalized_min,
                              synthetic_array, tail_sum, verify_prop_sub)


def dense_array(good, x):
    n = len(good) - 1
    v = np.full((n + 1, n + 1), np.nan)
    for i in range(n + 1):
        for j in range(i + 1, n + 1):
            if good[i] and good[j]:
                v[i, j] = x(i, j)
    return MissingValueArray(np.array(good, dtype=bool), values=v)


# --- arrays --------------------------------------------------------------------

def test_array_validation():
    with pytest.raises(InvalidArgumentError):
        MissingValueArray([True, True])
    with pytest.raises(InvalidArgumentError):
        MissingValueArray([True, True], values=[[0, -1], [0, 0]])
    with pytest.raises(InvalidArgumentError):
        MissingValueArray([True, True], prefix=[1.0, 0.5])
    arr = dense_array([1, 0, 1], lambda i, j: 3.0)
    assert arr.x(0, 2) == 3.0
    with pytest.raises(InvalidArgumentError):
        arr.x(0, 1)
    assert arr.delta_hat == pytest.approx(2 / 3)


def test_synthetic_unit_steps():
    arr = synthetic_array(50, 1.0, ("constant", (1.0,)), seed=1)
    assert arr.good.all()
    assert all(arr.x(i, j) == j - i for i in range(0, 50, 7) for j in range(i + 1, 51, 5))
    rep = verify_prop_sub([arr, synthetic_array(50, 1.0, ("constant", (1.0,)), seed=2)], [1, 4, 64], [10, 50])
    assert rep.c_hat_per_K == [1.0, 1.0, 1.0]


def test_synthetic_steps_are_dyadic_and_positive():
    arr = synthetic_array(1000, 0.5, ("exponential", (1.0,)), seed=3)
    steps = np.diff(arr.prefix)
    assert np.all(steps > 0) and np.all(steps / subadd.QUANTUM == np.round(steps / subadd.QUANTUM))
    # sums are exact, so additivity holds with equality
    P = arr.prefix
    assert all(P[k] - P[i] == (P[j] - P[i]) + (P[k] - P[j]) for i, j, k in [(0, 250, 600), (3, 500, 1000)])


def test_synthetic_law_of_large_numbers():
    vals = np.array([synthetic_array(10_000, 1.0, ("exponential", (1.0,)), seed=s).x(0, 10_000) / 10_000
                     for s in range(20)])
    assert abs(vals.mean() - 1) <= 3 * vals.std(ddof=1) / math.sqrt(len(vals)) + 2 * subadd.QUANTUM


def test_synthetic_argument_checks():
    for delta in (0.0, -0.1, 1.5, float("nan")):
        with pytest.raises(InvalidArgumentError):
            synthetic_array(10, delta)
    with pytest.raises(InvalidArgumentError):
        synthetic_array(10, 0.5, ("uniform", (1.0, 0.5)))
    with pytest.raises(InvalidArgumentError):
        synthetic_array(10, 0.5, ("cauchy", (1.0,)))


def test_uniform_law_recovers_constant():
    arrays = [synthetic_array(10_000, 0.5, ("uniform", (0.5, 1.5)), seed=s) for s in range(24)]
    rep = verify_prop_sub(arrays, [32, 64], [10_000])
    assert abs(rep.c_hat - 1) <= 0.01
    assert all(rep.checks.values())


# --- penalised minimum -----------------------------------------------------------

def test_all_good_subadditive_gives_x():
    pts = np.sort(stream(1, 0).random(9)) * 10
    arr = dense_array([1] * 9, lambda i, j: abs(pts[j] - pts[i]) ** 0.5)
    t = penalized_min(arr, 5.0)
    assert t.Y[8] == arr.x(0, 8)
    assert t.path(8) == [0, 8]


def test_single_missing_middle():
    for x02, K in ((3.0, 1.0), (3.0, 2.0), (1.0, 4.0)):
        arr = dense_array([1, 0, 1], lambda i, j: x02)
        t = penalized_min(arr, K)
        assert t.Y[2] == min(x02, 2 * K)
        assert t.Y[1] == K


def test_ties_prefer_fewer_penalties_then_earliest():
    arr = dense_array([1, 1, 1], lambda i, j: float(j - i))
    t = penalized_min(arr, 1.0)
    assert t.Y[2] == 2 and t.pred[2] == 0
    arr = dense_array([1, 0, 1], lambda i, j: 2.0)
    t = penalized_min(arr, 1.0)
    assert t.Y[2] == 2 and t.pred[2] == 0 and t.penalties[2] == 0


def test_dp_matches_brute_force():
    rng = stream(77, 0)
    for trial in range(200):
        n = int(rng.integers(1, 13))
        good = rng.random(n + 1) < 0.6
        vals = rng.random((n + 1, n + 1)) * 4
        x = lambda i, j: float(vals[i, j])  # noqa: E731
        K = float(rng.choice([0.3, 1.0, 2.5]))
        arr = dense_array(good, x)
        assert penalized_min(arr, K).Y[n] == pytest.approx(brute_chain_min(good, x, K, n), rel=1e-13, abs=0)


def test_additive_dp_matches_dense_dp():
    for s in range(10):
        arr = synthetic_array(60, 0.4, ("exponential", (1.0,)), seed=s)
        dense = MissingValueArray(arr.good, values=arr.dense())
        for K in (0.5, 2.0, 8.0):
            a, b = penalized_min(arr, K), penalized_min(dense, K)
            assert np.array_equal(a.Y, b.Y) and np.array_equal(a.pred, b.pred)


def check_table_invariants(arr, Ks):
    prev = None
    for K in Ks:
        Y = penalized_matrix(arr, K)
        n = arr.n
        g = arr.good
        for k in range(1, n + 1):
            for j in range(1, k):
                assert Y[0, k] <= Y[0, j] + Y[j, k]
            if g[0] and g[k]:
                assert Y[0, k] <= arr.x(0, k)
        t = penalized_min(arr, K)
        for k in range(1, n + 1):
            assert t.Y[k] >= K * t.penalties[k]
            assert len(t.penalized_steps(g, k)) == t.penalties[k]
        assert np.all(np.isfinite(t.Y))
        if prev is not None:
            assert np.all(prev <= t.Y[1:])
        prev = t.Y[1:]


@settings(max_examples=150, deadline=None)
@given(st.lists(st.booleans(), min_size=2, max_size=10), st.integers(0, 2 ** 31), st.booleans())
def test_penalized_invariants_on_integer_arrays(good, seed, metric):
    rng = stream(seed, 0)
    n = len(good) - 1
    if metric:
        pos = np.sort(rng.integers(0, 30, n + 1))
        arr = dense_array(good, lambda i, j: float(pos[j] - pos[i]))
    else:
        vals = rng.integers(0, 9, (n + 1, n + 1)).astype(float)
        arr = dense_array(good, lambda i, j: vals[i, j])
    check_table_invariants(arr, [1.0, 2.0, 3.0, 8.0])


def test_k_must_be_positive():
    arr = dense_array([1, 1], lambda i, j: 1.0)
    for K in (0.0, -1.0, math.inf):
        with pytest.raises(InvalidArgumentError):
            penalized_min(arr, K)


# --- the report ----------------------------------------------------------------

def test_report_on_synthetic_arrays():
    arrays = [synthetic_array(400, 0.5, seed=s) for s in range(12)]
    rep = verify_prop_sub(arrays, [64, 1, 8], [100, 400])
    assert rep.K_ladder == [1.0, 8.0, 64.0]
    assert all(rep.checks.values())
    assert len(rep.bad_step_count) == 12 and rep.arrays == 12
    for a, b in zip(rep.y_over_n_trace[1.0], rep.y_over_n_trace[64.0]):
        assert a <= b
    head, body = rep.rows()
    assert head[0] == "K" and len(body) == 6


def test_report_names_witness(monkeypatch):
    arrays = [synthetic_array(30, 0.5, seed=s) for s in range(3)]
    real = subadd.penalized_min

    def broken(arr, K, start=0):
        t = real(arr, K, start)
        t.Y = t.Y - (1.0 if K > 2 else 0.0) * (np.arange(len(t.Y)) > 0) * 0.5
        return t

    monkeypatch.setattr(subadd, "penalized_min", broken)
    with pytest.raises(PropertyViolationError) as err:
        verify_prop_sub(arrays, [1, 4], [30])
    assert "array" in err.value.witness


def test_report_argument_checks():
    arr = synthetic_array(10, 1.0, seed=1)
    with pytest.raises(InvalidArgumentError):
        verify_prop_sub([arr], [1], [20])
    with pytest.raises(InvalidArgumentError):
        verify_prop_sub([], [1], [5])
    with pytest.raises(InvalidArgumentError):
        verify_prop_sub([arr], [], [5])


# --- arrays from networks -------------------------------------------------------

def test_extract_all_good_when_cells_are_large():
    ps = sample_poisson(Window(150, 150, "torus"), 1.0, 4)
    arr = extract_array(RouteEngine(build_rng(ps)), Region.square((0, 0), 9), 0.0, 10.0, 4, seed=1)
    assert arr.good.all()


def test_extract_empty_middle_cell():
    w = Window(100, 100, "plane")
    ps = PointSet(w, [(50.2, 50.1), (70.1, 49.9)])
    net = SpatialNetwork(ps, [(0, 1)], [20.0], "hand")
    arr = extract_array(net, Region.square((0, 0), 1), 0.0, 10.0, 2, seed=0)
    assert arr.good.tolist() == [True, False, True]
    assert arr.x(0, 2) == 20.0
    assert np.isnan(arr.values[0, 1]) and np.isnan(arr.values[1, 2])


def test_extract_satisfies_triangle_inequality():
    ps = sample_poisson(Window(300, 300, "torus"), 1.0, 9)
    arr = extract_array(RouteEngine(build_rng(ps)), Region.square((0, 0), 1), 0.0, 5.0, 20, seed=2)
    gi = np.flatnonzero(arr.good)
    assert len(gi) >= 5
    for a in gi:
        for b in gi:
            for c in gi:
                if a < b < c:
                    assert arr.x(a, c) <= (arr.x(a, b) + arr.x(b, c)) * (1 + 1e-12)


def test_extract_guards():
    ps = sample_poisson(Window(100, 100, "torus"), 1.0, 1)
    eng = RouteEngine(build_rng(ps))
    with pytest.raises(InvalidArgumentError):
        extract_array(eng, Region.square((0, 0), 2), 0.0, 1.5, 5, seed=0)
    with pytest.raises(InvalidArgumentError):
        extract_array(eng, Region.square((0, 0), 1), 0.0, 10.0, 5, seed=0)


# --- the double-sum inequality ----------------------------------------------------

def direct_sides(p, eta, n, J):
    lhs = inner = 0.0
    for i in range(n + 1):
        for j in range(i + 2, n + 1):
            lhs += (j - i) * math.sqrt(p[i][j])
            inner += (j - i) * p[i][j]
    tail = sum(j * eta ** ((j - 1) / 2) for j in range(J + 1, 4000))
    return lhs / n, tail + J / math.sqrt(n) * math.sqrt(inner)


def test_tail_sum_closed_form():
    for eta, J in ((0.3, 2), (0.7, 5), (0.5, 2)):
        assert tail_sum(eta, J) == pytest.approx(sum(j * eta ** ((j - 1) / 2) for j in range(J + 1, 4000)),
                                                 rel=1e-12)


def test_lemma_zero_and_extremal():
    lhs, rhs = subadd._sides(np.zeros((6, 6)), 0.5, 5, 2)
    assert lhs == 0 and rhs > 0
    ext = [[0.5 ** (j - i - 1) if j - i >= 2 else 0.0 for j in range(6)] for i in range(6)]
    lhs, rhs = direct_sides(ext, 0.5, 5, 2)
    rep = lemma_l2_check(0.5, 5, 2, trials=0, seed=0)
    assert rep.extremal_lhs == pytest.approx(lhs, rel=1e-13)
    assert rep.extremal_rhs == pytest.approx(rhs, rel=1e-12)
    assert lhs <= rhs and rep.extremal_ok and rep.ok


@pytest.mark.parametrize("eta", [0.3, 0.7])
@pytest.mark.parametrize("n", [10, 50])
@pytest.mark.parametrize("J", [2, 5])
def test_lemma_random_trials(eta, n, J):
    rep = lemma_l2_check(eta, n, J, trials=125, seed=n * J)
    assert rep.violations == [] and rep.ok
    assert rep.max_slack_ratio <= 1


def test_lemma_argument_checks():
    for args in ((1.0, 5, 2), (0.5, 1, 2), (0.5, 5, 1)):
        with pytest.raises(InvalidArgumentError):
            lemma_l2_check(*args, trials=1, seed=0)
