import csv
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linear_sum_assignment

from igsp.assignment import (
    AssignmentError,
    brute_force_solve,
    build_cost_matrix,
    dump_csv,
    km_solve,
    match_energy,
)


def exact_sum(values):
    return sum((Fraction(float(v)) for v in values), Fraction(0))


def check_partial_bijection(res, m, n):
    src = [i for i, _ in res.pairs]
    tgt = [j for _, j in res.pairs]
    assert len(set(src)) == len(src) and len(set(tgt)) == len(tgt)
    assert sorted(src + list(res.unmatched_source)) == list(range(m))
    assert sorted(tgt + list(res.unmatched_target)) == list(range(n))


class TestBuildCostMatrix:
    def test_no_capping_no_padding(self):
        cd = np.array([[1.0, 2.0], [3.0, 4.0]])
        c = build_cost_matrix(cd, 10.0)
        assert np.array_equal(c.values, cd) and c.size == 2

    def test_virtual_column(self):
        cd = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
        c = build_cost_matrix(cd, 10.0)
        assert c.values.shape == (3, 3)
        assert np.all(c.values[:, 2] == 10.0)

    def test_virtual_row(self):
        c = build_cost_matrix(np.ones((2, 4)), 3.0)
        assert c.values.shape == (4, 4) and np.all(c.values[2:] == 3.0)

    def test_prior_mismatch_capped(self):
        c = build_cost_matrix(np.array([[15.0, 1.0]]), 10.0)
        assert c.values[0, 0] == 10.0

    def test_entry_equal_threshold_stays_threshold(self):
        assert build_cost_matrix(np.array([[10.0]]), 10.0).values[0, 0] == 10.0

    def test_empty(self):
        with pytest.raises(AssignmentError, match="empty keypoint set"):
            build_cost_matrix(np.zeros((0, 3)), 1.0)
        with pytest.raises(AssignmentError, match="empty keypoint set"):
            build_cost_matrix(np.zeros((3, 0)), 1.0)

    def test_bad_threshold(self):
        with pytest.raises(AssignmentError):
            build_cost_matrix(np.ones((2, 2)), 0.0)


class TestKmSolve:
    def test_one_by_one(self):
        r = km_solve(build_cost_matrix([[3.0]], 10.0))
        assert r.pairs == ((0, 0),) and r.total_cost == 3.0

    def test_two_by_two(self):
        # oracle: 1 + 0 = 1 beats 2 + 3 = 5
        r = km_solve(build_cost_matrix([[1.0, 2.0], [3.0, 0.0]], 10.0))
        assert set(r.pairs) == {(0, 0), (1, 1)} and r.total_cost == 1.0

    def test_all_mismatches(self):
        r = km_solve(build_cost_matrix(np.full((3, 2), 12.0), 10.0))
        assert r.pairs == () and r.unmatched_source == (0, 1, 2) and r.unmatched_target == (0, 1)
        assert r.total_cost == 30.0

    def test_selected_edge_at_threshold_is_mismatch(self):
        r = km_solve(build_cost_matrix([[10.0, 20.0], [20.0, 1.0]], 10.0))
        assert r.pairs == ((1, 1),) and r.unmatched_source == (0,)

    def test_matches_scipy(self, rng):
        # independent oracle for sizes beyond brute force
        for n in (10, 25, 60):
            cd = rng.uniform(0, 2, size=(n, n + 3))
            c = build_cost_matrix(cd, 1.0)
            r = km_solve(c)
            rows, cols = linear_sum_assignment(c.values)
            assert r.total_cost == pytest.approx(c.values[rows, cols].sum(), abs=1e-9)

    def test_large_instance_fast(self, rng):
        import time

        c = build_cost_matrix(rng.uniform(0, 2, size=(300, 280)), 1.0)
        t0 = time.perf_counter()
        km_solve(c)
        assert time.perf_counter() - t0 < 5.0

    @settings(max_examples=150, deadline=None)
    @given(st.integers(1, 7), st.integers(1, 7), st.integers(0, 2 ** 32 - 1))
    def test_equals_brute_force(self, m, n, seed):
        rng = np.random.default_rng(seed)
        T = rng.uniform(0.5, 5)
        c = build_cost_matrix(rng.uniform(0, 2 * T, size=(m, n)), T)
        km, bf = km_solve(c), brute_force_solve(c)
        assert km.total_cost == bf.total_cost
        check_partial_bijection(km, m, n)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(2, 6), st.integers(0, 2 ** 32 - 1))
    def test_integer_ties_equal_brute_force(self, n, seed):
        # many ties: small integer costs
        rng = np.random.default_rng(seed)
        c = build_cost_matrix(rng.integers(0, 3, size=(n, n)).astype(float), 2.0)
        assert km_solve(c).total_cost == brute_force_solve(c).total_cost

    def test_deterministic(self, rng):
        c = build_cost_matrix(rng.integers(0, 2, size=(6, 6)).astype(float), 5.0)
        assert km_solve(c) == km_solve(c)


class TestBruteForce:
    def test_identity_cost(self):
        cd = 1.0 - np.eye(3)
        r = brute_force_solve(build_cost_matrix(cd, 10.0))
        assert r.pairs == ((0, 0), (1, 1), (2, 2)) and r.total_cost == 0.0

    def test_tie_lowest_index(self):
        r = brute_force_solve(build_cost_matrix(np.ones((2, 2)), 10.0))
        assert r.assignment == (0, 1)

    def test_size_limit(self):
        with pytest.raises(AssignmentError, match="oracle size limit"):
            brute_force_solve(build_cost_matrix(np.ones((10, 10)), 2.0))


class TestEnergyIdentity:
    @settings(max_examples=100, deadline=None)
    @given(st.integers(1, 7), st.integers(1, 7), st.integers(0, 2 ** 32 - 1))
    def test_exact_rational(self, m, n, seed):
        rng = np.random.default_rng(seed)
        T = rng.uniform(0.5, 5)
        c = build_cost_matrix(rng.uniform(0, 2 * T, size=(m, n)), T)
        r = km_solve(c)
        e_bgm = exact_sum(c.values[row, col] for row, col in enumerate(r.assignment))
        e_min = exact_sum([c.values[i, j] for i, j in r.pairs]) + Fraction(T) / 2 * r.unmatched_count
        assert e_bgm - e_min == Fraction(T) / 2 * abs(m - n)

    def test_float_fields_exact_on_dyadic_costs(self, rng):
        for _ in range(200):
            m, n = rng.integers(1, 8, size=2)
            T = float(rng.integers(1, 64)) / 4
            cd = rng.integers(0, 512, size=(m, n)) / 256 * T
            r = km_solve(build_cost_matrix(cd, T))
            assert r.total_cost - r.energy == T / 2 * abs(m - n)

    def test_match_energy_examples(self):
        assert match_energy((), 6, np.zeros((3, 3)), 15.0) == 90.0
        assert match_energy(((0, 0),), 0, np.array([[4.0]]), 1.0) == 4.0


class TestThresholdMonotonicity:
    def test_same_matching_when_edges_below_both_thresholds(self, rng):
        for _ in range(50):
            cd = rng.uniform(0, 1, size=(5, 5))
            a = km_solve(build_cost_matrix(cd, 2.0))
            b = km_solve(build_cost_matrix(cd, 3.0))
            assert set(a.pairs) == set(b.pairs)


def test_dump_csv(tmp_path):
    c = build_cost_matrix(np.array([[1.0, 9.0], [9.0, 2.0], [3.0, 3.0]]), 5.0)
    r = km_solve(c)
    p = tmp_path / "d.csv"
    dump_csv(c, r, p)
    rows = list(csv.reader(p.open()))
    assert rows[0][0] == "# m"
    assert [float(x) for x in rows[1]] == [1.0, 5.0, 5.0]
    statuses = [row[3] for row in rows[6:]]
    assert statuses.count("match") == len(r.pairs) and len(statuses) == 3
    assert math.isclose(sum(float(row[2]) for row in rows[6:]), r.total_cost)
