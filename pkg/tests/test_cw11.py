import numpy as np
import pytest
from hypothesis import given, strategies as st

from convexlusin.cw11 import (
    check_condition_a,
    check_condition_b,
    local_schedule,
    minimal_M,
    span_rank,
)
from convexlusin.jets import Jet1Set, sample_jet
from convexlusin.oracles import get_fixture

from _jetgen import random_convex_jet

ABS_JET = Jet1Set([[-1.0], [1.0]], [1.0, 1.0], [[-1.0], [1.0]])


def brute_minimal_M(jet):
    """Double loop over ordered pairs of the closed-form ratio."""
    best = 0.0
    for i in range(len(jet)):
        for k in range(len(jet)):
            if i == k:
                continue
            x, y = jet.points[i], jet.points[k]
            D = jet.values[i] - jet.values[k] - jet.gradients[k] @ (x - y)
            Q = float(((jet.gradients[i] - jet.gradients[k]) ** 2).sum())
            if Q > 0:
                best = max(best, Q / (2 * D))
    return best


class TestConditionA:
    def test_abs_jet_at_one_holds(self):
        assert check_condition_a(ABS_JET, 1.0).holds

    def test_abs_jet_at_half_fails_with_witness(self):
        chk = check_condition_a(ABS_JET, 0.5)
        assert not chk.holds
        x, y = chk.witness
        assert (ABS_JET.points[x, 0], ABS_JET.points[y, 0]) == (1.0, -1.0)

    @pytest.mark.parametrize("M", [1e-6, 1.0, 1e6])
    def test_singleton_always_holds(self, M):
        assert check_condition_a(Jet1Set([[0.3]], [2.0], [[5.0]]), M).holds

    def test_default_resolves_violation_above_rounding(self):
        # the violation 2/M - 2 is about 2e-10, far above rounding
        M = 1.0 - 1e-10
        assert not check_condition_a(ABS_JET, M).holds
        assert not check_condition_b(ABS_JET, M).holds
        assert check_condition_a(ABS_JET, M, tau=1e-9).holds


class TestConditionB:
    def test_abs_jet_probe_at_origin(self):
        assert check_condition_b(ABS_JET, 1.0, probes=[[0.0]]).holds

    def test_abs_jet_at_half_fails(self):
        assert not check_condition_b(ABS_JET, 0.5, probes=[[0.0]]).holds

    def test_same_point_pair_never_fails(self):
        jet = Jet1Set([[0.0, 0.0]], [1.0], [[2.0, -1.0]])
        probes = np.random.default_rng(0).normal(size=(50, 2)) * 10
        assert check_condition_b(jet, 1e-3, probes=probes).holds


class TestMinimalM:
    def test_abs_jet(self):
        assert minimal_M(ABS_JET).minimal_M == pytest.approx(1.0, rel=1e-12)

    def test_half_square_jet(self):
        jet = Jet1Set([[0.0], [1.0]], [0.0, 0.5], [[0.0], [1.0]])
        assert minimal_M(jet).minimal_M == pytest.approx(1.0, rel=1e-12)

    def test_non_monotone_gradients_infeasible(self):
        rep = minimal_M(Jet1Set([[0.0], [1.0]], [0.0, 0.0], [[0.0], [1.0]]))
        assert not rep.feasible and rep.witness_pair is not None

    def test_equal_gradients_give_zero(self):
        jet = Jet1Set([[0.0], [1.0], [3.0]], [1.0, 2.0, 4.0], [[1.0], [1.0], [1.0]])
        rep = minimal_M(jet)
        assert rep.feasible and rep.minimal_M == 0.0

    @given(st.integers(0, 10_000), st.integers(1, 3), st.integers(2, 15))
    def test_matches_double_loop(self, seed, dim, size):
        jet, _ = random_convex_jet(np.random.default_rng(seed), dim, size)
        assert minimal_M(jet).minimal_M == pytest.approx(brute_minimal_M(jet), rel=1e-9)

    @given(st.integers(0, 10_000), st.integers(1, 3), st.integers(3, 15))
    def test_monotone_under_restriction(self, seed, dim, size):
        rng = np.random.default_rng(seed)
        jet, _ = random_convex_jet(rng, dim, size)
        sub = jet.subset(rng.choice(size, size=size // 2 + 1, replace=False))
        assert minimal_M(sub).minimal_M <= minimal_M(jet).minimal_M * (1 + 1e-12)

    @given(st.integers(0, 10_000), st.integers(1, 3), st.integers(2, 15))
    def test_bounded_by_gradient_lipschitz(self, seed, dim, size):
        jet, lip = random_convex_jet(np.random.default_rng(seed), dim, size)
        assert minimal_M(jet).minimal_M <= lip * (1 + 1e-9)


@given(st.integers(0, 10_000), st.integers(1, 3), st.integers(2, 12))
def test_conditions_agree_around_minimal_M(seed, dim, size):
    jet, _ = random_convex_jet(np.random.default_rng(seed), dim, size)
    Mstar = minimal_M(jet).minimal_M
    above = Mstar * 1.000001
    assert check_condition_a(jet, above).holds and check_condition_b(jet, above).holds
    below = Mstar * 0.999
    assert not check_condition_a(jet, below).holds and not check_condition_b(jet, below).holds


class TestLocalSchedule:
    def test_abs_jet_floor(self):
        sch = local_schedule(ABS_JET, 2)
        assert sch.A_k[-1] == 2.0

    def test_singleton_floor(self):
        sch = local_schedule(Jet1Set([[0.5]], [1.0], [[3.0]]), 3)
        assert sch.A_k == [2.0, 2.0, 2.0]

    def test_quartic_grows(self):
        jet = sample_jet(get_fixture("quartic"), np.arange(-2.0, 3.0)[:, None])
        A = local_schedule(jet, 3).A_k
        assert all(b >= a for a, b in zip(A, A[1:]))
        assert all(a >= 24.0 for a in A[1:])


class TestSpanRank:
    def test_cylinder(self):
        jet = Jet1Set([[-1.0, 0.0], [1.0, 2.0], [2.0, -1.0]], [1.0, 1.0, 2.0],
                      [[-1.0, 0.0], [1.0, 0.0], [1.0, 0.0]])
        assert span_rank(jet) == 1

    def test_paraboloid(self):
        P = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        jet = sample_jet(get_fixture("sq2d"), P)
        assert span_rank(jet) == 2

    def test_singleton(self):
        assert span_rank(Jet1Set([[1.0, 2.0]], [0.0], [[1.0, 1.0]])) == 0

    @pytest.mark.parametrize("name,rank", [("paraboloid", 2), ("sq2d", 2), ("cyl_abs2d", 1), ("cyl_abs_lin", 1)])
    def test_fixtures(self, name, rank):
        P = np.random.default_rng(3).uniform(-2, 2, size=(8, 2))
        assert span_rank(sample_jet(get_fixture(name), P)) == rank
