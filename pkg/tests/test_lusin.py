import numpy as np
import pytest
from hypothesis import given, strategies as st

from convexlusin.cw11 import span_rank
from convexlusin.jets import GridFunction, Jet1Set, discrete_lipschitz, convexity_check
from convexlusin.lusin import (
    ResolutionError,
    TruncationFamily,
    build_C_sets,
    build_Ej,
    glue_partition,
    lipschitz_extend,
    lusin_approximate,
    measure_mismatch,
    sample_function,
    select_N,
    smooth_step,
)
from convexlusin.oracles import get_fixture


def line(f, lo, hi, n):
    return GridFunction.from_function(lambda p: f(p[..., 0]), (lo,), (hi,), (n,))


def abs_grid(h=0.05, half=2.0):
    n = int(round(2 * half / h)) + 1
    g = line(np.abs, -half, half, n)
    return g, np.sign(g.axes()[0])[:, None]


def brute_member(g, grads, idx, j, tau=1e-10):
    """Direct scan of the truncation test at one node of a 1D grid."""
    x = g.axes()[0]
    y = x[idx]
    near = np.abs(x - y) <= 1.0 / j + 1e-12
    gap = g.values[near] - g.values[idx] - grads[idx, 0] * (x[near] - y)
    return bool((gap <= j * (x[near] - y) ** 2 + tau).all())


class TestBuildEj:
    def test_abs_member_at_one(self):
        g, G = abs_grid()
        m = build_Ej(g, 1, G)
        assert m[g.node_index([1.0])]

    def test_abs_not_member_near_kink(self):
        g, G = abs_grid()
        m = build_Ej(g, 1, G)
        assert not m[g.node_index([0.1])]
        # the exposing node: gap 1.8 against |x - y|^2 = 1
        x, y = -0.9, 0.1
        assert abs(x) - abs(y) - (x - y) == pytest.approx(1.8)

    @pytest.mark.parametrize("j", [1, 2, 5])
    def test_square_all_members(self, j):
        g = line(lambda x: x * x, -2.0, 2.0, 81)
        G = 2 * g.axes()[0][:, None]
        assert build_Ej(g, j, G).all()

    @given(st.integers(1, 40))
    def test_matches_direct_scan(self, j):
        g, G = abs_grid(0.02)
        m = build_Ej(g, j, G)
        for idx in range(0, g.shape[0], 7):
            assert m[idx] == brute_member(g, G, idx, j)

    @given(st.integers(1, 30), st.integers(1, 30))
    def test_nested(self, a, b):
        j1, j2 = sorted((a, b))
        g, G = abs_grid(0.02)
        assert not (build_Ej(g, j1, G) & ~build_Ej(g, j2, G)).any()

    def test_exhaustion_is_monotone(self):
        S = sample_function(get_fixture("abs"), "-2:2", 0.01, margin=1.01)
        fam = TruncationFamily(S, 1e-10)
        meas = [fam.add(j) for j in (1, 2, 4, 8, 16, 32)]
        assert all(b <= a for a, b in zip(meas, meas[1:]))
        assert meas[-1] < meas[0] / 10


class TestSelectN:
    def test_square_is_one(self):
        S = sample_function(get_fixture("sq"), "-1:1", 0.01, margin=1.01)
        assert select_N(TruncationFamily(S, 1e-10), 0.01) == 1

    def test_large_eps_is_one(self):
        S = sample_function(get_fixture("abs"), "-2:2", 0.01, margin=1.01)
        assert select_N(TruncationFamily(S, 1e-10), 10.0) == 1

    def test_abs_first_admissible_level(self):
        S = sample_function(get_fixture("abs"), "-2:2", 0.01, margin=1.01)
        fam = TruncationFamily(S, 1e-10)
        N = select_N(fam, 0.2)
        vol = S.grid.cell_volume
        G = S.grads

        def excluded(j):
            idx = np.flatnonzero(S.A)
            return sum(not brute_member(S.grid, G, i, j) for i in idx) * vol

        assert excluded(N) < 0.1
        assert N == 1 or excluded(N - 1) >= 0.1

    def test_unreachable_raises(self):
        S = sample_function(get_fixture("abs"), "-2:2", 0.1, margin=1.2)
        with pytest.raises(ResolutionError):
            select_N(TruncationFamily(S, 1e-10), 1e-4, j_max=4)


class TestLipschitzExtend:
    def test_square_outside(self):
        f = line(lambda x: x * x, -1.0, 1.0, 201)
        out = lipschitz_extend(f, 2.0, line(lambda x: 0 * x, 0.0, 2.0, 201))
        assert out.values[-1] == pytest.approx(3.0, abs=1e-12)

    def test_zero_gives_distance(self):
        f = line(lambda x: 0 * x, 0.0, 1.0, 11)
        tgt = line(lambda x: 0 * x, -1.0, 2.0, 31)
        x = tgt.axes()[0]
        dist = np.maximum(0, np.maximum(-x, x - 1))
        assert np.abs(lipschitz_extend(f, 1.0, tgt).values - dist).max() <= 1e-12

    def test_contract(self):
        f = GridFunction.from_function(lambda p: np.abs(p[..., 0]) + 0.5 * p[..., 1] ** 2, (-1, -1), (1, 1), (21, 21))
        K = 1.01 * discrete_lipschitz(f.values, f.spacing)
        big = GridFunction.from_function(lambda p: 0 * p[..., 0], (-2, -2), (2, 2), (41, 41))
        assert np.array_equal(lipschitz_extend(f, K, f).values, f.values)
        out = lipschitz_extend(f, K, big)
        assert np.abs(out.values[10:31, 10:31] - f.values).max() <= 1e-12
        assert discrete_lipschitz(out.values, out.spacing) <= K * (1 + 1e-9)
        assert convexity_check(out, 1e-10).is_convex

    def test_constant_below_observed_raises(self):
        f = line(lambda x: 3 * x, 0.0, 1.0, 11)
        with pytest.raises(ValueError):
            lipschitz_extend(f, 1.0, f)


class TestMeasureMismatch:
    def test_identical_is_zero(self):
        f = line(np.abs, -1.0, 1.0, 101)
        assert measure_mismatch(f, f).value_measure == 0.0

    def test_half_box(self):
        f = line(lambda x: 0 * x, 0.0, 1.0, 101)
        x = f.axes()[0]
        g = f.with_values(np.where(x < 0.5, 1.0, 0.0))
        assert measure_mismatch(f, g).value_measure == pytest.approx(0.5)


class TestPipeline:
    def test_square_has_no_mismatch(self):
        cert = lusin_approximate(get_fixture("sq"), "-1:1", 0.1, 0.01)
        assert cert.N == 1 and cert.mismatch_measure == 0.0

    def test_abs_certificate(self):
        cert = lusin_approximate(get_fixture("abs"), "-2:2", 0.5, 0.002)
        assert all(cert.invariants().values())
        x = cert.g.axes()[0]
        bad = ~cert.matched_mask & cert.A_mask
        assert np.abs(x[bad]).max() < 0.5
        # gradients agree wherever values agree, up to a collar cell
        h = float(cert.g.spacing[0])
        assert cert.mismatch_measure >= cert.gradient_mismatch_measure - 4 * h

    def test_max_affine_certificate(self):
        cert = lusin_approximate(get_fixture("max_affine"), "-2:2", 0.1, 0.002)
        assert all(cert.invariants().values())

    def test_paraboloid_2d_certificate(self):
        cert = lusin_approximate(get_fixture("paraboloid"), "-1:1,-1:1", 0.1, 0.05)
        assert cert.mismatch_measure == 0.0 and all(cert.invariants().values())

    def test_bad_eps(self):
        with pytest.raises(ValueError):
            lusin_approximate(get_fixture("abs"), "-2:2", 0.0, 0.01)


class TestCSets:
    def test_square(self):
        cs = build_C_sets(get_fixture("sq"), 0.1, 2, 0.05)
        assert cs.j_k == [1, 1]
        for C, shell in zip(cs.C_masks, cs.shell_masks):
            assert np.array_equal(C, shell)
        assert cs.eq12_holds

    def test_abs_first_shell(self):
        eps = 0.2
        cs = build_C_sets(get_fixture("abs"), eps, 1, 0.01)
        assert cs.shell_measures[0] < eps / 4
        assert cs.eq12_holds

    def test_paraboloid_shells(self):
        cs = build_C_sets(get_fixture("paraboloid"), 0.5, 3, 0.25)
        assert cs.eq12_holds
        assert all(b >= a for a, b in zip(cs.j_k, cs.j_k[1:]))
        P = cs.sampled.grid.mesh()[cs.C]
        jet = Jet1Set(P, cs.sampled.grid.values[cs.C], cs.sampled.grads[cs.C])
        assert span_rank(jet) == 2


class TestGlue:
    def grid(self, f):
        return GridFunction.from_function(f, (-1.9,), (1.9,), (381,))

    def test_identical_pieces(self):
        g = self.grid(lambda p: p[..., 0] ** 2)
        out = glue_partition([g, g], [1.0, 2.0])
        assert np.array_equal(out.values, g.values)

    def test_convex_combination_bound(self):
        delta = 0.3
        g1 = self.grid(lambda p: p[..., 0] ** 2)
        g2 = self.grid(lambda p: p[..., 0] ** 2 + delta)
        out = glue_partition([g1, g2], [1.0, 2.0])
        assert np.abs(out.values - g1.values).max() <= delta + 1e-15

    def test_smooth_across_seam(self):
        g1 = self.grid(lambda p: np.sin(p[..., 0]))
        g2 = self.grid(lambda p: np.sin(p[..., 0]) + 0.0)
        out = glue_partition([g1, g2], [1.0, 2.0])
        d2 = np.diff(out.values, 2) / out.spacing[0] ** 2
        assert np.abs(d2).max() <= 1.01

    def test_coverage_gap(self):
        g = self.grid(lambda p: p[..., 0] ** 2)
        with pytest.raises(ValueError):
            glue_partition([g, g], [0.5, 1.0])

    def test_smooth_step_endpoints(self):
        t = np.array([-1.0, 0.0, 0.5, 1.0, 2.0])
        assert smooth_step(t).tolist() == [0.0, 0.0, 0.5, 1.0, 1.0]
