import numpy as np
import pytest
from hypothesis import given, strategies as st

from convexlusin.envelope import (
    DualGrid,
    ExactExtension,
    biconjugate,
    extend_c11,
    legendre_1d,
    tangent_quadratic_min,
)
from convexlusin.cw11 import InfeasibleJetError, minimal_M
from convexlusin.jets import GridFunction, Jet1Set, convexity_check
from convexlusin.oracles import envelope_caratheodory, envelope_hull_1d, legendre_naive

from _jetgen import random_convex_jet

ABS_JET = Jet1Set([[-1.0], [1.0]], [1.0, 1.0], [[-1.0], [1.0]])


def line(f, lo, hi, n):
    return GridFunction.from_function(lambda p: f(p[..., 0]), (lo,), (hi,), (n,))


class TestLegendre:
    def test_half_square(self):
        g = line(lambda x: 0.5 * x * x, -2.0, 2.0, 401)
        gs = legendre_1d(g)
        s = gs.axes()[0]
        h = g.spacing[0]
        inner = np.abs(s) <= 1.5
        assert np.abs(gs.values - 0.5 * s * s)[inner].max() <= h * h / 2

    def test_abs_is_zero_on_unit_slopes(self):
        g = line(np.abs, -1.0, 1.0, 201)
        dual = DualGrid((-1.0,), (1.0,), (101,))
        assert np.abs(legendre_1d(g, dual).values).max() <= 1e-15

    @pytest.mark.parametrize("a,b", [(0.5, 2.0), (-3.0, 0.25)])
    def test_affine_at_its_slope(self, a, b):
        g = line(lambda x: a * x + b, -1.0, 1.0, 51)
        dual = DualGrid((a - 1.0,), (a + 1.0,), (3,))
        assert legendre_1d(g, dual).values[1] == pytest.approx(-b, abs=1e-12)

    def test_slope_range_too_small_raises(self):
        g = line(lambda x: x * x, -1.0, 1.0, 11)
        with pytest.raises(ValueError):
            legendre_1d(g, DualGrid((-0.5,), (0.5,), (5,)))

    @given(st.integers(0, 10_000), st.integers(2, 300))
    def test_equals_direct_scan_bitwise(self, seed, n):
        rng = np.random.default_rng(seed)
        g = GridFunction((rng.uniform(-3, 0),), (rng.uniform(0.1, 3),), rng.normal(size=n) * rng.uniform(0.1, 10))
        dual = DualGrid.for_data(g)
        assert np.array_equal(legendre_1d(g, dual).values, legendre_naive(g, dual).values)


class TestBiconjugate:
    def test_convex_input_unchanged(self):
        g = line(lambda x: x * x, -1.0, 1.0, 201)
        assert np.abs(biconjugate(g).values - g.values).max() <= 1e-8

    def test_double_well_bridge(self):
        g = line(lambda x: x ** 4 - x ** 2, -1.2, 1.2, 2401)
        env = biconjugate(g)
        x = g.axes()[0]
        inside = np.abs(x) <= 1 / np.sqrt(2)
        assert np.abs(env.values[inside] + 0.25).max() <= 1e-6
        assert np.abs(env.values[~inside] - g.values[~inside]).max() <= 1e-6

    @given(st.integers(0, 10_000), st.integers(2, 400))
    def test_matches_hull_oracle(self, seed, n):
        rng = np.random.default_rng(seed)
        g = GridFunction((-1.0,), (2.0,), rng.normal(size=n))
        ref = envelope_hull_1d(g.axes()[0], g.values)
        assert np.abs(biconjugate(g).values - ref).max() <= 1e-8 * max(1.0, np.abs(ref).max())

    def test_idempotent_2d(self, rng):
        g = GridFunction((-1.0, -1.0), (1.0, 1.0), rng.normal(size=(15, 17)))
        once = biconjugate(g)
        twice = biconjugate(once)
        assert np.abs(twice.values - once.values).max() <= 1e-10

    def test_separable_route_close_to_hull_route(self):
        g = GridFunction.from_function(
            lambda p: (p[..., 0] ** 2 - 0.5) ** 2 + p[..., 1] ** 2, (-1, -1), (1, 1), (41, 41))
        a = biconjugate(g, "legendre").values
        b = biconjugate(g, "hull").values
        h = float(g.spacing.max())
        assert np.abs(a - b).max() <= 4 * h * h * 8

    def test_below_data_and_convex_2d(self, rng):
        g = GridFunction((-1.0, -1.0), (1.0, 1.0), rng.normal(size=(21, 21)))
        env = biconjugate(g)
        assert (env.values <= g.values + 1e-10).all()
        assert convexity_check(env, 1e-10).is_convex

    def test_above_affine_minorants(self, rng):
        g = GridFunction((-1.0, -1.0), (1.0, 1.0), rng.normal(size=(13, 13)) + 3)
        env = biconjugate(g)
        pts = g.points()
        for _ in range(20):
            a = rng.normal(size=2)
            c = float((g.values.ravel() - pts @ a).min())
            assert (env.values.ravel() >= pts @ a + c - 1e-10).all()

    def test_caratheodory_oracle_2d(self, rng):
        n = 9
        g = GridFunction.from_function(lambda p: p[..., 0] ** 2 - p[..., 1] ** 2, (-1, -1), (1, 1), (n, n))
        env = biconjugate(g)
        pts = g.points()
        vals = g.values.ravel()
        h = float(g.spacing.max())
        lip = 4.0
        for k in rng.choice(len(pts), size=50, replace=False):
            ref = envelope_caratheodory(pts, vals, pts[k])
            assert abs(env.values.ravel()[k] - ref) <= 2 * h * lip


class TestTangentQuadraticMin:
    def test_abs_jet_at_origin(self):
        v, _ = tangent_quadratic_min(ABS_JET, 1.0, [0.0])
        assert v == 0.5

    def test_at_jet_point_below_value(self, rng):
        jet, _ = random_convex_jet(rng, 2, 10)
        v, _ = tangent_quadratic_min(jet, 3.0, jet.points)
        assert (v <= jet.values + 1e-12).all()

    def test_singleton_is_its_quadratic(self, rng):
        y, f, G, M = np.array([0.5, -1.0]), 2.0, np.array([1.0, 3.0]), 4.0
        jet = Jet1Set([y], [f], [G])
        X = rng.normal(size=(20, 2))
        v, _ = tangent_quadratic_min(jet, M, X)
        d = X - y
        assert np.allclose(v, f + d @ G + 0.5 * M * (d * d).sum(1), rtol=0, atol=1e-12)


class TestExtend:
    @pytest.mark.parametrize("method", ["grid", "exact"])
    def test_abs_jet_closed_form(self, method):
        res = extend_c11(ABS_JET, 1.0, "-1:1:201", method=method)
        x = res.F.axes()[0]
        assert np.abs(res.F.values - (x * x / 2 + 0.5)).max() <= 1e-9
        assert res.interp_error_values <= 1e-9

    @pytest.mark.parametrize("method", ["grid", "exact"])
    def test_half_square_jet(self, method):
        jet = Jet1Set([[0.0], [1.0]], [0.0, 0.5], [[0.0], [1.0]])
        res = extend_c11(jet, 1.0, "0:1:101", method=method)
        x = res.F.axes()[0]
        assert np.abs(res.F.values - x * x / 2).max() <= 1e-9

    def test_singleton_is_quadratic(self):
        jet = Jet1Set([[0.25, 0.0]], [1.0], [[1.0, -2.0]])
        res = extend_c11(jet, 2.0, "-1:1:21,-1:1:21", method="exact")
        d = res.F.mesh() - np.array([0.25, 0.0])
        q = 1.0 + d @ np.array([1.0, -2.0]) + (d * d).sum(-1)
        assert np.abs(res.F.values - q).max() <= 1e-12

    def test_infeasible_raises_with_witness(self):
        with pytest.raises(InfeasibleJetError) as e:
            extend_c11(ABS_JET, 0.5, "-1:1:11")
        assert e.value.witness is not None

    @pytest.mark.parametrize("dim,n", [(1, 601), (2, 61)])
    def test_grid_and_exact_routes_agree(self, dim, n, rng):
        jet, _ = random_convex_jet(rng, dim, 6, spread=1.0)
        M = minimal_M(jet).minimal_M * 1.5
        box = ",".join(["-1:1:%d" % n] * dim)
        a = extend_c11(jet, M, box, method="grid").F.values
        b = extend_c11(jet, M, box, method="exact").F.values
        h = 2.0 / (n - 1)
        assert np.abs(a - b).max() <= 2 * M * h * h

    def test_extension_contract_2d(self, rng):
        jet, _ = random_convex_jet(rng, 2, 8, spread=1.0)
        M = minimal_M(jet).minimal_M * 1.2
        res = extend_c11(jet, M, "-1:1:81,-1:1:81", method="exact")
        h = float(res.F.spacing.max())
        assert res.is_convex
        assert res.discrete_lip_gradF <= 1.05 * M + 10 * h * M
        assert res.interp_error_values <= 1e-10 * max(1, np.abs(jet.values).max())

    def test_exact_extension_matches_minimum_form(self, rng):
        jet, _ = random_convex_jet(rng, 2, 7, spread=1.0)
        M = minimal_M(jet).minimal_M * 1.3
        ext = ExactExtension(jet, M)
        F, _ = ext.evaluate(jet.points)
        assert np.allclose(F, jet.values, rtol=0, atol=1e-10)
