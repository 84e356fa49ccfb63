import numpy as np
import pytest
from hypothesis import given, strategies as st

from convexlusin.envelope import DualGrid
from convexlusin.jets import GridFunction
from convexlusin.oracles import (
    FIXTURES,
    envelope_caratheodory,
    envelope_hull_1d,
    fixture_grid,
    get_fixture,
    legendre_naive,
)


class TestHull1D:
    def test_convex_is_identity(self):
        x = np.linspace(-1, 1, 51)
        assert np.array_equal(envelope_hull_1d(x, x ** 2), x ** 2)

    def test_double_well_bridge(self):
        x = np.linspace(-1.2, 1.2, 2401)
        env = envelope_hull_1d(x, x ** 4 - x ** 2)
        inside = np.abs(x) <= 1 / np.sqrt(2)
        assert np.abs(env[inside] + 0.25).max() <= 1e-6

    def test_two_points_chord(self):
        assert envelope_hull_1d([0.0, 2.0], [1.0, 5.0]).tolist() == [1.0, 5.0]

    def test_unsorted_rejected(self):
        with pytest.raises(ValueError):
            envelope_hull_1d([1.0, 0.0], [0.0, 0.0])

    @given(st.lists(st.floats(-100, 100), min_size=2, max_size=60))
    def test_below_data_and_convex(self, vals):
        x = np.arange(len(vals), dtype=float)
        v = np.asarray(vals)
        env = envelope_hull_1d(x, v)
        assert (env <= v + 1e-9).all()
        assert (np.diff(env, 2) >= -1e-9).all()


class TestCaratheodory:
    def test_query_at_sample(self, rng):
        P = rng.uniform(-1, 1, size=(12, 2))
        v = rng.normal(size=12)
        for k in range(12):
            try:
                assert envelope_caratheodory(P, v, P[k]) <= v[k] + 1e-12
            except ValueError:
                pytest.fail("a sample point is always in the hull")

    def test_affine_values_exact(self, rng):
        P = rng.uniform(-1, 1, size=(15, 2))
        a, b = np.array([0.7, -1.3]), 0.4
        q = P[:3].mean(0)
        assert envelope_caratheodory(P, P @ a + b, q) == pytest.approx(q @ a + b, abs=1e-12)

    def test_outside_hull_raises(self):
        with pytest.raises(ValueError):
            envelope_caratheodory([[0, 0], [1, 0], [0, 1]], [0, 0, 0], [1, 1])

    def test_size_limit(self):
        with pytest.raises(ValueError):
            envelope_caratheodory(np.zeros((501, 1)), np.zeros(501), [0.0])

    def test_one_dimensional_matches_hull(self, rng):
        x = np.linspace(0, 1, 25)
        v = rng.normal(size=25)
        env = envelope_hull_1d(x, v)
        for k in (0, 5, 12, 24):
            assert envelope_caratheodory(x[:, None], v, [x[k]]) == pytest.approx(env[k], abs=1e-12)


class TestLegendreNaive:
    def test_half_square(self):
        g = GridFunction.from_function(lambda p: 0.5 * p[..., 0] ** 2, (-2,), (2,), (401,))
        dual = DualGrid((-1.5,), (1.5,), (31,))
        s = dual.axes()[0]
        assert np.abs(legendre_naive(g, dual).values - 0.5 * s * s).max() <= 0.01 ** 2 / 2

    def test_abs(self):
        g = GridFunction.from_function(lambda p: np.abs(p[..., 0]), (-1,), (1,), (21,))
        dual = DualGrid((-1.0,), (1.0,), (11,))
        assert np.abs(legendre_naive(g, dual).values).max() <= 1e-15


class TestFixtures:
    @pytest.mark.parametrize("name", sorted(FIXTURES))
    def test_gradient_matches_finite_differences(self, name):
        f = get_fixture(name)
        rng = np.random.default_rng(7)
        P = rng.uniform(-2, 2, size=(40, f.dim))
        if f.kink is not None:
            P = P[~f.kink(P, 1e-3)]
        step = 1e-6
        for i in range(f.dim):
            e = np.zeros(f.dim)
            e[i] = step
            fd = (f.value(P + e) - f.value(P - e)) / (2 * step)
            assert np.abs(fd - f.gradient(P)[:, i]).max() <= 1e-5 * (1 + np.abs(fd).max())

    @pytest.mark.parametrize("name", sorted(FIXTURES))
    def test_convex_on_reference_grid(self, name):
        from convexlusin.jets import convexity_check

        g = fixture_grid(get_fixture(name))
        assert convexity_check(g, 1e-10 * max(1.0, np.abs(g.values).max())).is_convex

    def test_kink_flags(self):
        assert get_fixture("abs").kink(np.array([[0.0]]), 0.0)[0]
        assert get_fixture("max_affine").kink(np.array([[1.0]]), 0.0)[0]
        assert get_fixture("sq").kink is None

    def test_unknown_name(self):
        with pytest.raises(KeyError):
            get_fixture("nope")
