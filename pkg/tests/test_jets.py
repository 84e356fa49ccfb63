import numpy as np
import pytest
from hypothesis import given, strategies as st

from convexlusin.jets import (
    GridFunction,
    Jet1Set,
    JetUndefinedError,
    convexity_check,
    discrete_lipschitz,
    gradient,
    grid_with_spacing,
    load_grid,
    load_jet,
    parse_grid_spec,
    sample_jet,
    save_grid,
    save_jet,
)
from convexlusin.oracles import FIXTURES, fixture_grid, get_fixture


def line(f, lo, hi, n):
    return GridFunction.from_function(lambda p: f(p[..., 0]), (lo,), (hi,), (n,))


class TestJet1Set:
    def test_rejects_duplicate_points(self):
        with pytest.raises(ValueError):
            Jet1Set([[0.0], [0.0]], [1, 1], [[0], [0]])

    def test_rejects_length_mismatch(self):
        with pytest.raises(ValueError):
            Jet1Set([[0.0], [1.0]], [1.0], [[0.0], [1.0]])

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            Jet1Set([[np.nan]], [1.0], [[0.0]])

    def test_arrays_are_read_only(self):
        jet = Jet1Set([[0.0]], [1.0], [[2.0]])
        with pytest.raises(ValueError):
            jet.values[0] = 3.0


class TestGridFunction:
    def test_spacing_from_box(self):
        g = GridFunction((0.0, -1.0), (1.0, 1.0), np.zeros((11, 5)))
        assert np.allclose(g.spacing, [0.1, 0.5])

    def test_needs_two_nodes_per_axis(self):
        with pytest.raises(ValueError):
            GridFunction((0.0,), (1.0,), np.zeros(1))

    def test_rejects_nonfinite_values(self):
        with pytest.raises(ValueError):
            GridFunction((0.0,), (1.0,), np.array([0.0, np.inf]))

    def test_node_index(self):
        g = GridFunction((0.0,), (1.0,), np.zeros(11))
        assert g.node_index([0.3]) == (3,)
        with pytest.raises(ValueError):
            g.node_index([0.35])

    def test_parse_grid_spec(self):
        assert parse_grid_spec("-1:1:5,0:2:3") == ((-1.0, 0.0), (1.0, 2.0), (5, 3))
        with pytest.raises(ValueError):
            parse_grid_spec("0:1")

    def test_grid_with_spacing_covers_box(self):
        lo, hi, shape = grid_with_spacing((-1.0,), (1.0,), 0.3)
        assert hi[0] >= 1.0 and shape == (8,)


class TestGradient:
    def test_affine_is_exact(self):
        g = line(lambda x: 3 * x + 1, 0.0, 1.0, 11)
        assert np.abs(gradient(g)[..., 0] - 3.0).max() <= 1e-12

    def test_square_interior_central_difference(self):
        g = line(lambda x: x ** 2, -1.0, 1.0, 21)
        x = g.axes()[0]
        assert np.abs(gradient(g)[1:-1, 0] - 2 * x[1:-1]).max() <= 1e-12

    def test_constant_is_zero(self):
        g = GridFunction((0.0, 0.0), (1.0, 1.0), np.full((5, 6), 5.0))
        assert np.all(gradient(g) == 0.0)

    @given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5))
    def test_affine_2d_exact(self, a, b, c):
        g = GridFunction.from_function(lambda p: a * p[..., 0] + b * p[..., 1] + c, (-1, 0), (1, 2), (7, 9))
        gr = gradient(g)
        assert np.abs(gr[..., 0] - a).max() <= 1e-12 * (1 + abs(a) + abs(b) + abs(c)) * 10
        assert np.abs(gr[..., 1] - b).max() <= 1e-12 * (1 + abs(a) + abs(b) + abs(c)) * 10


class TestConvexityCheck:
    def test_abs_is_convex(self):
        assert convexity_check(line(np.abs, -1.0, 1.0, 21)).is_convex

    def test_negative_square_second_difference(self):
        g = line(lambda x: -x ** 2, -1.0, 1.0, 21)
        d = convexity_check(g)
        h = g.spacing[0]
        assert not d.is_convex
        assert d.min_second_difference == pytest.approx(-2 * h * h, rel=1e-9)

    def test_saddle_is_not_convex(self):
        g = GridFunction.from_function(lambda p: p[..., 0] ** 2 - p[..., 1] ** 2, (-1, -1), (1, 1), (11, 11))
        assert not convexity_check(g).is_convex

    @pytest.mark.parametrize("name", sorted(FIXTURES))
    def test_fixtures_pass(self, name):
        g = fixture_grid(get_fixture(name))
        tau = 1e-10 * max(1.0, float(np.abs(g.values).max()))
        assert convexity_check(g, tau).is_convex


class TestSampleJet:
    def test_quartic_at_one(self):
        jet = sample_jet(get_fixture("quartic"), [[1.0]])
        assert jet.values[0] == 1.0 and jet.gradients[0, 0] == 4.0

    def test_abs_pair(self):
        jet = sample_jet(get_fixture("abs"), [[-1.0], [1.0]])
        assert jet.values.tolist() == [1.0, 1.0]
        assert jet.gradients[:, 0].tolist() == [-1.0, 1.0]

    def test_abs_at_kink_raises(self):
        with pytest.raises(JetUndefinedError):
            sample_jet(get_fixture("abs"), [[0.0]])


def test_discrete_lipschitz_of_linear_gradient():
    g = line(lambda x: x ** 2, -1.0, 1.0, 41)
    assert discrete_lipschitz(gradient(g), g.spacing, collar=1) == pytest.approx(2.0, rel=1e-9)


class TestRoundTrip:
    def test_jet(self, tmp_path, rng):
        jet = Jet1Set(rng.normal(size=(7, 2)), rng.normal(size=7), rng.normal(size=(7, 2)))
        save_jet(jet, tmp_path / "j.json")
        back = load_jet(tmp_path / "j.json")
        for a in ("points", "values", "gradients"):
            assert np.array_equal(getattr(jet, a), getattr(back, a))

    @pytest.mark.parametrize("suffix", [".csv", ".json"])
    def test_grid(self, tmp_path, rng, suffix):
        g = GridFunction((-0.3, 1.0), (0.7, 2.5), rng.normal(size=(4, 6)))
        save_grid(g, tmp_path / ("g" + suffix))
        back = load_grid(tmp_path / ("g" + suffix))
        assert back.lower == g.lower and back.upper == g.upper
        assert np.array_equal(back.values, g.values)
