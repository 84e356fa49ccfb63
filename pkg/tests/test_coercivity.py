import numpy as np
import pytest
from hypothesis import given, strategies as st

from convexlusin.coercivity import (
    coercivity_test,
    decompose,
    global_feasibility_gate,
    rigidity_check,
)
from convexlusin.cw11 import span_rank
from convexlusin.jets import GridFunction, Jet1Set, sample_jet
from convexlusin.lusin import build_C_sets
from convexlusin.oracles import FIXTURES, Fixture, get_fixture


def angle(a, b):
    """Angle between the lines spanned by a and b."""
    c = abs(float(np.dot(a, b))) / (np.linalg.norm(a) * np.linalg.norm(b))
    return float(np.arccos(min(1.0, c)))


def rotated_cylinder(theta, slope):
    """|<u, x>| + slope <u_perp, x> for u at angle theta."""
    u = np.array([np.cos(theta), np.sin(theta)])
    w = np.array([-u[1], u[0]])
    return Fixture(
        "rot", 2,
        lambda p: np.abs(np.asarray(p) @ u) + slope * (np.asarray(p) @ w),
        lambda p: np.sign(np.asarray(p) @ u)[..., None] * u + slope * w,
        lambda p, tol: np.abs(np.asarray(p) @ u) <= tol,
        np.inf, False,
    ), u, w


class TestCoercivityTest:
    def test_cylinder_abs(self):
        v = coercivity_test(get_fixture("cyl_abs2d"))
        assert v.essentially_coercive is False
        assert angle(v.witness_direction, [0.0, 1.0]) <= 1e-6

    def test_paraboloid(self):
        v = coercivity_test(get_fixture("paraboloid"))
        assert v.essentially_coercive is True and v.rank == 2

    def test_affine_rank_zero(self):
        v = coercivity_test(get_fixture("affine2d"))
        assert v.essentially_coercive is False and v.rank == 0

    def test_too_few_samples(self):
        v = coercivity_test(get_fixture("paraboloid"), samples=[[0.0, 0.0], [1.0, 0.0]])
        assert v.status == "inconclusive" and v.essentially_coercive is None

    @pytest.mark.parametrize("name", sorted(FIXTURES))
    def test_agrees_with_span_rank(self, name):
        f = get_fixture(name)
        P = np.random.default_rng(1).uniform(-2, 2, size=(12, f.dim))
        jet = sample_jet(f, P)
        v = coercivity_test(f, P)
        assert v.essentially_coercive == (span_rank(jet) == f.dim)
        assert v.essentially_coercive == f.coercive

    @given(st.floats(0, np.pi), st.floats(-3, 3))
    def test_rotated_cylinder_witness(self, theta, slope):
        f, u, w = rotated_cylinder(theta, slope)
        v = coercivity_test(f)
        assert v.essentially_coercive is False
        assert angle(v.witness_direction, w) <= 1e-6

    def test_sampled_grid_input(self):
        g = GridFunction.from_function(lambda p: np.abs(p[..., 0]), (-1, -1), (1, 1), (21, 21))
        v = coercivity_test(g)
        assert v.essentially_coercive is False
        assert angle(v.witness_direction, [0.0, 1.0]) <= 1e-6


class TestDecompose:
    def test_cylinder_abs(self):
        d = decompose(get_fixture("cyl_abs2d"))
        assert d.rank == 1 and angle(d.X_basis[:, 0], [1.0, 0.0]) <= 1e-12
        assert np.abs(d.v).max() <= 1e-8
        assert d.reconstruction_error <= 1e-8

    def test_cylinder_with_slope(self):
        d = decompose(get_fixture("cyl_abs_lin"))
        assert np.abs(d.v - [0.0, 2.0]).max() <= 1e-8
        assert d.reconstruction_error <= 1e-8

    def test_coercive_full_rank(self):
        d = decompose(get_fixture("paraboloid"))
        assert d.rank == 2 and np.abs(d.v).max() <= 1e-8
        assert np.allclose(d.projector, np.eye(2))

    def test_v_orthogonal_to_X(self):
        for name in ("cyl_abs2d", "cyl_abs_lin", "paraboloid", "affine2d"):
            d = decompose(get_fixture(name))
            assert np.all(np.abs(d.X_basis.T @ d.v) <= 1e-10)

    def test_inconsistent_input_raises(self):
        # the third gradient leaves the span direction by less than the rank threshold
        # but by more than the consistency tolerance
        jet = Jet1Set([[-1.0, 0.0], [1.0, 0.0], [2.0, 0.0]], [1.0, 1.0, 2.0],
                      [[-1.0, 0.0], [1.0, 0.0], [1.0, 2.5e-8]])
        assert span_rank(jet) == 1
        with pytest.raises(ValueError, match="not convex-consistent"):
            decompose(jet)

    @given(st.floats(0, np.pi), st.floats(-3, 3))
    def test_idempotent(self, theta, slope):
        f, u, w = rotated_cylinder(theta, slope)
        d1 = decompose(f)
        P, v = d1.projector, d1.v
        rebuilt = Fixture(
            "rebuilt", 2,
            lambda p: f.value(np.asarray(p) @ P) + np.asarray(p) @ v,
            lambda p: f.gradient(np.asarray(p) @ P) @ P + v,
            f.kink, np.inf, False,
        )
        d2 = decompose(rebuilt)
        assert angle(d1.X_basis[:, 0], d2.X_basis[:, 0]) <= 1e-8
        assert np.abs(d1.v - d2.v).max() <= 1e-8
        assert np.abs(d1.v - slope * w).max() <= 1e-8
        assert d2.reconstruction_error <= 1e-8 * max(1.0, abs(slope))


class TestRigidity:
    def grid(self):
        return GridFunction.from_function(lambda p: np.abs(p[..., 0]) + 2 * p[..., 1], (-1, -1), (1, 1), (11, 21))

    def test_equal_has_no_violation(self):
        g = self.grid()
        rep = rigidity_check(get_fixture("cyl_abs_lin"), g)
        assert rep.ok and rep.lines_squeezed == 11

    def test_bump_is_reported(self):
        g = self.grid()
        vals = g.values.copy()
        vals[3, 8:13] += 0.1
        mask = np.ones(g.shape, dtype=bool)
        rep = rigidity_check(get_fixture("cyl_abs_lin"), g.with_values(vals), matched=mask)
        assert not rep.ok and rep.violations[0][0] == 3

    @given(st.lists(st.floats(0, 5), min_size=1, max_size=30), st.floats(-5, 5))
    def test_convex_sequence_max_at_endpoints(self, incs, c):
        # second differences >= 0, equal endpoint values
        seq = np.concatenate([[0.0], np.cumsum(np.sort(np.asarray(incs)))])
        x = np.arange(len(seq))
        seq = seq - (seq[-1] - seq[0]) / max(1, x[-1]) * x + c
        assert seq.max() <= max(seq[0], seq[-1]) + 1e-9 * (1 + np.abs(seq).max())


class TestGate:
    def test_cylinder_refused(self):
        d = global_feasibility_gate(get_fixture("cyl_abs2d"))
        assert d.status == "no-go" and angle(d.verdict.witness_direction, [0, 1]) <= 1e-6

    @pytest.mark.parametrize("name", ["quartic", "paraboloid", "sq2d"])
    def test_coercive_go(self, name):
        assert global_feasibility_gate(get_fixture(name)).go

    @pytest.mark.parametrize("name", ["abs", "sq", "quartic", "max_affine", "paraboloid", "sq2d",
                                      "cyl_abs2d", "cyl_abs_lin", "affine2d"])
    def test_agrees_with_local_sets(self, name):
        f = get_fixture(name)
        h = 0.05 if f.dim == 1 else 0.25
        cs = build_C_sets(f, 0.5, 1, h)
        g = cs.sampled.grid
        jet = Jet1Set(g.mesh()[cs.C], g.values[cs.C], cs.sampled.grads[cs.C])
        assert cs.eq12_holds
        assert global_feasibility_gate(f).go == (span_rank(jet) == f.dim)
