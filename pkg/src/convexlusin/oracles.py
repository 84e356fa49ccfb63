"""Analytic convex fixtures and brute-force reference computations.

Everything here favours transparency over speed; the fast routines in
``envelope`` are tested against these.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations, islice
from typing import Callable, Optional

import numpy as np

from .jets import GridFunction, convexity_check

__all__ = [
    "Fixture",
    "FIXTURES",
    "get_fixture",
    "fixture_grid",
    "envelope_hull_1d",
    "envelope_caratheodory",
    "legendre_naive",
]


@dataclass(frozen=True)
class Fixture:
    """Closed-form convex function on R^dim.

    ``value`` and ``gradient`` take arrays whose last axis has length ``dim``.
    ``kink(pts, tol)`` flags points within ``tol`` of the nondifferentiability
    set; it is None for C^1 fixtures. ``lip_grad`` is the global Lipschitz
    constant of the gradient (inf when there is none).
    """

    name: str
    dim: int
    value: Callable
    gradient: Callable
    kink: Optional[Callable] = None
    lip_grad: float = np.inf
    coercive: bool = True
    description: str = ""

    def __call__(self, pts):
        return self.value(pts)


def _x(p):
    return np.asarray(p, dtype=float)[..., 0]


def _y(p):
    return np.asarray(p, dtype=float)[..., 1]


def _near_zero(c):
    return lambda p, tol: np.abs(np.asarray(p, dtype=float)[..., c]) <= tol


_MA_SLOPES = np.array([-1.0, 0.5, 2.0])
_MA_OFFSETS = np.array([0.0, 0.0, -1.5])


def _max_affine_value(p):
    x = _x(p)[..., None]
    return (_MA_SLOPES * x + _MA_OFFSETS).max(-1)


def _max_affine_grad(p):
    x = _x(p)[..., None]
    k = np.argmax(_MA_SLOPES * x + _MA_OFFSETS, axis=-1)
    return _MA_SLOPES[k][..., None]


def _max_affine_kink(p, tol):
    x = _x(p)
    return (np.abs(x) <= tol) | (np.abs(x - 1.0) <= tol)


def _stack(*cols):
    return np.stack(np.broadcast_arrays(*cols), axis=-1)


FIXTURES = {
    f.name: f
    for f in [
        Fixture("abs", 1, lambda p: np.abs(_x(p)), lambda p: np.sign(_x(p))[..., None],
                _near_zero(0), np.inf, True, "|x|"),
        Fixture("sq", 1, lambda p: _x(p) ** 2, lambda p: 2 * np.asarray(p, dtype=float),
                None, 2.0, True, "x^2"),
        Fixture("half_sq", 1, lambda p: 0.5 * _x(p) ** 2, lambda p: np.asarray(p, dtype=float),
                None, 1.0, True, "x^2/2"),
        Fixture("quartic", 1, lambda p: _x(p) ** 4, lambda p: 4 * np.asarray(p, dtype=float) ** 3,
                None, np.inf, True, "x^4"),
        Fixture("max_affine", 1, _max_affine_value, _max_affine_grad, _max_affine_kink,
                np.inf, True, "max(-x, x/2, 2x - 3/2)"),
        Fixture("paraboloid", 2, lambda p: _x(p) ** 2 + _y(p) ** 2 - 3 * _x(p),
                lambda p: _stack(2 * _x(p) - 3, 2 * _y(p)), None, 2.0, True, "x^2 + y^2 - 3x"),
        Fixture("sq2d", 2, lambda p: _x(p) ** 2 + _y(p) ** 2,
                lambda p: 2 * np.asarray(p, dtype=float), None, 2.0, True, "x^2 + y^2"),
        Fixture("cyl_abs2d", 2, lambda p: np.abs(_x(p)),
                lambda p: _stack(np.sign(_x(p)), 0.0 * _y(p)), _near_zero(0), np.inf, False,
                "|x1| on R^2"),
        Fixture("cyl_abs_lin", 2, lambda p: np.abs(_x(p)) + 2 * _y(p),
                lambda p: _stack(np.sign(_x(p)), 2.0 + 0.0 * _y(p)), _near_zero(0), np.inf, False,
                "|x1| + 2 x2"),
        Fixture("affine2d", 2, lambda p: 0.5 * _x(p) - _y(p) + 1.0,
                lambda p: _stack(0.5 + 0.0 * _x(p), -1.0 + 0.0 * _y(p)), None, 0.0, False,
                "x1/2 - x2 + 1"),
    ]
}


def fixture_grid(f: Fixture, half_width: float = 2.0, count: int = 41) -> GridFunction:
    lo = (-half_width,) * f.dim
    hi = (half_width,) * f.dim
    return GridFunction.from_function(f.value, lo, hi, (count,) * f.dim)


def _verify_fixtures():
    for f in FIXTURES.values():
        g = fixture_grid(f)
        tau = 1e-10 * max(1.0, float(np.abs(g.values).max()))
        if not convexity_check(g, tau).is_convex:
            raise RuntimeError(f"fixture {f.name} failed the grid convexity check")


_verify_fixtures()


def get_fixture(name: str) -> Fixture:
    try:
        return FIXTURES[name]
    except KeyError:
        raise KeyError(f"unknown fixture {name!r}; choose from {sorted(FIXTURES)}") from None


# ---------------------------------------------------------------------------
# envelopes


def envelope_hull_1d(xs, vals) -> np.ndarray:
    """Lower convex hull of (xs, vals) by Andrew's monotone chain, read back at xs."""
    xs = np.asarray(xs, dtype=float)
    vals = np.asarray(vals, dtype=float)
    if np.any(np.diff(xs) <= 0):
        raise ValueError("xs must be strictly increasing")
    hull: list[int] = []
    for i in range(len(xs)):
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            cross = (xs[b] - xs[a]) * (vals[i] - vals[a]) - (vals[b] - vals[a]) * (xs[i] - xs[a])
            if cross <= 0:
                hull.pop()
            else:
                break
        hull.append(i)
    return np.interp(xs, xs[hull], vals[hull])


def envelope_caratheodory(points, vals, query, n: int | None = None) -> float:
    """Minimum of sum(l_i v_i) over simplices of <= n+1 samples whose hull holds ``query``."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    vals = np.asarray(vals, dtype=float)
    q = np.asarray(query, dtype=float).reshape(-1)
    n = pts.shape[1] if n is None else n
    if len(pts) > 500:
        raise ValueError("the exhaustive oracle is limited to 500 samples")
    tol = 1e-12 * max(1.0, float(np.abs(pts).max()))
    b = np.append(q, 1.0)
    best = np.inf
    for size in range(1, n + 2):
        combos = combinations(range(len(pts)), size)
        while True:
            idx = np.fromiter(islice(combos, 1 << 16), dtype=np.dtype((np.int64, size)))
            if not len(idx):
                break
            # barycentric solve: sum l_i P_i = q, sum l_i = 1, batched
            A = np.concatenate([np.swapaxes(pts[idx], 1, 2), np.ones((len(idx), 1, size))], axis=1)
            lam = _batched_lstsq(A, b)
            with np.errstate(invalid="ignore"):
                ok = (np.abs(np.einsum("kij,kj->ki", A, lam) - b).max(1) <= tol) & (lam.min(1) >= -1e-12)
            if ok.any():
                best = min(best, float((lam[ok] * vals[idx[ok]]).sum(1).min()))
    if not np.isfinite(best):
        raise ValueError("query point lies outside the hull of the samples")
    return best


def _batched_lstsq(A, b):
    """Least-squares solutions of A_k l = b for a stack of small matrices."""
    AtA = np.einsum("kji,kjl->kil", A, A)
    Atb = np.einsum("kji,j->ki", A, b)
    scale = np.abs(AtA).max(axis=(1, 2)) ** AtA.shape[1]
    singular = np.abs(np.linalg.det(AtA)) <= 1e-12 * scale
    AtA[singular] = np.eye(AtA.shape[1])
    lam = np.linalg.solve(AtA, Atb[..., None])[..., 0]
    lam[singular] = np.nan
    return lam


def legendre_naive(g: GridFunction, dual) -> GridFunction:
    """Direct max over all primal nodes for every slope node."""
    x = g.axes()[0]
    v = g.values
    s = dual.axes()[0]
    out = np.empty(len(s))
    step = max(1, 2_000_000 // len(x))
    for j in range(0, len(s), step):
        out[j:j + step] = (s[j:j + step, None] * x[None, :] - v[None, :]).max(axis=1)
    return GridFunction(dual.lower, dual.upper, out)
