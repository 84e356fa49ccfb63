"""Convex bodies: Minkowski gauges, C^{1,1} smoothing and line-free checks.

A compact convex body W with 0 in its interior is handled through its gauge
mu. Smoothing runs the Lusin approximation on mu over 2W, picks a regular
level t0 of the smooth approximant g in (1, 2) where the annulus mismatch is
small, and returns the rescaled sublevel set (1/t0){g <= t0}.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, cKDTree

from .coercivity import CoercivityVerdict, coercivity_test
from .jets import GridFunction, discrete_lipschitz
from .lusin import LusinCertificate, ResolutionError, lusin_approximate
from .oracles import Fixture

log = logging.getLogger(__name__)

__all__ = [
    "ConvexBodyRep",
    "Polyhedron",
    "SmoothedBody",
    "CoareaReport",
    "LineVerdicts",
    "BODIES",
    "POLYHEDRA",
    "get_body",
    "load_body",
    "body_from_dict",
    "minkowski",
    "gauge_fixture",
    "level_lengths",
    "boundary_points",
    "smooth_body",
    "boundary_mismatch_measure",
    "coarea_validate",
    "polyline_curvature",
    "contains_line",
]


def _hrep(points, keep=None):
    """Facet normals a and offsets b of conv(points), with a.x <= b."""
    hull = ConvexHull(points)
    a = hull.equations[:, :-1]
    b = -hull.equations[:, -1]
    if keep is not None:
        a, b = a[keep(a, b)], b[keep(a, b)]
    # qhull splits facets into simplices; merge repeated planes
    key = np.round(np.column_stack([a, b]), 12)
    _, first = np.unique(key, axis=0, return_index=True)
    first = np.sort(first)
    return hull, a[first], b[first]


@dataclass(frozen=True)
class ConvexBodyRep:
    """Compact convex body with 0 in its interior.

    ``kind`` is "polytope" (``vertices``) or "radial" (boundary distance
    ``radii`` over ``angles`` in 2D, or over a (polar, azimuth) grid given by
    ``angles`` = (polar_axis, azimuth_axis) in 3D).
    """

    dim: int
    kind: str
    vertices: Optional[np.ndarray] = None
    angles: Optional[object] = None
    radii: Optional[np.ndarray] = None
    name: str = ""
    normals: np.ndarray = field(init=False, repr=False, default=None)
    offsets: np.ndarray = field(init=False, repr=False, default=None)
    inradius: float = field(init=False, default=0.0)
    circumradius: float = field(init=False, default=0.0)

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError("only dimensions 2 and 3 are supported")
        set_ = lambda k, v: object.__setattr__(self, k, v)
        if self.kind == "polytope":
            V = np.asarray(self.vertices, dtype=float)
            if V.ndim != 2 or V.shape[1] != self.dim:
                raise ValueError("vertices must be an array of shape (k, dim)")
            hull, a, b = _hrep(V)
            if len(hull.vertices) != len(V):
                raise ValueError("polytope vertices are not in convex position")
            if b.min() <= 0:
                raise ValueError("0 must lie strictly inside the body")
            V.setflags(write=False)
            set_("vertices", V)
            set_("normals", a)
            set_("offsets", b)
            set_("inradius", float(b.min()))
            set_("circumradius", float(np.sqrt((V ** 2).sum(1)).max()))
        elif self.kind == "radial":
            r = np.asarray(self.radii, dtype=float)
            if np.any(r <= 0):
                raise ValueError("radial boundary distance must be positive")
            if self.dim == 2:
                th = np.asarray(self.angles, dtype=float)
                if th.shape != r.shape or np.any(np.diff(th) <= 0) or th[-1] - th[0] >= 2 * np.pi:
                    raise ValueError("2D radial bodies need increasing angles within one turn")
                set_("angles", th)
            else:
                pol, azi = (np.asarray(x, dtype=float) for x in self.angles)
                if r.shape != (len(pol), len(azi)):
                    raise ValueError("3D radial radii must have shape (len(polar), len(azimuth))")
                set_("angles", (pol, azi))
            set_("radii", r)
            set_("inradius", float(r.min()))
            set_("circumradius", float(r.max()))
        else:
            raise ValueError(f"unknown body kind {self.kind!r}")

    def bounding_box(self):
        if self.kind == "polytope":
            return self.vertices.min(0), self.vertices.max(0)
        R = self.circumradius
        return np.full(self.dim, -R), np.full(self.dim, R)

    def scaled(self, t: float) -> "ConvexBodyRep":
        if self.kind == "polytope":
            return ConvexBodyRep(self.dim, "polytope", t * self.vertices, name=f"{t}*{self.name}")
        return ConvexBodyRep(self.dim, "radial", angles=self.angles, radii=t * self.radii,
                             name=f"{t}*{self.name}")

    def to_dict(self) -> dict:
        if self.kind == "polytope":
            return {"dim": self.dim, "vertices": self.vertices.tolist()}
        ang = self.angles.tolist() if self.dim == 2 else [a.tolist() for a in self.angles]
        return {"dim": self.dim, "radial": {"angles": ang, "radii": self.radii.tolist()}}


@dataclass(frozen=True)
class Polyhedron:
    """conv(vertices) + cone(rays), with 0 in the interior."""

    vertices: np.ndarray
    rays: np.ndarray
    name: str = ""
    normals: np.ndarray = field(init=False, repr=False, default=None)
    offsets: np.ndarray = field(init=False, repr=False, default=None)

    def __post_init__(self):
        V = np.atleast_2d(np.asarray(self.vertices, dtype=float))
        n = V.shape[1]
        R = np.asarray(self.rays, dtype=float).reshape(-1, n)
        R = R[np.linalg.norm(R, axis=1) > 0]
        R = R / np.linalg.norm(R, axis=1, keepdims=True)
        object.__setattr__(self, "vertices", V)
        object.__setattr__(self, "rays", R)
        # truncate the recession cone far out and keep the facets through V
        T = 100.0 * (1.0 + np.abs(V).max())
        far = (V[:, None, :] + T * R[None, :, :]).reshape(-1, n)
        tol = 1e-9 * T

        def through_v(a, b):
            return (np.abs(V @ a.T - b[None, :]) <= tol).any(0)

        _, a, b = _hrep(np.vstack([V, far]), keep=through_v)
        if b.min() <= 0:
            raise ValueError("0 must lie strictly inside the polyhedron")
        object.__setattr__(self, "normals", a)
        object.__setattr__(self, "offsets", b)

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def bounded(self) -> bool:
        return len(self.rays) == 0


def _box(lo, hi):
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    corners = np.array(np.meshgrid(*zip(lo, hi), indexing="ij")).reshape(len(lo), -1).T
    return corners


BODIES = {
    "disc": ConvexBodyRep(2, "radial", angles=np.linspace(0, 2 * np.pi, 720, endpoint=False),
                          radii=np.ones(720), name="disc"),
    "square": ConvexBodyRep(2, "polytope", _box([-1, -1], [1, 1]), name="square"),
    "cube": ConvexBodyRep(3, "polytope", _box([-1, -1, -1], [1, 1, 1]), name="cube"),
    "ball": ConvexBodyRep(3, "radial", angles=(np.linspace(0, np.pi, 91), np.linspace(0, 2 * np.pi, 180, endpoint=False)),
                          radii=np.ones((91, 180)), name="ball"),
}

_PX = np.linspace(-2, 2, 9)
POLYHEDRA = {
    "slab": Polyhedron([[-1.0, 0.0], [1.0, 0.0]], [[0.0, 1.0], [0.0, -1.0]], name="slab"),
    "pointed_cone": Polyhedron([[0.0, -1.0]], [[1.0, 1.0], [-1.0, 1.0]], name="pointed_cone"),
    "paraboloid_epi": Polyhedron(np.column_stack([_PX, _PX ** 2 - 1.0]), [[1.0, 4.0], [-1.0, 4.0]],
                                 name="paraboloid_epi"),
    "square": Polyhedron(_box([-1, -1], [1, 1]), np.zeros((0, 2)), name="square"),
    "slab3d": Polyhedron([[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]],
                         [[0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], name="slab3d"),
}


def get_body(name: str):
    if name in BODIES:
        return BODIES[name]
    if name in POLYHEDRA:
        return POLYHEDRA[name]
    raise KeyError(f"unknown body {name!r}; choose from {sorted(set(BODIES) | set(POLYHEDRA))}")


def body_from_dict(d: dict):
    dim = int(d["dim"])
    if "rays" in d:
        if "vertices" not in d:
            raise ValueError("unsupported: unbounded bodies must be polyhedral (vertices + rays)")
        return Polyhedron(d["vertices"], d["rays"], name=d.get("name", ""))
    if "vertices" in d:
        return ConvexBodyRep(dim, "polytope", d["vertices"], name=d.get("name", ""))
    if "radial" in d:
        r = d["radial"]
        ang = r["angles"] if dim == 2 else tuple(r["angles"])
        return ConvexBodyRep(dim, "radial", angles=ang, radii=r["radii"], name=d.get("name", ""))
    raise ValueError("body JSON needs 'vertices' or 'radial'")


def load_body(spec: str):
    """A named fixture, or a JSON file holding a body description."""
    try:
        return get_body(spec)
    except KeyError:
        pass
    with open(spec) as fh:
        return body_from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# gauge


def _facet_ratios(W, x):
    return x @ (W.normals / W.offsets[:, None]).T


def _radial_2d(W, x):
    th = np.mod(np.arctan2(x[..., 1], x[..., 0]) - W.angles[0], 2 * np.pi) + W.angles[0]
    period = W.angles[0] + 2 * np.pi
    knots = np.append(W.angles, period)
    rad = np.append(W.radii, W.radii[0])
    rho = np.interp(th, knots, rad)
    k = np.clip(np.searchsorted(knots, th, side="right") - 1, 0, len(W.radii) - 1)
    slope = (rad[k + 1] - rad[k]) / (knots[k + 1] - knots[k])
    return th, rho, slope, knots


def _radial_3d_rho(W, x):
    from scipy.interpolate import RegularGridInterpolator

    pol, azi = W.angles
    azi_ext = np.append(azi, azi[0] + 2 * np.pi)
    R = np.concatenate([W.radii, W.radii[:, :1]], axis=1)
    interp = RegularGridInterpolator((pol, azi_ext), R)
    r = np.sqrt((x ** 2).sum(-1))
    safe = np.where(r > 0, r, 1.0)
    p = np.arccos(np.clip(x[..., 2] / safe, -1, 1))
    a = np.mod(np.arctan2(x[..., 1], x[..., 0]) - azi[0], 2 * np.pi) + azi[0]
    return interp(np.stack([np.clip(p, pol[0], pol[-1]), a], -1))


def minkowski(W, x) -> np.ndarray:
    """mu(x) = inf{lam >= 0 : x in lam W}, for points along the last axis."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != W.dim:
        raise ValueError(f"points must have last axis {W.dim}")
    if isinstance(W, Polyhedron) or W.kind == "polytope":
        return np.maximum(_facet_ratios(W, x).max(-1), 0.0)
    r = np.sqrt((x ** 2).sum(-1))
    if W.dim == 2:
        _, rho, _, _ = _radial_2d(W, x)
    else:
        rho = _radial_3d_rho(W, x)
    return r / rho


def _gauge_gradient(W, x):
    x = np.asarray(x, dtype=float)
    if isinstance(W, Polyhedron) or W.kind == "polytope":
        ratios = _facet_ratios(W, x)
        k = np.argmax(ratios, axis=-1)
        g = (W.normals / W.offsets[:, None])[k]
        return np.where((ratios.max(-1) > 0)[..., None], g, 0.0)
    r = np.sqrt((x ** 2).sum(-1))
    safe = np.where(r > 0, r, 1.0)
    if W.dim == 2:
        th, rho, slope, _ = _radial_2d(W, x)
        er = np.stack([np.cos(th), np.sin(th)], -1)
        et = np.stack([-np.sin(th), np.cos(th)], -1)
        return er / rho[..., None] - (slope / rho ** 2)[..., None] * et
    # 3D radial: central differences, mu is smooth between mesh lines
    step = 1e-6 * safe
    out = np.empty(x.shape)
    for i in range(3):
        e = np.zeros(3)
        e[i] = 1.0
        out[..., i] = (minkowski(W, x + step[..., None] * e) - minkowski(W, x - step[..., None] * e)) / (2 * step)
    return out


def _gauge_kink(W, x, tol):
    x = np.asarray(x, dtype=float)
    r = np.sqrt((x ** 2).sum(-1))
    if isinstance(W, Polyhedron) or W.kind == "polytope":
        ratios = np.sort(_facet_ratios(W, x), axis=-1)
        scale = float(np.linalg.norm(W.normals / W.offsets[:, None], axis=1).max())
        top = ratios[..., -1]
        flat = np.abs(top) <= tol * scale
        tie = (top - ratios[..., -2]) <= 2 * tol * scale
        return (r <= tol) | tie | (flat if isinstance(W, Polyhedron) else False)
    if W.dim == 2:
        th, _, _, knots = _radial_2d(W, x)
        rad = np.append(W.radii, W.radii[0])
        sl = np.diff(rad) / np.diff(knots)
        jump = np.abs(sl - np.roll(sl, 1)) > 1e-12
        kk = knots[:-1][jump]
        if len(kk):
            d = np.abs(np.mod(th[..., None] - kk + np.pi, 2 * np.pi) - np.pi).min(-1)
            return (r <= tol) | (d * r <= tol)
    return r <= tol


def gauge_fixture(W) -> Fixture:
    """The gauge of W as an analytic fixture (value, gradient, kink set)."""
    return Fixture(
        name=f"gauge[{W.name}]", dim=W.dim,
        value=lambda p: minkowski(W, p),
        gradient=lambda p: _gauge_gradient(W, p),
        kink=lambda p, tol: _gauge_kink(W, p, tol),
        lip_grad=np.inf,
        coercive=not isinstance(W, Polyhedron) or W.bounded,
        description=f"Minkowski gauge of {W.name or 'W'}",
    )


# ---------------------------------------------------------------------------
# level sets


def _cell_corners(values):
    return values[:-1, :-1], values[1:, :-1], values[:-1, 1:], values[1:, 1:]


def level_lengths(c00, c10, c01, c11, t: float, hx: float, hy: float) -> np.ndarray:
    """Marching-squares length of the level t inside each cell.

    Corners are indexed (x, y); crossings are placed by linear
    interpolation along cell edges and saddles are split by the cell mean.
    """
    c00, c10, c01, c11 = (np.asarray(c, dtype=float) for c in (c00, c10, c01, c11))
    s00, s10, s01, s11 = c00 >= t, c10 >= t, c01 >= t, c11 >= t

    def frac(a, b):
        d = b - a
        return np.clip(np.where(d != 0, (t - a) / np.where(d != 0, d, 1.0), 0.5), 0.0, 1.0)

    # crossing points in cell-local coordinates
    p = [
        np.stack([frac(c00, c10) * hx, 0 * c00], -1),        # bottom
        np.stack([hx + 0 * c10, frac(c10, c11) * hy], -1),   # right
        np.stack([frac(c01, c11) * hx, hy + 0 * c01], -1),   # top
        np.stack([0 * c00, frac(c00, c01) * hy], -1),        # left
    ]
    cross = np.stack([s00 != s10, s10 != s11, s01 != s11, s00 != s01], -1)
    count = cross.sum(-1)
    out = np.zeros(c00.shape)
    two = count == 2
    if two.any():
        idx = np.argsort(~cross[two], axis=-1, kind="stable")[:, :2]
        P = np.stack(p, -2)[two]  # (k, 4, 2)
        rows = np.arange(len(P))
        out[two] = np.linalg.norm(P[rows, idx[:, 0]] - P[rows, idx[:, 1]], axis=-1)
    four = count == 4
    if four.any():
        P = np.stack(p, -2)[four]
        centre = ((c00 + c10 + c01 + c11) / 4 >= t)[four]
        joined = centre == s00[four]
        seg = lambda i, j: np.linalg.norm(P[:, i] - P[:, j], axis=-1)
        out[four] = np.where(joined, seg(0, 1) + seg(2, 3), seg(3, 0) + seg(1, 2))
    return out


def _grid_level_length(values, t, spacing, cell_mask=None):
    corners = _cell_corners(values)
    if cell_mask is not None:
        idx = np.nonzero(cell_mask)
        corners = [c[idx] for c in corners]
    return float(level_lengths(*corners, t, spacing[0], spacing[1]).sum())


def _mesh_level_area(values, t, spacing, cell_mask=None):
    from skimage.measure import marching_cubes

    if not (values.min() < t < values.max()):
        return 0.0
    verts, faces, _, _ = marching_cubes(values, level=t, spacing=tuple(spacing))
    tri = verts[faces]
    area = 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=-1)
    if cell_mask is not None:
        cell = np.floor(tri.mean(1) / np.asarray(spacing)).astype(int)
        cell = np.minimum(cell, np.array(cell_mask.shape) - 1)
        area = area[cell_mask[tuple(cell.T)]]
    return float(area.sum())


def _level_measure(values, t, spacing, cell_mask=None):
    if values.ndim == 2:
        return _grid_level_length(values, t, spacing, cell_mask)
    return _mesh_level_area(values, t, spacing, cell_mask)


def _cells_all(node_mask):
    return _cells_reduce(node_mask, np.logical_and)


def _cells_any(node_mask):
    return _cells_reduce(node_mask, np.logical_or)


def _cells_reduce(values, fn):
    m = values
    for ax in range(m.ndim):
        a = np.take(m, np.arange(m.shape[ax] - 1), axis=ax)
        b = np.take(m, np.arange(1, m.shape[ax]), axis=ax)
        m = fn(a, b)
    return m


def _extract_level(g: GridFunction, t: float):
    """Longest level curve (2D polyline) or the level mesh (3D) in physical coordinates."""
    h = g.spacing
    lo = np.asarray(g.lower)
    if g.dim == 2:
        from skimage.measure import find_contours

        curves = find_contours(g.values, t)
        if not curves:
            return None, False
        c = max(curves, key=len)
        closed = bool(np.allclose(c[0], c[-1]))
        return lo + c * h, closed
    from skimage.measure import marching_cubes

    verts, faces, _, _ = marching_cubes(g.values, level=t, spacing=tuple(h))
    return (verts + lo, faces), _watertight(faces)


def _watertight(faces) -> bool:
    edges = np.sort(np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]]), axis=1)
    _, counts = np.unique(edges, axis=0, return_counts=True)
    return bool(np.all(counts == 2))


def polyline_curvature(poly, step: float) -> float:
    """Largest turning angle per unit length after resampling at arc-length ``step``."""
    P = np.asarray(poly, dtype=float)
    if np.allclose(P[0], P[-1]):
        P = P[:-1]
    Q = np.vstack([P, P[:1]])
    s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(Q, axis=0), axis=1))])
    n = max(8, int(s[-1] / step))
    u = np.linspace(0, s[-1], n, endpoint=False)
    R = np.column_stack([np.interp(u, s, Q[:, k]) for k in range(2)])
    d1 = np.roll(R, -1, 0) - R
    d0 = R - np.roll(R, 1, 0)
    ang = np.abs(np.arctan2(d0[:, 0] * d1[:, 1] - d0[:, 1] * d1[:, 0], (d0 * d1).sum(1)))
    seg = 0.5 * (np.linalg.norm(d0, axis=1) + np.linalg.norm(d1, axis=1))
    return float((ang / seg).max())


# ---------------------------------------------------------------------------
# boundary comparison


def boundary_points(W, spacing: float):
    """Points on the boundary of W with the length/area each one carries."""
    if isinstance(W, tuple):  # (verts, faces) mesh
        return _mesh_samples(W[0], W[1], spacing)
    if isinstance(W, np.ndarray):
        return _polyline_samples(W, spacing)
    if W.dim == 2:
        if W.kind == "polytope":
            hull = ConvexHull(W.vertices)
            return _polyline_samples(W.vertices[hull.vertices], spacing, closed=True)
        th = np.linspace(0, 2 * np.pi, max(64, int(2 * np.pi * W.circumradius / spacing)), endpoint=False)
        u = np.stack([np.cos(th), np.sin(th)], -1)
        poly = u / minkowski(W, u)[:, None]
        return _polyline_samples(poly, spacing, closed=True)
    if W.kind == "polytope":
        hull = ConvexHull(W.vertices)
        return _mesh_samples(W.vertices, hull.simplices, spacing)
    pol, azi = np.linspace(0, np.pi, 181), np.linspace(0, 2 * np.pi, 361)
    P, A = np.meshgrid(pol, azi, indexing="ij")
    u = np.stack([np.sin(P) * np.cos(A), np.sin(P) * np.sin(A), np.cos(P)], -1).reshape(-1, 3)
    pts = u / np.maximum(minkowski(W, u), 1e-300)[:, None]
    hull = ConvexHull(pts)
    return _mesh_samples(pts, hull.simplices, spacing)


def _polyline_samples(P, spacing, closed=None):
    P = np.asarray(P, dtype=float)
    if closed is None:
        closed = len(P) > 2 and np.allclose(P[0], P[-1])
    if closed and not np.allclose(P[0], P[-1]):
        P = np.vstack([P, P[:1]])
    seg = np.diff(P, axis=0)
    L = np.linalg.norm(seg, axis=1)
    pts, wts = [], []
    for a, d, l in zip(P[:-1], seg, L):
        if l == 0:
            continue
        k = max(1, int(np.ceil(l / spacing)))
        u = (np.arange(k) + 0.5) / k
        pts.append(a + u[:, None] * d)
        wts.append(np.full(k, l / k))
    return np.vstack(pts), np.concatenate(wts)


def _mesh_samples(verts, faces, spacing):
    verts = np.asarray(verts, dtype=float)
    tri = verts[np.asarray(faces)]
    pts, wts = [], []
    edge = np.linalg.norm(tri - np.roll(tri, 1, axis=1), axis=-1).max(-1)
    for m in np.unique(np.maximum(1, np.ceil(edge / spacing)).astype(int)):
        sel = tri[np.maximum(1, np.ceil(edge / spacing)).astype(int) == m]
        # centroids of the m^2 sub-triangles of a uniform subdivision
        i, j = np.triu_indices(m)
        j = j - i  # all (i, j) with i + j < m
        up = np.stack([i + 1 / 3, j + 1 / 3], -1)
        k = i + j < m - 1
        down = np.stack([i[k] + 2 / 3, j[k] + 2 / 3], -1)
        B = np.vstack([up, down]) / m
        area = 0.5 * np.linalg.norm(np.cross(sel[:, 1] - sel[:, 0], sel[:, 2] - sel[:, 0]), axis=-1)
        p = sel[:, None, 0] + B[None, :, 0, None] * (sel[:, None, 1] - sel[:, None, 0]) \
            + B[None, :, 1, None] * (sel[:, None, 2] - sel[:, None, 0])
        pts.append(p.reshape(-1, 3))
        wts.append(np.repeat(area / (m * m), len(B)))
    return np.vstack(pts), np.concatenate(wts)


def boundary_mismatch_measure(W, W_eps, tau_bd: float, t0: float = 1.0, spacing: float | None = None) -> float:
    """Length (2D) or area (3D) of the part of the boundary of W farther than tau_bd from W_eps.

    ``W_eps`` is a body, a closed polyline or a (verts, faces) mesh. When it
    lives on the t0 level (i.e. it approximates t0 times the boundary of W)
    pass ``t0``; the boundary of W is then scaled by t0 for the comparison
    and the measure divided by t0^(n-1). ``W_eps`` is sampled at step
    tau_bd/20 on curves and tau_bd/4 on surfaces, which keeps the sampling
    error in the distance to a few percent of tau_bd; the measured boundary
    only needs step tau_bd/2.
    """
    if spacing is None:
        ds = tau_bd / (20.0 if W.dim == 2 else 4.0)
    else:
        ds = spacing
    pw, ww = boundary_points(W, max(ds, 0.5 * tau_bd) / t0)
    pw = pw * t0
    ww = ww * t0 ** (pw.shape[1] - 1)
    pe, _ = boundary_points(W_eps, ds)
    # only "farther than tau_bd" matters, so the search can stop at that radius
    dist, _ = cKDTree(pe).query(pw, distance_upper_bound=tau_bd * (1 + 1e-12))
    return float(ww[dist > tau_bd].sum()) / t0 ** (pw.shape[1] - 1)


# ---------------------------------------------------------------------------
# smoothing


@dataclass(frozen=True)
class SmoothedBody:
    t0: float
    g: GridFunction
    level: object  # closed polyline (2D) or (verts, faces) (3D), already scaled by 1/t0
    boundary_mismatch: float
    level_mismatch: float
    curvature_bound: float
    discrete_curvature: float
    closed: bool
    M_used: float
    delta_reg: float
    L: float
    epsilon: float
    tau_bd: float
    regular_levels: int
    certificate: LusinCertificate = field(repr=False, default=None)

    def to_dict(self) -> dict:
        d = {
            "t0": self.t0,
            "M_used": self.M_used,
            "boundary_mismatch": self.boundary_mismatch,
            "level_mismatch": self.level_mismatch,
            "curvature_bound": self.curvature_bound,
            "discrete_curvature": self.discrete_curvature,
            "closed": self.closed,
            "delta_reg": self.delta_reg,
            "L": self.L,
            "epsilon": self.epsilon,
            "tau_bd": self.tau_bd,
            "regular_levels": self.regular_levels,
            "N": self.certificate.N if self.certificate is not None else None,
        }
        if isinstance(self.level, tuple):
            d["level_mesh"] = {"vertices": self.level[0].tolist(), "faces": self.level[1].tolist()}
        else:
            d["level_polyline"] = self.level.tolist()
        return d


def smooth_body(W: ConvexBodyRep, eps: float, h: float, levels: int = 256,
                delta_reg: float | None = None, tau_bd: float | None = None) -> SmoothedBody:
    """C^{1,1} convex body W_eps with boundary mismatch below eps.

    Raises ResolutionError("refine grid or raise ε") when no regular level
    in (1, 2) has a small enough mismatch estimate at this grid spacing.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    if not isinstance(W, ConvexBodyRep):
        raise ValueError("smoothing needs a compact body")
    lo, hi = W.bounding_box()
    box = (2 * lo, 2 * hi)
    F = gauge_fixture(W)
    coarse = GridFunction.from_function(F.value, box[0], box[1],
                                        tuple(int(np.ceil(w / h)) + 1 for w in box[1] - box[0]))
    L = 1.01 * discrete_lipschitz(coarse.values, coarse.spacing)
    cert = lusin_approximate(F, box, eps / L, h=h)
    g, mu = cert.g, cert.f
    hs = g.spacing
    dim = g.dim
    delta = 0.5 / W.circumradius if delta_reg is None else delta_reg
    tau_bd = 2 * float(hs.max()) if tau_bd is None else tau_bd

    gn = np.sqrt((cert.grad_g ** 2).sum(-1))
    cmin = _cells_reduce(g.values, np.minimum)
    cmax = _cells_reduce(g.values, np.maximum)
    cgrad = _cells_reduce(gn, np.minimum)
    band = (cmax >= 1.0) & (cmin <= 2.0)
    cmin, cmax, cgrad = cmin[band], cmax[band], cgrad[band]
    mismatch_cells = _cells_any(np.abs(mu.values - g.values) > cert.tau_eq)

    ts = 1.0 + (np.arange(levels) + 0.5) / levels
    est = np.full(levels, np.inf)
    regular = np.zeros(levels, dtype=bool)
    if dim == 2 and mismatch_cells.any():
        idx = np.nonzero(mismatch_cells)
        corners = [c[idx] for c in _cell_corners(mu.values)]
    for i, t in enumerate(ts):
        crossing = (cmin < t) & (cmax >= t)
        if not crossing.any() or cgrad[crossing].min() <= delta:
            continue
        regular[i] = True
        if not mismatch_cells.any():
            est[i] = 0.0
        elif dim == 2:
            est[i] = float(level_lengths(*corners, t, hs[0], hs[1]).sum()) / t
        else:
            est[i] = _mesh_level_area(mu.values, t, hs, mismatch_cells) / t ** 2
    ok = regular & (est < eps)
    if not ok.any():
        raise ResolutionError("refine grid or raise ε")
    i0 = int(np.argmin(np.where(ok, est, np.inf)))  # first minimum is the lowest t
    t0 = float(ts[i0])
    level, closed = _extract_level(g, t0)
    if level is None:
        raise ResolutionError("refine grid or raise ε")
    if dim == 2:
        level = level / t0
        curv = polyline_curvature(level, 2 * float(hs.max()) / t0)
    else:
        level = (level[0] / t0, level[1])
        curv = float("nan")
    bm = boundary_mismatch_measure(W, level, tau_bd / t0)
    log.info("smooth_body: t0=%.4f N=%d M=%.4g mismatch=%.4g", t0, cert.N, cert.M, bm)
    return SmoothedBody(
        t0=t0, g=g, level=level, boundary_mismatch=bm, level_mismatch=float(est[i0]),
        curvature_bound=t0 * cert.M / delta, discrete_curvature=curv, closed=closed,
        M_used=cert.M, delta_reg=delta, L=L, epsilon=float(eps), tau_bd=tau_bd,
        regular_levels=int(regular.sum()), certificate=cert,
    )


# ---------------------------------------------------------------------------
# coarea


@dataclass(frozen=True)
class CoareaReport:
    lhs: float
    rhs: float
    gap: float
    levels: int
    t_range: tuple

    def to_dict(self) -> dict:
        return {"lhs": self.lhs, "rhs": self.rhs, "gap": self.gap, "levels": self.levels,
                "t_range": list(self.t_range)}


def _subcell_gradients(v, cells, h, t_lo, t_hi, sub):
    """Sum of |grad| * volume over the part of each listed cell where t_lo <= v <= t_hi.

    The multilinear interpolant is sampled at ``sub`` midpoints per axis.
    """
    n = v.ndim
    idx = np.stack(np.nonzero(cells), -1)
    if len(idx) == 0:
        return 0.0
    bits = np.array(list(np.ndindex(*(2,) * n)))  # corner offsets
    a = (np.arange(sub) + 0.5) / sub
    local = np.stack(np.meshgrid(*[a] * n, indexing="ij"), -1).reshape(-1, n)  # (s, n)
    # per-corner weights prod_d (a_d or 1 - a_d) and their axis derivatives
    fac = np.where(bits[None, :, :] == 1, local[:, None, :], 1 - local[:, None, :])  # (s, 2^n, n)
    w = fac.prod(-1).T
    dws = [(np.where(bits[:, d] == 1, 1.0, -1.0)[None, :] * np.delete(fac, d, axis=-1).prod(-1) / h[d]).T
           for d in range(n)]
    total = 0.0
    step = max(1, (1 << 22) // len(local))
    for k in range(0, len(idx), step):
        corners = np.stack([v[tuple((idx[k:k + step] + b).T)] for b in bits], -1)  # (c, 2^n)
        val = corners @ w
        grad2 = sum((corners @ dw) ** 2 for dw in dws)
        inside = (val >= t_lo) & (val <= t_hi)
        total += float((np.sqrt(grad2) * inside).sum())
    return total * float(np.prod(h)) / sub ** n


def coarea_validate(g: GridFunction, region=None, t_range=None, levels: int = 64) -> CoareaReport:
    """Integral of |grad g| over {t_lo <= g <= t_hi} against the integral of its level measures.

    Both sides live on the cells touching ``region`` (all cells by default).
    Cells whose corners all lie in the range use the multilinear gradient at
    the centre; the others are sub-sampled and clipped to the range. The
    right side is a midpoint rule over ``levels`` levels.
    """
    if g.dim not in (2, 3):
        raise ValueError("coarea validation supports dimensions 2 and 3")
    v = g.values
    h = g.spacing
    node = np.ones(v.shape, dtype=bool) if region is None else np.asarray(region, dtype=bool)
    if t_range is None:
        t_range = (float(v[node].min()), float(v[node].max())) if node.any() else (0.0, 0.0)
    t_lo, t_hi = map(float, t_range)
    in_range = node & (v >= t_lo) & (v <= t_hi)
    full = _cells_all(in_range)
    cells = _cells_any(in_range)
    # multilinear gradient at cell centres: average of edge differences
    grads = []
    for ax in range(g.dim):
        a = np.take(v, np.arange(v.shape[ax] - 1), axis=ax)
        b = np.take(v, np.arange(1, v.shape[ax]), axis=ax)
        d = (b - a) / h[ax]
        for other in range(g.dim):
            if other != ax:
                d = 0.5 * (np.take(d, np.arange(d.shape[other] - 1), axis=other)
                           + np.take(d, np.arange(1, d.shape[other]), axis=other))
        grads.append(d)
    gnorm = np.sqrt(sum(d ** 2 for d in grads))
    lhs = float(gnorm[full].sum() * np.prod(h))
    lhs += _subcell_gradients(v, cells & ~full, h, t_lo, t_hi, 32 if g.dim == 2 else 6)
    dt = (t_hi - t_lo) / levels
    rhs = 0.0
    if dt > 0 and cells.any():
        ts = t_lo + (np.arange(levels) + 0.5) * dt
        rhs = float(sum(_level_measure(v, t, h, cells) for t in ts) * dt)
    scale = max(abs(lhs), abs(rhs))
    gap = abs(lhs - rhs) / scale if scale > 0 else 0.0
    return CoareaReport(lhs, rhs, gap, levels, (t_lo, t_hi))


# ---------------------------------------------------------------------------
# lines


@dataclass(frozen=True)
class LineVerdicts:
    """True means "contains a line" (equivalently: the gauge is not essentially coercive)."""

    lineality: Optional[bool]
    boundary_line: Optional[bool]
    zero_set_line: Optional[bool]
    not_coercive: Optional[bool]
    direction: Optional[np.ndarray]
    coercivity: Optional[CoercivityVerdict] = None

    @property
    def verdicts(self) -> dict:
        return {"a": self.lineality, "b": self.boundary_line, "c": self.zero_set_line, "d": self.not_coercive}

    @property
    def agree(self) -> bool:
        vals = [v for v in self.verdicts.values() if v is not None]
        return len(set(vals)) <= 1

    def to_dict(self) -> dict:
        return {
            "verdicts": self.verdicts,
            "agree": self.agree,
            "contains_line": self.lineality,
            "direction": None if self.direction is None else self.direction.tolist(),
        }


def _lineality_direction(P: Polyhedron):
    R = P.rays
    if len(R) == 0:
        return None
    k, n = R.shape
    # lam >= 0, sum lam = 1, R^T lam = 0
    A_eq = np.vstack([R.T, np.ones((1, k))])
    b_eq = np.append(np.zeros(n), 1.0)
    res = linprog(np.zeros(k), A_eq=A_eq, b_eq=b_eq, bounds=[(0, None)] * k, method="highs")
    if res.status != 0:
        return None
    d = R[int(np.argmax(res.x))]
    return d / np.linalg.norm(d)


def contains_line(P, checks=("a", "b", "c", "d"), samples=None) -> LineVerdicts:
    """The four equivalent line tests for a polyhedron conv(V) + cone(R)."""
    if isinstance(P, ConvexBodyRep):
        if P.kind != "polytope":
            raise ValueError("unsupported: line checks need a polyhedral body")
        P = Polyhedron(P.vertices, np.zeros((0, P.dim)), name=P.name)
    n = P.dim
    d = _lineality_direction(P)
    a = b = c = dd = None
    cv = None
    if "a" in checks:
        a = d is not None
    if "b" in checks:
        mu_v = minkowski(P, P.vertices)
        ys = P.vertices[np.abs(mu_v - 1.0) <= 1e-9]
        cands = [d] if d is not None else list(P.rays) + list(-P.rays)
        T = np.linspace(-50.0, 50.0, 101)
        b = any(
            np.allclose(minkowski(P, y[None, :] + T[:, None] * u[None, :]), 1.0, atol=1e-9)
            for y in ys for u in cands
        )
    if "c" in checks:
        c = bool(np.linalg.matrix_rank(P.normals, tol=1e-9) < n)
        if c:
            null = np.linalg.svd(P.normals)[2][-1]
            # the null direction and its negative both have gauge zero
            c = bool(minkowski(P, null) <= 1e-12 and minkowski(P, -null) <= 1e-12)
    if "d" in checks:
        pts = np.random.default_rng(0).uniform(-3, 3, size=(64, n)) if samples is None else samples
        cv = coercivity_test(gauge_fixture(P), pts)
        dd = None if cv.status == "inconclusive" else cv.status == "not_coercive"
    out = LineVerdicts(a, b, c, dd, d, cv)
    if not out.agree:
        log.warning("line verdicts disagree: %s", out.verdicts)
    return out
