"""Discrete Legendre transforms, convex envelopes and the C^{1,1} extension operator.

The extension of a feasible jet (E, f, G) with constant M is the convex
envelope of the lower tangent-quadratic hull

    m(x) = min_y f(y) + <G(y), x - y> + (M/2)|x - y|^2 .

Two routes are provided. The grid route samples m on a padded box and takes
its discrete convex envelope. The exact route writes m as the quadratic
infimal convolution of the point cloud (y - G(y)/M, f(y) - |G(y)|^2/(2M)),
so its envelope is the same convolution applied to the lower convex hull of
that cloud; F and grad F are then evaluated in closed form at any point.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np
from numba import njit
from scipy.spatial import ConvexHull

from . import _kernels as K
from .cw11 import InfeasibleJetError, check_condition_a
from .jets import GridFunction, Jet1Set, convexity_check, discrete_lipschitz, gradient, parse_grid_spec

__all__ = [
    "DualGrid",
    "ExtensionResult",
    "ExactExtension",
    "legendre_1d",
    "biconjugate",
    "tangent_quadratic_min",
    "tangent_quadratic_grid",
    "extend_c11",
]

_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class DualGrid:
    """Uniform grid of slopes."""

    lower: tuple
    upper: tuple
    shape: tuple

    @property
    def spacing(self) -> np.ndarray:
        return np.array([(u - l) / (n - 1) for l, u, n in zip(self.lower, self.upper, self.shape)])

    def axes(self) -> list:
        return [np.linspace(l, u, n) for l, u, n in zip(self.lower, self.upper, self.shape)]

    @classmethod
    def for_data(cls, g: GridFunction) -> "DualGrid":
        """Slope box spanning the observed difference quotients, padded by one spacing."""
        lo, hi, shape = [], [], []
        for ax, (h, n) in enumerate(zip(g.spacing, g.shape)):
            q = np.diff(g.values, axis=ax) / h
            smin, smax = float(q.min()), float(q.max())
            span = max(smax - smin, 1e-6 * max(1.0, abs(smin), abs(smax)))
            m = max(n, 4)
            ds = span / (m - 3)
            lo.append(smin - ds)
            hi.append(smax + ds)
            shape.append(m)
        return cls(tuple(lo), tuple(hi), tuple(shape))


def _slope_range(g: GridFunction):
    q = np.diff(g.values) / g.spacing[0]
    return float(q.min()), float(q.max())


def legendre_1d(g: GridFunction, dual: DualGrid | None = None) -> GridFunction:
    """g*(s) = max_x (s x - g(x)) over the nodes of a 1D grid.

    Uses the lower hull of the data and a single monotone sweep over the
    sorted slopes; the result agrees bit for bit with a direct scan.
    """
    if g.dim != 1:
        raise ValueError("legendre_1d needs a 1D grid")
    dual = DualGrid.for_data(g) if dual is None else dual
    smin, smax = _slope_range(g)
    tol = 1e-12 * max(1.0, abs(smin), abs(smax))
    if dual.lower[0] > smin + tol or dual.upper[0] < smax - tol:
        raise ValueError(
            f"slope range too small: data slopes [{smin}, {smax}] vs dual [{dual.lower[0]}, {dual.upper[0]}]"
        )
    x = g.axes()[0]
    s = dual.axes()[0]
    return GridFunction(dual.lower, dual.upper, _conjugate_points(x, g.values, s))


def _conjugate_points(x, v, s):
    hull = K.lower_hull(x, v)
    delta = 16 * _EPS * (np.abs(s) * np.abs(x).max() + np.abs(v).max())
    return K.conjugate_exact(x, v, hull, s, delta)


def _biconjugate_1d_exact(x, v):
    """Double transform with the hull edge slopes as the dual nodes."""
    hull = K.lower_hull(x, v)
    if len(hull) < 2:
        return v.copy()
    hx, hv = x[hull], v[hull]
    s = np.diff(hv) / np.diff(hx)
    s = np.maximum.accumulate(s)
    s, keep = np.unique(s, return_index=True)
    gstar = K.conjugate_exact(x, v, hull, s, 16 * _EPS * (np.abs(s) * np.abs(x).max() + np.abs(v).max()))
    if len(s) == 1:
        back = s[0] * x - gstar[0]
    else:
        h2 = K.lower_hull(s, gstar)
        back = K.conjugate_sweep(s[h2], gstar[h2], x)
    return np.minimum(back, v)


def _separable_conjugate(vals, prim_axes, dual_axes):
    """Discrete conjugate on a product grid, one axis at a time.

    max over x of <s, x> - g(x) factorises as nested maxima; with
    c_k = conjugate along axis k of the running array, the sign flips between
    passes keep every stage a plain 1D conjugate.
    """
    out = np.asarray(vals, dtype=float)
    n = out.ndim
    for ax in range(n):
        moved = np.moveaxis(out if ax == 0 else -out, ax, -1)
        lead = moved.shape[:-1]
        flat = np.ascontiguousarray(moved.reshape(-1, moved.shape[-1]))
        conj = K.conjugate_lines(flat, prim_axes[ax], dual_axes[ax])
        out = np.moveaxis(conj.reshape(lead + (len(dual_axes[ax]),)), -1, ax)
    return out


def _biconjugate_legendre(g: GridFunction) -> np.ndarray:
    dual = DualGrid.for_data(g)
    prim, dax = g.axes(), dual.axes()
    gstar = _separable_conjugate(g.values, prim, dax)
    back = _separable_conjugate(gstar, dax, prim)
    return np.minimum(back, g.values)


@njit(cache=True)
def _rasterise(out, shape, verts, tinv, vals, tol):
    """Fill ``out`` (flat) with the affine interpolant of each simplex.

    ``verts`` (F, n+1, n) are simplex vertices in index coordinates, ``tinv``
    (F, n, n) the inverse edge matrices and ``vals`` (F, n+1) vertex values.
    """
    nf = verts.shape[0]
    n = shape.shape[0]
    strides = np.empty(n, dtype=np.int64)
    acc = 1
    for d in range(n - 1, -1, -1):
        strides[d] = acc
        acc *= shape[d]
    lo = np.empty(n, dtype=np.int64)
    hi = np.empty(n, dtype=np.int64)
    cnt = np.empty(n, dtype=np.int64)
    lam = np.empty(n + 1)
    pidx = np.empty(n)
    for f in range(nf):
        total = 1
        for d in range(n):
            a = verts[f, 0, d]
            b = a
            for k in range(1, n + 1):
                a = min(a, verts[f, k, d])
                b = max(b, verts[f, k, d])
            lo[d] = max(0, int(np.ceil(a - 1e-9)))
            hi[d] = min(shape[d] - 1, int(np.floor(b + 1e-9)))
            cnt[d] = hi[d] - lo[d] + 1
            if cnt[d] <= 0:
                total = 0
            total *= max(cnt[d], 0)
        for lin in range(total):
            r = lin
            flat = 0
            s0 = 0.0
            ok = True
            for d in range(n - 1, -1, -1):
                p = lo[d] + r % cnt[d]
                r //= cnt[d]
                flat += p * strides[d]
                pidx[d] = p
            for i in range(n):
                acc_l = 0.0
                for d in range(n):
                    acc_l += tinv[f, i, d] * (pidx[d] - verts[f, 0, d])
                lam[i + 1] = acc_l
                s0 += acc_l
            lam[0] = 1.0 - s0
            for i in range(n + 1):
                if lam[i] < -tol:
                    ok = False
                    break
            if not ok:
                continue
            val = 0.0
            for i in range(n + 1):
                val += lam[i] * vals[f, i]
            if val < out[flat]:
                out[flat] = val
    return out


def _lower_hull_facets(coords, vals):
    """Simplices of the lower convex hull of (coords, vals), coords full-dimensional.

    An apex far above the data keeps the hull full-dimensional even for
    affine data; facets through it face upward and are discarded.
    """
    n = coords.shape[1]
    vmin, vmax = float(vals.min()), float(vals.max())
    span = float(np.ptp(coords, axis=0).max()) or 1.0
    scale = span / (vmax - vmin) if vmax > vmin else 1.0
    z = (vals - vmin) * scale
    apex = np.append(coords.mean(0), 10.0 * span + z.max() + 1.0)
    pts = np.vstack([np.column_stack([coords, z]), apex])
    hull = ConvexHull(pts)
    normals = hull.equations[:, n]
    lower = normals < -1e-12
    simp = hull.simplices[lower]
    simp = simp[(simp < len(coords)).all(1)]
    return simp


def _biconjugate_hull(g: GridFunction) -> np.ndarray:
    n = g.dim
    shape = np.array(g.shape, dtype=np.int64)
    idx = np.stack(np.meshgrid(*[np.arange(s, dtype=float) for s in g.shape], indexing="ij"), -1).reshape(-1, n)
    v = g.values.ravel()
    simp = _lower_hull_facets(idx, v)
    verts = idx[simp]
    T = np.transpose(verts[:, 1:, :] - verts[:, :1, :], (0, 2, 1))
    det = np.linalg.det(T)
    good = np.abs(det) > 1e-9
    verts, T, simp = verts[good], T[good], simp[good]
    tinv = np.linalg.inv(T)
    out = np.full(v.shape, np.inf)
    out = _rasterise(out, shape, np.ascontiguousarray(verts), np.ascontiguousarray(tinv),
                     np.ascontiguousarray(v[simp]), 1e-10)
    return np.minimum(out, v).reshape(g.shape)


def biconjugate(g: GridFunction, method: str = "auto") -> GridFunction:
    """Discrete convex envelope of grid data relative to its box.

    ``method``: ``"legendre"`` applies the axis-by-axis transform twice on a
    uniform dual grid; ``"hull"`` reads the envelope off the lower convex
    hull of the samples; ``"auto"`` picks the exact 1D double transform with
    hull-edge slopes as dual nodes in 1D and the hull route otherwise.
    """
    if g.dim > 3:
        raise ValueError("biconjugate supports at most 3 dimensions")
    if method == "auto":
        if g.dim == 1:
            return g.with_values(_biconjugate_1d_exact(g.axes()[0], g.values))
        method = "hull"
    if method == "legendre":
        return g.with_values(_biconjugate_legendre(g))
    if method == "hull":
        if g.dim == 1:
            return g.with_values(_biconjugate_1d_exact(g.axes()[0], g.values))
        return g.with_values(_biconjugate_hull(g))
    raise ValueError(f"unknown biconjugate method {method!r}")


# ---------------------------------------------------------------------------
# tangent quadratics


def _as_points(x, dim):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 0 or (x.ndim == 1 and x.shape[0] == dim)
    return x.reshape(-1, dim), single


def tangent_quadratic_min(jet: Jet1Set, M: float, x, chunk: int = 4096):
    """min over y in E of f(y) + <G(y), x - y> + (M/2)|x - y|^2, with its argmin.

    Ties go to the lowest index. A single point returns (float, int); a batch
    returns two arrays.
    """
    if not M > 0:
        raise ValueError("M must be positive")
    X, single = _as_points(x, jet.dim)
    P, f, G = jet.points, jet.values, jet.gradients
    vals = np.empty(len(X))
    args = np.empty(len(X), dtype=np.int64)
    step = max(1, chunk * 64 // max(1, len(P)))
    for s in range(0, len(X), step):
        d = X[s:s + step, None, :] - P[None, :, :]
        q = f[None, :] + np.einsum("kij,ij->ki", d, G) + 0.5 * M * np.einsum("kij,kij->ki", d, d)
        a = np.argmin(q, axis=1)
        args[s:s + step] = a
        vals[s:s + step] = q[np.arange(len(a)), a]
    if single:
        return float(vals[0]), int(args[0])
    return vals, args


def _ball_offsets(radius_cells, spacing):
    """Integer offsets sorted by physical length, up to the given radius."""
    spacing = np.asarray(spacing, dtype=float)
    r = np.ceil(radius_cells).astype(int)
    rng = [np.arange(-ri, ri + 1) for ri in r]
    off = np.stack(np.meshgrid(*rng, indexing="ij"), -1).reshape(-1, len(spacing))
    length = np.sqrt(((off * spacing) ** 2).sum(1))
    rmax = float((radius_cells * spacing).max())
    keep = length <= rmax * (1 + 1e-12)
    off, length = off[keep], length[keep]
    order = np.lexsort((np.arange(len(length)), length))
    return np.ascontiguousarray(off[order].astype(np.int64)), np.ascontiguousarray(length[order])


def tangent_quadratic_grid(values, grads, in_e, grid: GridFunction, M: float, lip: float):
    """Tangent-quadratic minimum on every node when E is a set of grid nodes.

    ``values`` and ``grads`` are the data on the grid (only E-nodes are read),
    ``in_e`` the node mask of E and ``lip`` a bound on |G| and on the
    Lipschitz constant of the underlying convex function. The minimiser for
    node x lies within (2K + sqrt(4K^2 + M^2 d^2))/M of x, d being the
    distance from x to E, so only that window is scanned.
    """
    from scipy.ndimage import distance_transform_edt

    h = grid.spacing
    mask = np.asarray(in_e, dtype=bool).reshape(grid.shape)
    if not mask.any():
        raise ValueError("empty node set")
    d = distance_transform_edt(~mask, sampling=h)
    Kb = max(float(lip), float(np.sqrt((np.asarray(grads).reshape(-1, grid.dim)[mask.ravel()] ** 2).sum(1)).max()))
    R = (2 * Kb + np.sqrt(4 * Kb * Kb + (M * d) ** 2)) / M
    R = R * (1 + 1e-9) + 1e-12 + float(h.max()) * 1e-6
    off, off_r = _ball_offsets(float(R.max()) / h, h)
    best, arg = K.windowed_tangent_min(
        np.ascontiguousarray(np.asarray(values, dtype=float).ravel()),
        np.ascontiguousarray(np.asarray(grads, dtype=float).reshape(-1, grid.dim)),
        np.ascontiguousarray(mask.ravel()),
        np.array(grid.shape, dtype=np.int64), np.asarray(h, dtype=float),
        np.arange(mask.size, dtype=np.int64), R.ravel(), off, off_r, float(M),
    )
    return best.reshape(grid.shape), arg.reshape(grid.shape)


# ---------------------------------------------------------------------------
# exact route


class ExactExtension:
    """Closed-form evaluator of the extension of a jet with constant M."""

    def __init__(self, jet: Jet1Set, M: float):
        self.jet, self.M = jet, float(M)
        P, f, G = jet.points, jet.values, jet.gradients
        z = P - G / M
        d = f - (G * G).sum(1) / (2 * M)
        self.z, self.d = z, d
        centre = z.mean(0)
        U, s, Vt = np.linalg.svd(z - centre, full_matrices=False)
        tol = 1e-10 * max(1.0, float(np.abs(z).max()))
        k = int((s > tol).sum())
        self.k = k
        self.centre = centre
        self.basis = Vt[:k].T  # (n, k)
        self._facets = self._lower_facets()

    def _lower_facets(self):
        z, d, k = self.z, self.d, self.k
        if k == 0:
            i = int(np.argmin(d))
            return [np.array([i])]
        c = (z - self.centre) @ self.basis
        if k == 1:
            u = c[:, 0]
            order = np.lexsort((d, u))
            u_s, d_s = u[order], d[order]
            first = np.r_[True, np.diff(u_s) > 0]
            order, u_s, d_s = order[first], u_s[first], d_s[first]
            h = K.lower_hull(u_s, d_s)
            return [order[h[i:i + 2]] for i in range(len(h) - 1)]
        simp = _lower_hull_facets(c, d)
        return list(simp)

    def _pack(self):
        """Facet data laid out for the compiled evaluator."""
        n, M = self.jet.dim, self.M
        nf = len(self._facets)
        pmax = n + 1
        nface = 2 ** pmax - 1
        Z = np.zeros((nf, pmax, n))
        a = np.zeros((nf, n))
        b = np.zeros(nf)
        nfaces = np.zeros(nf, dtype=np.int64)
        fsize = np.zeros((nf, nface), dtype=np.int64)
        fvid = np.zeros((nf, nface, pmax), dtype=np.int64)
        fginv = np.zeros((nf, nface, 3, 3))
        for f, facet in enumerate(self._facets):
            V, Dv = self.z[facet], self.d[facet]
            p = len(facet)
            Z[f, :p] = V
            if p == 1:
                b[f] = Dv[0]
            else:
                # psi is affine on the facet; take its gradient inside the facet's span
                E = V[1:] - V[0]
                coef = np.linalg.solve(E @ E.T, Dv[1:] - Dv[0])
                a[f] = E.T @ coef
                b[f] = Dv[0] - a[f] @ V[0]
            q = 0
            for size in range(1, p + 1):
                for face in combinations(range(p), size):
                    if size > 1:
                        Ef = V[list(face[1:])] - V[face[0]]
                        gram = Ef @ Ef.T
                        if abs(np.linalg.det(gram)) < 1e-14 * max(1.0, np.abs(gram).max()) ** (size - 1):
                            continue
                        fginv[f, q, :size - 1, :size - 1] = np.linalg.inv(gram)
                    fsize[f, q] = size
                    fvid[f, q, :size] = face
                    q += 1
            nfaces[f] = q
        return Z, a, b, nfaces, fsize, fvid, fginv

    def evaluate(self, x):
        """(F, grad F) at points x of shape (k, n)."""
        X = np.ascontiguousarray(np.asarray(x, dtype=float).reshape(-1, self.jet.dim))
        if not hasattr(self, "_packed"):
            self._packed = self._pack()
        F, zb = K.quadratic_hull_eval(X, *self._packed, self.M)
        return F, self.M * (X - zb)


@dataclass(frozen=True)
class ExtensionResult:
    F: GridFunction
    gradF: np.ndarray
    M_used: float
    interp_error_values: float
    interp_error_grads: float
    discrete_lip_gradF: float
    is_convex: bool
    method: str


def _box(box):
    if isinstance(box, str):
        return parse_grid_spec(box)
    if isinstance(box, GridFunction):
        return box.lower, box.upper, box.shape
    lower, upper, shape = box
    return (tuple(np.atleast_1d(lower).astype(float)), tuple(np.atleast_1d(upper).astype(float)),
            tuple(int(s) for s in np.atleast_1d(shape)))


def _padded(lower, upper, shape, margin):
    lower, upper = np.asarray(lower), np.asarray(upper)
    h = (upper - lower) / (np.asarray(shape) - 1)
    extra = np.ceil(margin / h - 1e-9).astype(int)
    return tuple(lower - extra * h), tuple(upper + extra * h), tuple(np.asarray(shape) + 2 * extra), extra


def extend_c11(jet: Jet1Set, M: float, box, method: str = "grid", pad: float | None = None,
               tau: float | None = None) -> ExtensionResult:
    """C^{1,1} convex extension of a jet with Lip(grad F) <= M, sampled on a box grid.

    ``box`` is a grid spec string ``"lo:hi:n,..."`` or (lower, upper, shape).
    The grid route pads the box by ``pad`` (default max|G|/M + diam E) in whole
    cells, takes the envelope there and crops. The exact route evaluates the
    closed form at the requested nodes.
    """
    if jet.dim > 3:
        raise ValueError("extension supports at most 3 dimensions")
    chk = check_condition_a(jet, M, tau)
    if not chk.holds:
        x, y = chk.witness
        raise InfeasibleJetError(
            f"jet violates the pairwise condition at M={M}: pair x={jet.points[x].tolist()}, "
            f"y={jet.points[y].tolist()}",
            witness=chk.witness,
        )
    lower, upper, shape = _box(box)
    if method == "exact":
        ext = ExactExtension(jet, M)
        grid = GridFunction(lower, upper, np.zeros(shape))
        Fv, Gv = ext.evaluate(grid.points())
        F = grid.with_values(Fv)
        gradF = Gv.reshape(shape + (jet.dim,))
        Fe, Ge = ext.evaluate(jet.points)
    elif method == "grid":
        P, G = jet.points, jet.gradients
        if pad is None:
            diam = float(np.sqrt(((P.max(0) - P.min(0)) ** 2).sum()))
            pad = float(np.sqrt((G ** 2).sum(1)).max()) / M + diam
        plo, pup, pshape, extra = _padded(lower, upper, shape, pad)
        big = GridFunction(plo, pup, np.zeros(pshape))
        m, _ = tangent_quadratic_min(jet, M, big.points())
        env = biconjugate(big.with_values(m.reshape(pshape)))
        sl = tuple(slice(e, e + s) for e, s in zip(extra, shape))
        gbig = gradient(env)
        F = GridFunction(lower, upper, env.values[sl])
        gradF = gbig[sl]
        Fe = env.interpolate(P)
        Ge = np.stack([env.with_values(gbig[..., i]).interpolate(P) for i in range(jet.dim)], -1)
    else:
        raise ValueError(f"unknown extension method {method!r}")
    err_v = float(np.abs(Fe - jet.values).max())
    err_g = float(np.sqrt(((Ge - jet.gradients) ** 2).sum(1)).max())
    lip = discrete_lipschitz(gradF, F.spacing, collar=1)
    scale = max(1.0, float(np.abs(F.values).max()))
    convex = convexity_check(F, 1e-10 * scale).is_convex
    return ExtensionResult(F, gradF, float(M), err_v, err_g, lip, convex, method)
