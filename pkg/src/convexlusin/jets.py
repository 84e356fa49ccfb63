"""1-jets, uniform grid functions, discrete differentiation and convexity checks."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Jet1Set",
    "GridFunction",
    "ConvexityDiagnostics",
    "JetUndefinedError",
    "gradient",
    "convexity_check",
    "sample_jet",
    "parse_grid_spec",
    "grid_with_spacing",
    "stencil_directions",
    "discrete_lipschitz",
    "save_jet",
    "load_jet",
    "save_grid_csv",
    "load_grid_csv",
    "save_grid_json",
    "load_grid_json",
    "load_grid",
    "save_grid",
]


class JetUndefinedError(ValueError):
    """Raised when a gradient is requested at a nondifferentiability point."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Jet1Set:
    """Values and gradients prescribed on a finite point set E."""

    points: np.ndarray
    values: np.ndarray
    gradients: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.ndim != 2:
            raise ValueError("points must be a list of n-vectors")
        vals = np.asarray(self.values, dtype=float).reshape(-1)
        grads = np.asarray(self.gradients, dtype=float).reshape(len(vals), -1)
        if len(pts) < 1 or not (len(pts) == len(vals) == len(grads)):
            raise ValueError("points, values and gradients must have equal length >= 1")
        if grads.shape[1] != pts.shape[1]:
            raise ValueError("gradient dimension does not match point dimension")
        if not (np.isfinite(pts).all() and np.isfinite(vals).all() and np.isfinite(grads).all()):
            raise ValueError("jet coordinates must be finite")
        if len(pts) > 1:
            scale = max(1.0, float(np.abs(pts).max()))
            order = np.lexsort(pts.T[::-1])
            sp = pts[order]
            # exact duplicates are adjacent after lexsort; near-duplicates are
            # caught by the pairwise check for small sets
            if len(pts) <= 2000:
                d = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1))
                np.fill_diagonal(d, np.inf)
                if d.min() <= 1e-12 * scale:
                    raise ValueError("jet points must be pairwise distinct")
            elif (np.abs(np.diff(sp, axis=0)).max(axis=1) <= 1e-12 * scale).any():
                raise ValueError("jet points must be pairwise distinct")
        object.__setattr__(self, "points", _readonly(pts))
        object.__setattr__(self, "values", _readonly(vals))
        object.__setattr__(self, "gradients", _readonly(grads))

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return len(self.values)

    def subset(self, idx) -> "Jet1Set":
        idx = np.asarray(idx)
        return Jet1Set(self.points[idx], self.values[idx], self.gradients[idx])

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "points": self.points.tolist(),
            "values": self.values.tolist(),
            "gradients": self.gradients.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Jet1Set":
        jet = cls(d["points"], d["values"], d["gradients"])
        if "dim" in d and int(d["dim"]) != jet.dim:
            raise ValueError(f"declared dim {d['dim']} does not match points ({jet.dim})")
        return jet


@dataclass(frozen=True)
class GridFunction:
    """Scalar samples on a uniform box grid, stored with the grid's shape.

    Axis ``i`` of ``values`` runs along coordinate ``i``; the flat order is
    numpy's row-major ravel.
    """

    lower: tuple
    upper: tuple
    values: np.ndarray

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lower))
        hi = tuple(float(v) for v in np.atleast_1d(self.upper))
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != len(lo) or len(lo) != len(hi):
            raise ValueError("box corners and value array dimension disagree")
        if any(s < 2 for s in vals.shape):
            raise ValueError("each axis needs at least 2 grid points")
        if any(not (u > l) for l, u in zip(lo, hi)):
            raise ValueError("upper corner must exceed lower corner on every axis")
        if not np.isfinite(vals).all():
            raise ValueError("grid values must be finite")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "values", _readonly(vals))

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def dim(self) -> int:
        return self.values.ndim

    @property
    def spacing(self) -> np.ndarray:
        return np.array([(u - l) / (n - 1) for l, u, n in zip(self.lower, self.upper, self.shape)])

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def axes(self) -> list:
        return [np.linspace(l, u, n) for l, u, n in zip(self.lower, self.upper, self.shape)]

    def mesh(self) -> np.ndarray:
        """Node coordinates with shape (*grid_shape, dim)."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def points(self) -> np.ndarray:
        return self.mesh().reshape(-1, self.dim)

    def with_values(self, values) -> "GridFunction":
        return GridFunction(self.lower, self.upper, np.asarray(values, dtype=float).reshape(self.shape))

    @classmethod
    def from_function(cls, f: Callable, lower, upper, shape) -> "GridFunction":
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        shape = tuple(int(s) for s in np.atleast_1d(shape))
        axes = [np.linspace(l, u, n) for l, u, n in zip(lower, upper, shape)]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        return cls(tuple(lower), tuple(upper), np.asarray(f(pts), dtype=float).reshape(shape))

    def interpolate(self, pts) -> np.ndarray:
        """Multilinear interpolation at arbitrary points inside the box."""
        from scipy.interpolate import RegularGridInterpolator

        interp = RegularGridInterpolator(self.axes(), self.values, method="linear")
        return interp(np.atleast_2d(np.asarray(pts, dtype=float)))

    def crop(self, start, stop) -> "GridFunction":
        """Sub-grid with node index ranges [start[i], stop[i]) on each axis."""
        sl = tuple(slice(a, b) for a, b in zip(start, stop))
        axes = self.axes()
        lo = [ax[a] for ax, a in zip(axes, start)]
        hi = [ax[b - 1] for ax, b in zip(axes, stop)]
        return GridFunction(tuple(lo), tuple(hi), self.values[sl])

    def node_index(self, x, atol: float = 1e-9) -> tuple:
        """Grid multi-index of a point that lies on a node."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        h = self.spacing
        r = (x - np.asarray(self.lower)) / h
        idx = np.rint(r).astype(int)
        if np.any(np.abs(r - idx) > atol / h.min()) or np.any(idx < 0) or np.any(idx >= self.shape):
            raise ValueError(f"point {x.tolist()} is not a grid node")
        return tuple(int(i) for i in idx)


@dataclass(frozen=True)
class ConvexityDiagnostics:
    min_second_difference: float
    is_convex: bool
    tolerance: float
    direction: tuple = ()


def parse_grid_spec(spec: str):
    """Parse ``"lo:hi:count"`` axes separated by ``,`` into (lower, upper, shape)."""
    lower, upper, shape = [], [], []
    for part in spec.split(","):
        bits = part.strip().split(":")
        if len(bits) != 3:
            raise ValueError(f"grid axis spec must look like lo:hi:count, got {part!r}")
        lo, hi, n = float(bits[0]), float(bits[1]), int(bits[2])
        if n < 2 or not hi > lo:
            raise ValueError(f"invalid grid axis {part!r}")
        lower.append(lo)
        upper.append(hi)
        shape.append(n)
    return tuple(lower), tuple(upper), tuple(shape)


def grid_with_spacing(lower, upper, h):
    """Box grid with nodes on lower + k*h covering [lower, upper] (upper rounded up)."""
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    h = np.broadcast_to(np.asarray(h, dtype=float), lower.shape)
    counts = np.ceil((upper - lower) / h - 1e-9).astype(int) + 1
    upper = lower + (counts - 1) * h
    return tuple(lower), tuple(upper), tuple(int(c) for c in counts)


def gradient(g: GridFunction) -> np.ndarray:
    """Central differences inside, first-order one-sided differences at the boundary.

    Returns an array of shape (*g.shape, g.dim).
    """
    if not np.isfinite(g.values).all():
        raise ValueError("gradient of non-finite grid data")
    parts = np.gradient(g.values, *g.spacing, edge_order=1)
    if g.dim == 1:
        parts = [parts]
    return np.stack(parts, axis=-1)


def stencil_directions(dim: int) -> list:
    """Axis directions and the two diagonals of every axis pair."""
    dirs = []
    for i in range(dim):
        e = [0] * dim
        e[i] = 1
        dirs.append(tuple(e))
    for i in range(dim):
        for k in range(i + 1, dim):
            for sgn in (1, -1):
                e = [0] * dim
                e[i] = 1
                e[k] = sgn
                dirs.append(tuple(e))
    return dirs


def _shift_slices(d, shape):
    """Slices (minus, centre, plus) for nodes x with x-d and x+d both inside."""
    minus, centre, plus = [], [], []
    for di, n in zip(d, shape):
        a = abs(di)
        if 2 * a >= n:
            return None
        centre.append(slice(a, n - a))
        if di >= 0:
            minus.append(slice(0, n - 2 * a))
            plus.append(slice(2 * a, n))
        else:
            minus.append(slice(2 * a, n))
            plus.append(slice(0, n - 2 * a))
    return tuple(minus), tuple(centre), tuple(plus)


def convexity_check(g: GridFunction, tau: float | None = None, mask=None) -> ConvexityDiagnostics:
    """Most negative second difference over axis and axis-pair diagonal stencils.

    ``tau`` defaults to 1e-10 * max|values|. With ``mask`` only stencils whose
    centre node is in the mask count.
    """
    v = g.values
    if not np.isfinite(v).all():
        raise ValueError("convexity check on non-finite data")
    if tau is None:
        tau = 1e-10 * max(float(np.abs(v).max()), 1e-300)
    worst, worst_dir = np.inf, ()
    for d in stencil_directions(g.dim):
        sl = _shift_slices(d, g.shape)
        if sl is None:
            continue
        mi, ce, pl = sl
        sd = v[pl] - 2.0 * v[ce] + v[mi]
        if mask is not None:
            sd = np.where(np.asarray(mask)[ce], sd, np.inf)
        if sd.size and sd.min() < worst:
            worst, worst_dir = float(sd.min()), d
    if worst == np.inf:
        worst = 0.0
    return ConvexityDiagnostics(worst, worst >= -tau, float(tau), worst_dir)


def discrete_lipschitz(field: np.ndarray, spacing, collar: int = 0, mask=None) -> float:
    """Largest |field(x+d) - field(x)| / |d| over axis and diagonal neighbours.

    ``field`` is a scalar grid (shape S) or a vector field (shape S + (k,)).
    ``collar`` drops that many boundary layers before measuring.
    """
    spacing = np.asarray(spacing, dtype=float)
    dim = len(spacing)
    f = np.asarray(field, dtype=float)
    if f.ndim == dim:
        f = f[..., None]
    if collar:
        sl = tuple(slice(collar, -collar) for _ in range(dim))
        f = f[sl]
        if mask is not None:
            mask = np.asarray(mask)[sl]
    best = 0.0
    for d in stencil_directions(dim):
        a, b = [], []
        ok = True
        for di, n in zip(d, f.shape[:dim]):
            if abs(di) >= n:
                ok = False
                break
            if di >= 0:
                a.append(slice(0, n - di))
                b.append(slice(di, n))
            else:
                a.append(slice(-di, n))
                b.append(slice(0, n + di))
        if not ok:
            continue
        a, b = tuple(a), tuple(b)
        step = float(np.sqrt(((np.asarray(d) * spacing) ** 2).sum()))
        diff = np.sqrt(((f[b] - f[a]) ** 2).sum(-1)) / step
        if mask is not None:
            m = np.asarray(mask)
            diff = np.where(m[a] & m[b], diff, 0.0)
        if diff.size:
            best = max(best, float(diff.max()))
    return best


def sample_jet(f, points) -> Jet1Set:
    """Exact values and gradients of an analytic fixture at the given points."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != f.dim:
        pts = pts.reshape(-1, f.dim)
    if f.kink is not None:
        bad = np.asarray(f.kink(pts, 0.0))
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise JetUndefinedError(
                f"jet undefined at nondifferentiability point {pts[i].tolist()} of {f.name}"
            )
    return Jet1Set(pts, f.value(pts), f.gradient(pts))


# ---------------------------------------------------------------------------
# file formats


def save_jet(jet: Jet1Set, path) -> None:
    Path(path).write_text(json.dumps(jet.to_dict()))


def load_jet(path) -> Jet1Set:
    return Jet1Set.from_dict(json.loads(Path(path).read_text()))


def save_grid_csv(g: GridFunction, path) -> None:
    head = (
        "# box lower " + " ".join(repr(v) for v in g.lower)
        + " upper " + " ".join(repr(v) for v in g.upper)
        + " shape " + " ".join(str(n) for n in g.shape)
    )
    body = "\n".join(repr(float(v)) for v in g.values.ravel())
    Path(path).write_text(head + "\n" + body + "\n")


def load_grid_csv(path) -> GridFunction:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("# box"):
        raise ValueError("grid CSV must start with a '# box' header")
    toks = lines[0].split()[2:]
    i_up, i_sh = toks.index("upper"), toks.index("shape")
    lower = [float(t) for t in toks[1:i_up]]
    upper = [float(t) for t in toks[i_up + 1:i_sh]]
    shape = [int(t) for t in toks[i_sh + 1:]]
    vals = np.array([float(s) for s in lines[1:] if s.strip()])
    if vals.size != math.prod(shape):
        raise ValueError(f"expected {math.prod(shape)} values, found {vals.size}")
    return GridFunction(tuple(lower), tuple(upper), vals.reshape(shape))


def save_grid_json(g: GridFunction, path) -> None:
    Path(path).write_text(json.dumps({
        "lower": list(g.lower),
        "upper": list(g.upper),
        "shape": list(g.shape),
        "values": g.values.ravel().tolist(),
    }))


def load_grid_json(path) -> GridFunction:
    d = json.loads(Path(path).read_text())
    return GridFunction(tuple(d["lower"]), tuple(d["upper"]), np.asarray(d["values"], dtype=float).reshape(d["shape"]))


def load_grid(path) -> GridFunction:
    p = Path(path)
    return load_grid_json(p) if p.suffix == ".json" else load_grid_csv(p)


def save_grid(g: GridFunction, path) -> None:
    p = Path(path)
    save_grid_json(g, p) if p.suffix == ".json" else save_grid_csv(g, p)
