"""Essential coercivity, the rigid decomposition f = c(Px) + <v, x>, and line rigidity.

A convex f fails to be essentially coercive exactly when its gradients stay
in a proper affine subspace; the directions orthogonal to the gradient
differences are then directions along which f is affine. Everything here is
decided from gradient samples through a numerical rank.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .cw11 import span_rank
from .jets import GridFunction, Jet1Set, gradient

__all__ = [
    "CoercivityVerdict",
    "Decomposition",
    "GateDecision",
    "RigidityReport",
    "gradient_samples",
    "coercivity_test",
    "decompose",
    "rigidity_check",
    "global_feasibility_gate",
]

SIGMA_TOL = 1e-8


@dataclass(frozen=True)
class CoercivityVerdict:
    status: str  # "coercive" | "not_coercive" | "inconclusive"
    rank: int
    dim: int
    witness_direction: Optional[np.ndarray] = None
    null_basis: Optional[np.ndarray] = None
    line_residuals: list = field(default_factory=list)
    growth: dict = field(default_factory=dict)
    reference_slope: Optional[np.ndarray] = None

    @property
    def essentially_coercive(self) -> Optional[bool]:
        if self.status == "inconclusive":
            return None
        return self.status == "coercive"

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "essentially_coercive": self.essentially_coercive,
            "rank": self.rank,
            "dim": self.dim,
            "witness_direction": None if self.witness_direction is None else self.witness_direction.tolist(),
            "line_residuals": [float(r) for r in self.line_residuals],
            "growth": {str(k): [float(x) for x in v] for k, v in self.growth.items()},
        }


@dataclass(frozen=True)
class Decomposition:
    X_basis: np.ndarray
    v: np.ndarray
    xi: np.ndarray
    c_samples: np.ndarray
    representatives: np.ndarray
    rank: int
    reconstruction_error: float
    c_growth: dict = field(default_factory=dict)
    c_coercive: bool = True

    @property
    def projector(self) -> np.ndarray:
        return self.X_basis @ self.X_basis.T

    def to_dict(self) -> dict:
        return {
            "rank": self.rank,
            "X_basis": self.X_basis.tolist(),
            "v": self.v.tolist(),
            "reconstruction_error": self.reconstruction_error,
            "representative_rule": "lowest sample index per fibre",
            "representatives": self.representatives.tolist(),
            "xi": self.xi.tolist(),
            "c_samples": self.c_samples.tolist(),
            "c_coercive": self.c_coercive,
        }


@dataclass(frozen=True)
class GateDecision:
    status: str  # "go" | "no-go" | "inconclusive"
    reason: str
    verdict: CoercivityVerdict

    @property
    def go(self) -> bool:
        return self.status == "go"


@dataclass(frozen=True)
class RigidityReport:
    lines_checked: int
    lines_squeezed: int
    violations: list
    max_deviation: float

    @property
    def ok(self) -> bool:
        return not self.violations


# ---------------------------------------------------------------------------
# sampling


def _default_points(dim: int, count: int | None = None, seed: int = 0, half_width: float = 2.0):
    rng = np.random.default_rng(seed)
    count = max(4 * (dim + 1), 16) if count is None else count
    return rng.uniform(-half_width, half_width, size=(count, dim))


def gradient_samples(f, samples=None):
    """Points, values and gradients used by the tests below.

    ``f`` may be a fixture (analytic value and gradient), a GridFunction
    (interior nodes away from detected kinks, central-difference gradients)
    or a Jet1Set.
    """
    if isinstance(f, Jet1Set):
        return f.points, f.values, f.gradients
    if isinstance(f, GridFunction):
        from .lusin import _kink_mask_discrete

        grads = gradient(f)
        ok = ~_kink_mask_discrete(f)
        for ax in range(f.dim):
            sl = [slice(None)] * f.dim
            sl[ax] = [0, -1]
            ok[tuple(sl)] = False
        # drop nodes next to a kink as their central differences straddle it
        near = ok.copy()
        for ax in range(f.dim):
            near &= np.roll(ok, 1, axis=ax) & np.roll(ok, -1, axis=ax)
        pts = f.mesh()[near]
        return pts, f.values[near], grads[near]
    pts = _default_points(f.dim) if samples is None else np.asarray(samples, dtype=float).reshape(-1, f.dim)
    if f.kink is not None:
        pts = pts[~np.asarray(f.kink(pts, 1e-9), dtype=bool)]
    return pts, np.asarray(f.value(pts), dtype=float), np.asarray(f.gradient(pts), dtype=float).reshape(-1, f.dim)


def _evaluator(f):
    if isinstance(f, GridFunction):
        from scipy.interpolate import RegularGridInterpolator

        interp = RegularGridInterpolator(f.axes(), f.values, bounds_error=False, fill_value=np.nan)
        return lambda p: interp(np.asarray(p).reshape(-1, f.dim))
    if isinstance(f, Jet1Set):
        return None
    return lambda p: np.asarray(f.value(np.asarray(p).reshape(-1, f.dim)), dtype=float)


def _null_basis(G, k):
    diffs = G[1:] - G[0]
    _, s, Vt = np.linalg.svd(diffs, full_matrices=True)
    return Vt[k:], Vt[:k]


def _canonical(w):
    w = w / np.linalg.norm(w)
    i = int(np.argmax(np.abs(w)))
    return w if w[i] > 0 else -w


def coercivity_test(f, samples=None, line_tol: float | None = None) -> CoercivityVerdict:
    """Decide essential coercivity from the rank of gradient differences.

    Rank n means coercive. Otherwise the first null-space direction is a
    candidate witness, reported only after f is seen to be affine along three
    sample lines in that direction; fewer than n+1 samples give
    "inconclusive".
    """
    pts, vals, G = gradient_samples(f, samples)
    n = pts.shape[1]
    if len(pts) < n + 1:
        return CoercivityVerdict("inconclusive", 0, n)
    jet = Jet1Set(pts, vals, G) if not isinstance(f, Jet1Set) else f
    k = span_rank(jet, SIGMA_TOL)
    ell = G.mean(0)
    growth = _ray_growth(f, ell, n)
    if k == n:
        return CoercivityVerdict("coercive", k, n, growth=growth, reference_slope=ell)
    null, _ = _null_basis(G, k)
    w = _canonical(null[0])
    ev = _evaluator(f)
    residuals = []
    if ev is not None:
        scale = max(1.0, float(np.abs(vals).max()))
        tol = (1e-9 * scale if not isinstance(f, GridFunction) else 1e-6 * scale) if line_tol is None else line_tol
        span = 1.0 if not isinstance(f, GridFunction) else 0.25 * float(np.ptp(pts, axis=0).min())
        for p in pts[:3]:
            t = np.linspace(-span, span, 9)
            line = p[None, :] + t[:, None] * w[None, :]
            fv = ev(line)
            fv = fv[np.isfinite(fv)]
            if len(fv) < 3:
                continue
            residuals.append(float(np.abs(np.diff(fv, 2)).max()))
        if len(residuals) < 3 or max(residuals) > tol:
            return CoercivityVerdict("inconclusive", k, n, w, null, residuals, growth, ell)
    return CoercivityVerdict("not_coercive", k, n, w, null, residuals, growth, ell)


def _ray_growth(f, ell, n, radii=(1.0, 2.0, 4.0, 8.0)):
    """f(R w) - <ell, R w> along the axis directions, for a few radii."""
    ev = _evaluator(f)
    if ev is None:
        return {}
    out = {}
    for i in range(n):
        for sgn in (1, -1):
            w = np.zeros(n)
            w[i] = sgn
            pts = np.array([r * w for r in radii])
            out[f"{'+' if sgn > 0 else '-'}e{i + 1}"] = list(ev(pts) - pts @ ell)
    return out


def decompose(f, samples=None, tol: float = 1e-8) -> Decomposition:
    """Split f = c(Px) + <v, x> with X the span of gradient differences.

    c is sampled at xi = X^T x for each sample. Fixtures give c in closed form
    (c(xi) = f(X xi)); sampled inputs use the lowest-index sample of each
    fibre of P as its representative.
    """
    pts, vals, G = gradient_samples(f, samples)
    n = pts.shape[1]
    if len(pts) < 2:
        raise ValueError("need at least two gradient samples")
    jet = Jet1Set(pts, vals, G) if not isinstance(f, Jet1Set) else f
    k = span_rank(jet, SIGMA_TOL)
    _, Xrows = _null_basis(G, k)
    X = np.stack([_canonical(r) for r in Xrows], axis=1) if k else np.zeros((n, 0))
    P = X @ X.T
    orth = G - G @ P
    scale = max(1.0, float(np.abs(G).max()))
    if np.abs(orth - orth[0]).max() > tol * scale:
        raise ValueError(
            f"input not convex-consistent: orthogonal gradient parts differ by {np.abs(orth - orth[0]).max():.3g}"
        )
    v = orth[0].copy()
    v[np.abs(v) < 1e-15 * scale] = 0.0
    xi = pts @ X
    proj = pts @ P
    lin = pts @ v
    if isinstance(f, (GridFunction, Jet1Set)):
        # group samples by fibre of P, keyed on rounded coordinates in X
        step = 1e-9 * max(1.0, float(np.abs(pts).max()))
        keys = np.round(xi / step).astype(np.int64) if k else np.zeros((len(pts), 1), dtype=np.int64)
        _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
        reps = first[inverse.ravel()]
        c = vals[reps] - lin[reps]
    else:
        reps = np.arange(len(pts))
        c = np.asarray(f.value(proj), dtype=float)
    recon = float(np.abs(vals - c - lin).max())
    growth, coercive_c = {}, True
    if not isinstance(f, (GridFunction, Jet1Set)) and k:
        for i in range(k):
            for sgn in (1, -1):
                d = sgn * X[:, i]
                seq = np.asarray(f.value(np.array([r * d for r in (1.0, 2.0, 4.0, 8.0, 16.0)])), dtype=float)
                growth[f"{'+' if sgn > 0 else '-'}x{i + 1}"] = seq.tolist()
                # c is coercive on X: some linear part on X is outgrown along every ray
                coercive_c &= bool(np.all(np.diff(seq[1:]) > 0) or seq[-1] > seq[0])
    return Decomposition(X, v, xi, c, reps, k, recon, growth, coercive_c)


def rigidity_check(f, g: GridFunction, matched=None, tol: float = 1e-9, kernel_axis: int | None = None) -> RigidityReport:
    """Discrete squeeze along grid lines parallel to the kernel of P.

    On a line where g matches f (after removing <v, x>) at both extreme
    matched nodes and at two or more interior nodes, convexity of g forces
    g = f on the whole segment between the extremes. Lines where this fails
    are reported.
    """
    dec = decompose(f)
    n = g.dim
    if kernel_axis is None:
        null = np.eye(n) - dec.projector
        axes = [i for i in range(n) if np.allclose(null[:, i], np.eye(n)[:, i], atol=1e-9)]
        if not axes:
            raise ValueError("kernel of P must contain a coordinate axis")
        kernel_axis = axes[0]
    pts = g.mesh()
    fv = np.asarray(f.value(pts), dtype=float) if not isinstance(f, GridFunction) else f.values
    lin = pts @ dec.v
    F = np.moveaxis(fv - lin, kernel_axis, -1)
    Gv = np.moveaxis(g.values - lin, kernel_axis, -1)
    if matched is None:
        match = np.abs(F - Gv) <= tol
    else:
        match = np.moveaxis(np.asarray(matched, dtype=bool), kernel_axis, -1)
    L = F.shape[-1]
    F2, G2, M2 = F.reshape(-1, L), Gv.reshape(-1, L), match.reshape(-1, L)
    violations, squeezed, worst = [], 0, 0.0
    for i in range(len(F2)):
        idx = np.flatnonzero(M2[i])
        if len(idx) < 4:
            continue
        a, b = idx[0], idx[-1]
        squeezed += 1
        dev = float(np.abs(G2[i, a:b + 1] - F2[i, a:b + 1]).max())
        worst = max(worst, dev)
        if dev > tol:
            violations.append((i, int(a), int(b), dev))
    return RigidityReport(len(F2), squeezed, violations, worst)


def global_feasibility_gate(f, eps: float | None = None, samples=None) -> GateDecision:
    """Go for whole-space C^{1,1} approximation only when f is essentially coercive."""
    verdict = coercivity_test(f, samples)
    if verdict.status == "coercive":
        return GateDecision("go", "essentially coercive: gradient differences span the space", verdict)
    if verdict.status == "not_coercive":
        w = np.round(verdict.witness_direction, 12).tolist()
        return GateDecision(
            "no-go",
            f"not essentially coercive: f is affine along {w}, so no C^1,1 convex function on the "
            f"whole space can agree with it outside a small set",
            verdict,
        )
    return GateDecision("inconclusive", "too few or inconsistent gradient samples", verdict)
