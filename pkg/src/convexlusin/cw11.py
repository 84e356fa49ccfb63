"""Feasibility of 1-jets for C^{1,1} convex extension.

The pairwise test uses the tangent gap D(x, y) = f(x) - f(y) - <G(y), x - y>
and the squared gradient gap Q(x, y) = |G(x) - G(y)|^2; the jet extends with
Lip(grad F) <= M exactly when D >= Q / (2M) for every ordered pair.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .jets import Jet1Set

__all__ = [
    "ConditionCheck",
    "FeasibilityReport",
    "LocalSchedule",
    "InfeasibleJetError",
    "default_tau",
    "check_condition_a",
    "check_condition_b",
    "minimal_M",
    "local_schedule",
    "span_rank",
]

# pair scans beyond this many ordered pairs switch to a fixed random sample
EXHAUSTIVE_PAIR_LIMIT = 25_000_000
SAMPLED_PAIRS = 4_000_000
_BLOCK = 2_000_000


class InfeasibleJetError(ValueError):
    """The jet admits no C^{1,1} convex extension at the requested constant."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


@dataclass(frozen=True)
class ConditionCheck:
    holds: bool
    witness: Optional[tuple] = None
    slack: float = np.inf
    probe: Optional[np.ndarray] = None
    exhaustive: bool = True

    def __bool__(self):
        return self.holds


@dataclass(frozen=True)
class FeasibilityReport:
    feasible: bool
    minimal_M: float
    witness_pair: Optional[tuple]
    slack: float
    tau: float = 0.0
    exhaustive: bool = True

    def to_dict(self) -> dict:
        return {
            "feasible": self.feasible,
            "minimal_M": self.minimal_M if np.isfinite(self.minimal_M) else "inf",
            "witness_pair": list(self.witness_pair) if self.witness_pair else None,
            "slack": self.slack if np.isfinite(self.slack) else "inf",
            "tau": self.tau,
            "exhaustive": self.exhaustive,
        }


@dataclass(frozen=True)
class LocalSchedule:
    ks: list
    A_k: list
    span_rank: int
    maximizers: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "ks": list(self.ks),
            "A_k": [a if np.isfinite(a) else "inf" for a in self.A_k],
            "span_rank": self.span_rank,
        }


def default_tau(jet: Jet1Set) -> float:
    """1e-9 times the largest of max|f|, max|G|^2 and diam(E)^2."""
    p = jet.points
    diam2 = float(((p.max(0) - p.min(0)) ** 2).sum())
    scale = max(float(np.abs(jet.values).max()), float((jet.gradients ** 2).sum(1).max()), diam2)
    return 1e-9 * max(scale, 1e-300)


def _pairs(n: int, seed: int = 0):
    """Yield (x_idx, y_idx) blocks of ordered pairs, y-major, plus an exhaustive flag."""
    total = n * n
    if total <= EXHAUSTIVE_PAIR_LIMIT:
        rows = max(1, _BLOCK // n)
        for y0 in range(0, n, rows):
            ys = np.arange(y0, min(n, y0 + rows))
            yy = np.repeat(ys, n)
            xx = np.tile(np.arange(n), len(ys))
            yield xx, yy, True
    else:
        rng = np.random.default_rng(seed)
        flat = np.sort(rng.choice(total, size=SAMPLED_PAIRS, replace=False))
        for s in range(0, len(flat), _BLOCK):
            yy, xx = np.divmod(flat[s:s + _BLOCK], n)
            yield xx, yy, False


def _gap_terms(jet: Jet1Set, xx, yy):
    P, f, G = jet.points, jet.values, jet.gradients
    d = P[xx] - P[yy]
    D = f[xx] - f[yy] - np.einsum("ij,ij->i", G[yy], d)
    dG = G[xx] - G[yy]
    Q = np.einsum("ij,ij->i", dG, dG)
    return D, Q


def _rounding_tols(jet: Jet1Set, xx, yy):
    """Per-pair rounding allowance for the tangent gap and the gradient gap."""
    P, f, G = jet.points, jet.values, jet.gradients
    eps = 64 * np.finfo(float).eps
    lin = np.abs(np.einsum("ij,ij->i", G[yy], P[xx] - P[yy]))
    dtol = eps * (np.abs(f[xx]) + np.abs(f[yy]) + lin)
    qtol = eps * ((G[xx] ** 2).sum(1) + (G[yy] ** 2).sum(1))
    return dtol, qtol


def check_condition_a(jet: Jet1Set, M: float, tau: float | None = None) -> ConditionCheck:
    """Pairwise test D(x, y) >= Q(x, y) / (2M) - tau over all ordered pairs.

    Without ``tau`` each pair gets its own floating-point rounding allowance.
    On failure the witness is the maximally violating (x, y) index pair, with
    ties going to the lowest y and then the lowest x.
    """
    if not M > 0:
        raise ValueError("M must be positive")
    n = len(jet)
    bad_v, bad_pair, slack, exhaustive = -np.inf, None, np.inf, True
    for xx, yy, exh in _pairs(n):
        exhaustive &= exh
        keep = xx != yy
        xx, yy = xx[keep], yy[keep]
        if xx.size == 0:
            continue
        D, Q = _gap_terms(jet, xx, yy)
        viol = Q / (2.0 * M) - D
        if tau is None:
            dtol, qtol = _rounding_tols(jet, xx, yy)
            allow = dtol + qtol / (2.0 * M)
        else:
            allow = float(tau)
        slack = min(slack, float(-viol.max()))
        v = np.where(viol > allow, viol, -np.inf)
        i = int(np.argmax(v))
        if v[i] > bad_v:
            bad_v, bad_pair = float(v[i]), (int(xx[i]), int(yy[i]))
    if bad_pair is None:
        return ConditionCheck(True, None, slack, exhaustive=exhaustive)
    return ConditionCheck(False, bad_pair, slack, exhaustive=exhaustive)


def extremizers(jet: Jet1Set, M: float, yy, zz) -> np.ndarray:
    """Maximisers x = y + (G(z) - G(y)) / M of the pair inequality over x."""
    G = jet.gradients
    return jet.points[yy] + (G[zz] - G[yy]) / M


def _b_violation(jet: Jet1Set, M: float, yy, zz, x):
    """Tangent of z minus the M-quadratic of y at x, and the rounding allowance of that difference."""
    P, f, G = jet.points, jet.values, jet.gradients
    tz = np.einsum("ij,ij->i", G[zz], x - P[zz])
    u = x - P[yy]
    ty = np.einsum("ij,ij->i", G[yy], u)
    qy = 0.5 * M * np.einsum("ij,ij->i", u, u)
    v = f[zz] + tz - (f[yy] + ty + qy)
    mag = np.abs(f[zz]) + np.abs(tz) + np.abs(f[yy]) + np.abs(ty) + qy
    return v, 64 * np.finfo(float).eps * mag


def check_condition_b(jet: Jet1Set, M: float, probes=None, tau: float | None = None,
                      augment: bool = True) -> ConditionCheck:
    """Tangent of z lies below the M-quadratic of y at every probe x, for all y, z.

    With ``augment`` the probe set gains the pairwise maximisers, which turns
    the finite probe check into the statement for every x in R^n. Without
    ``tau`` each comparison gets its own floating-point rounding allowance.
    """
    if not M > 0:
        raise ValueError("M must be positive")
    n, dim = len(jet), jet.dim
    X = np.empty((0, dim)) if probes is None else np.asarray(probes, dtype=float).reshape(-1, dim)
    if X.shape[0] == 0 and not augment:
        raise ValueError("probe set must be nonempty")
    bad_v, best, best_x, slack, exhaustive = -np.inf, None, None, np.inf, True
    for zz, yy, exh in _pairs(n):
        exhaustive &= exh
        cands = []
        if augment:
            cands.append(extremizers(jet, M, yy, zz))
        for x in X:
            cands.append(np.broadcast_to(x, (len(yy), dim)))
        for xs in cands:
            v, rtol = _b_violation(jet, M, yy, zz, xs)
            # y == z is identically nonpositive and carries no information
            v = np.where(yy == zz, -np.inf, v)
            slack = min(slack, float(-v.max()))
            allow = rtol if tau is None else float(tau)
            v = np.where(v > allow, v, -np.inf)
            i = int(np.argmax(v))
            if v[i] > bad_v:
                bad_v, best, best_x = float(v[i]), (int(yy[i]), int(zz[i])), xs[i].copy()
    if best is None:
        return ConditionCheck(True, None, slack, exhaustive=exhaustive)
    return ConditionCheck(False, best, slack, probe=best_x, exhaustive=exhaustive)


def minimal_M(jet: Jet1Set, tau: float | None = None) -> FeasibilityReport:
    """Smallest M for which the pairwise test holds, as an exact finite maximum.

    M* = max Q / (2D) over pairs with a positive gap. A pair with D < -tau,
    or with D zero up to rounding while Q is not, makes the jet infeasible.
    """
    tau = default_tau(jet) if tau is None else float(tau)
    n = len(jet)
    Mstar = 0.0
    bad_pair, bad_score = None, -np.inf
    exhaustive = True
    for xx, yy, exh in _pairs(n):
        exhaustive &= exh
        keep = xx != yy
        xx, yy = xx[keep], yy[keep]
        if xx.size == 0:
            continue
        D, Q = _gap_terms(jet, xx, yy)
        dtol, qtol = _rounding_tols(jet, xx, yy)
        neg = D < -tau
        # a gap that is zero up to rounding cannot absorb a gradient jump
        flat = (D <= dtol) & ~neg & (Q > qtol)
        if neg.any() or flat.any():
            # most negative gap first, then the largest gradient jump over a flat gap
            score = np.where(neg, -D + 1e300, np.where(flat, Q, -np.inf))
            i = int(np.argmax(score))
            if score[i] > bad_score:
                bad_score, bad_pair = float(score[i]), (int(xx[i]), int(yy[i]))
        pos = D > dtol
        if pos.any():
            Mstar = max(Mstar, float((Q[pos] / (2.0 * D[pos])).max()))
    if bad_pair is not None:
        return FeasibilityReport(False, np.inf, bad_pair, -np.inf, tau, exhaustive)
    slack = np.inf
    if n > 1:
        chk = check_condition_a(jet, Mstar, tau=np.inf) if Mstar > 0 else None
        slack = chk.slack if chk is not None else np.inf
    return FeasibilityReport(True, Mstar, None, slack, tau, exhaustive)


def span_rank(jet: Jet1Set, sigma_tol: float = 1e-8) -> int:
    """Numerical rank of the gradient differences G(x_i) - G(x_0)."""
    if len(jet) < 2:
        return 0
    diffs = jet.gradients[1:] - jet.gradients[0]
    s = np.linalg.svd(diffs, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    floor = max(sigma_tol * s[0], 64 * np.finfo(float).eps * max(1.0, float(np.abs(jet.gradients).max())))
    return int((s > floor).sum())


def _clamp_along_segment(y, x, radius):
    """Point where the segment from y (inside the ball) to x leaves B(0, radius)."""
    out = x.copy()
    r = np.linalg.norm(x, axis=1)
    far = r > radius
    if far.any():
        a, b = y[far], x[far]
        d = b - a
        # |a + t d| = radius, t in [0, 1]
        A = np.einsum("ij,ij->i", d, d)
        B = 2 * np.einsum("ij,ij->i", a, d)
        C = np.einsum("ij,ij->i", a, a) - radius ** 2
        t = (-B + np.sqrt(np.maximum(B * B - 4 * A * C, 0.0))) / (2 * A)
        out[far] = a + np.clip(t, 0.0, 1.0)[:, None] * d
    return out


def local_schedule(jet: Jet1Set, k_max: int, probes=None, tau: float | None = None) -> LocalSchedule:
    """Per radius k, the smallest A >= 2 with

        f(z) + <G(z), x - z> <= f(y) + <G(y), x - y> + (A/2)|x - y|^2

    for z in E, y in E with |y| <= k, over x in the ball of radius 4k. The x
    range is represented by the supplied probes and the pair maximisers, the
    latter moved along their segment onto the sphere when they leave the ball.
    """
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    tau = default_tau(jet) if tau is None else float(tau)
    P, G = jet.points, jet.gradients
    n, dim = len(jet), jet.dim
    X = np.empty((0, dim)) if probes is None else np.asarray(probes, dtype=float).reshape(-1, dim)
    norms = np.linalg.norm(P, axis=1)
    ks, As, where = [], [], []
    for k in range(1, k_max + 1):
        ys = np.flatnonzero(norms <= k)
        A = 2.0
        arg = None
        if ys.size:
            yy = np.repeat(ys, n)
            zz = np.tile(np.arange(n), ys.size)
            keep = yy != zz
            yy, zz = yy[keep], zz[keep]
            D, Q = _gap_terms(jet, yy, zz)  # D(y, z) = f(y) - f(z) - <G(z), y - z>
            dG = G[zz] - G[yy]
            dtol, qtol = _rounding_tols(jet, yy, zz)
            bad = (D < -tau) | ((D <= dtol) & (Q > qtol))
            if bad.any():
                i = int(np.flatnonzero(bad)[0])
                A, arg = np.inf, (int(yy[i]), int(zz[i]))
            else:
                live = (D > dtol) & (Q > 0)
                yl, zl, Dl, dGl = yy[live], zz[live], D[live], dG[live]
                if yl.size:
                    # ratio 2(<dG, u> - D)/|u|^2 peaks at u = 2D dG/|dG|^2
                    x = P[yl] + (2 * Dl / np.einsum("ij,ij->i", dGl, dGl))[:, None] * dGl
                    x = _clamp_along_segment(P[yl], x, 4.0 * k)
                    cands = [x] + [np.broadcast_to(p, x.shape) for p in X if np.linalg.norm(p) <= 4 * k]
                    for xs in cands:
                        u = xs - P[yl]
                        uu = np.einsum("ij,ij->i", u, u)
                        ok = uu > 0
                        r = np.full(len(uu), -np.inf)
                        r[ok] = 2 * (np.einsum("ij,ij->i", dGl[ok], u[ok]) - Dl[ok]) / uu[ok]
                        i = int(np.argmax(r))
                        if r[i] > A:
                            A, arg = float(r[i]), (int(yl[i]), int(zl[i]))
        ks.append(k)
        As.append(A)
        where.append(arg)
    return LocalSchedule(ks, As, span_rank(jet), where)
