"""Lusin-type approximation of convex functions by C^{1,1} convex functions.

Pipeline: sample f on a grid, find the truncation set E_N where the tangent
gap is quadratically controlled at scale 1/N, restrict the 1-jet of f to E_N,
check the extension inequality at M = 2KN and build the extension; the
approximant agrees with f on E_N and the rest of the domain is small.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .cw11 import InfeasibleJetError, check_condition_b, default_tau, minimal_M
from .envelope import biconjugate, tangent_quadratic_grid
from .jets import GridFunction, Jet1Set, convexity_check, discrete_lipschitz, gradient

log = logging.getLogger(__name__)

__all__ = [
    "ResolutionError",
    "TruncationFamily",
    "LusinCertificate",
    "LocalCSets",
    "MismatchReport",
    "SampledFunction",
    "sample_function",
    "build_Ej",
    "select_N",
    "lipschitz_extend",
    "lusin_approximate",
    "build_C_sets",
    "glue_partition",
    "smooth_step",
    "measure_mismatch",
]


class ResolutionError(RuntimeError):
    """The requested accuracy cannot be certified on this grid."""


@dataclass(frozen=True)
class SampledFunction:
    """Grid samples of f with gradients and the admissible node mask A."""

    grid: GridFunction
    grads: np.ndarray
    A: np.ndarray

    @property
    def A_measure(self) -> float:
        return float(self.A.sum()) * self.grid.cell_volume


@dataclass
class TruncationFamily:
    sampled: SampledFunction
    tau: float
    js: list = field(default_factory=list)
    masks: dict = field(default_factory=dict)
    measures: dict = field(default_factory=dict)

    def add(self, j: int) -> float:
        if j not in self.masks:
            m = build_Ej(self.sampled.grid, j, self.sampled.grads, self.sampled.A, self.tau)
            self.masks[j] = m
            self.measures[j] = float((self.sampled.A & ~m).sum()) * self.sampled.grid.cell_volume
            self.js = sorted(self.masks)
            self.check_nested()
        return self.measures[j]

    def check_nested(self):
        for a, b in zip(self.js, self.js[1:]):
            if (self.masks[a] & ~self.masks[b]).any():
                raise AssertionError(f"truncation sets not nested between j={a} and j={b}")


@dataclass(frozen=True)
class MismatchReport:
    value_measure: float
    gradient_measure: float
    value_cells: int
    gradient_cells: int
    tau_eq: float
    tau_grad: float

    def __float__(self):
        return self.value_measure


@dataclass(frozen=True)
class LusinCertificate:
    g: GridFunction
    f: GridFunction
    matched_mask: np.ndarray
    A_mask: np.ndarray
    E_mask: np.ndarray
    K: float
    N: int
    M: float
    M_sharp: float
    mismatch_measure: float
    gradient_mismatch_measure: float
    epsilon_target: float
    R: float
    tau_eq: float
    tau_grad: float
    lip_grad_g: float
    g_is_convex: bool
    max_matched_value_error: float
    max_matched_gradient_error: float
    exhaustive_check: bool
    grad_g: np.ndarray = field(repr=False, default=None)
    grad_f: np.ndarray = field(repr=False, default=None)

    def invariants(self) -> dict:
        """Named pass/fail flags for the certificate's guarantees."""
        h = float(self.g.spacing.max())
        return {
            "mismatch_below_target": self.mismatch_measure < self.epsilon_target,
            "g_convex": bool(self.g_is_convex),
            "lip_grad_bound": self.lip_grad_g <= 1.05 * self.M + 10 * h * self.M,
            "matched_values": self.max_matched_value_error <= self.tau_eq,
            "matched_gradients": self.max_matched_gradient_error <= self.tau_grad,
        }


@dataclass(frozen=True)
class LocalCSets:
    ks: list
    j_k: list
    beta_k: list
    C_masks: list
    shell_masks: list
    shell_measures: list
    budget: float
    sampled: SampledFunction
    eq12_holds: bool
    eq12_worst: float

    @property
    def C(self) -> np.ndarray:
        out = np.zeros_like(self.sampled.A)
        for m in self.C_masks:
            out |= m
        return out


# ---------------------------------------------------------------------------
# sampling


def _axis_box(A):
    """(lower, upper) from a string ``"lo:hi,lo:hi"`` or a pair of sequences."""
    if isinstance(A, str):
        lo, hi = [], []
        for part in A.split(","):
            a, b = part.split(":")[:2]
            lo.append(float(a))
            hi.append(float(b))
        return np.array(lo), np.array(hi)
    lo, hi = A
    return np.atleast_1d(np.asarray(lo, dtype=float)), np.atleast_1d(np.asarray(hi, dtype=float))


def _lattice_box(lo, hi, h, margin_cells, anchor=None):
    """Grid on [lo, hi] grown by ``margin_cells`` with nodes on anchor + k h."""
    anchor = lo if anchor is None else anchor
    k0 = np.floor((lo - anchor) / h + 1e-9).astype(int) - margin_cells
    k1 = np.ceil((hi - anchor) / h - 1e-9).astype(int) + margin_cells
    lower = anchor + k0 * h
    upper = anchor + k1 * h
    return lower, upper, tuple(int(n) for n in (k1 - k0 + 1))


def _kink_mask_discrete(g: GridFunction, tau_kink=None):
    """Nodes where one-sided difference quotients disagree along some axis."""
    v = g.values
    bad = np.zeros(v.shape, dtype=bool)
    jumps_all = []
    for ax, h in enumerate(g.spacing):
        d = np.diff(v, axis=ax) / h
        jump = np.abs(np.diff(d, axis=ax))
        jumps_all.append(jump.ravel())
    med = float(np.median(np.concatenate(jumps_all))) if jumps_all else 0.0
    tau = max(1e-8, 50 * med) if tau_kink is None else tau_kink
    for ax, h in enumerate(g.spacing):
        d = np.diff(v, axis=ax) / h
        jump = np.abs(np.diff(d, axis=ax))
        sl = [slice(None)] * g.dim
        sl[ax] = slice(1, -1)
        bad[tuple(sl)] |= jump > tau
    return bad


def sample_function(f, A, h, margin: float = 0.0, anchor=None) -> SampledFunction:
    """Sample a fixture (or crop a GridFunction) on the box A grown by ``margin``.

    Nodes of the fixture's nondifferentiability set, and all nodes outside
    the box A, are left out of the admissible mask.
    """
    if isinstance(f, GridFunction):
        g = f
        grads = gradient(g)
        pts = g.mesh()
        if A is None:
            Amask = np.ones(g.shape, dtype=bool)
        else:
            lo, hi = _axis_box(A)
            Amask = ((pts >= lo - 1e-9 * g.spacing) & (pts <= hi + 1e-9 * g.spacing)).all(-1)
        Amask &= ~_kink_mask_discrete(g)
        return SampledFunction(g, grads, Amask)
    lo, hi = _axis_box(A)
    h = np.broadcast_to(np.asarray(h, dtype=float), lo.shape)
    cells = np.ceil(margin / h - 1e-9).astype(int)
    lower, upper, shape = _lattice_box(lo, hi, h, cells, anchor)
    axes = [l + np.arange(n) * hh for l, n, hh in zip(lower, shape, h)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), -1)
    g = GridFunction(tuple(lower), tuple(axes[i][-1] for i in range(len(axes))), f.value(pts))
    grads = np.asarray(f.gradient(pts), dtype=float).reshape(shape + (len(shape),))
    tol = 1e-9 * float(h.min())
    Amask = ((pts >= lo - tol) & (pts <= hi + tol)).all(-1)
    if f.kink is not None:
        Amask &= ~np.asarray(f.kink(pts, tol), dtype=bool)
    return SampledFunction(g, grads, Amask)


# ---------------------------------------------------------------------------
# truncation sets


def _offsets(radius, spacing):
    spacing = np.asarray(spacing, dtype=float)
    r = np.floor(radius / spacing + 1e-9).astype(int)
    rng = [np.arange(-ri, ri + 1) for ri in r]
    off = np.stack(np.meshgrid(*rng, indexing="ij"), -1).reshape(-1, len(spacing))
    length = np.sqrt(((off * spacing) ** 2).sum(1))
    keep = (length <= radius * (1 + 1e-12)) & (length > 0)
    off = off[keep]
    order = np.argsort(length[keep], kind="stable")
    return np.ascontiguousarray(off[order].astype(np.int64))


def build_Ej(g: GridFunction, j: int, grads=None, candidates=None, tau: float | None = None) -> np.ndarray:
    """Nodes y where f(x) - f(y) - <grad f(y), x - y> <= j|x - y|^2 + tau for every
    grid node x with |x - y| <= 1/j. Equality counts as membership.
    """
    if j < 1:
        raise ValueError("j must be >= 1")
    grads = gradient(g) if grads is None else np.asarray(grads, dtype=float)
    h = g.spacing
    if tau is None:
        tau = 1e-10 * max(1.0, float(np.abs(g.values).max()))
    radius = 1.0 / j
    if radius < h.min():
        warnings.warn("ball below grid resolution; testing immediate neighbours only", stacklevel=2)
        rng = [np.arange(-1, 2)] * g.dim
        off = np.stack(np.meshgrid(*rng, indexing="ij"), -1).reshape(-1, g.dim)
        off = np.ascontiguousarray(off[(off != 0).any(1)].astype(np.int64))
    else:
        off = _offsets(radius, h)
    cand_mask = np.ones(g.shape, dtype=bool) if candidates is None else np.asarray(candidates, dtype=bool)
    cand = np.flatnonzero(cand_mask.ravel()).astype(np.int64)
    member = K.truncation_members(
        np.ascontiguousarray(g.values.ravel()),
        np.ascontiguousarray(grads.reshape(-1, g.dim)),
        np.array(g.shape, dtype=np.int64), np.asarray(h, dtype=float),
        cand, off, float(j), float(tau),
    )
    out = np.zeros(g.values.size, dtype=bool)
    out[cand[member]] = True
    return out.reshape(g.shape)


def default_j_start(g: GridFunction) -> int:
    """1 in 1D; in higher dimensions the first ball spans at most ~16 cells."""
    if g.dim == 1:
        return 1
    return max(1, int(np.ceil(1.0 / (16 * float(g.spacing.min())))))


def select_N(family: TruncationFamily, eps: float, j_start: int | None = None, j_max: int | None = None) -> int:
    """Smallest j with measure(A minus E_j) < eps/2.

    The measure is nonincreasing in j, so j doubles until the budget is met and
    a bisection then pins down the first admissible value.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    g = family.sampled.grid
    if j_start is None:
        j_start = default_j_start(g)
    if j_max is None:
        j_max = int(np.ceil(8.0 / float(g.spacing.min())))
    target = eps / 2.0
    lo_fail = None
    j = j_start
    while True:
        if family.add(j) < target:
            break
        lo_fail = j
        if j >= j_max:
            raise ResolutionError(
                f"ε unreachable at this resolution: measure {family.measures[j]:.3g} at j={j} exceeds {target:.3g}"
            )
        j = min(2 * j, j_max)
    hi_ok = j
    if lo_fail is None:
        # the first tried j already works; search below it
        lo_fail = 0
    while hi_ok - lo_fail > 1:
        mid = (hi_ok + lo_fail) // 2
        if mid >= 1 and family.add(mid) < target:
            hi_ok = mid
        else:
            lo_fail = mid
    return hi_ok


# ---------------------------------------------------------------------------
# Lipschitz convex extension


def lipschitz_extend(f: GridFunction, K_: float, target: GridFunction, W=None, chunk: int = 1 << 22) -> GridFunction:
    """f~(x) = inf over z in W of f(z) + K|x - z|, sampled on ``target``'s grid.

    The minimum over W-nodes alone is a minimum of cones and loses convexity
    between nodes, so its convex envelope on the target grid is returned. Any
    convex K-Lipschitz function through the W-node data sits below both, which
    keeps f~ = f at the W-nodes.
    """
    Wmask = np.ones(f.shape, dtype=bool) if W is None else np.asarray(W, dtype=bool)
    obs = discrete_lipschitz(f.values, f.spacing, mask=Wmask)
    if obs > K_ * (1 + 1e-12):
        raise ValueError(f"K={K_} is below the observed Lipschitz constant {obs} on W")
    Z = f.points()[Wmask.ravel()]
    fz = f.values.ravel()[Wmask.ravel()]
    X = target.points()
    out = np.empty(len(X))
    step = max(1, chunk // max(1, len(Z)))
    for s in range(0, len(X), step):
        d = np.sqrt(((X[s:s + step, None, :] - Z[None, :, :]) ** 2).sum(-1))
        out[s:s + step] = (fz[None, :] + K_ * d).min(1)
    out = out.reshape(target.shape)
    env = biconjugate(target.with_values(out)).values
    # where the envelope touches the cone minimum, keep the exact value
    touch = np.abs(env - out) <= 64 * np.finfo(float).eps * max(1.0, float(np.abs(out).max()))
    return target.with_values(np.where(touch, out, env))


# ---------------------------------------------------------------------------
# mismatch


def measure_mismatch(f: GridFunction, g: GridFunction, A=None, tau_eq: float | None = None,
                     tau_grad: float | None = None, grad_f=None, grad_g=None) -> MismatchReport:
    """Cell-counted measure of {x in A : f(x) != g(x)} at tolerance tau_eq,
    plus the same count for the gradients at tau_grad."""
    if f.shape != g.shape:
        raise ValueError("f and g must share a grid")
    A = np.ones(f.shape, dtype=bool) if A is None else np.asarray(A, dtype=bool)
    grad_f = gradient(f) if grad_f is None else grad_f
    grad_g = gradient(g) if grad_g is None else grad_g
    if tau_eq is None:
        tau_eq = max(1e-9, 1e-6 * float(np.abs(f.values).max()))
    if tau_grad is None:
        tau_grad = 2.0 * max(1e-7, 1e-4 * float(np.sqrt((grad_f ** 2).sum(-1)).max()))
    vbad = A & (np.abs(f.values - g.values) > tau_eq)
    gbad = A & (np.sqrt(((grad_f - grad_g) ** 2).sum(-1)) > tau_grad)
    vol = f.cell_volume
    return MismatchReport(float(vbad.sum()) * vol, float(gbad.sum()) * vol, int(vbad.sum()),
                          int(gbad.sum()), float(tau_eq), float(tau_grad))


def _interior(mask):
    """Nodes of ``mask`` whose axis neighbours are all in ``mask``."""
    out = mask.copy()
    for ax in range(mask.ndim):
        sl_lo = [slice(None)] * mask.ndim
        sl_hi = [slice(None)] * mask.ndim
        sl_lo[ax] = slice(0, -1)
        sl_hi[ax] = slice(1, None)
        shifted_up = np.zeros_like(mask)
        shifted_dn = np.zeros_like(mask)
        shifted_up[tuple(sl_lo)] = mask[tuple(sl_hi)]
        shifted_dn[tuple(sl_hi)] = mask[tuple(sl_lo)]
        out &= shifted_up & shifted_dn
    return out


# ---------------------------------------------------------------------------
# the pipeline


def lusin_approximate(f, A, eps: float, h=None, tau: float | None = None,
                      j_start: int | None = None, j_max: int | None = None,
                      tau_eq: float | None = None, tau_grad: float | None = None) -> LusinCertificate:
    """C^{1,1} convex g agreeing with f on A outside a set of measure < eps."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    if isinstance(f, GridFunction):
        S0 = sample_function(f, A, f.spacing)
        h = S0.grid.spacing
    else:
        if h is None:
            raise ValueError("grid spacing h is required for analytic input")
        lo, hi = _axis_box(A)
        h = np.broadcast_to(np.asarray(h, dtype=float), lo.shape).copy()
        probe = GridFunction(tuple(lo), tuple(lo + 2 * h), np.zeros((3,) * len(lo)))
        js = default_j_start(probe) if j_start is None else j_start
        # the balls of the first truncation test must stay on the grid
        S0 = sample_function(f, A, h, margin=1.0 / js + 2 * float(h.max()))
    g0 = S0.grid
    dim = g0.dim
    scale = max(1.0, float(np.abs(g0.values).max()))
    tau = 1e-10 * scale if tau is None else tau
    fam = TruncationFamily(S0, tau)
    N = select_N(fam, eps, j_start, j_max)
    E = fam.masks[N] & S0.A
    if not E.any():
        raise ResolutionError("empty truncation set")
    pts = g0.mesh()
    Apts = pts[S0.A]
    r = float(np.sqrt((Apts ** 2).sum(-1)).max())
    R = r + 1.0 / N + float(h.max())
    # W: the box of A grown by 1/N + h (the ball of radius R in 1D)
    alo, ahi = Apts.min(0), Apts.max(0)
    W = ((pts >= alo - 1.0 / N - h - 1e-12) & (pts <= ahi + 1.0 / N + h + 1e-12)).all(-1)
    lipW = discrete_lipschitz(g0.values, h, mask=W)
    gnorm = float(np.sqrt((S0.grads[E] ** 2).sum(-1)).max())
    # M = 2KN covers both |x - y| <= 1/N (bound N) and beyond (bound 2K|x - y|)
    # only when K >= 1
    Kc = max(1.0, 1.01 * lipW)
    M = 2.0 * Kc * N
    jet = Jet1Set(pts[E], g0.values[E], S0.grads[E])
    # grid-derived gradients carry more than rounding error
    chk = check_condition_b(jet, M, tau=default_tau(jet))
    if not chk.holds:
        y, z = chk.witness
        raise InfeasibleJetError(
            f"jet on E_N fails the extension inequality at M=2KN={M}: y={jet.points[y].tolist()}, "
            f"z={jet.points[z].tolist()}", witness=chk.witness)
    sharp = minimal_M(jet)
    # working grid: the box of A plus room for the envelope to close up
    pad = max(8 * float(h.max()), max(gnorm, Kc) / M + 2.0 / N)
    pad_cells = np.ceil(pad / h - 1e-9).astype(int)
    anchor = np.asarray(g0.lower)
    wlo, whi, wshape = _lattice_box(alo, ahi, h, pad_cells, anchor)
    # embed E-data in the working grid
    off0 = np.rint((np.asarray(g0.lower) - wlo) / h).astype(int)
    vals_w = np.zeros(wshape)
    grads_w = np.zeros(wshape + (dim,))
    in_e = np.zeros(wshape, dtype=bool)
    Eidx = np.argwhere(E)
    widx = Eidx + off0
    inside = ((widx >= 0) & (widx < np.array(wshape))).all(1)
    Eidx, widx = Eidx[inside], widx[inside]
    tw = tuple(widx.T)
    te = tuple(Eidx.T)
    vals_w[tw] = g0.values[te]
    grads_w[tw] = S0.grads[te]
    in_e[tw] = True
    waxes = [l + np.arange(n) * hh for l, n, hh in zip(wlo, wshape, h)]
    gw = GridFunction(tuple(wlo), tuple(ax[-1] for ax in waxes), np.zeros(wshape))
    m, _ = tangent_quadratic_grid(vals_w, grads_w, in_e, gw, M, Kc)
    env = biconjugate(gw.with_values(m))
    grad_env = gradient(env)
    # crop to the box of A
    a0 = np.rint((alo - wlo) / h).astype(int)
    a1 = np.rint((ahi - wlo) / h).astype(int) + 1
    sl_w = tuple(slice(a, b) for a, b in zip(a0, a1))
    b0 = np.rint((alo - np.asarray(g0.lower)) / h).astype(int)
    sl_0 = tuple(slice(a, a + (b - c)) for a, b, c in zip(b0, a1, a0))
    g = GridFunction(tuple(alo), tuple(ahi), env.values[sl_w])
    fA = GridFunction(tuple(alo), tuple(ahi), g0.values[sl_0])
    A_c = S0.A[sl_0]
    E_c = E[sl_0]
    grad_g = grad_env[sl_w]
    # compare like with like: central differences of f on the sampled grid
    grad_f = gradient(g0)[sl_0]
    rep = measure_mismatch(fA, g, A_c, tau_eq, tau_grad, grad_f, grad_g)
    matched = A_c & (np.abs(fA.values - g.values) <= rep.tau_eq)
    core = _interior(matched)
    v_err = float(np.abs(fA.values - g.values)[E_c].max()) if E_c.any() else 0.0
    g_err = float(np.sqrt(((grad_f - grad_g) ** 2).sum(-1))[core].max()) if core.any() else 0.0
    lip = discrete_lipschitz(grad_env, h, collar=1)
    convex = convexity_check(env, 1e-10 * max(1.0, float(np.abs(env.values).max()))).is_convex
    log.info("lusin: N=%d K=%.4g M=%.4g mismatch=%.4g", N, Kc, M, rep.value_measure)
    return LusinCertificate(
        g=g, f=fA, matched_mask=matched, A_mask=A_c, E_mask=E_c, K=Kc, N=N, M=M,
        M_sharp=sharp.minimal_M, mismatch_measure=rep.value_measure,
        gradient_mismatch_measure=rep.gradient_measure, epsilon_target=float(eps), R=R,
        tau_eq=rep.tau_eq, tau_grad=rep.tau_grad, lip_grad_g=lip, g_is_convex=convex,
        max_matched_value_error=v_err, max_matched_gradient_error=g_err,
        exhaustive_check=chk.exhaustive and sharp.exhaustive, grad_g=grad_g, grad_f=grad_f,
    )


# ---------------------------------------------------------------------------
# shell construction


def _max_gap_ratio(vals, grads, pts, ys, xs, chunk=1 << 22):
    """max over y in ys, x in xs (x != y) of tangent gap / |x - y|^2."""
    best = -np.inf
    X, fX = pts[xs], vals[xs]
    step = max(1, chunk // max(1, len(xs)))
    for s in range(0, len(ys), step):
        yb = ys[s:s + step]
        d = X[None, :, :] - pts[yb][:, None, :]
        gap = fX[None, :] - vals[yb][:, None] - np.einsum("kij,kj->ki", d, grads[yb])
        r2 = (d ** 2).sum(-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(r2 > 0, gap / r2, -np.inf)
        best = max(best, float(ratio.max()))
    return best


def build_C_sets(f, eps: float, k_max: int, h, tau: float | None = None, j_max: int | None = None) -> LocalCSets:
    """Per-shell truncation sets with budgets eps/2^(k+1) and the quadratic-growth
    constants beta_k = max(j_k, 2 j_k Lip(f on B_4k))."""
    dim = f.dim if not isinstance(f, GridFunction) else f.dim
    R4 = 4.0 * k_max
    S = sample_function(f, (-R4 * np.ones(dim), R4 * np.ones(dim)), h)
    g = S.grid
    pts = g.mesh()
    rad = np.sqrt((pts ** 2).sum(-1))
    tau = 1e-10 * max(1.0, float(np.abs(g.values).max())) if tau is None else tau
    vol = g.cell_volume
    js, betas, Cs, shells, meas = [], [], [], [], []
    j_prev = 1
    j_max = int(np.ceil(8.0 / float(g.spacing.min()))) if j_max is None else j_max
    cache = {}

    def Ej(j):
        if j not in cache:
            cache[j] = build_Ej(g, j, S.grads, S.A, tau)
        return cache[j]

    for k in range(1, k_max + 1):
        shell = S.A & (rad <= k) & (rad > k - 1)
        budget = eps / 2 ** (k + 1)
        j = j_prev
        while float((shell & ~Ej(j)).sum()) * vol >= budget:
            if j >= j_max:
                raise ResolutionError(f"shell {k}: budget {budget:.3g} unreachable at this resolution")
            j = min(2 * j, j_max)
        # bisect down to the first admissible j above the previous shell's value
        lo = j_prev - 1 if j > j_prev else j - 1
        hi = j
        while hi - lo > 1:
            mid = (hi + lo) // 2
            if mid >= j_prev and float((shell & ~Ej(mid)).sum()) * vol < budget:
                hi = mid
            else:
                lo = mid
        j = max(hi, j_prev)
        j_prev = j
        ball4 = rad <= 4 * k
        lip = discrete_lipschitz(g.values, g.spacing, mask=ball4)
        js.append(j)
        betas.append(max(j, 2 * j * lip))
        C = Ej(j) & shell
        Cs.append(C)
        shells.append(shell)
        meas.append(float((shell & ~C).sum()) * vol)
    # the quadratic growth bound over y in C within B_k and x in B_4k
    vals = g.values.ravel()
    grads = S.grads.reshape(-1, dim)
    P = pts.reshape(-1, dim)
    C_all = np.zeros_like(S.A)
    worst = -np.inf
    holds = True
    for k, beta in zip(range(1, k_max + 1), betas):
        C_all |= Cs[k - 1]
        ys = np.flatnonzero((C_all & (rad <= k)).ravel())
        xs = np.flatnonzero((rad <= 4 * k).ravel())
        if ys.size == 0:
            continue
        ratio = _max_gap_ratio(vals, grads, P, ys, xs)
        worst = max(worst, ratio - beta)
        holds &= ratio <= beta * (1 + 1e-12) + tau
    return LocalCSets(list(range(1, k_max + 1)), js, betas, Cs, shells, meas, eps / 2, S, bool(holds), worst)


# ---------------------------------------------------------------------------
# gluing


def smooth_step(t):
    """C^infinity step: 0 for t <= 0, 1 for t >= 1, built from exp(-1/t)."""
    t = np.asarray(t, dtype=float)

    def e(s):
        out = np.zeros_like(s)
        pos = s > 0
        out[pos] = np.exp(-1.0 / s[pos])
        return out

    a, b = e(t), e(1.0 - t)
    return a / (a + b)


def glue_partition(pieces, radii) -> GridFunction:
    """g = sum_i g_i phi_i for pieces g_i valid on B(0, radii[i]).

    phi_i = psi_i - psi_(i-1) with radial cutoffs psi_i equal to 1 on
    B(0, s_i) and 0 outside B(0, r_i), s_i = (r_(i-1) + r_i)/2; the outermost
    piece takes the remainder. The sum is evaluated as
    g_m + sum_(i<m) psi_i (g_i - g_(i+1)), which returns f exactly wherever
    all pieces equal f.
    """
    if len(pieces) != len(radii) or not pieces:
        raise ValueError("need one radius per piece")
    radii = [float(r) for r in radii]
    if any(b <= a for a, b in zip(radii, radii[1:])):
        raise ValueError("radii must be strictly increasing")
    grid = pieces[0]
    for p in pieces[1:]:
        if p.shape != grid.shape or not np.allclose(p.lower, grid.lower) or not np.allclose(p.upper, grid.upper):
            raise ValueError("pieces must share one grid")
    rad = np.sqrt((grid.mesh() ** 2).sum(-1))
    if (rad >= radii[-1]).any():
        far = float(rad.max())
        raise ValueError(f"coverage gap: grid reaches |x|={far} beyond the largest radius {radii[-1]}")
    out = pieces[-1].values.copy()
    prev = 0.0
    for i in range(len(pieces) - 1):
        r = radii[i]
        s = 0.5 * (prev + r) if i > 0 else 0.5 * r
        psi = smooth_step((r - rad) / (r - s))
        diff = pieces[i].values - pieces[i + 1].values
        out = out + np.where(psi > 0, psi * diff, 0.0)
        prev = r
    return grid.with_values(out)
