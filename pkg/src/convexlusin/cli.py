"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 infeasible input or refusal,
3 resolution failure. Reports go to stdout (or ``--out``) as JSON; errors go
to stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import base64
import json
import logging
import os
import sys
import zlib
from pathlib import Path

import numpy as np

from . import bodies, coercivity, cw11, envelope, lusin
from .cw11 import InfeasibleJetError
from .jets import (GridFunction, Jet1Set, convexity_check, discrete_lipschitz, gradient, load_grid,
                   load_jet, parse_grid_spec, save_grid)
from .lusin import ResolutionError
from .oracles import FIXTURES, get_fixture

log = logging.getLogger(__name__)

EXIT_OK, EXIT_USAGE, EXIT_REFUSED, EXIT_RESOLUTION = 0, 1, 2, 3


class UsageError(Exception):
    pass


class Refused(Exception):
    def __init__(self, message, **extra):
        super().__init__(message)
        self.extra = extra


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# serialisation


def encode_array(a) -> dict:
    a = np.ascontiguousarray(a)
    return {
        "__ndarray__": base64.b64encode(zlib.compress(a.tobytes(), 9)).decode("ascii"),
        "dtype": a.dtype.str,
        "shape": list(a.shape),
    }


def decode_array(d: dict) -> np.ndarray:
    raw = zlib.decompress(base64.b64decode(d["__ndarray__"]))
    return np.frombuffer(raw, dtype=np.dtype(d["dtype"])).reshape(d["shape"]).copy()


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return encode_array(obj)
    if isinstance(obj, GridFunction):
        return {"lower": list(map(float, obj.lower)), "upper": list(map(float, obj.upper)),
                "values": encode_array(obj.values)}
    if isinstance(obj, (np.floating,)):
        return _float(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, float):
        return _float(obj)
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def _float(x: float):
    if np.isfinite(x):
        return x
    return "inf" if x > 0 else ("-inf" if x < 0 else "nan")


def _grid_from(d: dict) -> GridFunction:
    return GridFunction(tuple(d["lower"]), tuple(d["upper"]), decode_array(d["values"]))


def dumps(obj) -> str:
    """Deterministic JSON: sorted keys, fixed indentation, arrays compressed."""
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2, allow_nan=False)


def _emit(report: dict, out: str | None):
    text = dumps(report)
    if out:
        Path(out).write_text(text + "\n")
    print(text)


# ---------------------------------------------------------------------------
# inputs


def _load_function(spec: str):
    """A fixture name, a grid file (.csv / grid .json) or a jet file."""
    if spec in FIXTURES:
        return get_fixture(spec)
    p = Path(spec)
    if not p.exists():
        raise UsageError(f"unknown fixture or missing file: {spec!r} (fixtures: {sorted(FIXTURES)})")
    if p.suffix == ".json":
        d = json.loads(p.read_text())
        if "points" in d:
            return Jet1Set.from_dict(d)
        return load_grid(p)
    return load_grid(p)


def _load_jet(path: str) -> Jet1Set:
    if not Path(path).exists():
        raise UsageError(f"missing jet file: {path}")
    return load_jet(path)


def _load_body(spec: str):
    try:
        return bodies.load_body(spec)
    except FileNotFoundError:
        raise UsageError(f"unknown body or missing file: {spec!r}") from None


def _point(text: str) -> np.ndarray:
    try:
        return np.array([float(t) for t in text.split(",")])
    except ValueError:
        raise UsageError(f"bad point {text!r}; expected comma-separated numbers") from None


def _interval(text: str):
    try:
        lo, hi = (float(t) for t in text.split(":"))
    except ValueError:
        raise UsageError(f"bad interval {text!r}; expected lo:hi") from None
    return lo, hi


def _positive(name, v):
    if v is None or not v > 0:
        raise UsageError(f"{name} must be positive")
    return v


# ---------------------------------------------------------------------------
# svg


def _svg(path, layers, box):
    """Minimal SVG: each layer is (kind, data, style) in data coordinates."""
    (x0, y0), (x1, y1) = box
    W, H = 640, 480
    sx = W / max(x1 - x0, 1e-12)
    sy = H / max(y1 - y0, 1e-12)

    def tr(p):
        return (p[0] - x0) * sx, H - (p[1] - y0) * sy

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
             f'<rect width="{W}" height="{H}" fill="white"/>']
    for kind, data, style in layers:
        if kind == "line":
            pts = " ".join("%.2f,%.2f" % tr(p) for p in data)
            parts.append(f'<polyline points="{pts}" fill="none" {style}/>')
        elif kind == "dots":
            for p in data:
                x, y = tr(p)
                parts.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="1.2" {style}/>')
        elif kind == "bands":
            for a, b in data:
                xa, _ = tr((a, y0))
                xb, _ = tr((b, y0))
                parts.append(f'<rect x="{xa:.2f}" y="0" width="{max(xb - xa, 0.5):.2f}" height="{H}" {style}/>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


def _thin(points, limit=4000):
    step = max(1, len(points) // limit)
    return points[::step]


def _svg_lusin(path, cert):
    f, g = cert.f, cert.g
    mism = cert.A_mask & ~cert.matched_mask
    if f.dim == 1:
        x = f.axes()[0]
        lo, hi = float(min(f.values.min(), g.values.min())), float(max(f.values.max(), g.values.max()))
        bands = [(x[i] - 0.5 * f.spacing[0], x[i] + 0.5 * f.spacing[0]) for i in np.flatnonzero(mism)]
        _svg(path, [
            ("bands", bands, 'fill="#f4c7c3"'),
            ("line", np.column_stack([x, f.values]), 'stroke="black" stroke-width="1"'),
            ("line", np.column_stack([x, g.values]), 'stroke="#1f77b4" stroke-width="1" stroke-dasharray="4 2"'),
        ], ((x[0], lo), (x[-1], hi)))
        return
    from skimage.measure import find_contours

    pts = f.mesh()[..., :2]
    layers = [("dots", _thin(pts[mism]), 'fill="#d62728"')]
    for t in np.linspace(g.values.min(), g.values.max(), 8)[1:-1]:
        for c in find_contours(g.values if g.dim == 2 else g.values[..., g.shape[2] // 2], t):
            layers.append(("line", np.asarray(f.lower[:2]) + c * f.spacing[:2], 'stroke="#1f77b4"'))
    _svg(path, layers, (f.lower[:2], f.upper[:2]))


def _svg_body(path, W, sb):
    pw, _ = bodies.boundary_points(W, sb.tau_bd)
    R = 1.1 * float(np.abs(pw).max())
    _svg(path, [
        ("dots", _thin(pw), 'fill="#999999"'),
        ("line", sb.level, 'stroke="#1f77b4" stroke-width="1.5"'),
    ], ((-R, -R), (R, R)))


# ---------------------------------------------------------------------------
# commands


def cmd_cw11(a):
    jet = _load_jet(a.jet)
    if a.action == "check":
        M = _positive("--M", a.M)
        ca = cw11.check_condition_a(jet, M, a.tau)
        cb = cw11.check_condition_b(jet, M, tau=a.tau)
        rep = {
            "kind": "cw11_check", "M": M, "condition_a": bool(ca.holds), "condition_b": bool(cb.holds),
            "witness_a": list(ca.witness) if ca.witness else None,
            "witness_b": list(cb.witness) if cb.witness else None,
            "slack_a": ca.slack, "exhaustive": bool(ca.exhaustive and cb.exhaustive),
            "jet": jet.to_dict(),
        }
        _emit(rep, a.out)
        return EXIT_OK if ca.holds and cb.holds else EXIT_REFUSED
    if a.action == "minimal-m":
        r = cw11.minimal_M(jet, a.tau)
        _emit({"kind": "cw11_minimal_m", **r.to_dict()}, a.out)
        return EXIT_OK if r.feasible else EXIT_REFUSED
    r = cw11.local_schedule(jet, a.kmax, tau=a.tau)
    _emit({"kind": "cw11_local", **r.to_dict()}, a.out)
    return EXIT_OK


def cmd_envelope(a):
    if a.action == "legendre":
        g = load_grid(a.input)
        dual = None
        if a.dual:
            lo, hi, shape = parse_grid_spec(a.dual)
            dual = envelope.DualGrid(lo, hi, shape)
        out = envelope.legendre_1d(g, dual)
        if a.out:
            save_grid(out, a.out)
        _emit({"kind": "legendre", "lower": out.lower, "upper": out.upper, "shape": out.shape,
               "min": float(out.values.min()), "max": float(out.values.max())}, None)
        return EXIT_OK
    if a.action == "biconjugate":
        g = load_grid(a.input)
        env = envelope.biconjugate(g, a.method)
        if a.out:
            save_grid(env, a.out)
        gap = g.values - env.values
        _emit({"kind": "biconjugate", "shape": env.shape, "max_gap": float(gap.max()),
               "min_gap": float(gap.min())}, None)
        return EXIT_OK
    jet = _load_jet(a.jet)
    M = _positive("--M", a.M)
    res = envelope.extend_c11(jet, M, a.box, method=a.method)
    if a.out:
        save_grid(res.F, a.out)
    rep = {
        "kind": "extension", "method": res.method, "M": res.M_used,
        "interp_error_values": res.interp_error_values, "interp_error_grads": res.interp_error_grads,
        "discrete_lip_gradF": res.discrete_lip_gradF, "is_convex": bool(res.is_convex),
        "jet": jet.to_dict(), "F": res.F,
    }
    if a.cert:
        Path(a.cert).write_text(dumps(rep) + "\n")
    rep.pop("F")
    _emit(rep, None)
    if a.svg and jet.dim == 1:
        x = res.F.axes()[0]
        _svg(a.svg, [("line", np.column_stack([x, res.F.values]), 'stroke="black"'),
                     ("dots", np.column_stack([jet.points[:, 0], jet.values]), 'fill="#d62728"')],
             ((x[0], float(res.F.values.min())), (x[-1], float(res.F.values.max()))))
    return EXIT_OK


def _lusin_report(cert) -> dict:
    return {
        "kind": "lusin_certificate",
        "K": cert.K, "N": cert.N, "M": cert.M, "M_sharp": cert.M_sharp, "R": cert.R,
        "epsilon_target": cert.epsilon_target, "mismatch_measure": cert.mismatch_measure,
        "gradient_mismatch_measure": cert.gradient_mismatch_measure,
        "tau_eq": cert.tau_eq, "tau_grad": cert.tau_grad, "lip_grad_g": cert.lip_grad_g,
        "g_is_convex": bool(cert.g_is_convex),
        "max_matched_value_error": cert.max_matched_value_error,
        "max_matched_gradient_error": cert.max_matched_gradient_error,
        "exhaustive_check": bool(cert.exhaustive_check),
        "invariants": cert.invariants(),
        "f": cert.f, "g": cert.g, "A_mask": cert.A_mask, "E_mask": cert.E_mask,
        "matched_mask": cert.matched_mask, "grad_f": cert.grad_f, "grad_g": cert.grad_g,
    }


def cmd_lusin(a):
    if a.action == "approx":
        f = _load_function(a.f)
        eps = _positive("--eps", a.eps)
        if a.use_global:
            gate = coercivity.global_feasibility_gate(f, eps)
            if not gate.go:
                w = gate.verdict.witness_direction
                raise Refused(gate.reason, status=gate.status,
                              witness=None if w is None else np.round(w, 12).tolist())
        if a.A is None:
            raise UsageError("--A is required")
        cert = lusin.lusin_approximate(f, a.A, eps, h=a.h, j_max=a.jmax, tau_eq=a.tau_eq, tau_grad=a.tau_grad)
        rep = _lusin_report(cert)
        text = dumps(rep)
        if a.out:
            Path(a.out).write_text(text + "\n")
        summary = {k: v for k, v in rep.items() if not isinstance(v, (np.ndarray, GridFunction))}
        print(dumps(summary))
        if a.svg:
            _svg_lusin(a.svg, cert)
        return EXIT_OK
    if a.action == "ej":
        g = _load_function(a.f)
        if not isinstance(g, GridFunction):
            raise UsageError("lusin ej needs a grid file")
        mask = lusin.build_Ej(g, a.j)
        rep = {"kind": "truncation_set", "j": a.j, "members": int(mask.sum()),
               "measure_outside": float((~mask).sum() * g.cell_volume), "mask": mask}
        _emit(rep, a.out)
        return EXIT_OK
    if a.action == "glue":
        pieces = [load_grid(p) for p in a.pieces]
        out = lusin.glue_partition(pieces, a.radii)
        if a.out:
            save_grid(out, a.out)
        _emit({"kind": "glue", "shape": out.shape, "radii": a.radii}, None)
        return EXIT_OK
    f, g = load_grid(a.f), load_grid(a.g)
    A = None
    if a.A:
        lo, hi = lusin._axis_box(a.A)
        pts = f.mesh()
        A = ((pts >= lo - 1e-12) & (pts <= hi + 1e-12)).all(-1)
    r = lusin.measure_mismatch(f, g, A, a.tau_eq, a.tau_grad)
    _emit({"kind": "mismatch", "value_measure": r.value_measure, "gradient_measure": r.gradient_measure,
           "value_cells": r.value_cells, "gradient_cells": r.gradient_cells,
           "tau_eq": r.tau_eq, "tau_grad": r.tau_grad}, a.out)
    return EXIT_OK


def _samples_for(f, seed, count):
    if isinstance(f, (GridFunction, Jet1Set)):
        return None
    return coercivity._default_points(f.dim, count, seed=seed)


def cmd_coercivity(a):
    f = _load_function(a.f)
    samples = _samples_for(f, a.seed, a.samples)
    if a.action == "test":
        v = coercivity.coercivity_test(f, samples)
        _emit({"kind": "coercivity", **v.to_dict()}, a.out)
        return EXIT_OK
    if a.action == "decompose":
        d = coercivity.decompose(f, samples)
        _emit({"kind": "decomposition", **d.to_dict()}, a.out)
        return EXIT_OK
    gate = coercivity.global_feasibility_gate(f, a.eps, samples)
    rep = {"kind": "gate", "status": gate.status, "reason": gate.reason, "verdict": gate.verdict.to_dict()}
    _emit(rep, a.out)
    return EXIT_OK if gate.go else EXIT_REFUSED


def cmd_bodies(a):
    if a.action == "minkowski":
        W = _load_body(a.W)
        x = _point(a.x)
        _emit({"kind": "minkowski", "x": x.tolist(), "mu": float(bodies.minkowski(W, x))}, a.out)
        return EXIT_OK
    if a.action == "smooth":
        W = _load_body(a.W)
        if not isinstance(W, bodies.ConvexBodyRep):
            raise UsageError("smoothing needs a compact body (vertices or radial)")
        sb = bodies.smooth_body(W, _positive("--eps", a.eps), _positive("--h", a.h), levels=a.levels)
        rep = {"kind": "smoothed_body", "body": W.to_dict(), **sb.to_dict()}
        if W.dim == 2:
            rep["level_polyline"] = np.asarray(sb.level)
        _emit(rep, a.out)
        if a.svg and W.dim == 2:
            _svg_body(a.svg, W, sb)
        return EXIT_OK
    if a.action == "coarea":
        if a.g:
            g = load_grid(a.g)
        else:
            W = _load_body(a.W)
            h = _positive("--h", a.h)
            R = 2 * W.circumradius
            n = int(round(2 * R / h)) + 1
            g = GridFunction.from_function(lambda p: bodies.minkowski(W, p), (-R,) * W.dim, (R,) * W.dim,
                                           (n,) * W.dim)
        t = _interval(a.t) if a.t else None
        region = None
        if t is not None:
            region = (g.values >= t[0]) & (g.values <= t[1])
            if a.open_lower:
                region &= g.values > t[0]
        r = bodies.coarea_validate(g, region, t, a.levels)
        _emit({"kind": "coarea", **r.to_dict()}, a.out)
        return EXIT_OK
    P = _load_body(a.W)
    v = bodies.contains_line(P)
    _emit({"kind": "lines", **v.to_dict()}, a.out)
    return EXIT_OK if v.agree else EXIT_REFUSED


# ---------------------------------------------------------------------------
# verify


def _verify_lusin(d):
    f, g = _grid_from(d["f"]), _grid_from(d["g"])
    A = decode_array(d["A_mask"])
    grad_f, grad_g = decode_array(d["grad_f"]), decode_array(d["grad_g"])
    r = lusin.measure_mismatch(f, g, A, d["tau_eq"], d["tau_grad"], grad_f, grad_g)
    matched = A & (np.abs(f.values - g.values) <= r.tau_eq)
    E = decode_array(d["E_mask"])
    core = lusin._interior(matched)
    h = float(g.spacing.max())
    M = float(d["M"])
    v_err = float(np.abs(f.values - g.values)[E].max()) if E.any() else 0.0
    g_err = float(np.sqrt(((grad_f - grad_g) ** 2).sum(-1))[core].max()) if core.any() else 0.0
    lip = discrete_lipschitz(grad_g, g.spacing, collar=1)
    convex = convexity_check(g, 1e-10 * max(1.0, float(np.abs(g.values).max()))).is_convex
    return {
        "mismatch_below_target": r.value_measure < float(d["epsilon_target"]),
        "mismatch_matches_certificate": abs(r.value_measure - float(d["mismatch_measure"])) <= 1e-12,
        "g_convex": bool(convex),
        "lip_grad_bound": lip <= 1.05 * M + 10 * h * M,
        "matched_values": v_err <= r.tau_eq,
        "matched_gradients": g_err <= r.tau_grad,
    }


def _verify_extension(d):
    F = _grid_from(d["F"])
    jet = Jet1Set.from_dict(d["jet"])
    M = float(d["M"])
    h = float(F.spacing.max())
    lip = discrete_lipschitz(gradient(F), F.spacing, collar=1)
    convex = convexity_check(F, 1e-10 * max(1.0, float(np.abs(F.values).max()))).is_convex
    inside = ((jet.points >= np.array(F.lower)) & (jet.points <= np.array(F.upper))).all(1)
    err = float(np.abs(F.interpolate(jet.points[inside]) - jet.values[inside]).max()) if inside.any() else 0.0
    return {
        "F_convex": bool(convex),
        "lip_grad_bound": lip <= 1.05 * M + 10 * h * M,
        "values_close": err <= max(1e-6, 10 * M * h * h),
        "jet_feasible": bool(cw11.check_condition_a(jet, M).holds),
    }


def _verify_body(d):
    W = bodies.body_from_dict(d["body"])
    t0 = float(d["t0"])
    checks = {"t0_in_range": 1.0 < t0 < 2.0}
    if "level_polyline" in d:
        poly = decode_array(d["level_polyline"]) if isinstance(d["level_polyline"], dict) else np.asarray(d["level_polyline"])
        bm = bodies.boundary_mismatch_measure(W, poly, float(d["tau_bd"]) / t0)
        checks["closed"] = bool(np.allclose(poly[0], poly[-1]))
        checks["mismatch_below_target"] = bm < float(d["epsilon"])
        checks["mismatch_matches_certificate"] = abs(bm - float(d["boundary_mismatch"])) <= 1e-9
        checks["curvature_within_bound"] = float(d["discrete_curvature"]) <= float(d["curvature_bound"])
    return checks


def _verify_cw11(d):
    jet = Jet1Set.from_dict(d["jet"])
    ca = cw11.check_condition_a(jet, float(d["M"]))
    return {"condition_a_matches": bool(ca.holds) == bool(d["condition_a"])}


def cmd_verify(a):
    p = Path(a.cert)
    if not p.exists():
        raise UsageError(f"missing certificate: {a.cert}")
    d = json.loads(p.read_text())
    kind = d.get("kind")
    handlers = {"lusin_certificate": _verify_lusin, "extension": _verify_extension,
                "smoothed_body": _verify_body, "cw11_check": _verify_cw11}
    if kind not in handlers:
        raise UsageError(f"cannot verify certificates of kind {kind!r}")
    checks = handlers[kind](d)
    ok = all(checks.values())
    _emit({"kind": "verification", "certificate_kind": kind, "checks": checks, "ok": ok}, None)
    return EXIT_OK if ok else EXIT_REFUSED


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="convexlusin", description="C^{1,1} convex extension, Lusin approximation and body smoothing.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    c = sub.add_parser("cw11", help="pairwise extension condition for 1-jets")
    c.add_argument("action", choices=["check", "minimal-m", "local"])
    c.add_argument("--jet", required=True)
    c.add_argument("--M", type=float)
    c.add_argument("--kmax", type=int, default=4)
    c.add_argument("--tau", type=float)
    c.add_argument("--out")
    c.set_defaults(func=cmd_cw11)

    e = sub.add_parser("envelope", help="Legendre transforms, convex envelopes and extensions")
    e.add_argument("action", choices=["legendre", "biconjugate", "extend"])
    e.add_argument("--in", dest="input")
    e.add_argument("--dual", help="slope grid lo:hi:n")
    e.add_argument("--jet")
    e.add_argument("--M", type=float)
    e.add_argument("--box", help='grid spec "lo:hi:n,..."')
    e.add_argument("--method", default=None)
    e.add_argument("--out")
    e.add_argument("--cert", help="write a verifiable extension certificate")
    e.add_argument("--svg")
    e.set_defaults(func=cmd_envelope)

    lu = sub.add_parser("lusin", help="Lusin-type C^{1,1} approximation")
    lu.add_argument("action", choices=["ej", "approx", "glue", "measure"])
    lu.add_argument("--f")
    lu.add_argument("--g")
    lu.add_argument("--A", help='box "lo:hi" per axis, comma separated')
    lu.add_argument("--eps", type=float)
    lu.add_argument("--h", type=float)
    lu.add_argument("--j", type=int, default=1)
    lu.add_argument("--jmax", type=int)
    lu.add_argument("--tau-eq", type=float)
    lu.add_argument("--tau-grad", type=float)
    lu.add_argument("--pieces", nargs="+")
    lu.add_argument("--radii", nargs="+", type=float)
    lu.add_argument("--global", dest="use_global", action="store_true",
                    help="refuse up front when f is not essentially coercive")
    lu.add_argument("--out")
    lu.add_argument("--svg")
    lu.set_defaults(func=cmd_lusin)

    co = sub.add_parser("coercivity", help="essential coercivity and rigid decomposition")
    co.add_argument("action", choices=["test", "decompose", "gate"])
    co.add_argument("--f", required=True)
    co.add_argument("--eps", type=float)
    co.add_argument("--seed", type=int, default=0)
    co.add_argument("--samples", type=int)
    co.add_argument("--out")
    co.set_defaults(func=cmd_coercivity)

    b = sub.add_parser("bodies", help="Minkowski gauges, smoothing, coarea and line checks")
    b.add_argument("action", choices=["minkowski", "smooth", "coarea", "lines"])
    b.add_argument("--W", "--P", dest="W")
    b.add_argument("--x")
    b.add_argument("--eps", type=float)
    b.add_argument("--h", type=float)
    b.add_argument("--g")
    b.add_argument("--t", help="level range lo:hi")
    b.add_argument("--open-lower", action="store_true", help="exclude the lower level from the region")
    b.add_argument("--levels", type=int, default=None)
    b.add_argument("--out")
    b.add_argument("--svg")
    b.set_defaults(func=cmd_bodies)

    v = sub.add_parser("verify", help="recheck a certificate from its embedded data")
    v.add_argument("--cert", required=True)
    v.set_defaults(func=cmd_verify)
    return p


def _check_args(a):
    if a.command == "envelope":
        if a.action in ("legendre", "biconjugate") and not a.input:
            raise UsageError("--in is required")
        if a.action == "extend":
            if not a.jet or not a.box:
                raise UsageError("--jet and --box are required")
            a.method = a.method or "grid"
        elif a.action == "biconjugate":
            a.method = a.method or "auto"
    if a.command == "cw11" and a.action == "check" and a.M is None:
        raise UsageError("--M is required")
    if a.command == "lusin":
        if a.action in ("approx", "ej") and not a.f:
            raise UsageError("--f is required")
        if a.action == "measure" and not (a.f and a.g):
            raise UsageError("--f and --g are required")
        if a.action == "glue" and not (a.pieces and a.radii):
            raise UsageError("--pieces and --radii are required")
    if a.command == "bodies":
        if a.levels is None:
            a.levels = 256 if a.action == "smooth" else 64
        if a.action in ("minkowski", "smooth", "lines") and not a.W:
            raise UsageError("--W is required")
        if a.action == "minkowski" and not a.x:
            raise UsageError("--x is required")
        if a.action == "smooth" and a.h is None:
            a.h = 0.0025
        if a.action == "coarea" and not (a.g or (a.W and a.h)):
            raise UsageError("coarea needs --g, or --W with --h")


def _limit_threads():
    n = os.environ.get("CONVEXLUSIN_THREADS")
    if not n:
        return
    try:
        import numba

        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))
    except ValueError:
        raise UsageError("CONVEXLUSIN_THREADS must be a positive integer") from None


def _fail(code, kind, message, **extra):
    sys.stderr.write(json.dumps(_jsonable({"error": kind, "message": message, "exit_code": code, **extra}),
                                sort_keys=True) + "\n")
    return code


def _attach_negative_values(argv):
    """Rewrite ``--A -2:2`` as ``--A=-2:2`` so argparse does not read the value as a flag."""
    out = []
    for tok in argv:
        if (out and out[-1].startswith("--") and "=" not in out[-1] and len(tok) > 1
                and tok[0] == "-" and (tok[1].isdigit() or tok[1] == ".")):
            out[-1] = f"{out[-1]}={tok}"
        else:
            out.append(tok)
    return out


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = build_parser().parse_args(_attach_negative_values(argv))
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        _limit_threads()
        _check_args(args)
        return args.func(args)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", str(exc))
    except Refused as exc:
        return _fail(EXIT_REFUSED, "refused", str(exc), **exc.extra)
    except InfeasibleJetError as exc:
        w = exc.witness
        return _fail(EXIT_REFUSED, "infeasible", str(exc), witness=None if w is None else [int(i) for i in w])
    except ResolutionError as exc:
        return _fail(EXIT_RESOLUTION, "resolution", str(exc))
    except (ValueError, KeyError, FileNotFoundError) as exc:
        return _fail(EXIT_USAGE, "usage", str(exc))


if __name__ == "__main__":
    sys.exit(main())
