"""Compiled inner loops shared by the envelope and Lusin modules.

Everything here works on plain float64/int64 arrays; validation happens in
the calling modules.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def lower_hull(x, y):
    """Indices of the lower convex hull of points sorted by ``x``.

    Collinear middle points are dropped, so the returned vertices are
    strictly convex.
    """
    n = x.shape[0]
    idx = np.empty(n, dtype=np.int64)
    m = 0
    for i in range(n):
        while m >= 2:
            a = idx[m - 2]
            b = idx[m - 1]
            cross = (x[b] - x[a]) * (y[i] - y[a]) - (y[b] - y[a]) * (x[i] - x[a])
            if cross <= 0.0:
                m -= 1
            else:
                break
        idx[m] = i
        m += 1
    return idx[:m]


@njit(cache=True)
def conjugate_sweep(hx, hy, s):
    """max_k (s_j * hx[k] - hy[k]) for ascending ``s`` over hull vertices.

    The argmax pointer only moves right, so the sweep costs O(len(hx) + len(s)).
    Exact ties keep the vertex with the smaller abscissa.
    """
    m = hx.shape[0]
    out = np.empty(s.shape[0])
    k = 0
    for j in range(s.shape[0]):
        sj = s[j]
        cur = sj * hx[k] - hy[k]
        while k + 1 < m:
            nxt = sj * hx[k + 1] - hy[k + 1]
            if nxt > cur:
                k += 1
                cur = nxt
            else:
                break
        out[j] = cur
    return out


@njit(cache=True)
def conjugate_lines(vals, x, s):
    """Row-wise discrete conjugate: out[l, j] = max_i (s[j] x[i] - vals[l, i])."""
    nl = vals.shape[0]
    out = np.empty((nl, s.shape[0]))
    for line in range(nl):
        v = vals[line]
        h = lower_hull(x, v)
        out[line] = conjugate_sweep(x[h], v[h], s)
    return out


@njit(cache=True)
def hull_interpolate(x, y, hidx, q):
    """Evaluate the lower hull polyline (vertices ``hidx``) at sorted ``q``."""
    out = np.empty(q.shape[0])
    k = 0
    m = hidx.shape[0]
    for j in range(q.shape[0]):
        qj = q[j]
        while k + 1 < m - 1 and x[hidx[k + 1]] < qj:
            k += 1
        if m == 1:
            out[j] = y[hidx[0]]
            continue
        a = hidx[k]
        b = hidx[k + 1]
        if qj == x[a]:
            out[j] = y[a]
        elif qj == x[b]:
            out[j] = y[b]
        else:
            t = (qj - x[a]) / (x[b] - x[a])
            out[j] = y[a] + t * (y[b] - y[a])
    return out


@njit(cache=True)
def _unravel(flat, shape, out):
    n = shape.shape[0]
    r = flat
    for d in range(n - 1, -1, -1):
        out[d] = r % shape[d]
        r //= shape[d]


@njit(cache=True)
def truncation_members(values, grads, shape, spacing, cand, offsets, j, tau):
    """Membership of candidate nodes in the truncation set of order ``j``.

    ``values`` is the flat grid data, ``grads`` the (N, n) gradients, and
    ``offsets`` the integer lattice offsets inside the ball of radius 1/j.
    A node is kept when every tangent gap over the ball is at most
    j |x - y|^2 + tau.
    """
    n = shape.shape[0]
    strides = np.empty(n, dtype=np.int64)
    acc = 1
    for d in range(n - 1, -1, -1):
        strides[d] = acc
        acc *= shape[d]
    nk = offsets.shape[0]
    r2 = np.empty(nk)
    for k in range(nk):
        t = 0.0
        for d in range(n):
            dx = offsets[k, d] * spacing[d]
            t += dx * dx
        r2[k] = t
    out = np.ones(cand.shape[0], dtype=np.bool_)
    ii = np.empty(n, dtype=np.int64)
    for c in range(cand.shape[0]):
        y = cand[c]
        _unravel(y, shape, ii)
        fy = values[y]
        for k in range(nk):
            flat = 0
            inside = True
            lin = 0.0
            for d in range(n):
                p = ii[d] + offsets[k, d]
                if p < 0 or p >= shape[d]:
                    inside = False
                    break
                flat += p * strides[d]
                lin += grads[y, d] * (offsets[k, d] * spacing[d])
            if not inside:
                continue
            gap = values[flat] - fy - lin
            if gap > j * r2[k] + tau:
                out[c] = False
                break
    return out


@njit(cache=True)
def windowed_tangent_min(values, grads, in_e, shape, spacing, targets, radii, offsets, off_r, M):
    """Tangent-quadratic minimum at grid targets, scanning E-nodes within radii[t].

    ``offsets`` are integer node offsets sorted by physical length ``off_r``;
    ties keep the lowest flat index.
    """
    n = shape.shape[0]
    nt = targets.shape[0]
    best = np.empty(nt)
    arg = np.empty(nt, dtype=np.int64)
    idx = np.empty(n, dtype=np.int64)
    strides = np.empty(n, dtype=np.int64)
    s = 1
    for d in range(n - 1, -1, -1):
        strides[d] = s
        s *= shape[d]
    for t in range(nt):
        x = targets[t]
        _unravel(x, shape, idx)
        b = np.inf
        a = -1
        for k in range(offsets.shape[0]):
            if off_r[k] > radii[x]:
                break
            flat = 0
            ok = True
            for d in range(n):
                c = idx[d] + offsets[k, d]
                if c < 0 or c >= shape[d]:
                    ok = False
                    break
                flat += c * strides[d]
            if not ok or not in_e[flat]:
                continue
            q = values[flat]
            for d in range(n):
                dx = -offsets[k, d] * spacing[d]
                q += grads[flat, d] * dx + 0.5 * M * dx * dx
            if q < b or (q == b and flat < a):
                b = q
                a = flat
        best[t] = b
        arg[t] = a
    return best, arg


@njit(cache=True)
def conjugate_exact(x, v, hidx, s, delta):
    """max_i (s_j x[i] - v[i]) over all nodes, located through the hull.

    The sweep over hull vertices gives the exact-arithmetic maximiser; nodes
    whose value could round to within ``delta[j]`` of it are then evaluated
    directly, so the result equals a plain scan of every node bit for bit.
    """
    m = hidx.shape[0]
    out = np.empty(s.shape[0])
    k = 0
    for j in range(s.shape[0]):
        sj = s[j]
        cur = sj * x[hidx[k]] - v[hidx[k]]
        while k + 1 < m:
            nxt = sj * x[hidx[k + 1]] - v[hidx[k + 1]]
            if nxt > cur:
                k += 1
                cur = nxt
            else:
                break
        best = cur
        floor = cur - delta[j]
        # walk right over hull intervals while values may still reach best
        q = k
        while q + 1 < m:
            a = hidx[q]
            b = hidx[q + 1]
            va = sj * x[a] - v[a]
            vb = sj * x[b] - v[b]
            if va < floor and vb <= va:
                break
            if vb > best:
                best = vb
            span = vb - va
            for i in range(a + 1, b):
                t = (x[i] - x[a]) / (x[b] - x[a])
                if va + span * t < floor:
                    if span <= 0.0:
                        break
                    continue
                c = sj * x[i] - v[i]
                if c > best:
                    best = c
            if vb < floor:
                break
            q += 1
        # and left
        q = k
        while q > 0:
            a = hidx[q - 1]
            b = hidx[q]
            va = sj * x[a] - v[a]
            vb = sj * x[b] - v[b]
            if vb < floor and va <= vb:
                break
            if va > best:
                best = va
            span = va - vb
            for i in range(b - 1, a, -1):
                t = (x[b] - x[i]) / (x[b] - x[a])
                if vb + span * t < floor:
                    if span <= 0.0:
                        break
                    continue
                c = sj * x[i] - v[i]
                if c > best:
                    best = c
            if va < floor:
                break
            q -= 1
        out[j] = best
    return out


@njit(cache=True)
def quadratic_hull_eval(X, Z, a, b, nfaces, fsize, fvid, fginv, M):
    """Minimise psi_f(z) + (M/2)|x - z|^2 over every facet f, for each row x.

    Facet f has vertices Z[f] (p, n), affine part psi_f(z) = <a[f], z> + b[f]
    and precomputed faces (vertex ids ``fvid``, sizes ``fsize`` and inverse
    Gram matrices ``fginv``). Returns the minimum and the minimiser z*.
    """
    npts = X.shape[0]
    n = X.shape[1]
    nf = Z.shape[0]
    best = np.full(npts, np.inf)
    zbest = np.zeros((npts, n))
    y = np.empty(n)
    z = np.empty(n)
    zf = np.empty(n)
    r = np.empty(3)
    lam = np.empty(3)
    for i in range(npts):
        for f in range(nf):
            for d in range(n):
                y[d] = X[i, d] - a[f, d] / M
            bd = np.inf
            for q in range(nfaces[f]):
                s = fsize[f, q]
                v0 = fvid[f, q, 0]
                ok = True
                if s == 1:
                    for d in range(n):
                        z[d] = Z[f, v0, d]
                else:
                    for k in range(s - 1):
                        acc = 0.0
                        vk = fvid[f, q, k + 1]
                        for d in range(n):
                            acc += (Z[f, vk, d] - Z[f, v0, d]) * (y[d] - Z[f, v0, d])
                        r[k] = acc
                    tot = 0.0
                    for k in range(s - 1):
                        acc = 0.0
                        for l in range(s - 1):
                            acc += fginv[f, q, k, l] * r[l]
                        lam[k] = acc
                        tot += acc
                        if acc < -1e-12:
                            ok = False
                    if tot > 1.0 + 1e-12:
                        ok = False
                    if not ok:
                        continue
                    for d in range(n):
                        acc = Z[f, v0, d]
                        for k in range(s - 1):
                            vk = fvid[f, q, k + 1]
                            acc += lam[k] * (Z[f, vk, d] - Z[f, v0, d])
                        z[d] = acc
                dist = 0.0
                for d in range(n):
                    dist += (y[d] - z[d]) ** 2
                if dist < bd:
                    bd = dist
                    for d in range(n):
                        zf[d] = z[d]
            val = b[f]
            sq = 0.0
            for d in range(n):
                val += a[f, d] * zf[d]
                sq += (X[i, d] - zf[d]) ** 2
            val += 0.5 * M * sq
            if val < best[i]:
                best[i] = val
                for d in range(n):
                    zbest[i, d] = zf[d]
    return best, zbest
