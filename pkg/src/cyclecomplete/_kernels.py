"""Optional numba-compiled inner loops with bit-identical numpy fallbacks.

Every kernel keeps strict IEEE semantics (no fastmath, no reassociation), so
results match the plain numpy implementations bit for bit; the tests assert
that equivalence against independent oracles.  If numba is unavailable the
numpy paths are used transparently.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

    def njit(*a, **k):
        def wrap(f):
            return f

        return wrap


LEAKY_SLOPE = 0.2


@njit(cache=True)
def _nn_jit(p, q):
    n = p.shape[0]
    m = q.shape[0]
    dist = np.empty(n)
    idx = np.empty(n, dtype=np.int64)
    for i in range(n):
        px = p[i, 0]
        py = p[i, 1]
        pz = p[i, 2]
        best = np.inf
        bj = 0
        for j in range(m):
            dx = px - q[j, 0]
            dy = py - q[j, 1]
            dz = pz - q[j, 2]
            d2 = (dx * dx + dy * dy) + dz * dz
            if d2 < best:  # strict: ties keep the lowest index
                best = d2
                bj = j
        dist[i] = np.sqrt(best)
        idx[i] = bj
    return dist, idx


@njit(cache=True)
def _bias_leaky_jit(z, b, slope):
    out = np.empty_like(z)
    rows = z.shape[0]
    cols = z.shape[1]
    for r in range(rows):
        for c in range(cols):
            v = z[r, c] + b[c]
            out[r, c] = v if v > 0 else slope * v
    return out


@njit(cache=True)
def _leaky_bwd_jit(g, out, slope):
    gz = np.empty_like(g)
    flat_g = g.ravel()
    flat_o = out.ravel()
    flat_z = gz.ravel()
    for i in range(flat_g.size):
        flat_z[i] = flat_g[i] if flat_o[i] > 0 else slope * flat_g[i]
    return gz


@njit(cache=True)
def _adam_jit(p, g, m1, m2, lr, b1, b2, bc1, bc2, eps):
    fp = p.ravel()
    fg = g.ravel()
    f1 = m1.ravel()
    f2 = m2.ravel()
    for i in range(fp.size):
        gi = fg[i]
        f1[i] = b1 * f1[i] + (1.0 - b1) * gi
        f2[i] = b2 * f2[i] + (1.0 - b2) * (gi * gi)
        fp[i] -= lr * (f1[i] / bc1) / (np.sqrt(f2[i] / bc2) + eps)


@njit(cache=True)
def _maxpool_jit(h):
    b, n, c = h.shape
    out = np.empty((b, c))
    idx = np.empty((b, c), dtype=np.int64)
    for bi in range(b):
        for ci in range(c):
            best = h[bi, 0, ci]
            bj = 0
            for ni in range(1, n):
                v = h[bi, ni, ci]
                if v > best:
                    best = v
                    bj = ni
            out[bi, ci] = best
            idx[bi, ci] = bj
    return out, idx


def nearest_point(p, q):
    """(distance, index) of each p row's nearest q row; lowest index on ties."""
    if HAVE_NUMBA:
        return _nn_jit(np.ascontiguousarray(p), np.ascontiguousarray(q))
    return None  # caller falls back to the matrix kernel


def adam_step(p, g, m1, m2, lr, b1, b2, bc1, bc2, eps):
    """In-place adaptive-moment update; one fused pass when compiled."""
    if HAVE_NUMBA and p.flags.c_contiguous and g.flags.c_contiguous:
        _adam_jit(p, g, m1, m2, lr, b1, b2, bc1, bc2, eps)
        return
    m1 *= b1
    m1 += (1.0 - b1) * g
    m2 *= b2
    m2 += (1.0 - b2) * (g * g)
    step = np.sqrt(m2 / bc2)
    step += eps
    np.divide(m1 / bc1, step, out=step)
    step *= lr
    p -= step


def maxpool_points(h):
    """(max, argmax) over the point axis of (B, N, C); first index on ties."""
    if HAVE_NUMBA and h.flags.c_contiguous:
        return _maxpool_jit(h)
    idx = np.argmax(h, axis=1)
    out = np.take_along_axis(h, idx[:, None, :], axis=1)[:, 0, :]
    return out, idx


def bias_leaky(z2d, b, slope=LEAKY_SLOPE):
    """leaky(z + b) in one pass; z2d is (rows, cols), b is (cols,)."""
    if HAVE_NUMBA:
        return _bias_leaky_jit(z2d, b, slope)
    v = z2d + b
    out = slope * v
    np.maximum(v, out, out=out)
    return out


def leaky_backward(g, out, slope=LEAKY_SLOPE):
    """g scaled by the leaky derivative, keyed off the activation output sign."""
    if HAVE_NUMBA and g.flags.c_contiguous and out.flags.c_contiguous:
        return _leaky_bwd_jit(g, out, slope)
    gs = g * slope
    np.copyto(gs, g, where=out > 0)
    return gs
