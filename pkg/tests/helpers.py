"""Shared test oracles: central finite differences and a naive nearest-neighbor."""

import math

import numpy as np


def numeric_grad(build_loss, leaf, step=1e-5):
    """Central finite-difference gradient of build_loss() w.r.t. a leaf tensor.

    build_loss must reconstruct the computation from the current leaf values
    each call; leaf.data is perturbed in place, one component at a time.
    """
    g = np.zeros_like(leaf.data)
    flat = leaf.data.ravel()
    gflat = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = build_loss().item()
        flat[i] = orig - step
        down = build_loss().item()
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * step)
    return g


def assert_grads_close(analytic, numeric, rtol=1e-4, floor=1e-8, label=""):
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    bad = diff > np.maximum(rtol * scale, floor)
    assert not bad.any(), (
        f"{label}: {bad.sum()} of {bad.size} gradient components disagree; "
        f"worst diff {diff.max():.3e} at scale {scale[diff == diff.max()].max():.3e}"
    )


def naive_nearest(p, q):
    """Independent O(N*M) nearest-neighbor enumeration in plain python loops."""
    dists = np.empty(len(p))
    idxs = np.empty(len(p), dtype=np.int64)
    for i, (px, py, pz) in enumerate(p):
        best = math.inf
        best_j = -1
        for j, (qx, qy, qz) in enumerate(q):
            dx = px - qx
            dy = py - qy
            dz = pz - qz
            d2 = (dx * dx + dy * dy) + dz * dz
            if d2 < best:
                best = d2
                best_j = j
        dists[i] = math.sqrt(best)
        idxs[i] = best_j
    return dists, idxs


def naive_partial_chamfer(p, q, reduction="mean"):
    d, _ = naive_nearest(p, q)
    return float(d.sum() if reduction == "sum" else d.mean())


def naive_full_chamfer(p, q, reduction="mean"):
    return naive_partial_chamfer(p, q, reduction) + naive_partial_chamfer(q, p, reduction)
