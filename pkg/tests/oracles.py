"""Independent reference computations used to freeze and cross-check expected values.

Nothing here imports the code under test beyond plain data types, so a bug in
the optimised paths cannot leak into the oracle.
"""

from __future__ import annotations

import math

import mpmath
import numpy as np

mpmath.mp.dps = 50


def subgrid_area(box, res):
    """Area by counting lattice cells of side ``res`` whose lower corner lies in the box."""
    x0, y0, x1, y1 = box
    nx = math.ceil(round(x1 / res, 9)) - math.ceil(round(x0 / res, 9))
    ny = math.ceil(round(y1 / res, 9)) - math.ceil(round(y0 / res, 9))
    return nx * ny * res * res


def subgrid_iou(a, b, res):
    """IoU by enumerating cell centres on a lattice covering both boxes."""
    lo_x, lo_y = min(a[0], b[0]), min(a[1], b[1])
    hi_x, hi_y = max(a[2], b[2]), max(a[3], b[3])
    xs = np.arange(lo_x + res / 2, hi_x, res)
    ys = np.arange(lo_y + res / 2, hi_y, res)
    gx, gy = np.meshgrid(xs, ys)
    in_a = (gx > a[0]) & (gx < a[2]) & (gy > a[1]) & (gy < a[3])
    in_b = (gx > b[0]) & (gx < b[2]) & (gy > b[1]) & (gy < b[3])
    union = np.count_nonzero(in_a | in_b)
    return np.count_nonzero(in_a & in_b) / union if union else 0.0


def mp_focal(p, alpha, gamma):
    p = mpmath.mpf(p)
    return -mpmath.mpf(alpha) * (1 - p) ** mpmath.mpf(gamma) * mpmath.log(p)


def central_difference(f, x, h):
    return (f(x + h) - f(x - h)) / (2.0 * h)


def box_iou_plain(a, b):
    """IoU from (x0, y0, x1, y1) tuples, written without the package's helpers."""
    w = min(a[2], b[2]) - max(a[0], b[0])
    h = min(a[3], b[3]) - max(a[1], b[1])
    if w <= 0 or h <= 0:
        return 0.0
    inter = w * h
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    if tuple(a) == tuple(b):
        return 1.0
    return inter / (area_a + area_b - inter)


def naive_match(dets, gts, thr=0.5, max_dets=100):
    """Literal transcription of the greedy rule, O(n*m) with no vectorisation.

    ``dets``: list of (score, box); ``gts``: list of (id, box).
    Returns (pairs, unmatched det indices, unmatched gt ids) in the same
    shape as MatchResult fields.
    """
    indexed = list(enumerate(dets))
    # bubble-style stable ordering: higher score first, lower index first on ties
    for i in range(len(indexed)):
        for j in range(len(indexed) - 1 - i):
            (ia, (sa, _)), (ib, (sb, _)) = indexed[j], indexed[j + 1]
            if sb > sa:
                indexed[j], indexed[j + 1] = indexed[j + 1], indexed[j]
    indexed = indexed[:max_dets]
    claimed = set()
    pairs, unmatched = [], []
    for idx, (_, dbox) in indexed:
        best_id, best_iou = None, None
        for gid, gbox in gts:
            if gid in claimed:
                continue
            v = box_iou_plain(dbox, gbox)
            if v < thr:
                continue
            if best_iou is None or v > best_iou or (v == best_iou and gid < best_id):
                best_id, best_iou = gid, v
        if best_id is None:
            unmatched.append(idx)
        else:
            claimed.add(best_id)
            pairs.append((idx, best_id, best_iou))
    missed = [gid for gid, _ in gts if gid not in claimed]
    return pairs, unmatched, missed


def dense_trapezoid_area(recalls, precisions, n=200_001):
    """Integrate the piecewise-linear precision(recall) on a dense grid."""
    order = np.argsort(recalls, kind="stable")
    r = np.asarray(recalls, dtype=float)[order]
    p = np.asarray(precisions, dtype=float)[order]
    grid = np.linspace(r[0], r[-1], n)
    vals = np.interp(grid, r, p)
    dx = grid[1] - grid[0]
    return float(np.sum((vals[1:] + vals[:-1]) / 2.0) * dx)


def plain_mean_focal_loss(theta, x, positive, weights, alpha, gamma, eps=1e-7):
    """Mean weighted focal loss of a linear-logistic scorer, from first principles."""
    total = 0.0
    for row, pos, w in zip(x, positive, weights):
        z = float(np.dot(theta[:-1], row) + theta[-1])
        p = 1.0 / (1.0 + math.exp(-z))
        pt = max(p if pos else 1.0 - p, eps)
        total += -alpha * w * (1.0 - pt) ** gamma * math.log(pt)
    return total / len(x)
