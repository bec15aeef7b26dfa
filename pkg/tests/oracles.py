"""Independent reference implementations used to derive expected test values.

Everything here is deliberately naive (per-pixel loops, exhaustive
enumeration) and shares no code with the package under test.
"""

import itertools

import numpy as np


def finite_difference(f, arrays, step=1e-5, sample=None, rng=None):
    """Central finite-difference gradients of scalar f w.r.t. each array.

    When ``sample`` is given, only that many randomly chosen coordinates
    per array are probed and the rest of the returned gradient is NaN.
    """
    grads = []
    for arr in arrays:
        g = np.full(arr.shape, np.nan)
        flat = arr.reshape(-1)
        if sample is not None and flat.size > sample:
            idx = rng.choice(flat.size, size=sample, replace=False)
        else:
            idx = np.arange(flat.size)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            hi = f()
            flat[i] = orig - step
            lo = f()
            flat[i] = orig
            g.reshape(-1)[i] = (hi - lo) / (2.0 * step)
        grads.append(g)
    return grads


def grads_close(analytic, numeric, rel=1e-3, abs_floor=1e-6):
    """Check sampled finite-difference entries against analytic gradients."""
    mask = ~np.isnan(numeric)
    a, n = analytic[mask], numeric[mask]
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), abs_floor / rel)
    return bool(np.all(np.abs(a - n) <= rel * denom))


def conv2d_direct(x, w, b=None, stride=1, padding=0, groups=1):
    """Sliding-window convolution with explicit loops."""
    n, cin, h, wd = x.shape
    cout, cg, kh, kw = w.shape
    xp = np.zeros((n, cin, h + 2 * padding, wd + 2 * padding))
    xp[:, :, padding : padding + h, padding : padding + wd] = x
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((n, cout, ho, wo))
    cog = cout // groups
    for ni in range(n):
        for co in range(cout):
            g = co // cog
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for ci in range(cg):
                        for ki in range(kh):
                            for kj in range(kw):
                                acc += (
                                    xp[ni, g * cg + ci, i * stride + ki, j * stride + kj]
                                    * w[co, ci, ki, kj]
                                )
                    out[ni, co, i, j] = acc
            if b is not None:
                out[ni, co] += b[co]
    return out


def adaptive_pool_direct(x, grid):
    """Patch means over the floor partition; empty patches give 0."""
    n, c, h, w = x.shape
    out = np.zeros((n, c, grid, grid))
    for i in range(grid):
        r0, r1 = (i * h) // grid, ((i + 1) * h) // grid
        for j in range(grid):
            c0, c1 = (j * w) // grid, ((j + 1) * w) // grid
            if r1 > r0 and c1 > c0:
                out[:, :, i, j] = x[:, :, r0:r1, c0:c1].mean(axis=(2, 3))
    return out


def avg_pool_same_direct(x, k):
    """Centered window means over in-bounds entries only, per pixel."""
    r = k // 2
    n, c, h, w = x.shape
    out = np.zeros_like(x)
    for i in range(h):
        for j in range(w):
            r0, r1 = max(0, i - r), min(h - 1, i + r)
            c0, c1 = max(0, j - r), min(w - 1, j + r)
            out[:, :, i, j] = x[:, :, r0 : r1 + 1, c0 : c1 + 1].mean(axis=(2, 3))
    return out


def bilinear_direct(x, out_h, out_w):
    """Align-corners sampling evaluated point by point."""
    n, c, h, w = x.shape
    out = np.zeros((n, c, out_h, out_w))
    for i in range(out_h):
        sy = 0.0 if out_h == 1 else i * (h - 1) / (out_h - 1)
        y0 = min(int(np.floor(sy)), h - 1)
        y1 = min(y0 + 1, h - 1)
        fy = sy - y0
        for j in range(out_w):
            sx = 0.0 if out_w == 1 else j * (w - 1) / (out_w - 1)
            x0 = min(int(np.floor(sx)), w - 1)
            x1 = min(x0 + 1, w - 1)
            fx = sx - x0
            out[:, :, i, j] = (
                (1 - fy) * (1 - fx) * x[:, :, y0, x0]
                + (1 - fy) * fx * x[:, :, y0, x1]
                + fy * (1 - fx) * x[:, :, y1, x0]
                + fy * fx * x[:, :, y1, x1]
            )
    return out


def boundary_rule_direct(mask, classes, radius=1, ignore=255):
    """Per-pixel enumeration of the Chebyshev-neighbourhood boundary rule."""
    h, w = mask.shape
    out = np.zeros((classes, h, w), dtype=np.uint8)
    for i in range(h):
        for j in range(w):
            if mask[i, j] == ignore:
                continue
            labels = set()
            for di in range(-radius, radius + 1):
                for dj in range(-radius, radius + 1):
                    ni, nj = i + di, j + dj
                    if 0 <= ni < h and 0 <= nj < w:
                        labels.add(int(mask[ni, nj]))
            labels.discard(ignore)
            for k in labels:
                if any(l != k for l in labels):
                    out[k, i, j] = 1
    return out


def max_matching_brute(pred_pts, gt_pts, radius):
    """Exhaustive maximum bipartite matching via bitmask DP (<= ~14 gt points)."""
    allowed = []
    r2 = radius * radius
    for py, px in pred_pts:
        row = 0
        for gi, (gy, gx) in enumerate(gt_pts):
            if (py - gy) ** 2 + (px - gx) ** 2 <= r2 + 1e-12:
                row |= 1 << gi
        allowed.append(row)
    best_for = {}

    def rec(i, used):
        if i == len(allowed):
            return 0
        key = (i, used)
        if key in best_for:
            return best_for[key]
        best = rec(i + 1, used)
        avail = allowed[i] & ~used
        gi = 0
        while avail:
            if avail & 1:
                cand = 1 + rec(i + 1, used | (1 << gi))
                if cand > best:
                    best = cand
            avail >>= 1
            gi += 1
        best_for[key] = best
        return best

    return rec(0, 0)


def trapezoid_ap(recalls, precisions):
    """Trapezoid area under the PR points as the metric defines it:

    sort by recall (ties broken by descending precision), prepend
    (0, first precision), integrate over recall.
    """
    order = sorted(range(len(recalls)), key=lambda i: (recalls[i], -precisions[i]))
    rs = [0.0] + [recalls[i] for i in order]
    ps = [precisions[order[0]]] + [precisions[i] for i in order]
    area = 0.0
    for i in range(len(rs) - 1):
        area += (rs[i + 1] - rs[i]) * (ps[i] + ps[i + 1]) / 2.0
    return area


def miou_direct(pred, gt, classes, ignore=255):
    """Naive per-pixel IoU: set sizes counted by direct iteration."""
    per_class = []
    for k in range(classes):
        inter = union = 0
        for p, g in zip(pred.reshape(-1), gt.reshape(-1)):
            if g == ignore:
                continue
            if p == k and g == k:
                inter += 1
            if p == k or g == k:
                union += 1
        per_class.append(np.nan if union == 0 else inter / union)
    vals = [v for v in per_class if not np.isnan(v)]
    return per_class, (float(np.mean(vals)) if vals else float("nan"))


def enumerate_window_labels(mask, i, j, radius):
    h, w = mask.shape
    out = []
    for di in range(-radius, radius + 1):
        for dj in range(-radius, radius + 1):
            ni, nj = i + di, j + dj
            if 0 <= ni < h and 0 <= nj < w:
                out.append(int(mask[ni, nj]))
    return out
