"""Independent reference implementations used to check the library.

Everything here is written the slow, obvious way (explicit loops, direct
formula substitution) and must not import the fast paths it is checking.
"""
from __future__ import annotations

import numpy as np

FD_EPS = 1e-5


def numeric_grad(f, arr, eps=FD_EPS):
    """Central-difference gradient of scalar f(arr) w.r.t. every entry."""
    g = np.zeros_like(arr, dtype=np.float64)
    flat = arr.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + eps
        hi = f()
        flat[i] = keep - eps
        lo = f()
        flat[i] = keep
        gf[i] = (hi - lo) / (2.0 * eps)
    return g


def max_rel_err(analytic, numeric):
    return float(np.max(np.abs(analytic - numeric) / (np.abs(numeric) + 1e-8)))


def conv2d_naive(x, w, b=None, stride=1, dilation=1, padding=0):
    """Sliding-window cross-correlation, quadruple loop."""
    n, ci, h, wd = x.shape
    co, _, k, _ = w.shape
    span = dilation * (k - 1) + 1
    oh = (h + 2 * padding - span) // stride + 1
    ow = (wd + 2 * padding - span) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out = np.zeros((n, co, oh, ow))
    for b_ in range(n):
        for o in range(co):
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0
                    for c in range(ci):
                        for ki in range(k):
                            for kj in range(k):
                                acc += (xp[b_, c, i * stride + ki * dilation,
                                           j * stride + kj * dilation]
                                        * w[o, c, ki, kj])
                    out[b_, o, i, j] = acc
            if b is not None:
                out[b_, o] += b[o]
    return out


def bilinear_naive(x, out_h, out_w):
    """Per-pixel bilinear resample with half-pixel centers and edge clamp."""
    n, c, h, w = x.shape
    out = np.zeros((n, c, out_h, out_w))
    for b in range(n):
        for ch in range(c):
            for i in range(out_h):
                sy = min(max((i + 0.5) * h / out_h - 0.5, 0.0), h - 1.0)
                y0 = int(np.floor(sy))
                y1 = min(y0 + 1, h - 1)
                fy = sy - y0
                for j in range(out_w):
                    sx = min(max((j + 0.5) * w / out_w - 0.5, 0.0), w - 1.0)
                    x0 = int(np.floor(sx))
                    x1 = min(x0 + 1, w - 1)
                    fx = sx - x0
                    out[b, ch, i, j] = (
                        x[b, ch, y0, x0] * (1 - fy) * (1 - fx)
                        + x[b, ch, y0, x1] * (1 - fy) * fx
                        + x[b, ch, y1, x0] * fy * (1 - fx)
                        + x[b, ch, y1, x1] * fy * fx)
    return out


def brute_confusion(pred, gt):
    """Pixel loop over a mask pair; returns (tp, tn, fp, fn)."""
    tp = tn = fp = fn = 0
    for p, g in zip(np.asarray(pred).reshape(-1), np.asarray(gt).reshape(-1)):
        if p == 1 and g == 1:
            tp += 1
        elif p == 0 and g == 0:
            tn += 1
        elif p == 1 and g == 0:
            fp += 1
        else:
            fn += 1
    return tp, tn, fp, fn


def brute_metrics(tp, tn, fp, fn):
    """Direct formula substitution with the documented degenerate rules:
    a ratio whose denominator is zero is treated as perfect (1.0)."""
    total = tp + tn + fp + fn
    di = 1.0 if (2 * tp + fn + fp) == 0 else 2.0 * tp / (2 * tp + fn + fp)
    ja = 1.0 if (tp + fn + fp) == 0 else tp / (tp + fn + fp)
    ac = (tp + tn) / total
    se = 1.0 if (tp + fn) == 0 else tp / (tp + fn)
    sp = 1.0 if (tn + fp) == 0 else tn / (tn + fp)
    return {"AC": ac, "DI": di, "JA": ja, "SE": se, "SP": sp}
