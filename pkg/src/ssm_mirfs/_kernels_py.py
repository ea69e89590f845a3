"""NumPy implementation of the forward recursion; same contract as ``_kernels``."""

import numpy as np


def forward(trans, emis, init, weights, keep=False):
    n, G = emis.shape
    incr = np.zeros(n)
    hist = np.empty((n, G)) if keep else None
    h = init * emis[0]
    mass = float(weights @ h)
    if not (mass > 0.0 and np.isfinite(mass)):
        return incr, h, hist, 0
    h = h / mass
    incr[0] = np.log(mass)
    if keep:
        hist[0] = h
    trans_t = trans.T
    for k in range(1, n):
        h = (trans_t @ (weights * h)) * emis[k]
        mass = float(weights @ h)
        if not (mass > 0.0 and np.isfinite(mass)):
            return incr, h, hist, k
        h = h / mass
        incr[k] = np.log(mass)
        if keep:
            hist[k] = h
    return incr, h, hist, -1


def forward_affine(lo, step, weights, emis, init, intercepts, slope, keep=False, spline=True):
    n, G = emis.shape
    x = lo + step * np.arange(G)
    offsets = np.arange(-1, 3)
    incr = np.zeros(n)
    hist = np.empty((n, G)) if keep else None
    h = init * emis[0]
    mass = float(weights @ h)
    if not (mass > 0.0 and np.isfinite(mass)):
        return incr, h, hist, 0
    h = h / mass
    incr[0] = np.log(mass)
    if keep:
        hist[0] = h
    for k in range(1, n):
        m = weights * h
        if spline:
            u = np.clip((intercepts[k] + slope * x - lo) / step, -2.0, G + 1.0)
            base = np.floor(u)
            t = u - base
            w = np.stack([(1 - t) ** 3, 3 * t**3 - 6 * t**2 + 4, -3 * t**3 + 3 * t**2 + 3 * t + 1, t**3], axis=1) / 6.0
            idx = np.clip(base.astype(np.intp)[:, None] + offsets, 0, G - 1)
            moved = np.bincount(idx.ravel(), (w * m[:, None]).ravel(), minlength=G)
        else:
            u = np.clip((intercepts[k] + slope * x - lo) / step, 0.0, G - 1.0)
            idx = np.minimum(u.astype(np.intp), G - 2)
            t = u - idx
            moved = np.bincount(idx, m * (1.0 - t), minlength=G) + np.bincount(idx + 1, m * t, minlength=G)
        h = moved / weights * emis[k]
        mass = float(weights @ h)
        if not (mass > 0.0 and np.isfinite(mass)):
            return incr, h, hist, k
        h = h / mass
        incr[k] = np.log(mass)
        if keep:
            hist[k] = h
    return incr, h, hist, -1
