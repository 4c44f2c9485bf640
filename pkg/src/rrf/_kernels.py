"""Compiled inner loops for the network ops.

The depthwise kernels treat the one-pixel border as a virtual constant per
channel, so no padded copy of the activation is ever materialized.
"""

import numba
import numpy as np


@numba.njit(cache=True, fastmath=True, nogil=True)
def dw3x3_same(x, w, pad):
    """out[n,c,h,q] = sum_ij w[c,i,j] * xpad[n,c,h+i,q+j], border = pad[c]."""
    n_batch, n_chan, hh, ww = x.shape
    out = np.zeros_like(x)
    for n in range(n_batch):
        for c in range(n_chan):
            pv = pad[c]
            for h in range(hh):
                o = out[n, c, h]
                for i in range(3):
                    k0 = w[c, i, 0]
                    k1 = w[c, i, 1]
                    k2 = w[c, i, 2]
                    r = h + i - 1
                    if r < 0 or r >= hh:
                        s = (k0 + k1 + k2) * pv
                        for q in range(ww):
                            o[q] += s
                        continue
                    row = x[n, c, r]
                    if ww == 1:
                        o[0] += (k0 + k2) * pv + k1 * row[0]
                        continue
                    o[0] += k0 * pv + k1 * row[0] + k2 * row[1]
                    for q in range(1, ww - 1):
                        o[q] += k0 * row[q - 1] + k1 * row[q] + k2 * row[q + 1]
                    o[ww - 1] += k0 * row[ww - 2] + k1 * row[ww - 1] + k2 * pv
    return out


@numba.njit(cache=True, fastmath=True, nogil=True)
def dw3x3_wgrad(x, g):
    """In-bounds weight gradient and per-tap border gradient mass.

    Returns ``(gw, outside)`` where ``gw[c,i,j]`` sums ``g * x`` over the taps
    that land inside the plane and ``outside[c,i,j]`` sums ``g`` over the
    output positions whose tap ``(i, j)`` falls on the border.
    """
    n_batch, n_chan, hh, ww = x.shape
    gw = np.zeros((n_chan, 3, 3))
    outside = np.zeros((n_chan, 3, 3))
    for n in range(n_batch):
        for c in range(n_chan):
            total = 0.0
            r0 = 0.0
            rl = 0.0
            c0 = 0.0
            cl = 0.0
            for h in range(hh):
                grow = g[n, c, h]
                acc = 0.0
                for q in range(ww):
                    acc += grow[q]
                total += acc
                if h == 0:
                    r0 = acc
                if h == hh - 1:
                    rl = acc
                c0 += grow[0]
                cl += grow[ww - 1]
            e00 = g[n, c, 0, 0]
            e0l = g[n, c, 0, ww - 1]
            el0 = g[n, c, hh - 1, 0]
            ell = g[n, c, hh - 1, ww - 1]
            for i in range(3):
                rs = r0 if i == 0 else (rl if i == 2 else 0.0)
                for j in range(3):
                    cs = c0 if j == 0 else (cl if j == 2 else 0.0)
                    corner = 0.0
                    if i == 0 and j == 0:
                        corner = e00
                    elif i == 0 and j == 2:
                        corner = e0l
                    elif i == 2 and j == 0:
                        corner = el0
                    elif i == 2 and j == 2:
                        corner = ell
                    outside[c, i, j] += rs + cs - corner
            for i in range(3):
                h_lo = 1 if i == 0 else 0
                h_hi = hh - 1 if i == 2 else hh
                for h in range(h_lo, h_hi):
                    grow = g[n, c, h]
                    src = x[n, c, h + i - 1]
                    for j in range(3):
                        q_lo = 1 if j == 0 else 0
                        q_hi = ww - 1 if j == 2 else ww
                        acc = 0.0
                        for q in range(q_lo, q_hi):
                            acc += grow[q] * src[q + j - 1]
                        gw[c, i, j] += acc
    return gw, outside


@numba.njit(cache=True, fastmath=True, nogil=True)
def channel_mean_var(x):
    """Per-channel mean and biased variance over N, H, W (two-pass, float64)."""
    n_batch, n_chan, h, w = x.shape
    count = n_batch * h * w
    mean = np.zeros(n_chan)
    var = np.zeros(n_chan)
    for c in range(n_chan):
        acc = 0.0
        for n in range(n_batch):
            for i in range(h):
                for j in range(w):
                    acc += x[n, c, i, j]
        mu = acc / count
        acc = 0.0
        for n in range(n_batch):
            for i in range(h):
                for j in range(w):
                    d = x[n, c, i, j] - mu
                    acc += d * d
        mean[c] = mu
        var[c] = acc / count
    return mean, var


@numba.njit(cache=True, fastmath=True, nogil=True)
def bn_normalize(x, mean, inv_std):
    """Coefficients must already be in x's dtype."""
    n_batch, n_chan, h, w = x.shape
    y = np.empty_like(x)
    for n in range(n_batch):
        for c in range(n_chan):
            mu = mean[c]
            r = inv_std[c]
            for i in range(h):
                for j in range(w):
                    y[n, c, i, j] = (x[n, c, i, j] - mu) * r
    return y


@numba.njit(cache=True, fastmath=True, nogil=True)
def bn_grad_sums(g, y):
    n_batch, n_chan, h, w = g.shape
    sg = np.zeros(n_chan)
    sgy = np.zeros(n_chan)
    for n in range(n_batch):
        for c in range(n_chan):
            a = 0.0
            b = 0.0
            for i in range(h):
                for j in range(w):
                    gv = g[n, c, i, j]
                    a += gv
                    b += gv * y[n, c, i, j]
            sg[c] += a
            sgy[c] += b
    return sg, sgy


@numba.njit(cache=True, fastmath=True, nogil=True)
def bn_grad_apply(g, y, scale, offset, slope):
    """gx = scale_c * g + offset_c + slope_c * y (coefficients in g's dtype)."""
    n_batch, n_chan, h, w = g.shape
    gx = np.empty_like(g)
    for n in range(n_batch):
        for c in range(n_chan):
            s = scale[c]
            o = offset[c]
            k = slope[c]
            for i in range(h):
                for j in range(w):
                    gx[n, c, i, j] = s * g[n, c, i, j] + o + k * y[n, c, i, j]
    return gx


@numba.njit(cache=True, fastmath=True, nogil=True)
def relu_mask_grad(out, g):
    flat_o = out.ravel()
    flat_g = g.ravel()
    res = np.empty_like(flat_g)
    for i in range(flat_g.size):
        res[i] = flat_g[i] if flat_o[i] > 0 else 0
    return res.reshape(g.shape)
