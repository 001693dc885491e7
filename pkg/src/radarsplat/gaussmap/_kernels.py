"""Compiled per-pixel compositing loops (forward and backward) used by the raster module."""

from __future__ import annotations

import math

import numpy as np
from numba import njit

ALPHA_MIN = 1.0 / 255.0
ALPHA_MAX = 0.99
T_MIN = 1e-4


@njit(cache=True)
def build_lists(order, mean2d, conic, opacity, r0, r1, c0, c1, H, W):
    """Per-pixel contributor lists in CSR form, each list in the order of ``order`` (front to back).

    Returns (start (H*W+1,), gid, alpha_raw, dx, dy).
    """
    total = 0
    for k in range(order.shape[0]):
        total += (r1[k] - r0[k] + 1) * (c1[k] - c0[k] + 1)
    pix_t = np.empty(total, np.int64)
    gid_t = np.empty(total, np.int64)
    a_t = np.empty(total)
    dx_t = np.empty(total)
    dy_t = np.empty(total)
    m = 0
    for k in range(order.shape[0]):
        g = order[k]
        mx = mean2d[g, 0]
        my = mean2d[g, 1]
        ca = conic[g, 0]
        cb = conic[g, 1]
        cc = conic[g, 2]
        op = opacity[g]
        q_max = 2.0 * math.log(255.0 * op) + 1e-9
        for r in range(r0[k], r1[k] + 1):
            dy = my - (r + 0.5)
            for c in range(c0[k], c1[k] + 1):
                dx = mx - (c + 0.5)
                q = ca * dx * dx + 2.0 * cb * dx * dy + cc * dy * dy
                if q > q_max:
                    continue
                a = op * math.exp(-0.5 * q)
                if a >= ALPHA_MIN:
                    pix_t[m] = r * W + c
                    gid_t[m] = g
                    a_t[m] = a
                    dx_t[m] = dx
                    dy_t[m] = dy
                    m += 1
    npix = H * W
    start = np.zeros(npix + 1, np.int64)
    for i in range(m):
        start[pix_t[i] + 1] += 1
    for p in range(npix):
        start[p + 1] += start[p]
    fill = start[:-1].copy()
    gid = np.empty(m, np.int64)
    alpha_raw = np.empty(m)
    dxs = np.empty(m)
    dys = np.empty(m)
    for i in range(m):
        j = fill[pix_t[i]]
        fill[pix_t[i]] += 1
        gid[j] = gid_t[i]
        alpha_raw[j] = a_t[i]
        dxs[j] = dx_t[i]
        dys[j] = dy_t[i]
    return start, gid, alpha_raw, dxs, dys


@njit(cache=True)
def composite(start, gid, alpha_raw, feats, early_termination):
    """Front-to-back blending; returns (out (npix, C), T before each pair, number of used pairs per pixel)."""
    npix = start.shape[0] - 1
    C = feats.shape[1]
    out = np.zeros((npix, C))
    T_pair = np.zeros(gid.shape[0])
    used = np.zeros(npix, np.int64)
    for p in range(npix):
        T = 1.0
        n = 0
        for j in range(start[p], start[p + 1]):
            a = min(alpha_raw[j], ALPHA_MAX)
            t_next = T * (1.0 - a)
            if early_termination and t_next < T_MIN:
                break
            w = a * T
            g = gid[j]
            for ch in range(C):
                out[p, ch] += w * feats[g, ch]
            T_pair[j] = T
            T = t_next
            n += 1
        used[p] = n
    return out, T_pair, used


@njit(cache=True)
def backward(start, gid, alpha_raw, dxs, dys, T_pair, used, feats, G, sky, opacity, conic, n):
    """Per-gaussian sums of the compositing gradient.

    Returns (feat_grad (n, 8) with geometry channels zeroed for sky gaussians,
    d_opacity_logit, d_mean2d (n, 2), d_conic (n, 3)).
    """
    npix = start.shape[0] - 1
    C = feats.shape[1]
    feat_grad = np.zeros((n, C))
    g_opl = np.zeros(n)
    g_m = np.zeros((n, 2))
    g_con = np.zeros((n, 3))
    for p in range(npix):
        s_all = 0.0
        s_col = 0.0
        for j in range(start[p] + used[p] - 1, start[p] - 1, -1):
            g = gid[j]
            a_raw = alpha_raw[j]
            a = min(a_raw, ALPHA_MAX)
            T = T_pair[j]
            w = a * T
            v_col = 0.0
            for ch in range(3):
                v_col += G[p, ch] * feats[g, ch]
            v_all = v_col
            for ch in range(3, C):
                v_all += G[p, ch] * feats[g, ch]
            for ch in range(3):
                feat_grad[g, ch] += w * G[p, ch]
            if sky[g]:
                v = v_col
                s = s_col
            else:
                v = v_all
                s = s_all
                for ch in range(3, C):
                    feat_grad[g, ch] += w * G[p, ch]
            if a_raw < ALPHA_MAX:
                dl_da = T * v - s / (1.0 - a)
                op = opacity[g]
                g_opl[g] += dl_da * a_raw * (1.0 - op)
                dl_dq = dl_da * (-0.5 * a_raw)
                dx = dxs[j]
                dy = dys[j]
                ca = conic[g, 0]
                cb = conic[g, 1]
                cc = conic[g, 2]
                g_m[g, 0] += dl_dq * (2.0 * ca * dx + 2.0 * cb * dy)
                g_m[g, 1] += dl_dq * (2.0 * cb * dx + 2.0 * cc * dy)
                g_con[g, 0] += dl_dq * dx * dx
                g_con[g, 1] += dl_dq * 2.0 * dx * dy
                g_con[g, 2] += dl_dq * dy * dy
            s_all += w * v_all
            s_col += w * v_col
    return feat_grad, g_opl, g_m, g_con
