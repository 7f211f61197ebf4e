"""Pure-numpy fallback for the compositing kernels.

Same per-(pixel, gaussian) arithmetic as ``_kernels_numba``, vectorised over
each gaussian's bounding-box pixel block instead of JIT-compiled loops.
Selected via ZP3_BACKEND=numpy (see ``backend``).
"""
import numpy as np

MIN_ALPHA = 1.0 / 255.0
MIN_TRANSMITTANCE = 1e-4


def _bbox(mx, my, r, width, height):
    x0 = int(max(0.0, np.floor(mx - r)))
    x1 = int(min(width - 1.0, np.ceil(mx + r)))
    y0 = int(max(0.0, np.floor(my - r)))
    y1 = int(min(height - 1.0, np.ceil(my + r)))
    return x0, x1, y0, y1


def _alpha_block(mx, my, a, b, c, op, x0, x1, y0, y1):
    dx = (np.arange(x0, x1 + 1) + 0.5) - mx
    dy = (np.arange(y0, y1 + 1) + 0.5) - my
    dxg = dx[None, :]
    dyg = dy[:, None]
    power = -0.5 * (a * dxg * dxg + c * dyg * dyg) - b * dxg * dyg
    np.minimum(power, 0.0, out=power)
    return op * np.exp(power), np.exp(power), dxg, dyg


def composite_forward(means2d, invcov, opacities, colors, depths, radii, width, height):
    K = means2d.shape[0]
    color = np.zeros((height, width, 3))
    trans = np.ones((height, width))
    depth_acc = np.zeros((height, width))
    last = np.full((height, width), -1, np.int32)
    for k in range(K):
        x0, x1, y0, y1 = _bbox(means2d[k, 0], means2d[k, 1], radii[k], width, height)
        if x1 < x0 or y1 < y0:
            continue
        alpha_eff, _, _, _ = _alpha_block(
            means2d[k, 0], means2d[k, 1],
            invcov[k, 0], invcov[k, 1], invcov[k, 2], opacities[k],
            x0, x1, y0, y1)
        blk = np.s_[y0:y1 + 1, x0:x1 + 1]
        T = trans[blk]
        active = (T >= MIN_TRANSMITTANCE) & (alpha_eff >= MIN_ALPHA)
        w = np.where(active, T * alpha_eff, 0.0)
        color[blk] += w[:, :, None] * colors[k]
        depth_acc[blk] += w * depths[k]
        trans[blk] = np.where(active, T * (1.0 - alpha_eff), T)
        last[blk] = np.where(active, np.int32(k), last[blk])
    return color, trans, depth_acc, last


def composite_backward(means2d, invcov, opacities, colors, radii, width, height,
                       trans_final, last, grad_color, grad_alpha):
    K = means2d.shape[0]
    g_color = np.zeros((K, 3))
    g_opacity = np.zeros(K)
    g_mean = np.zeros((K, 2))
    g_invcov = np.zeros((K, 3))
    trans_run = trans_final.copy()
    suffix_c = np.zeros((height, width, 3))
    suffix_a = np.zeros((height, width))
    has_alpha = np.any(grad_alpha != 0.0)
    for k in range(K - 1, -1, -1):
        x0, x1, y0, y1 = _bbox(means2d[k, 0], means2d[k, 1], radii[k], width, height)
        if x1 < x0 or y1 < y0:
            continue
        a, b, c = invcov[k, 0], invcov[k, 1], invcov[k, 2]
        alpha_eff, gweight, dxg, dyg = _alpha_block(
            means2d[k, 0], means2d[k, 1], a, b, c, opacities[k], x0, x1, y0, y1)
        blk = np.s_[y0:y1 + 1, x0:x1 + 1]
        active = (last[blk] >= k) & (alpha_eff >= MIN_ALPHA)
        if not np.any(active):
            continue
        om = 1.0 - alpha_eff
        t_before = np.where(active, trans_run[blk] / om, trans_run[blk])
        gc = grad_color[blk]
        sc = suffix_c[blk]
        d_alpha_eff = np.where(
            active,
            np.einsum("ijc,ijc->ij", gc, t_before[:, :, None] * colors[k]
                      - sc / om[:, :, None]),
            0.0)
        if has_alpha:
            ga = grad_alpha[blk]
            d_alpha_eff += np.where(active, ga * (t_before - suffix_a[blk] / om), 0.0)
        w_act = np.where(active, t_before * alpha_eff, 0.0)
        g_color[k] += np.einsum("ijc,ij->c", gc, w_act)
        g_opacity[k] += np.sum(np.where(active, d_alpha_eff * gweight, 0.0))
        cp = d_alpha_eff * alpha_eff
        g_invcov[k, 0] += np.sum(cp * (-0.5 * dxg * dxg))
        g_invcov[k, 1] += np.sum(cp * (-dxg * dyg))
        g_invcov[k, 2] += np.sum(cp * (-0.5 * dyg * dyg))
        g_mean[k, 0] += np.sum(cp * (a * dxg + b * dyg))
        g_mean[k, 1] += np.sum(cp * (c * dyg + b * dxg))
        suffix_c[blk] = sc + w_act[:, :, None] * colors[k]
        suffix_a[blk] += w_act
        trans_run[blk] = t_before
    return g_color, g_opacity, g_mean, g_invcov
