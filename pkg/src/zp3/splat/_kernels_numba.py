"""JIT-compiled compositing kernels (hot path).

Both kernels iterate gaussians in front-to-back depth order and touch only
the pixels inside each gaussian's conservative bounding box.  The box radius
is chosen so every culled (pixel, gaussian) pair would fail the 1/255
contribution test anyway, which keeps the output identical to a full
per-pixel sweep.  Keep the arithmetic expressions in lockstep with
``_kernels_numpy``: backend equality is asserted by tests.
"""
import numpy as np
from numba import njit

MIN_ALPHA = 1.0 / 255.0
MIN_TRANSMITTANCE = 1e-4


@njit(cache=True)
def composite_forward(means2d, invcov, opacities, colors, depths, radii, width, height):
    K = means2d.shape[0]
    color = np.zeros((height, width, 3))
    trans = np.ones((height, width))
    depth_acc = np.zeros((height, width))
    last = np.full((height, width), -1, np.int32)
    for k in range(K):
        mx = means2d[k, 0]
        my = means2d[k, 1]
        r = radii[k]
        x0 = int(max(0.0, np.floor(mx - r)))
        x1 = int(min(width - 1.0, np.ceil(mx + r)))
        y0 = int(max(0.0, np.floor(my - r)))
        y1 = int(min(height - 1.0, np.ceil(my + r)))
        if x1 < x0 or y1 < y0:
            continue
        a = invcov[k, 0]
        b = invcov[k, 1]
        c = invcov[k, 2]
        op = opacities[k]
        for py in range(y0, y1 + 1):
            dy = (py + 0.5) - my
            for px in range(x0, x1 + 1):
                T = trans[py, px]
                if T < MIN_TRANSMITTANCE:
                    continue
                dx = (px + 0.5) - mx
                power = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy
                if power > 0.0:
                    power = 0.0
                alpha_eff = op * np.exp(power)
                if alpha_eff < MIN_ALPHA:
                    continue
                w = T * alpha_eff
                color[py, px, 0] += w * colors[k, 0]
                color[py, px, 1] += w * colors[k, 1]
                color[py, px, 2] += w * colors[k, 2]
                depth_acc[py, px] += w * depths[k]
                trans[py, px] = T * (1.0 - alpha_eff)
                last[py, px] = k
    return color, trans, depth_acc, last


@njit(cache=True)
def composite_backward(means2d, invcov, opacities, colors, radii, width, height,
                       trans_final, last, grad_color, grad_alpha):
    """Reverse sweep: per-gaussian grads of the composite w.r.t. screen-space
    quantities.  ``g_invcov`` is w.r.t. the inverse-covariance entries
    (a, b, c) with power = -(a dx^2 + 2 b dx dy + c dy^2)/2."""
    K = means2d.shape[0]
    g_color = np.zeros((K, 3))
    g_opacity = np.zeros(K)
    g_mean = np.zeros((K, 2))
    g_invcov = np.zeros((K, 3))
    trans_run = trans_final.copy()
    suffix_c = np.zeros((height, width, 3))
    suffix_a = np.zeros((height, width))
    for k in range(K - 1, -1, -1):
        mx = means2d[k, 0]
        my = means2d[k, 1]
        r = radii[k]
        x0 = int(max(0.0, np.floor(mx - r)))
        x1 = int(min(width - 1.0, np.ceil(mx + r)))
        y0 = int(max(0.0, np.floor(my - r)))
        y1 = int(min(height - 1.0, np.ceil(my + r)))
        if x1 < x0 or y1 < y0:
            continue
        a = invcov[k, 0]
        b = invcov[k, 1]
        c = invcov[k, 2]
        op = opacities[k]
        for py in range(y0, y1 + 1):
            dy = (py + 0.5) - my
            for px in range(x0, x1 + 1):
                if last[py, px] < k:
                    continue
                dx = (px + 0.5) - mx
                power = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy
                if power > 0.0:
                    power = 0.0
                gweight = np.exp(power)
                alpha_eff = op * gweight
                if alpha_eff < MIN_ALPHA:
                    continue
                om = 1.0 - alpha_eff
                t_before = trans_run[py, px] / om
                d_alpha_eff = 0.0
                for ch in range(3):
                    gc = grad_color[py, px, ch]
                    d_alpha_eff += gc * (t_before * colors[k, ch]
                                         - suffix_c[py, px, ch] / om)
                    g_color[k, ch] += gc * t_before * alpha_eff
                ga = grad_alpha[py, px]
                if ga != 0.0:
                    d_alpha_eff += ga * (t_before - suffix_a[py, px] / om)
                g_opacity[k] += d_alpha_eff * gweight
                cp = d_alpha_eff * alpha_eff  # dL/d(power)
                g_invcov[k, 0] += cp * (-0.5 * dx * dx)
                g_invcov[k, 1] += cp * (-dx * dy)
                g_invcov[k, 2] += cp * (-0.5 * dy * dy)
                g_mean[k, 0] += cp * (a * dx + b * dy)
                g_mean[k, 1] += cp * (c * dy + b * dx)
                w = t_before * alpha_eff
                for ch in range(3):
                    suffix_c[py, px, ch] += w * colors[k, ch]
                suffix_a[py, px] += w
                trans_run[py, px] = t_before
    return g_color, g_opacity, g_mean, g_invcov
