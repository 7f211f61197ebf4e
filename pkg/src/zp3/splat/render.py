"""Differentiable CPU splatting: projection, compositing, parameter gradients.

The forward pass projects every gaussian to screen space (EWA-style:
cov2d = J W Sigma W^T J^T plus a small isotropic dilation), depth-sorts them
globally with index tie-breaks, and composites front to back.  The backward
pass returns gradients of the composited color (and optionally the
accumulated alpha) with respect to every stored scene parameter.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import InvalidArgumentError
from ..views import Camera
from . import backend
from .cloud import GaussianCloud, quat_to_rotation
from .sh import sh_basis, sh_basis_jacobian

DEFAULT_DILATION = 0.3
DEFAULT_NEAR = 0.01
# box radius: outside it alpha * exp(-q/2) < 1/255 for any alpha < 1
_RADIUS_Q = 2.0 * math.log(255.0)


@dataclass
class RenderOutput:
    color: np.ndarray   # (H, W, 3), composited over transparent black
    alpha: np.ndarray   # (H, W) accumulated opacity
    depth: np.ndarray   # (H, W) expected depth, 0 where nothing splats


@dataclass
class CloudGrads:
    positions: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    logit_opacities: np.ndarray
    sh: np.ndarray
    screen_grad_norms: np.ndarray  # |dL/d mean2d| per gaussian, densify stat
    visible: np.ndarray            # bool mask of gaussians that reached the kernel


@dataclass
class _RenderState:
    width: int
    height: int
    valid: np.ndarray        # indices of in-front gaussians, depth-sorted
    q_cam: np.ndarray        # (K, 3) camera-space positions
    means2d: np.ndarray      # (K, 2)
    cov2d: np.ndarray        # (K, 2, 2)
    invcov_abc: np.ndarray   # (K, 3) entries (a, b, c) of the inverse
    radii: np.ndarray        # (K,)
    depths: np.ndarray       # (K,)
    colors: np.ndarray       # (K, 3) clipped SH colors
    raw_colors: np.ndarray   # (K, 3) before clipping (for the clamp mask)
    opacities: np.ndarray    # (K,)
    view_dirs: np.ndarray    # (K, 3) unit, camera centre -> gaussian
    view_dists: np.ndarray   # (K,)
    basis: np.ndarray        # (K, 9)
    rot_w2c: np.ndarray      # (3, 3) world-to-camera rotation
    cov3d: np.ndarray        # (K, 3, 3)
    proj_J: np.ndarray       # (K, 2, 3) projection jacobian at q_cam
    proj_M: np.ndarray       # (K, 2, 3) = J @ W


def project(position: np.ndarray, log_scale: np.ndarray, rotation: np.ndarray,
            cam: Camera, dilation: float = DEFAULT_DILATION,
            near: float = DEFAULT_NEAR):
    """Screen-space footprint of one gaussian: (mean2d, cov2d, depth).

    Returns None when the gaussian is behind the near plane (culled).
    """
    q = cam.to_camera(position[None])[0]
    z = q[2]
    if z <= near:
        return None
    J = np.array([[cam.fx / z, 0.0, -cam.fx * q[0] / (z * z)],
                  [0.0, cam.fy / z, -cam.fy * q[1] / (z * z)]])
    W = cam.rotation
    R = quat_to_rotation(rotation[None])[0]
    s = np.exp(log_scale)
    N = R * s[None, :]
    cov3 = N @ N.T
    M = J @ W
    cov2 = M @ cov3 @ M.T + dilation * np.eye(2)
    mean2d = np.array([cam.fx * q[0] / z + cam.cx, cam.fy * q[1] / z + cam.cy])
    return mean2d, cov2, float(z)


def _prepare(cloud: GaussianCloud, cam: Camera, width: int, height: int,
             dilation: float, near: float) -> _RenderState:
    M = len(cloud)
    W = cam.rotation
    positions = cloud.positions
    q_all = cam.to_camera(positions) if M else np.zeros((0, 3))
    in_front = q_all[:, 2] > near if M else np.zeros(0, bool)
    idx = np.nonzero(in_front)[0]
    q = q_all[idx]
    order = np.argsort(q[:, 2], kind="stable")
    idx = idx[order]
    q = q[order]
    K = len(idx)

    z = q[:, 2]
    means2d = np.stack([cam.fx * q[:, 0] / z + cam.cx,
                        cam.fy * q[:, 1] / z + cam.cy], axis=1) if K else np.zeros((0, 2))

    J = np.zeros((K, 2, 3))
    if K:
        J[:, 0, 0] = cam.fx / z
        J[:, 1, 1] = cam.fy / z
        J[:, 0, 2] = -cam.fx * q[:, 0] / (z * z)
        J[:, 1, 2] = -cam.fy * q[:, 1] / (z * z)
    projM = J @ W[None]

    R = quat_to_rotation(cloud.rotations[idx]) if K else np.zeros((0, 3, 3))
    s = np.exp(cloud.log_scales[idx]) if K else np.zeros((0, 3))
    N = R * s[:, None, :]
    cov3 = N @ np.transpose(N, (0, 2, 1))
    cov2 = projM @ cov3 @ np.transpose(projM, (0, 2, 1))
    cov2[:, 0, 0] += dilation
    cov2[:, 1, 1] += dilation

    a = cov2[:, 0, 0]
    b = cov2[:, 0, 1]
    c = cov2[:, 1, 1]
    det = a * c - b * b
    inv_abc = np.stack([c / det, -b / det, a / det], axis=1) if K else np.zeros((0, 3))
    lam_max = (a + c) / 2.0 + np.sqrt(((a - c) / 2.0) ** 2 + b * b) if K else np.zeros(0)
    radii = np.sqrt(_RADIUS_Q * lam_max) if K else np.zeros(0)

    centre = cam.center
    offs = positions[idx] - centre[None]
    dists = np.linalg.norm(offs, axis=1)
    dirs = offs / dists[:, None] if K else np.zeros((0, 3))
    basis = sh_basis(dirs) if K else np.zeros((0, 9))
    raw = np.einsum("nk,nkc->nc", basis, cloud.sh[idx]) + 0.5 if K else np.zeros((0, 3))
    colors = np.clip(raw, 0.0, 1.0)
    opac = cloud.opacities[idx] if K else np.zeros(0)

    return _RenderState(width=width, height=height, valid=idx, q_cam=q,
                        means2d=means2d, cov2d=cov2, invcov_abc=inv_abc,
                        radii=radii, depths=z.copy(), colors=colors,
                        raw_colors=raw, opacities=opac, view_dirs=dirs,
                        view_dists=dists, basis=basis, rot_w2c=W,
                        cov3d=cov3, proj_J=J, proj_M=projM)


def _forward(state: _RenderState):
    kern = backend.get_kernels()
    return kern.composite_forward(
        np.ascontiguousarray(state.means2d), np.ascontiguousarray(state.invcov_abc),
        np.ascontiguousarray(state.opacities), np.ascontiguousarray(state.colors),
        np.ascontiguousarray(state.depths), np.ascontiguousarray(state.radii),
        state.width, state.height)


def _output(color, trans, depth_acc):
    alpha = 1.0 - trans
    depth = np.where(alpha > 0.0, depth_acc / np.maximum(alpha, 1e-12), 0.0)
    return RenderOutput(color=color, alpha=alpha, depth=depth)


def render(cloud: GaussianCloud, cam: Camera, width: int, height: int,
           dilation: float = DEFAULT_DILATION, near: float = DEFAULT_NEAR
           ) -> RenderOutput:
    """Composite the cloud into an image; deterministic for fixed inputs."""
    if width < 1 or height < 1:
        raise InvalidArgumentError("image dimensions must be >= 1")
    state = _prepare(cloud, cam, width, height, dilation, near)
    color, trans, depth_acc, _ = _forward(state)
    return _output(color, trans, depth_acc)


def render_reference(cloud: GaussianCloud, cam: Camera, width: int, height: int,
                     dilation: float = DEFAULT_DILATION, near: float = DEFAULT_NEAR
                     ) -> RenderOutput:
    """Naive full-sweep renderer: per pixel, every gaussian in depth order.

    No bounding-box culling; used as the oracle the optimized path must match.
    """
    state = _prepare(cloud, cam, width, height, dilation, near)
    K = len(state.valid)
    color = np.zeros((height, width, 3))
    trans = np.ones((height, width))
    depth_acc = np.zeros((height, width))
    abc = state.invcov_abc
    for py in range(height):
        for px in range(width):
            T = 1.0
            dx = (px + 0.5) - state.means2d[:, 0]
            dy = (py + 0.5) - state.means2d[:, 1]
            power = -0.5 * (abc[:, 0] * dx * dx + abc[:, 2] * dy * dy) - abc[:, 1] * dx * dy
            np.minimum(power, 0.0, out=power)
            alpha_eff = state.opacities * np.exp(power)
            for k in range(K):
                if T < 1e-4:
                    break
                ae = alpha_eff[k]
                if ae < 1.0 / 255.0:
                    continue
                w = T * ae
                color[py, px] += w * state.colors[k]
                depth_acc[py, px] += w * state.depths[k]
                T *= 1.0 - ae
            trans[py, px] = T
    return _output(color, trans, depth_acc)


# quaternion-derivative layout: d(rotation matrix)/d(w, x, y, z)
def _rotation_quat_jacobian(qn: np.ndarray) -> np.ndarray:
    """(K,4) unit quaternions -> (K,4,3,3) derivative matrices."""
    w, x, y, z = qn[:, 0], qn[:, 1], qn[:, 2], qn[:, 3]
    o = np.zeros_like(w)
    dRw = np.stack([o, -z, y, z, o, -x, -y, x, o], axis=1).reshape(-1, 3, 3)
    dRx = np.stack([o, y, z, y, -2 * x, -w, z, w, -2 * x], axis=1).reshape(-1, 3, 3)
    dRy = np.stack([-2 * y, x, w, x, o, z, -w, z, -2 * y], axis=1).reshape(-1, 3, 3)
    dRz = np.stack([-2 * z, -w, x, w, -2 * z, y, x, y, o], axis=1).reshape(-1, 3, 3)
    return 2.0 * np.stack([dRw, dRx, dRy, dRz], axis=1)


def render_backward(cloud: GaussianCloud, cam: Camera, width: int, height: int,
                    grad_color: np.ndarray, grad_alpha: np.ndarray | None = None,
                    dilation: float = DEFAULT_DILATION, near: float = DEFAULT_NEAR
                    ) -> CloudGrads:
    """Gradients of sum(grad_color * color) + sum(grad_alpha * alpha) w.r.t.
    every stored parameter.  Culled and non-contributing gaussians get zeros."""
    if grad_color.shape != (height, width, 3):
        raise InvalidArgumentError("grad_color must be (H, W, 3)")
    state = _prepare(cloud, cam, width, height, dilation, near)
    _, trans, _, last = _forward(state)
    if grad_alpha is None:
        grad_alpha = np.zeros((height, width))
    kern = backend.get_kernels()
    g_color, g_opacity, g_mean, g_invcov = kern.composite_backward(
        np.ascontiguousarray(state.means2d), np.ascontiguousarray(state.invcov_abc),
        np.ascontiguousarray(state.opacities), np.ascontiguousarray(state.colors),
        np.ascontiguousarray(state.radii), width, height,
        np.ascontiguousarray(trans), np.ascontiguousarray(last),
        np.ascontiguousarray(grad_color), np.ascontiguousarray(grad_alpha))

    M = len(cloud)
    grads = CloudGrads(
        positions=np.zeros((M, 3)), log_scales=np.zeros((M, 3)),
        rotations=np.zeros((M, 4)), logit_opacities=np.zeros(M),
        sh=np.zeros((M, 9, 3)), screen_grad_norms=np.zeros(M),
        visible=np.zeros(M, bool))
    K = len(state.valid)
    if K == 0:
        return grads
    idx = state.valid
    grads.visible[idx] = True
    grads.screen_grad_norms[idx] = np.linalg.norm(g_mean, axis=1)

    # inverse-covariance entries -> cov2d (A = Sigma2^-1, dL/dSigma2 = -A Ma A)
    A = np.zeros((K, 2, 2))
    A[:, 0, 0] = state.invcov_abc[:, 0]
    A[:, 0, 1] = A[:, 1, 0] = state.invcov_abc[:, 1]
    A[:, 1, 1] = state.invcov_abc[:, 2]
    Ma = np.zeros((K, 2, 2))
    Ma[:, 0, 0] = g_invcov[:, 0]
    Ma[:, 0, 1] = Ma[:, 1, 0] = g_invcov[:, 1] / 2.0
    Ma[:, 1, 1] = g_invcov[:, 2]
    g_cov2 = -A @ Ma @ A

    # cov2d = M cov3 M^T + dilation I
    projM = state.proj_M
    g_cov3 = np.transpose(projM, (0, 2, 1)) @ g_cov2 @ projM
    g_projM = 2.0 * g_cov2 @ projM @ state.cov3d
    g_J = g_projM @ state.rot_w2c.T[None]

    # camera-space position from the projection jacobian and the mean
    q = state.q_cam
    z = q[:, 2]
    g_q = np.einsum("kij,ki->kj", state.proj_J, g_mean)
    g_q[:, 0] += g_J[:, 0, 2] * (-cam.fx / (z * z))
    g_q[:, 1] += g_J[:, 1, 2] * (-cam.fy / (z * z))
    g_q[:, 2] += (g_J[:, 0, 0] * (-cam.fx / (z * z))
                  + g_J[:, 1, 1] * (-cam.fy / (z * z))
                  + g_J[:, 0, 2] * (2.0 * cam.fx * q[:, 0] / (z ** 3))
                  + g_J[:, 1, 2] * (2.0 * cam.fy * q[:, 1] / (z ** 3)))
    g_pos = g_q @ state.rot_w2c

    # view-dependent colour: clamp mask, SH coefficients, direction chain
    act = ((state.raw_colors > 0.0) & (state.raw_colors < 1.0)).astype(np.float64)
    gc_eff = g_color * act
    g_sh = state.basis[:, :, None] * gc_eff[:, None, :]
    g_basis = np.einsum("nkc,nc->nk", cloud.sh[idx], gc_eff)
    g_dir = np.einsum("nk,nkd->nd", g_basis, sh_basis_jacobian(state.view_dirs))
    nnT = state.view_dirs[:, :, None] * state.view_dirs[:, None, :]
    proj_perp = (np.eye(3)[None] - nnT) / state.view_dists[:, None, None]
    g_pos += np.einsum("nij,nj->ni", proj_perp, g_dir)

    # cov3 = N N^T with N = R diag(s)
    R = quat_to_rotation(cloud.rotations[idx])
    s = np.exp(cloud.log_scales[idx])
    N = R * s[:, None, :]
    g_N = 2.0 * g_cov3 @ N
    g_s = np.einsum("nji,nji->ni", g_N, R)
    g_log_s = g_s * s
    g_R = g_N * s[:, None, :]

    qn = cloud.rotations[idx]
    norms = np.linalg.norm(qn, axis=1, keepdims=True)
    qu = qn / norms
    dRdq = _rotation_quat_jacobian(qu)
    g_qunit = np.einsum("nqij,nij->nq", dRdq, g_R)
    proj_q = (np.eye(4)[None] - qu[:, :, None] * qu[:, None, :]) / norms[:, :, None]
    g_quat = np.einsum("nij,nj->ni", proj_q, g_qunit)

    sig = 1.0 / (1.0 + np.exp(-cloud.logit_opacities[idx]))
    # zero gradient where the opacity ceiling clipped the activation
    dsig = np.where(sig <= state.opacities, sig * (1.0 - sig), 0.0)
    g_logit = g_opacity * dsig

    grads.positions[idx] = g_pos
    grads.log_scales[idx] = g_log_s
    grads.rotations[idx] = g_quat
    grads.logit_opacities[idx] = g_logit
    grads.sh[idx] = g_sh
    return grads
