"""Finite-difference oracles for the renderer's parameter gradients."""
import numpy as np
import pytest

from conftest import random_cloud
from zp3.splat.render import render, render_backward
from zp3.views import ViewSpec, camera_from_spec

GROUPS = ("positions", "log_scales", "rotations", "logit_opacities", "sh")


def flat_view(cloud, name):
    arr = getattr(cloud, name)
    return arr.reshape(len(cloud), -1)


def fd_gradients(cloud, cam, w, h, gc, ga, name, step=1e-5):
    base = flat_view(cloud, name)
    fd = np.zeros_like(base)

    def loss(c):
        out = render(c, cam, w, h)
        return float(np.sum(gc * out.color) + np.sum(ga * out.alpha))

    for k in range(base.shape[0]):
        for j in range(base.shape[1]):
            c2 = cloud.copy()
            v = flat_view(c2, name)
            v[k, j] += step
            lp = loss(c2)
            v[k, j] -= 2 * step
            lm = loss(c2)
            fd[k, j] = (lp - lm) / (2 * step)
    return fd


def rel_err(a, b):
    num = np.linalg.norm(a - b)
    return num / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)


@pytest.mark.parametrize("seed", range(4))
def test_all_parameter_gradients_match_fd(seed):
    rng = np.random.default_rng(100 + seed)
    cloud = random_cloud(rng, 6, spread=0.5)
    cam = camera_from_spec(ViewSpec(float(rng.uniform(0, 360)),
                                    float(rng.uniform(-45, 45)), 2.5),
                           18, 18, 7, 7)
    w = h = 14
    gc = rng.standard_normal((h, w, 3))
    ga = rng.standard_normal((h, w))
    grads = render_backward(cloud, cam, w, h, gc, ga)
    for name in GROUPS:
        analytic = flat_view(grads, name) if name != "logit_opacities" else \
            grads.logit_opacities.reshape(-1, 1)
        cloud_flat = flat_view(cloud, name) if name != "logit_opacities" else None
        fd = fd_gradients(cloud, cam, w, h, gc, ga, name)
        if name == "logit_opacities":
            fd = fd.reshape(-1, 1)
        tol = 1e-3 if name in ("logit_opacities", "sh") else 1e-2
        err = rel_err(analytic, fd)
        assert err < tol, f"{name}: rel err {err:.2e} (seed {seed})"


def test_color_only_upstream(rng):
    cloud = random_cloud(rng, 4)
    cam = camera_from_spec(ViewSpec(10.0, 5.0, 2.5), 16, 16, 6, 6)
    gc = rng.standard_normal((12, 12, 3))
    grads = render_backward(cloud, cam, 12, 12, gc)
    fd = fd_gradients(cloud, cam, 12, 12, gc, np.zeros((12, 12)), "positions")
    assert rel_err(grads.positions.reshape(len(cloud), -1), fd) < 1e-2


def test_zero_upstream_gives_zero_gradients(rng):
    cloud = random_cloud(rng, 5)
    cam = camera_from_spec(ViewSpec(0.0, 0.0, 2.5), 16, 16, 8, 8)
    grads = render_backward(cloud, cam, 16, 16, np.zeros((16, 16, 3)))
    for name in GROUPS:
        assert np.all(getattr(grads, name) == 0.0)


def test_culled_gaussians_get_zero_gradient(rng):
    cloud = random_cloud(rng, 3)
    cloud.positions[1] = [10.0, 0.0, 0.0]  # far outside every view frustum
    cam = camera_from_spec(ViewSpec(180.0, 0.0, 2.5), 16, 16, 8, 8)
    gc = rng.standard_normal((16, 16, 3))
    grads = render_backward(cloud, cam, 16, 16, gc)
    assert np.all(grads.positions[1] == 0.0)
    assert not grads.visible[1]
