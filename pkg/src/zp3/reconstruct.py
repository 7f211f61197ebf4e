"""Coarse scene fitting and the iterative rotated-view refinement loop."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Protocol

import numpy as np

from .config import DensityConfig, LearningRates, RefineConfig, RunConfig
from .diffusion import (FusionWeights, NoiseSchedule, PriorBundle,
                        SampleOptions, make_schedule, sample)
from .errors import InvalidArgumentError, OptimizationFailureError
from .losses import composite_loss, masked_l2
from .metrics import psnr
from .priors import render_prior_source
from .splat.cloud import GaussianCloud, logit
from .splat.density import DensifyOptions, densify, prune
from .splat.render import CloudGrads, render, render_backward
from .views import Camera, ViewSpec, camera_from_spec, far_field_adapt

ORIGINAL = "original"
SUPERVISION = "supervision"


@dataclass
class Observation:
    """One training or evaluation view: image, mask, camera, orbit spec."""

    image: np.ndarray            # (H, W, 3) pixel domain
    mask: np.ndarray             # (H, W) in {0, 1}
    camera: Camera
    view_spec: ViewSpec
    view_id: str = ""
    kind: str = ORIGINAL
    loss_weight: float = 1.0

    def __post_init__(self):
        if self.mask.shape != self.image.shape[:2]:
            raise InvalidArgumentError("mask and image dimensions differ")


class PriorProvider(Protocol):
    """Builds the per-target-view prior bundle for supervision sampling."""

    def bundle_for(self, view: ViewSpec, cam: Camera,
                   lf_image: np.ndarray | None, batch_index: int) -> PriorBundle: ...


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

_GROUPS = ("positions", "log_scales", "rotations", "logit_opacities", "sh")


class CloudOptimizer:
    """Adam over the cloud's parameter groups with 3DGS-style learning rates.

    The position rate is scaled by the scene extent and decays exponentially
    over ``total_steps``; other groups use fixed rates.  Moment state follows
    densify/prune re-indexing (new gaussians start with zero moments).
    """

    def __init__(self, cloud: GaussianCloud, lrs: LearningRates,
                 total_steps: int, scene_extent: float,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-15):
        self.cloud = cloud
        self.lrs = lrs
        self.total_steps = max(total_steps, 1)
        self.scene_extent = max(scene_extent, 1e-6)
        self.betas = betas
        self.eps = eps
        self.t = 0
        self._m = {g: np.zeros_like(getattr(cloud, g)) for g in _GROUPS}
        self._v = {g: np.zeros_like(getattr(cloud, g)) for g in _GROUPS}

    def _lr(self, group: str) -> float:
        if group == "positions":
            frac = min(self.t / self.total_steps, 1.0)
            decay = self.lrs.position_final_fraction ** frac
            return self.lrs.position * self.scene_extent * decay
        return {"log_scales": self.lrs.scale, "rotations": self.lrs.rotation,
                "logit_opacities": self.lrs.opacity, "sh": self.lrs.sh}[group]

    def step(self, grads: CloudGrads):
        self.t += 1
        b1, b2 = self.betas
        corr1 = 1.0 - b1 ** self.t
        corr2 = 1.0 - b2 ** self.t
        for group in _GROUPS:
            g = getattr(grads, group)
            m = self._m[group]
            v = self._v[group]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = (m / corr1) / (np.sqrt(v / corr2) + self.eps)
            getattr(self.cloud, group)[...] -= self._lr(group) * update
        # keep the unit-quaternion invariant after every step
        q = self.cloud.rotations
        q /= np.linalg.norm(q, axis=1, keepdims=True)

    def reindex(self, keep_mask: np.ndarray, n_added: int):
        for group in _GROUPS:
            kept_m = self._m[group][keep_mask]
            kept_v = self._v[group][keep_mask]
            pad = (n_added,) + kept_m.shape[1:]
            self._m[group] = np.concatenate([kept_m, np.zeros(pad)])
            self._v[group] = np.concatenate([kept_v, np.zeros(pad)])


# ---------------------------------------------------------------------------
# Seeding
# ---------------------------------------------------------------------------


def init_cloud(observations: list[Observation], n_points: int, seed: int
               ) -> GaussianCloud:
    """Seed gaussians by back-projecting random masked pixels to the depth of
    the shared look-at centre, colouring them from the source pixels."""
    if not observations:
        raise InvalidArgumentError("need at least one observation")
    usable = [o for o in observations if np.any(o.mask > 0.5)]
    if not usable:
        raise InvalidArgumentError("all masks are empty")
    rng = np.random.default_rng(np.random.PCG64(seed))
    centre = np.mean([np.asarray(o.view_spec.target) for o in usable], axis=0)

    masked = []
    for o in usable:
        ys, xs = np.nonzero(o.mask > 0.5)
        masked.append((o, ys, xs))

    positions = np.empty((n_points, 3))
    colors = np.empty((n_points, 3))
    from .splat.sh import SH_C0
    for i in range(n_points):
        o, ys, xs = masked[rng.integers(len(masked))]
        j = rng.integers(len(ys))
        py, px = ys[j], xs[j]
        cam = o.camera
        d_cam = np.array([((px + 0.5) - cam.cx) / cam.fx,
                          ((py + 0.5) - cam.cy) / cam.fy, 1.0])
        d_world = cam.rotation.T @ d_cam
        d_world /= np.linalg.norm(d_world)
        C = cam.center
        t_centre = float(np.dot(centre - C, d_world))
        t_depth = t_centre * rng.uniform(0.8, 1.2)
        positions[i] = C + t_depth * d_world
        colors[i] = o.image[py, px]

    # isotropic scales from mean 3-nearest-neighbour distance
    d2 = np.sum((positions[:, None, :] - positions[None, :, :]) ** 2, axis=2)
    np.fill_diagonal(d2, np.inf)
    k = min(3, n_points - 1) if n_points > 1 else 1
    if n_points > 1:
        nn = np.sqrt(np.partition(d2, k - 1, axis=1)[:, :k]).mean(axis=1)
    else:
        nn = np.full(n_points, 0.1)
    nn = np.clip(nn, 1e-4, None)
    log_scales = np.log(nn)[:, None].repeat(3, axis=1)

    quats = np.zeros((n_points, 4))
    quats[:, 0] = 1.0
    sh = np.zeros((n_points, 9, 3))
    sh[:, 0, :] = (colors - 0.5) / SH_C0
    return GaussianCloud(positions=positions, log_scales=log_scales,
                         rotations=quats,
                         logit_opacities=np.full(n_points, float(logit(0.1))),
                         sh=sh)


# ---------------------------------------------------------------------------
# Optimization loops
# ---------------------------------------------------------------------------


def _view_loss_and_grads(cloud: GaussianCloud, obs: Observation, cfg: RunConfig,
                         coarse: bool) -> tuple[float, CloudGrads]:
    h, w = obs.image.shape[:2]
    out = render(cloud, obs.camera, w, h, dilation=cfg.render.dilation)
    if obs.kind == ORIGINAL:
        if coarse:
            loss, grad_c = masked_l2(out.color, obs.image, obs.mask)
        else:
            loss, grad_c = composite_loss(out.color, obs.image, obs.mask,
                                          lam=cfg.refine.lam,
                                          perceptual=cfg.refine.perceptual)
        aw = cfg.refine.alpha_loss_weight
        diff_a = out.alpha - obs.mask
        loss += aw * float(np.mean(diff_a * diff_a))
        grad_a = aw * 2.0 * diff_a / diff_a.size
    else:
        bg = np.asarray(cfg.render.background)
        full = out.color + (1.0 - out.alpha)[:, :, None] * bg[None, None, :]
        loss, grad_c = composite_loss(full, obs.image, obs.mask,
                                      lam=cfg.refine.lam,
                                      perceptual=cfg.refine.perceptual)
        grad_a = -np.einsum("ijc,c->ij", grad_c, bg)
    if obs.loss_weight != 1.0:
        loss *= obs.loss_weight
        grad_c = grad_c * obs.loss_weight
        grad_a = grad_a * obs.loss_weight
    grads = render_backward(cloud, obs.camera, w, h, grad_c, grad_a,
                            dilation=cfg.render.dilation)
    return loss, grads


def _optimize(cloud: GaussianCloud, train_set: list[Observation], steps: int,
              cfg: RunConfig, seed: int, densify_until: int,
              loss_history: list | None = None, coarse: bool = False
              ) -> GaussianCloud:
    """Shared optimization loop for coarse fitting and refinement batches."""
    if steps < 1:
        raise InvalidArgumentError("steps must be >= 1")
    if not train_set:
        raise InvalidArgumentError("empty training set")
    cloud = cloud.copy()
    rng = np.random.default_rng(np.random.PCG64(seed))
    opt = CloudOptimizer(cloud, cfg.refine.lrs, steps, cloud.extent())
    dens = cfg.refine.density
    grad_accum = np.zeros(len(cloud))
    visit_count = np.zeros(len(cloud))
    for step in range(steps):
        obs = train_set[step % len(train_set)]
        loss, grads = _view_loss_and_grads(cloud, obs, cfg, coarse)
        if not np.isfinite(loss):
            raise OptimizationFailureError(f"loss became non-finite at step {step}")
        if loss_history is not None:
            loss_history.append(loss)
        grad_accum += grads.screen_grad_norms
        visit_count += grads.visible
        opt.step(grads)

        due = (step + 1) % dens.interval == 0 and step + 1 < steps
        if due:
            if step + 1 <= densify_until:
                stats = np.where(visit_count > 0, grad_accum / np.maximum(visit_count, 1), 0.0)
                res = densify(cloud, stats,
                              DensifyOptions(grad_threshold=dens.grad_threshold,
                                             clone_scale_fraction=dens.clone_scale_fraction,
                                             split_factor=dens.split_factor),
                              rng=rng)
                cloud = res.cloud
                opt.cloud = cloud
                opt.reindex(res.keep_mask, res.n_added)
            cloud, keep = prune(cloud, dens.prune_opacity)
            opt.cloud = cloud
            opt.reindex(keep, 0)
            grad_accum = np.zeros(len(cloud))
            visit_count = np.zeros(len(cloud))
    return cloud


def coarse_fit(cloud: GaussianCloud, observations: list[Observation],
               steps: int, cfg: RunConfig, seed: int = 0,
               loss_history: list | None = None) -> GaussianCloud:
    """Masked photometric fit of the initial cloud (squared error plus a
    small accumulated-opacity-vs-mask term)."""
    history = loss_history if loss_history is not None else []
    out = _optimize(cloud, observations, steps, cfg, seed,
                    densify_until=min(steps, cfg.refine.densify_until),
                    loss_history=history, coarse=True)
    n = max(len(history) // 10, 1)
    if np.mean(history[-n:]) >= np.mean(history[:n]) and len(history) > 2 * n:
        raise OptimizationFailureError(
            "training loss did not decrease over the coarse fit")
    return out


def _worker_count() -> int:
    env = os.environ.get("ZP3_THREADS", "").strip()
    if env:
        return max(1, int(env))
    return min(4, os.cpu_count() or 1)


def _sample_view(args):
    (view, cam, lf_image, provider, batch_index, sched, weights, options,
     chain_seed) = args
    bundle = provider.bundle_for(view, cam, lf_image, batch_index)
    shape = lf_image.shape if lf_image is not None else None
    if shape is None:
        raise InvalidArgumentError("supervision sampling needs a render shape")
    img = sample(shape, bundle, sched, weights, chain_seed, options)
    return np.clip(img.to_pixel().data, 0.0, 1.0)


def refine(cloud: GaussianCloud, observations: list[Observation],
           cfg: RunConfig, provider: PriorProvider, seed: int,
           plan=None, batch_callback: Callable | None = None,
           start_batch: int = 0) -> GaussianCloud:
    """Iterative refinement: per plan batch, sample supervision images with
    the prior-fused chain and optimize against originals plus supervision."""
    from .views import make_rotation_plan

    if plan is None:
        p = cfg.plan
        plan = make_rotation_plan(p.theta0, p.delta_theta, p.delta_e,
                                  p.iterations, p.batch_size, p.elevations,
                                  radius=observations[0].view_spec.radius,
                                  target=observations[0].view_spec.target)
    sched = make_schedule(cfg.schedule.steps, cfg.schedule.kind)
    weights = FusionWeights(cfg.fusion.tau, cfg.fusion.sigma, cfg.fusion.eta)
    options = SampleOptions(canonical_ddim=cfg.sampler.canonical_ddim,
                            normalize_mvd=cfg.fusion.normalize,
                            invert_t=cfg.fusion.invert_t,
                            lf_enabled=cfg.sampler.lf_enabled,
                            noise_eta=cfg.sampler.noise_eta,
                            variance_compensation=cfg.sampler.variance_compensation,
                            vc_delta=cfg.sampler.vc_delta)
    ref_cam = observations[0].camera
    ref_w = observations[0].image.shape[1]
    sup_w, sup_h = cfg.render.width, cfg.render.height
    scale = sup_w / ref_w
    retained: list[Observation] = []

    current = cloud.copy()
    for batch_index, batch in enumerate(plan.batches):
        if batch_index < start_batch:
            continue
        try:
            cams = []
            for view in batch:
                cam = camera_from_spec(view, ref_cam.fx * scale, ref_cam.fy * scale,
                                       sup_w / 2.0, sup_h / 2.0)
                if cfg.render.far_field_enabled:
                    cam = far_field_adapt(cam, cfg.render.far_field_factor)
                cams.append(cam)
            lf_images = [render_prior_source(current, cam, sup_w, sup_h,
                                             cfg.render.background)
                         for cam in cams]
            jobs = []
            for vi, (view, cam, lf) in enumerate(zip(batch, cams, lf_images)):
                chain_seed = int(np.random.SeedSequence(
                    (seed, batch_index, vi)).generate_state(1)[0])
                jobs.append((view, cam, lf, provider, batch_index, sched,
                             weights, options, chain_seed))
            workers = _worker_count()
            if workers > 1 and len(jobs) > 1:
                with ThreadPoolExecutor(max_workers=workers) as pool:
                    images = list(pool.map(_sample_view, jobs))
            else:
                images = [_sample_view(j) for j in jobs]

            supervision = [Observation(image=img, mask=np.ones((sup_h, sup_w)),
                                       camera=cam, view_spec=view,
                                       view_id=f"batch{batch_index}_view{vi}",
                                       kind=SUPERVISION,
                                       loss_weight=cfg.refine.supervision_weight)
                           for vi, (img, cam, view) in enumerate(
                               zip(images, cams, batch))]
            train_set = list(observations) + retained + supervision
            if cfg.refine.retain_supervision:
                retained.extend(supervision)
            opt_seed = int(np.random.SeedSequence(
                (seed, batch_index, 0xD15)).generate_state(1)[0])
            current = _optimize(current, train_set, cfg.refine.steps_per_iteration,
                                cfg, opt_seed, cfg.refine.densify_until)
            if batch_callback is not None:
                batch_callback(batch_index, current, supervision)
        except Exception as exc:
            raise type(exc)(f"batch {batch_index}: {exc}") from exc
    return current


def masked_psnr_over(cloud: GaussianCloud, observations: list[Observation],
                     dilation: float = 0.3) -> float:
    """Mean masked PSNR of the cloud's renders against the observations."""
    vals = []
    for o in observations:
        h, w = o.image.shape[:2]
        out = render(cloud, o.camera, w, h, dilation=dilation)
        vals.append(psnr(out.color, o.image, o.mask))
    return float(np.mean(vals))
