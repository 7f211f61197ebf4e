"""Procedural toy scenes: a colored gaussian-cluster object rendered from
every angle, plus the ground-truth-backed oracle provider that stands in for
a multi-view diffusion backbone on this data."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .diffusion import PriorBundle, NoiseSchedule, pixel_to_sampling
from .io_image import save_png
from .priors import GaussianMixtureOracle, single_gaussian_oracle
from .splat.cloud import GaussianCloud, logit, save_cloud
from .splat.render import render
from .splat.sh import SH_C0
from .views import (Camera, ViewSpec, camera_from_spec, classify_view,
                    make_input_set, pose_entry, save_poses)

DEFAULT_RADIUS = 2.2
DEFAULT_FOCAL_FRACTION = 1.4  # focal length as a fraction of image width


def make_gt_cloud(seed: int = 0, n_gaussians: int = 140) -> GaussianCloud:
    """A lobed, asymmetrically colored blob of gaussians around the origin."""
    rng = np.random.default_rng(np.random.PCG64(seed))
    u = rng.standard_normal((n_gaussians, 3))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    az = np.arctan2(u[:, 1], u[:, 0])
    el = np.arcsin(np.clip(u[:, 2], -1, 1))
    # lobed radius makes the silhouette azimuth-dependent
    r = 0.55 * (1.0 + 0.22 * np.sin(3.0 * az) * np.cos(2.0 * el)
                + 0.12 * np.cos(2.0 * az))
    positions = u * r[:, None] * rng.uniform(0.55, 1.0, (n_gaussians, 1))

    base_scale = rng.uniform(0.05, 0.11, (n_gaussians, 3))
    stretch = rng.integers(0, 3, n_gaussians)
    for i in range(n_gaussians):
        base_scale[i, stretch[i]] *= rng.uniform(1.3, 2.2)
    quats = rng.standard_normal((n_gaussians, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)

    # colour varies with azimuth and height so hidden faces differ from seen ones
    hue = (az + math.pi) / (2.0 * math.pi)
    colors = np.stack([
        0.25 + 0.7 * hue,
        0.3 + 0.5 * (positions[:, 2] / 0.6 + 0.5).clip(0, 1),
        0.85 - 0.6 * hue,
    ], axis=1).clip(0.05, 0.95)
    colors += rng.uniform(-0.08, 0.08, colors.shape)
    colors = colors.clip(0.05, 0.95)

    sh = np.zeros((n_gaussians, 9, 3))
    sh[:, 0, :] = (colors - 0.5) / SH_C0
    sh[:, 1:4, :] = rng.uniform(-0.04, 0.04, (n_gaussians, 3, 3))
    return GaussianCloud(
        positions=positions,
        log_scales=np.log(base_scale),
        rotations=quats,
        logit_opacities=np.full(n_gaussians, float(logit(0.92))),
        sh=sh,
    )


def _toy_camera(view: ViewSpec, width: int, height: int) -> Camera:
    f = DEFAULT_FOCAL_FRACTION * width
    return camera_from_spec(view, f, f, width / 2.0, height / 2.0)


def write_dataset(out_dir: str | Path, seed: int = 0, width: int = 64,
                  height: int = 64, n_azimuths: int = 16,
                  elevations: tuple[float, ...] = (0.0,),
                  observed_range: tuple[float, float] = (0.0, 90.0),
                  radius: float = DEFAULT_RADIUS,
                  background: tuple[float, float, float] = (1.0, 1.0, 1.0),
                  n_gaussians: int = 140) -> Path:
    """Render the toy object all the way around and write a dataset directory.

    Views inside ``observed_range`` act as the partial observations; the rest
    are ground truth for evaluation.  The generating cloud is stored next to
    the images so oracle predictors can render it at any viewpoint.
    """
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    gt = make_gt_cloud(seed=seed, n_gaussians=n_gaussians)
    bg = np.asarray(background)

    entries = []
    idx = 0
    for elevation in elevations:
        for k in range(n_azimuths):
            azimuth = 360.0 * k / n_azimuths
            view = ViewSpec(azimuth=azimuth, elevation=elevation, radius=radius)
            cam = _toy_camera(view, width, height)
            r = render(gt, cam, width, height)
            image = r.color + (1.0 - r.alpha)[:, :, None] * bg[None, None, :]
            mask = (r.alpha > 0.5).astype(np.float64)
            stem = f"view_{idx:03d}"
            save_png(out / "images" / f"{stem}.png", image)
            save_png(out / "masks" / f"{stem}.png", mask)
            entries.append(pose_entry(f"{stem}.png", cam))
            idx += 1
    save_poses(out / "poses.json", entries)
    save_cloud(out / "gt_cloud.zp3g", gt)
    meta = {
        "observed_range": list(observed_range),
        "elevations": list(elevations),
        "scene_scale": 1.0,
        "target": [0.0, 0.0, 0.0],
        "gt_cloud": "gt_cloud.zp3g",
        "width": width,
        "height": height,
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return out


def _bilinear_upsample(field: np.ndarray, height: int, width: int) -> np.ndarray:
    """(h0, w0, C) -> (height, width, C) bilinear resize."""
    h0, w0 = field.shape[:2]
    ys = np.linspace(0.0, h0 - 1.0, height)
    xs = np.linspace(0.0, w0 - 1.0, width)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h0 - 1)
    x1 = np.minimum(x0 + 1, w0 - 1)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    top = field[y0][:, x0] * (1 - fx) + field[y0][:, x1] * fx
    bot = field[y1][:, x0] * (1 - fx) + field[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def smooth_field(shape: tuple[int, int, int], rng: np.random.Generator,
                 amplitude: float, cells: int = 5) -> np.ndarray:
    """Zero-mean smooth random colour field (sampling-domain units)."""
    h, w, c = shape
    coarse = rng.standard_normal((cells, cells, c))
    coarse -= coarse.mean(axis=(0, 1), keepdims=True)
    return amplitude * _bilinear_upsample(coarse, h, w)


@dataclass
class ToyOracleProvider:
    """Per-view MVD stand-in built from ground-truth renders.

    Each conditioning view predicts the ground-truth render of the target
    corrupted by its own smooth perturbation field (fields are independent
    across conditioning views and resampled per batch, modelling cross-view
    generation inconsistency).  With ``distractor_weight`` > 0 the oracle
    becomes a two-mode mixture whose second mode is the bare background:
    chains that commit to it erase the object, reproducing the
    consensus-collapse failure that geometry guidance is meant to prevent.
    Fusion weights come from the angular distance between the conditioning
    view and the target.
    """

    gt_cloud: GaussianCloud
    cond_views: list[ViewSpec]
    schedule: NoiseSchedule
    width: int
    height: int
    background: tuple[float, float, float] = (1.0, 1.0, 1.0)
    std: float = 0.1
    perturbation: float = 0.35
    distractor_weight: float = 0.0
    seed: int = 0

    def gt_sampling_image(self, cam: Camera) -> np.ndarray:
        out = render(self.gt_cloud, cam, self.width, self.height)
        bg = np.asarray(self.background)
        img = out.color + (1.0 - out.alpha)[:, :, None] * bg[None, None, :]
        return pixel_to_sampling(img)

    def bundle_for(self, view: ViewSpec, cam: Camera,
                   lf_image: np.ndarray | None, batch_index: int) -> PriorBundle:
        gt = self.gt_sampling_image(cam)
        background = np.broadcast_to(
            pixel_to_sampling(np.asarray(self.background))[None, None, :],
            gt.shape).copy()
        mvd = []
        for ci, cond in enumerate(self.cond_views):
            rng = np.random.default_rng(np.random.PCG64(np.random.SeedSequence(
                (self.seed, batch_index, int(round(view.azimuth * 8.0)),
                 int(round(view.elevation * 8.0)), ci))))
            mean = gt + smooth_field(gt.shape, rng, self.perturbation)
            if self.distractor_weight > 0.0:
                predictor = GaussianMixtureOracle(
                    means=[mean, background], stds=[self.std, self.std],
                    weights=[1.0 - self.distractor_weight, self.distractor_weight],
                    schedule=self.schedule)
            else:
                predictor = single_gaussian_oracle(mean, self.std, self.schedule)
            weight = classify_view(cond, view.azimuth)
            mvd.append((predictor, weight, f"cond{ci}"))
        return PriorBundle(mvd=mvd, lf_image=lf_image, hf=None)


def toy_provider_for_dataset(gt_cloud: GaussianCloud,
                             observed_range: tuple[float, float],
                             schedule: NoiseSchedule, width: int, height: int,
                             background=(1.0, 1.0, 1.0), std: float = 0.1,
                             perturbation: float = 0.35,
                             distractor_weight: float = 0.0, seed: int = 0,
                             radius: float = DEFAULT_RADIUS) -> ToyOracleProvider:
    cond = make_input_set(observed_range, 3, radius=radius)
    return ToyOracleProvider(gt_cloud=gt_cloud, cond_views=cond,
                             schedule=schedule, width=width, height=height,
                             background=background, std=std,
                             perturbation=perturbation,
                             distractor_weight=distractor_weight, seed=seed)
