"""Adaptive density control: clone/split on gradient pressure, prune on opacity."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidArgumentError
from .cloud import GaussianCloud

DEFAULT_GRAD_THRESHOLD = 2e-4
DEFAULT_CLONE_SCALE_FRACTION = 0.01   # of scene extent: below -> clone, above -> split
DEFAULT_SPLIT_FACTOR = 1.6
DEFAULT_PRUNE_OPACITY = 0.005


@dataclass
class DensifyOptions:
    grad_threshold: float = DEFAULT_GRAD_THRESHOLD
    clone_scale_fraction: float = DEFAULT_CLONE_SCALE_FRACTION
    split_factor: float = DEFAULT_SPLIT_FACTOR
    scene_extent: float | None = None  # defaults to the cloud's own extent


@dataclass
class DensifyResult:
    cloud: GaussianCloud
    keep_mask: np.ndarray   # original gaussians that survived in place
    n_added: int            # gaussians appended after the survivors


def densify(cloud: GaussianCloud, grad_stats: np.ndarray,
            opts: DensifyOptions = DensifyOptions(),
            rng: np.random.Generator | None = None) -> DensifyResult:
    """Clone small / split large gaussians whose mean screen-space positional
    gradient norm exceeds the threshold.

    Split children sample their positions from the parent's own distribution,
    so a generator is required whenever a split can trigger (seeded by the
    caller for determinism).
    """
    M = len(cloud)
    if grad_stats.shape != (M,):
        raise InvalidArgumentError("grad_stats must align with the cloud")
    extent = opts.scene_extent if opts.scene_extent is not None else cloud.extent()
    if extent <= 0.0:
        extent = 1.0
    hot = grad_stats > opts.grad_threshold
    max_scale = cloud.scales.max(axis=1)
    small = max_scale < opts.clone_scale_fraction * extent
    clone_mask = hot & small
    split_mask = hot & ~small

    keep_mask = ~split_mask  # split parents are replaced by their children
    parts = [cloud.select(keep_mask)]
    n_added = 0

    if np.any(clone_mask):
        parts.append(cloud.select(clone_mask))
        n_added += int(clone_mask.sum())

    if np.any(split_mask):
        if rng is None:
            raise InvalidArgumentError("splitting requires a random generator")
        parents = cloud.select(split_mask)
        n_parents = len(parents)
        from .cloud import quat_to_rotation
        R = quat_to_rotation(parents.rotations)
        s = parents.scales
        children = []
        for _ in range(2):
            local = rng.standard_normal((n_parents, 3)) * s
            offset = np.einsum("nij,nj->ni", R, local)
            children.append(GaussianCloud(
                positions=parents.positions + offset,
                log_scales=parents.log_scales - np.log(opts.split_factor),
                rotations=parents.rotations.copy(),
                logit_opacities=parents.logit_opacities.copy(),
                sh=parents.sh.copy(),
            ))
        for ch in children:
            parts.append(ch)
        n_added += 2 * n_parents

    out = parts[0]
    for p in parts[1:]:
        out = GaussianCloud.concatenate(out, p)
    return DensifyResult(cloud=out, keep_mask=keep_mask, n_added=n_added)


def prune(cloud: GaussianCloud, opacity_threshold: float = DEFAULT_PRUNE_OPACITY
          ) -> tuple[GaussianCloud, np.ndarray]:
    """Drop gaussians with opacity below the threshold; returns the keep mask."""
    if not (0.0 <= opacity_threshold < 1.0):
        raise InvalidArgumentError("opacity threshold must lie in [0, 1)")
    keep = cloud.opacities >= opacity_threshold
    return cloud.select(keep), keep
