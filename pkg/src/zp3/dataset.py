"""Dataset directory layout: images/*.png, masks/*.png, poses.json, meta.json."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DatasetError
from .io_image import load_png
from .metrics import in_observed_range
from .reconstruct import Observation
from .views import camera_from_entry, load_poses, spec_from_camera


@dataclass
class Dataset:
    root: Path
    observations: list[Observation]   # every view in the directory
    observed_range: tuple[float, float]
    elevations: tuple[float, ...]
    scene_scale: float
    target: tuple[float, float, float]
    gt_cloud_path: Path | None

    def training_views(self) -> list[Observation]:
        return [o for o in self.observations
                if in_observed_range(o.view_spec.azimuth, self.observed_range)]


def load_dataset(root: str | Path) -> Dataset:
    root = Path(root)
    meta_path = root / "meta.json"
    poses_path = root / "poses.json"
    for p in (meta_path, poses_path, root / "images", root / "masks"):
        if not p.exists():
            raise DatasetError(f"dataset is missing {p.name}")
    meta = json.loads(meta_path.read_text())
    observed_range = tuple(meta["observed_range"])
    span = (observed_range[1] - observed_range[0]) % 360.0
    if span == 0.0 and observed_range[0] != observed_range[1]:
        span = 360.0
    if not (0.0 < span <= 360.0) and observed_range[0] == observed_range[1]:
        raise DatasetError("observed_range span must lie in (0, 360]")
    target = tuple(meta.get("target", (0.0, 0.0, 0.0)))

    observations = []
    for entry in load_poses(poses_path):
        stem = Path(entry["file"]).stem
        img_path = root / "images" / f"{stem}.png"
        mask_path = root / "masks" / f"{stem}.png"
        if not img_path.exists():
            raise DatasetError(f"missing image for view {stem}")
        if not mask_path.exists():
            raise DatasetError(f"missing mask for view {stem}")
        cam = camera_from_entry(entry)
        image = load_png(img_path)
        mask = (load_png(mask_path) > 0.5).astype(np.float64)
        if mask.shape != image.shape[:2]:
            raise DatasetError(f"mask/image size mismatch for view {stem}")
        spec = spec_from_camera(cam, np.asarray(target))
        observations.append(Observation(image=image, mask=mask, camera=cam,
                                        view_spec=spec, view_id=stem))
    if not observations:
        raise DatasetError("dataset has no views")
    observations.sort(key=lambda o: o.view_id)

    gt_rel = meta.get("gt_cloud")
    gt_path = (root / gt_rel) if gt_rel else None
    if gt_path is not None and not gt_path.exists():
        raise DatasetError(f"meta names gt_cloud {gt_rel} but it does not exist")
    return Dataset(root=root, observations=observations,
                   observed_range=(float(observed_range[0]), float(observed_range[1])),
                   elevations=tuple(meta.get("elevations", (0.0,))),
                   scene_scale=float(meta.get("scene_scale", 1.0)),
                   target=target, gt_cloud_path=gt_path)
