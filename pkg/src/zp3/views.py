"""Camera model, view classification and rotated-view planning.

Coordinate conventions (fixed here, used everywhere):
  * world: right-handed, +z up; azimuth theta measured in the xy plane from
    +x toward +y; elevation phi from the xy plane toward +z.
  * camera: x right, y down, z forward (looking direction); the
    world-to-camera transform is q = R @ (p - C) stored as (R, t) with
    t = -R @ C.
  * pixels: u = fx * qx / qz + cx, v = fy * qy / qz + cy.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError

PERSPECTIVE = "perspective"
FAR_FIELD = "far-field"


def normalize_angle(deg: float) -> float:
    """Wrap an angle to [0, 360)."""
    return float(deg % 360.0)


def angular_distance(a: float, b: float) -> float:
    """Smallest absolute difference between two azimuths, in [0, 180]."""
    d = abs(a - b) % 360.0
    return min(d, 360.0 - d)


@dataclass(frozen=True)
class ViewSpec:
    """Orbit coordinates of a viewpoint around a look-at target."""

    azimuth: float
    elevation: float = 0.0
    radius: float = 2.0
    target: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not (-90.0 <= self.elevation <= 90.0):
            raise InvalidArgumentError("elevation must lie in [-90, 90]")
        if self.radius <= 0.0:
            raise InvalidArgumentError("radius must be > 0")
        object.__setattr__(self, "azimuth", normalize_angle(self.azimuth))

    def position(self) -> np.ndarray:
        th = math.radians(self.azimuth)
        ph = math.radians(self.elevation)
        offset = np.array([
            math.cos(ph) * math.cos(th),
            math.cos(ph) * math.sin(th),
            math.sin(ph),
        ])
        return np.asarray(self.target, dtype=np.float64) + self.radius * offset


@dataclass(frozen=True)
class Camera:
    """Pinhole intrinsics plus a world-to-camera rigid transform."""

    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray      # 3x3, rows = camera axes in world coordinates
    translation: np.ndarray   # 3, t = -R @ C
    projection: str = PERSPECTIVE
    focus_distance: float | None = None  # camera-space z of the look-at target

    def __post_init__(self):
        if self.fx <= 0.0 or self.fy <= 0.0:
            raise InvalidArgumentError("focal lengths must be > 0")
        R = np.asarray(self.rotation, dtype=np.float64)
        if R.shape != (3, 3):
            raise InvalidArgumentError("rotation must be 3x3")
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-6):
            raise InvalidArgumentError("rotation must be orthonormal")
        if np.linalg.det(R) < 0.0:
            raise InvalidArgumentError("rotation must have det +1")

    @property
    def center(self) -> np.ndarray:
        """Camera position in world coordinates."""
        return -self.rotation.T @ self.translation

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        """World points (N,3) -> camera coordinates (N,3)."""
        return points @ self.rotation.T + self.translation

    def project_points(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """World points (N,3) -> pixel coordinates (N,2) and depths (N)."""
        q = self.to_camera(np.atleast_2d(points))
        z = q[:, 2]
        u = self.fx * q[:, 0] / z + self.cx
        v = self.fy * q[:, 1] / z + self.cy
        return np.stack([u, v], axis=1), z


def camera_from_spec(spec: ViewSpec, fx: float, fy: float, cx: float, cy: float) -> Camera:
    """Place a camera on the orbit defined by ``spec``, looking at its target."""
    pos = spec.position()
    target = np.asarray(spec.target, dtype=np.float64)
    forward = target - pos
    dist = np.linalg.norm(forward)
    if dist <= 0.0:
        raise InvalidArgumentError("camera position coincides with the target")
    forward = forward / dist
    up = np.array([0.0, 0.0, 1.0])
    right = np.cross(forward, up)
    nr = np.linalg.norm(right)
    if nr < 1e-12:  # looking straight up/down: pick a stable right axis
        right = np.array([math.sin(math.radians(spec.azimuth)),
                          -math.cos(math.radians(spec.azimuth)), 0.0])
        nr = 1.0
    right = right / nr
    down = np.cross(forward, right)
    R = np.stack([right, down, forward], axis=0)
    t = -R @ pos
    return Camera(fx=fx, fy=fy, cx=cx, cy=cy, rotation=R, translation=t,
                  focus_distance=float(dist))


def far_field_adapt(cam: Camera, factor: float) -> Camera:
    """Back the camera off along its viewing axis by ``factor`` while scaling
    the focal lengths so the look-at target keeps its projected size."""
    if factor < 1.0:
        raise InvalidArgumentError("factor must be >= 1")
    if cam.focus_distance is None:
        raise InvalidArgumentError("camera has no recorded look-at distance")
    d = cam.focus_distance
    # move the camera centre backwards along its forward axis in world space
    forward_world = cam.rotation[2]
    new_center = cam.center - forward_world * d * (factor - 1.0)
    new_t = -cam.rotation @ new_center
    return Camera(fx=cam.fx * factor, fy=cam.fy * factor, cx=cam.cx, cy=cam.cy,
                  rotation=cam.rotation.copy(), translation=new_t,
                  projection=FAR_FIELD, focus_distance=d * factor)


FRONTAL_WEIGHT = 2.0
BACK_WEIGHT = 1.5
SIDE_WEIGHT = 1.0
FRONTAL_MAX_DEG = 45.0
BACK_MIN_DEG = 135.0


def classify_view(candidate: ViewSpec | float, reference_azimuth: float,
                  frontal_max: float = FRONTAL_MAX_DEG,
                  back_min: float = BACK_MIN_DEG) -> float:
    """Fusion weight of a conditioning view relative to a reference azimuth:
    frontal (within 45 deg) -> 2.0, back (135 deg or more) -> 1.5, else 1.0."""
    az = candidate.azimuth if isinstance(candidate, ViewSpec) else float(candidate)
    d = angular_distance(az, reference_azimuth)
    if d <= frontal_max:
        return FRONTAL_WEIGHT
    if d >= back_min:
        return BACK_WEIGHT
    return SIDE_WEIGHT


INPUT_SEPARATION_DEG = 45.0


def make_input_set(visible_range: tuple[float, float], count: int,
                   radius: float = 2.0,
                   target: tuple[float, float, float] = (0.0, 0.0, 0.0)
                   ) -> list[ViewSpec]:
    """Conditioning views at 45 degree separation centred in the visible range."""
    if count not in (2, 3):
        raise InvalidArgumentError("count must be 2 or 3")
    start, end = visible_range
    span = (end - start) % 360.0
    if span == 0.0 and end != start:
        span = 360.0
    width = (count - 1) * INPUT_SEPARATION_DEG
    if span < width:
        raise InvalidArgumentError(
            f"visible range spans {span} deg, need at least {width}")
    first = start + (span - width) / 2.0
    return [ViewSpec(azimuth=first + i * INPUT_SEPARATION_DEG, elevation=0.0,
                     radius=radius, target=target) for i in range(count)]


@dataclass(frozen=True)
class RotationPlan:
    """Ordered batches of supervision viewpoints for iterative refinement."""

    batches: tuple
    theta0: float
    delta_theta: float
    delta_e: float
    batch_size: int

    def all_azimuths(self) -> np.ndarray:
        return np.array([v.azimuth for batch in self.batches for v in batch])


def make_rotation_plan(theta0: float, delta_theta: float, delta_e: float,
                       iterations: int, batch_size: int,
                       elevations: tuple[float, ...] = (0.0,),
                       radius: float = 2.0,
                       target: tuple[float, float, float] = (0.0, 0.0, 0.0)
                       ) -> RotationPlan:
    """Batch k places ``batch_size`` evenly spaced azimuths rooted at
    theta0 + (-1)^k * ceil(k/2) * delta_e (alternating-direction offsets),
    replicated at every requested elevation."""
    if iterations < 1:
        raise InvalidArgumentError("iterations must be >= 1")
    if batch_size < 1:
        raise InvalidArgumentError("batch_size must be >= 1")
    if delta_theta <= 0.0:
        raise InvalidArgumentError("delta_theta must be > 0")
    if not elevations:
        raise InvalidArgumentError("need at least one elevation")
    spacing = 360.0 / batch_size
    batches = []
    for k in range(iterations):
        offset = ((-1) ** k) * math.ceil(k / 2) * delta_e
        base = theta0 + offset
        batch = [ViewSpec(azimuth=base + m * spacing, elevation=e,
                          radius=radius, target=target)
                 for m in range(batch_size) for e in elevations]
        batches.append(tuple(batch))
    return RotationPlan(batches=tuple(batches), theta0=theta0,
                        delta_theta=delta_theta, delta_e=delta_e,
                        batch_size=batch_size)


def max_coverage_gap(azimuths: np.ndarray) -> float:
    """Largest nearest-neighbour gap of a set of azimuths on the circle."""
    az = np.sort(np.unique(np.mod(azimuths, 360.0)))
    if len(az) < 2:
        return 360.0
    gaps = np.diff(az)
    wrap = az[0] + 360.0 - az[-1]
    return float(max(gaps.max(), wrap))


# ---------------------------------------------------------------------------
# Pose file I/O
# ---------------------------------------------------------------------------


def pose_entry(file: str, cam: Camera) -> dict:
    return {
        "file": file,
        "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
        "rotation": [[float(v) for v in row] for row in cam.rotation],
        "translation": [float(v) for v in cam.translation],
    }


def camera_from_entry(entry: dict) -> Camera:
    return Camera(
        fx=float(entry["fx"]), fy=float(entry["fy"]),
        cx=float(entry["cx"]), cy=float(entry["cy"]),
        rotation=np.array(entry["rotation"], dtype=np.float64),
        translation=np.array(entry["translation"], dtype=np.float64),
    )


def save_poses(path: str | Path, entries: list[dict]):
    Path(path).write_text(json.dumps({"views": entries}, indent=2, sort_keys=True))


def load_poses(path: str | Path) -> list[dict]:
    doc = json.loads(Path(path).read_text())
    return doc["views"]


def spec_from_camera(cam: Camera, target: np.ndarray) -> ViewSpec:
    """Recover orbit coordinates of a camera relative to a look-at target."""
    offset = cam.center - np.asarray(target, dtype=np.float64)
    r = float(np.linalg.norm(offset))
    if r <= 0.0:
        raise InvalidArgumentError("camera sits on the target")
    elevation = math.degrees(math.asin(np.clip(offset[2] / r, -1.0, 1.0)))
    azimuth = math.degrees(math.atan2(offset[1], offset[0]))
    return ViewSpec(azimuth=azimuth, elevation=elevation, radius=r,
                    target=tuple(np.asarray(target, dtype=np.float64)))
