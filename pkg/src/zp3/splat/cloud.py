"""Gaussian scene representation and its serialization.

Parameters are stored in unconstrained form for optimization: scales as
logs, opacities as logits.  Conversions happen at the property boundary.
Quaternions are stored (w, x, y, z) and normalized where consumed.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import InvalidArgumentError
from .sh import N_COEFFS

CLOUD_MAGIC = b"ZP3G"
CLOUD_VERSION = 1
_FLOATS_PER_GAUSSIAN = 3 + 3 + 4 + 1 + N_COEFFS * 3

_OPACITY_CEIL = 1.0 - 1e-7


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p / (1.0 - p))


def quat_to_rotation(q: np.ndarray) -> np.ndarray:
    """Unit quaternions (N,4) wxyz -> rotation matrices (N,3,3)."""
    q = np.atleast_2d(q)
    n = np.linalg.norm(q, axis=1, keepdims=True)
    w, x, y, z = (q / n).T
    R = np.empty((q.shape[0], 3, 3), dtype=np.float64)
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R


@dataclass
class GaussianCloud:
    """Struct-of-arrays Gaussian scene: M gaussians."""

    positions: np.ndarray         # (M, 3)
    log_scales: np.ndarray        # (M, 3)
    rotations: np.ndarray         # (M, 4) wxyz
    logit_opacities: np.ndarray   # (M,)
    sh: np.ndarray                # (M, 9, 3)

    def __post_init__(self):
        M = self.positions.shape[0]
        for name, arr, shape in (
            ("positions", self.positions, (M, 3)),
            ("log_scales", self.log_scales, (M, 3)),
            ("rotations", self.rotations, (M, 4)),
            ("logit_opacities", self.logit_opacities, (M,)),
            ("sh", self.sh, (M, N_COEFFS, 3)),
        ):
            if arr.shape != shape:
                raise InvalidArgumentError(f"{name} has shape {arr.shape}, want {shape}")

    def __len__(self):
        return self.positions.shape[0]

    @property
    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    @property
    def opacities(self) -> np.ndarray:
        return np.minimum(sigmoid(self.logit_opacities), _OPACITY_CEIL)

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Axis-aligned bounding box of the positions."""
        if len(self) == 0:
            z = np.zeros(3)
            return z, z
        return self.positions.min(axis=0), self.positions.max(axis=0)

    def extent(self) -> float:
        """Scene extent: diagonal of the position bounding box."""
        lo, hi = self.bounds
        return float(np.linalg.norm(hi - lo))

    def normalized_rotations(self) -> np.ndarray:
        n = np.linalg.norm(self.rotations, axis=1, keepdims=True)
        return self.rotations / n

    def copy(self) -> "GaussianCloud":
        return GaussianCloud(self.positions.copy(), self.log_scales.copy(),
                             self.rotations.copy(), self.logit_opacities.copy(),
                             self.sh.copy())

    def validate(self):
        """Check the scene invariants; raise InvalidArgumentError on violation."""
        if not np.all(np.isfinite(self.positions)):
            raise InvalidArgumentError("non-finite positions")
        if not np.all(np.isfinite(self.log_scales)):
            raise InvalidArgumentError("non-finite scales")
        norms = np.linalg.norm(self.rotations, axis=1)
        if np.any(norms <= 0.0) or not np.all(np.isfinite(norms)):
            raise InvalidArgumentError("degenerate quaternion")
        op = self.opacities
        if np.any(op <= 0.0) or np.any(op >= 1.0):
            raise InvalidArgumentError("opacity outside (0, 1)")

    @staticmethod
    def empty() -> "GaussianCloud":
        return GaussianCloud(np.zeros((0, 3)), np.zeros((0, 3)),
                             np.zeros((0, 4)), np.zeros((0,)),
                             np.zeros((0, N_COEFFS, 3)))

    @staticmethod
    def concatenate(a: "GaussianCloud", b: "GaussianCloud") -> "GaussianCloud":
        return GaussianCloud(
            np.concatenate([a.positions, b.positions]),
            np.concatenate([a.log_scales, b.log_scales]),
            np.concatenate([a.rotations, b.rotations]),
            np.concatenate([a.logit_opacities, b.logit_opacities]),
            np.concatenate([a.sh, b.sh]),
        )

    def select(self, mask_or_index) -> "GaussianCloud":
        return GaussianCloud(
            self.positions[mask_or_index], self.log_scales[mask_or_index],
            self.rotations[mask_or_index], self.logit_opacities[mask_or_index],
            self.sh[mask_or_index],
        )


def covariance(log_scale: np.ndarray, rotation: np.ndarray) -> np.ndarray:
    """3D covariance R diag(s^2) R^T of one gaussian (or batched (N,...))."""
    single = np.asarray(log_scale).ndim == 1
    ls = np.atleast_2d(log_scale)
    q = np.atleast_2d(rotation)
    R = quat_to_rotation(q)
    s = np.exp(ls)
    N = R * s[:, None, :]            # R @ diag(s)
    cov = N @ np.transpose(N, (0, 2, 1))
    return cov[0] if single else cov


def cloud_covariances(cloud: GaussianCloud) -> np.ndarray:
    return covariance(cloud.log_scales, cloud.rotations)


# ---------------------------------------------------------------------------
# Serialization: binary cloud format and PLY export
# ---------------------------------------------------------------------------


def save_cloud(path: str | Path, cloud: GaussianCloud):
    """Write the little-endian binary cloud format (magic ZP3G)."""
    M = len(cloud)
    rows = np.empty((M, _FLOATS_PER_GAUSSIAN), dtype="<f4")
    rows[:, 0:3] = cloud.positions
    rows[:, 3:6] = cloud.log_scales
    rows[:, 6:10] = cloud.normalized_rotations()
    rows[:, 10] = cloud.logit_opacities
    rows[:, 11:] = cloud.sh.reshape(M, N_COEFFS * 3)
    with open(path, "wb") as f:
        f.write(CLOUD_MAGIC)
        f.write(struct.pack("<II", CLOUD_VERSION, M))
        f.write(rows.tobytes())


def load_cloud(path: str | Path) -> GaussianCloud:
    raw = Path(path).read_bytes()
    if raw[:4] != CLOUD_MAGIC:
        raise InvalidArgumentError(f"{path}: not a cloud file (bad magic)")
    version, M = struct.unpack("<II", raw[4:12])
    if version != CLOUD_VERSION:
        raise InvalidArgumentError(f"{path}: unsupported version {version}")
    expect = 12 + M * _FLOATS_PER_GAUSSIAN * 4
    if len(raw) != expect:
        raise InvalidArgumentError(f"{path}: truncated cloud file")
    rows = np.frombuffer(raw[12:], dtype="<f4").reshape(M, _FLOATS_PER_GAUSSIAN)
    rows = rows.astype(np.float64)
    return GaussianCloud(
        positions=rows[:, 0:3].copy(),
        log_scales=rows[:, 3:6].copy(),
        rotations=rows[:, 6:10].copy(),
        logit_opacities=rows[:, 10].copy(),
        sh=rows[:, 11:].reshape(M, N_COEFFS, 3).copy(),
    )


def export_ply(path: str | Path, cloud: GaussianCloud):
    """Binary-little-endian PLY in the layout common viewers expect."""
    M = len(cloud)
    n_rest = (N_COEFFS - 1) * 3
    props = (["x", "y", "z", "nx", "ny", "nz"]
             + [f"f_dc_{i}" for i in range(3)]
             + [f"f_rest_{i}" for i in range(n_rest)]
             + ["opacity"]
             + [f"scale_{i}" for i in range(3)]
             + [f"rot_{i}" for i in range(4)])
    header = "\n".join(
        ["ply", "format binary_little_endian 1.0", f"element vertex {M}"]
        + [f"property float {p}" for p in props] + ["end_header", ""])
    rows = np.empty((M, len(props)), dtype="<f4")
    rows[:, 0:3] = cloud.positions
    rows[:, 3:6] = 0.0
    rows[:, 6:9] = cloud.sh[:, 0, :]
    # remaining coefficients channel-major: all of R, then G, then B
    rows[:, 9:9 + n_rest] = cloud.sh[:, 1:, :].transpose(0, 2, 1).reshape(M, n_rest)
    rows[:, 9 + n_rest] = cloud.logit_opacities
    rows[:, 10 + n_rest:13 + n_rest] = cloud.log_scales
    rows[:, 13 + n_rest:] = cloud.normalized_rotations()
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(rows.tobytes())
