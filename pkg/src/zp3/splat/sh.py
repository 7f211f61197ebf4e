"""Real spherical-harmonics basis, degrees 0-2, and its direction Jacobian."""
from __future__ import annotations

import numpy as np

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
         -1.0925484305920792, 0.5462742152960396)
N_COEFFS = 9  # degrees 0..2


def sh_basis(dirs: np.ndarray) -> np.ndarray:
    """Basis values at unit directions (N,3) -> (N,9)."""
    d = np.atleast_2d(dirs)
    x, y, z = d[:, 0], d[:, 1], d[:, 2]
    out = np.empty((d.shape[0], N_COEFFS), dtype=np.float64)
    out[:, 0] = SH_C0
    out[:, 1] = -SH_C1 * y
    out[:, 2] = SH_C1 * z
    out[:, 3] = -SH_C1 * x
    out[:, 4] = SH_C2[0] * x * y
    out[:, 5] = SH_C2[1] * y * z
    out[:, 6] = SH_C2[2] * (2.0 * z * z - x * x - y * y)
    out[:, 7] = SH_C2[3] * x * z
    out[:, 8] = SH_C2[4] * (x * x - y * y)
    return out


def sh_basis_jacobian(dirs: np.ndarray) -> np.ndarray:
    """d(basis)/d(direction) at unit directions: (N,3) -> (N,9,3)."""
    d = np.atleast_2d(dirs)
    x, y, z = d[:, 0], d[:, 1], d[:, 2]
    zero = np.zeros_like(x)
    jac = np.zeros((d.shape[0], N_COEFFS, 3), dtype=np.float64)
    jac[:, 1, 1] = -SH_C1
    jac[:, 2, 2] = SH_C1
    jac[:, 3, 0] = -SH_C1
    jac[:, 4, 0] = SH_C2[0] * y
    jac[:, 4, 1] = SH_C2[0] * x
    jac[:, 5, 1] = SH_C2[1] * z
    jac[:, 5, 2] = SH_C2[1] * y
    jac[:, 6, 0] = SH_C2[2] * (-2.0 * x)
    jac[:, 6, 1] = SH_C2[2] * (-2.0 * y)
    jac[:, 6, 2] = SH_C2[2] * (4.0 * z)
    jac[:, 7, 0] = SH_C2[3] * z
    jac[:, 7, 2] = SH_C2[3] * x
    jac[:, 8, 0] = SH_C2[4] * (2.0 * x)
    jac[:, 8, 1] = SH_C2[4] * (-2.0 * y)
    return jac


def sh_eval(coeffs: np.ndarray, view_dir: np.ndarray) -> np.ndarray:
    """Colour from SH coefficients (9,3) or (N,9,3) at unit view directions.

    Returns clamp(basis . coeffs + 0.5, 0, 1) per channel.
    """
    single = coeffs.ndim == 2
    c = coeffs[None] if single else coeffs
    d = np.atleast_2d(view_dir)
    basis = sh_basis(d)  # (N,9)
    raw = np.einsum("nk,nkc->nc", basis, c) + 0.5
    out = np.clip(raw, 0.0, 1.0)
    return out[0] if single else out
