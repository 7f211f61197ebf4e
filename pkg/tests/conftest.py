import numpy as np
import pytest

from zp3.splat.cloud import GaussianCloud, logit


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_cloud(rng, n, spread=0.6, scale_range=(0.06, 0.22),
                 opacity_range=(0.3, 0.9)):
    """Small random scene used across renderer and gradient tests."""
    pos = rng.uniform(-spread, spread, (n, 3))
    log_s = np.log(rng.uniform(*scale_range, (n, 3)))
    quat = rng.standard_normal((n, 4))
    quat /= np.linalg.norm(quat, axis=1, keepdims=True)
    lo = logit(rng.uniform(*opacity_range, n))
    sh = np.zeros((n, 9, 3))
    sh[:, 0, :] = rng.uniform(-1.0, 1.0, (n, 3))
    sh[:, 1:, :] = rng.uniform(-0.06, 0.06, (n, 8, 3))
    return GaussianCloud(pos, log_s, quat, lo, sh)


@pytest.fixture(scope="session")
def toy_dataset(tmp_path_factory):
    """Small full-orbit toy dataset shared by dataset/CLI/reconstruct tests."""
    from zp3.synth import write_dataset
    root = tmp_path_factory.mktemp("toy") / "ds"
    write_dataset(root, seed=0, width=32, height=32, n_azimuths=8,
                  elevations=(0.0,), observed_range=(0.0, 90.0), n_gaussians=80)
    return root
