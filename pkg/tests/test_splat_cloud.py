import math

import numpy as np
import pytest

from conftest import random_cloud
from zp3.errors import InvalidArgumentError
from zp3.splat.cloud import (GaussianCloud, covariance, export_ply, load_cloud,
                             logit, save_cloud)
from zp3.splat.sh import SH_C0, sh_basis, sh_eval


class TestCovariance:
    def test_identity(self):
        cov = covariance(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]))
        np.testing.assert_allclose(cov, np.eye(3), atol=1e-12)

    def test_diagonal(self):
        cov = covariance(np.log([2.0, 1.0, 1.0]), np.array([1.0, 0.0, 0.0, 0.0]))
        np.testing.assert_allclose(cov, np.diag([4.0, 1.0, 1.0]), atol=1e-12)

    def test_quarter_turn_about_z(self):
        q = np.array([math.cos(math.pi / 4), 0.0, 0.0, math.sin(math.pi / 4)])
        cov = covariance(np.log([2.0, 1.0, 1.0]), q)
        np.testing.assert_allclose(cov, np.diag([1.0, 4.0, 1.0]), atol=1e-12)

    def test_symmetric_positive_definite(self, rng):
        cloud = random_cloud(rng, 20)
        from zp3.splat.cloud import cloud_covariances
        covs = cloud_covariances(cloud)
        np.testing.assert_allclose(covs, np.transpose(covs, (0, 2, 1)), atol=1e-12)
        for c in covs:
            assert np.all(np.linalg.eigvalsh(c) > 0)


class TestShEval:
    def test_dc_only(self):
        coeffs = np.zeros((9, 3))
        coeffs[0] = 0.7
        out = sh_eval(coeffs, np.array([0.0, 0.0, 1.0]))
        np.testing.assert_allclose(out, np.clip(SH_C0 * 0.7 + 0.5, 0, 1), atol=1e-12)
        assert SH_C0 == pytest.approx(0.2820948, abs=1e-7)

    def test_zero_coefficients(self):
        out = sh_eval(np.zeros((9, 3)), np.array([1.0, 0.0, 0.0]))
        np.testing.assert_allclose(out, 0.5)

    def test_antipodal_symmetry_degree_one(self, rng):
        coeffs = np.zeros((9, 3))
        coeffs[1:4] = rng.uniform(-0.3, 0.3, (3, 3))
        d = rng.standard_normal(3)
        d /= np.linalg.norm(d)
        a = sh_eval(coeffs, d)
        b = sh_eval(coeffs, -d)
        np.testing.assert_allclose(a - 0.5, -(b - 0.5), atol=1e-12)

    def test_basis_count(self):
        assert sh_basis(np.array([[0.0, 0.0, 1.0]])).shape == (1, 9)


class TestSerialization:
    def test_binary_round_trip(self, rng, tmp_path):
        cloud = random_cloud(rng, 17)
        path = tmp_path / "cloud.zp3g"
        save_cloud(path, cloud)
        back = load_cloud(path)
        assert len(back) == 17
        np.testing.assert_allclose(back.positions, cloud.positions, atol=1e-6)
        np.testing.assert_allclose(back.log_scales, cloud.log_scales, atol=1e-6)
        np.testing.assert_allclose(back.logit_opacities, cloud.logit_opacities,
                                   atol=1e-5)
        np.testing.assert_allclose(back.sh, cloud.sh, atol=1e-6)

    def test_magic_and_layout(self, rng, tmp_path):
        cloud = random_cloud(rng, 3)
        path = tmp_path / "c.zp3g"
        save_cloud(path, cloud)
        raw = path.read_bytes()
        assert raw[:4] == b"ZP3G"
        version = int.from_bytes(raw[4:8], "little")
        count = int.from_bytes(raw[8:12], "little")
        assert version == 1 and count == 3
        assert len(raw) == 12 + 3 * (3 + 3 + 4 + 1 + 27) * 4

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.zp3g"
        p.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(InvalidArgumentError):
            load_cloud(p)

    def test_ply_export(self, rng, tmp_path):
        cloud = random_cloud(rng, 5)
        path = tmp_path / "c.ply"
        export_ply(path, cloud)
        raw = path.read_bytes()
        header = raw.split(b"end_header\n")[0].decode()
        assert "format binary_little_endian 1.0" in header
        assert "element vertex 5" in header
        assert "property float f_dc_0" in header
        assert "property float f_rest_23" in header
        n_props = header.count("property float")
        body = raw.split(b"end_header\n")[1]
        assert len(body) == 5 * n_props * 4


class TestInvariants:
    def test_validate_passes_on_random(self, rng):
        random_cloud(rng, 10).validate()

    def test_opacity_in_open_interval(self, rng):
        cloud = random_cloud(rng, 4)
        cloud.logit_opacities[:] = 80.0  # sigmoid saturates to 1.0 in f64
        assert np.all(cloud.opacities < 1.0)
        cloud.validate()

    def test_bounds_contain_positions(self, rng):
        cloud = random_cloud(rng, 30)
        lo, hi = cloud.bounds
        assert np.all(cloud.positions >= lo - 1e-12)
        assert np.all(cloud.positions <= hi + 1e-12)

    def test_shape_validation(self):
        with pytest.raises(InvalidArgumentError):
            GaussianCloud(np.zeros((2, 3)), np.zeros((2, 3)), np.zeros((2, 4)),
                          np.zeros(3), np.zeros((2, 9, 3)))
