import math

import numpy as np
import pytest

from zp3.diffusion import (LatentImage, FusionWeights, NoiseSchedule,
                           PriorBundle, SampleOptions, ViewPrediction,
                           ddim_sigma, ddim_step, fuse_mvd, fuse_noise,
                           lf_noise_from_render, make_schedule,
                           pixel_to_sampling, sample, sampling_to_pixel,
                           schedule_weights, variance_compensate)
from zp3.errors import DegenerateTimestepError, InvalidArgumentError
from zp3.priors import single_gaussian_oracle


def arr(v):
    return np.full((1, 1, 1), float(v))


class TestSchedule:
    def test_linear_beta_endpoints(self):
        s = make_schedule(50, "linear-beta")
        assert s.alpha_bar[0] > 0.99
        assert s.alpha_bar[0] == pytest.approx(1.0 - 1e-4)
        assert np.all(np.diff(s.alpha_bar) < 0)
        assert np.all((s.alpha_bar > 0) & (s.alpha_bar <= 1))

    def test_cosine_two_steps(self):
        s = make_schedule(2, "cosine")
        expect = math.cos((0.008 / 1.008) * math.pi / 2) ** 2
        assert s.alpha_bar[0] == pytest.approx(expect, rel=1e-9)
        assert s.alpha_bar[0] == pytest.approx(0.99984, abs=1e-5)

    def test_invalid_steps(self):
        with pytest.raises(InvalidArgumentError):
            make_schedule(1, "linear-beta")
        with pytest.raises(InvalidArgumentError):
            make_schedule(0, "cosine")
        with pytest.raises(InvalidArgumentError):
            make_schedule(50, "nope")
        with pytest.raises(InvalidArgumentError):
            make_schedule(1001, "linear-beta")

    @pytest.mark.parametrize("kind", ["linear-beta", "cosine"])
    @pytest.mark.parametrize("steps", [2, 5, 50, 200])
    def test_monotone_everywhere(self, kind, steps):
        s = make_schedule(steps, kind)
        assert np.all(np.diff(s.alpha_bar) < 0)

    def test_invariant_enforced(self):
        with pytest.raises(InvalidArgumentError):
            NoiseSchedule(steps=3, alpha_bar=np.array([0.5, 0.5, 0.4]), kind="x")


class TestLfNoise:
    def setup_method(self):
        self.sched = NoiseSchedule(steps=2, alpha_bar=np.array([0.9, 0.64]), kind="t")

    def test_vanishing_numerator(self):
        x_lf = np.random.default_rng(0).uniform(-1, 1, (4, 4, 3))
        x_t = math.sqrt(0.64) * x_lf
        out = lf_noise_from_render(x_t, x_lf, 1, self.sched)
        np.testing.assert_allclose(out, 0.0, atol=1e-12)

    def test_scalar_probe(self):
        out = lf_noise_from_render(arr(1.0), arr(0.5), 1, self.sched)
        assert out[0, 0, 0] == pytest.approx(1.0, rel=1e-9)

    def test_small_alpha_bar_limit(self):
        sched = NoiseSchedule(steps=2, alpha_bar=np.array([0.9, 1e-12]), kind="t")
        x_t = arr(0.7)
        out = lf_noise_from_render(x_t, arr(-0.3), 1, sched)
        assert out[0, 0, 0] == pytest.approx(0.7, abs=1e-5)

    def test_degenerate(self):
        sched = NoiseSchedule(steps=2, alpha_bar=np.array([1.0, 0.5]), kind="t")
        with pytest.raises(DegenerateTimestepError):
            lf_noise_from_render(arr(1.0), arr(0.5), 0, sched)

    def test_shape_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            lf_noise_from_render(np.zeros((2, 2, 3)), np.zeros((2, 3, 3)), 1, self.sched)


class TestFuseMvd:
    def test_single_identity(self):
        noise = np.random.default_rng(1).standard_normal((3, 3, 3))
        out = fuse_mvd([ViewPrediction(noise, 7.3, "a")])
        np.testing.assert_allclose(out, noise)

    def test_identical_inputs(self):
        noise = np.random.default_rng(2).standard_normal((3, 3, 3))
        preds = [ViewPrediction(noise, w, str(w)) for w in (2.0, 1.5, 1.0)]
        np.testing.assert_allclose(fuse_mvd(preds), noise, rtol=1e-12)

    def test_scalar_probe(self):
        preds = [ViewPrediction(arr(1.0), 2.0), ViewPrediction(arr(0.0), 1.5),
                 ViewPrediction(arr(-1.0), 1.0)]
        out = fuse_mvd(preds)
        assert out[0, 0, 0] == pytest.approx(1.0 / 4.5, rel=1e-9)

    def test_unnormalized(self):
        preds = [ViewPrediction(arr(1.0), 2.0), ViewPrediction(arr(1.0), 1.5)]
        out = fuse_mvd(preds, normalize=False)
        assert out[0, 0, 0] == pytest.approx(3.5)

    def test_errors(self):
        with pytest.raises(InvalidArgumentError):
            fuse_mvd([])
        with pytest.raises(InvalidArgumentError):
            fuse_mvd([ViewPrediction(np.zeros((2, 2, 3)), 1.0),
                      ViewPrediction(np.zeros((3, 2, 3)), 1.0)])

    def test_convexity_property(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            n = rng.integers(1, 5)
            preds = [ViewPrediction(rng.standard_normal((2, 2, 3)),
                                    float(rng.uniform(0.1, 5)))
                     for _ in range(n)]
            out = fuse_mvd(preds)
            stack = np.stack([p.noise for p in preds])
            assert np.all(out >= stack.min(axis=0) - 1e-12)
            assert np.all(out <= stack.max(axis=0) + 1e-12)


class TestScheduleWeights:
    def test_at_tau(self):
        w_lf, w_hf = schedule_weights(22, FusionWeights(22, 7, 4))
        assert w_lf == pytest.approx(0.5)
        assert w_hf == pytest.approx(0.125)

    def test_after_tau(self):
        w_lf, w_hf = schedule_weights(29, FusionWeights(22, 7, 4))
        assert w_lf == pytest.approx(0.1192029, abs=1e-7)
        assert w_hf == pytest.approx(0.2201993, abs=1e-7)

    def test_before_tau(self):
        w_lf, w_hf = schedule_weights(15, FusionWeights(22, 7, 4))
        assert w_lf == pytest.approx(0.8807971, abs=1e-7)
        assert w_hf == pytest.approx(0.0298007, abs=1e-7)

    def test_bounds_and_monotonicity(self):
        w = FusionWeights(22, 7, 4)
        values = [schedule_weights(t, w) for t in range(50)]
        lfs = [v[0] for v in values]
        for w_lf, w_hf in values:
            assert 0.0 < w_lf < 1.0
            assert 0.0 <= w_hf <= 1.0 / w.eta
        assert all(a > b for a, b in zip(lfs, lfs[1:]))  # decreasing in t

    def test_invalid_params(self):
        with pytest.raises(InvalidArgumentError):
            FusionWeights(22, 0.0, 4)
        with pytest.raises(InvalidArgumentError):
            FusionWeights(22, 7, -1)


class TestFuseNoise:
    def test_additive_identity(self):
        eps = np.random.default_rng(4).standard_normal((2, 2, 3))
        z = np.zeros_like(eps)
        out = fuse_noise(eps, z, z, 10, FusionWeights())
        np.testing.assert_allclose(out, eps)

    def test_scalar_probe_at_tau(self):
        out = fuse_noise(arr(0.1), arr(0.2), arr(0.4), 22, FusionWeights(22, 7, 4))
        assert out[0, 0, 0] == pytest.approx(0.325, rel=1e-9)

    def test_lf_dominant_limit(self):
        w = FusionWeights(tau=1000.0, sigma=1.0, eta=4.0)  # w_lf -> 1, w_hf -> 0
        out = fuse_noise(arr(0.1), arr(5.0), arr(0.4), 0, w)
        assert out[0, 0, 0] == pytest.approx(0.5, abs=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            fuse_noise(np.zeros((2, 2, 3)), np.zeros((2, 2, 3)),
                       np.zeros((1, 2, 3)), 0, FusionWeights())


class TestDdimStep:
    def setup_method(self):
        self.sched = NoiseSchedule(steps=2, alpha_bar=np.array([0.9, 0.5]), kind="t")

    def test_zero_noise(self):
        x = arr(0.37)
        out = ddim_step(x, arr(0.0), 1, self.sched)
        np.testing.assert_allclose(out, x)

    def test_equal_alpha_bar(self):
        sched = NoiseSchedule(steps=2, alpha_bar=np.array([0.5 + 1e-15, 0.5]), kind="t")
        out = ddim_step(arr(1.0), arr(1.0), 1, sched)
        assert out[0, 0, 0] == pytest.approx(1.0, abs=1e-16 * 10)

    def test_scalar_probe(self):
        out = ddim_step(arr(1.0), arr(1.0), 1, self.sched)
        assert out[0, 0, 0] == pytest.approx(1.3416407, abs=1e-7)

    def test_canonical_form(self):
        x, e = arr(1.0), arr(1.0)
        out = ddim_step(x, e, 1, self.sched, canonical=True)
        x0 = (1.0 - math.sqrt(0.5) * 1.0) / math.sqrt(0.5)
        expect = math.sqrt(0.9) * x0 + math.sqrt(0.1) * 1.0
        assert out[0, 0, 0] == pytest.approx(expect, rel=1e-12)

    def test_t_zero_invalid(self):
        with pytest.raises(InvalidArgumentError):
            ddim_step(arr(1.0), arr(1.0), 0, self.sched)

    def test_degenerate_alpha(self):
        sched = NoiseSchedule(steps=2, alpha_bar=np.array([1.0, 0.5]), kind="t")
        bad = NoiseSchedule(steps=3, alpha_bar=np.array([1.0, 1.0 - 1e-16, 0.5]),
                            kind="t")
        with pytest.raises(DegenerateTimestepError):
            ddim_step(arr(1.0), arr(1.0), 1, bad)


class TestVarianceCompensate:
    def test_equal_variances(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((16, 16, 3))
        noise = rng.standard_normal((16, 16, 3)) * 0.5
        x_orig = x + noise
        x_avg = x + noise  # same deterministic part
        lam, adj = variance_compensate(x_orig, x_avg, noise, 1e-12)
        np.testing.assert_allclose(lam, 1.0, atol=1e-6)
        np.testing.assert_allclose(adj, x_orig, atol=1e-9)

    def test_zero_noise(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((8, 8, 3))
        lam, adj = variance_compensate(x, x, np.zeros_like(x), 1e-8)
        np.testing.assert_allclose(lam, 0.0)

    def test_single_channel_probe(self):
        # variances 1.0 / 0.75 / 0.25 -> lambda = sqrt(0.5 / 0.25) = sqrt(2)
        n = 4096
        rng = np.random.default_rng(7)

        def with_var(g, v):
            g = g - g.mean()
            return g * math.sqrt(v / g.var())

        x_orig = with_var(rng.standard_normal(n), 1.0).reshape(-1, 1, 1)
        x_avg = with_var(rng.standard_normal(n), 0.75).reshape(-1, 1, 1)
        noise = with_var(rng.standard_normal(n), 0.25).reshape(-1, 1, 1)
        lam, _ = variance_compensate(x_orig, x_avg, noise, 1e-8)
        assert lam[0] == pytest.approx(1.4142136, abs=1e-6)

    def test_negative_numerator_clamped(self):
        rng = np.random.default_rng(8)
        x_orig = rng.standard_normal((32, 32, 3)) * 0.1
        x_avg = rng.standard_normal((32, 32, 3)) * 2.0
        noise = rng.standard_normal((32, 32, 3)) * 0.01
        lam, _ = variance_compensate(x_orig, x_avg, noise, 1e-8)
        assert np.all(lam >= 0.0)
        assert np.all(np.isfinite(lam))


class TestLatentImage:
    def test_domain_round_trip(self):
        rng = np.random.default_rng(9)
        img = LatentImage(rng.uniform(0, 1, (4, 4, 3)), "pixel")
        back = img.to_sampling().to_pixel()
        np.testing.assert_allclose(back.data, img.data, atol=1e-12)

    def test_linear_maps(self):
        assert pixel_to_sampling(np.array([[[0.0]]]))[0, 0, 0] == -1.0
        assert pixel_to_sampling(np.array([[[1.0]]]))[0, 0, 0] == 1.0
        assert sampling_to_pixel(np.array([[[0.0]]]))[0, 0, 0] == 0.5

    def test_invalid_domain(self):
        with pytest.raises(InvalidArgumentError):
            LatentImage(np.zeros((2, 2, 3)), "weird")


class TestSample:
    def _bundle(self, sched, shape, mu=0.2, s=0.5):
        oracle = single_gaussian_oracle(np.full(shape, mu), s, sched)
        return PriorBundle(mvd=[(oracle, 1.0, "v")], lf_image=None, hf=None)

    def test_deterministic(self):
        sched = make_schedule(10, "linear-beta")
        shape = (4, 4, 3)
        opts = SampleOptions(canonical_ddim=True)
        a = sample(shape, self._bundle(sched, shape), sched, FusionWeights(), 5, opts)
        b = sample(shape, self._bundle(sched, shape), sched, FusionWeights(), 5, opts)
        assert np.array_equal(a.data, b.data)
        c = sample(shape, self._bundle(sched, shape), sched, FusionWeights(), 6, opts)
        assert not np.array_equal(a.data, c.data)

    def test_returns_pixel_domain(self):
        sched = make_schedule(10, "linear-beta")
        shape = (4, 4, 3)
        out = sample(shape, self._bundle(sched, shape), sched, FusionWeights(), 0,
                     SampleOptions(canonical_ddim=True))
        assert out.domain == "pixel"

    def test_requires_predictor(self):
        sched = make_schedule(10, "linear-beta")
        with pytest.raises(InvalidArgumentError):
            sample((4, 4, 3), PriorBundle(mvd=[]), sched, FusionWeights(), 0)

    def test_weight_log(self):
        sched = make_schedule(8, "linear-beta")
        shape = (2, 2, 3)
        log = []
        sample(shape, self._bundle(sched, shape), sched, FusionWeights(), 0,
               SampleOptions(canonical_ddim=True), weight_log=log)
        assert [t for t, _, _ in log] == list(range(7, 0, -1))

    def test_stochastic_with_compensation_runs(self):
        sched = make_schedule(10, "linear-beta")
        shape = (4, 4, 3)
        opts = SampleOptions(canonical_ddim=True, noise_eta=0.5,
                             variance_compensation=True)
        out = sample(shape, self._bundle(sched, shape), sched, FusionWeights(), 3, opts)
        assert np.all(np.isfinite(out.data))

    def test_ddim_sigma_zero_when_eta_zero(self):
        sched = make_schedule(10, "linear-beta")
        assert ddim_sigma(5, sched, 0.0) == 0.0
        assert ddim_sigma(5, sched, 1.0) > 0.0
