"""Pluggable noise predictors.

A predictor maps (x_t, t) to a noise estimate of the same shape.  The
analytic gaussian-mixture oracle is exact for its data distribution, which
makes the whole sampling stack verifiable without pretrained weights; the
rendering source supplies the low-frequency image the LF prior consumes;
real backends attach through the bridge module.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .diffusion import NoiseSchedule, pixel_to_sampling
from .errors import InvalidArgumentError
from .splat.cloud import GaussianCloud
from .splat.render import render
from .views import Camera


class NoisePredictor(Protocol):
    def predict(self, x_t: np.ndarray, t: int) -> np.ndarray: ...


class NullPredictor:
    """Always predicts zero noise (disables a prior slot)."""

    def predict(self, x_t: np.ndarray, t: int) -> np.ndarray:
        return np.zeros_like(x_t)


@dataclass
class GaussianMixtureOracle:
    """Exact noise prediction for data drawn from a gaussian mixture.

    Components are (mean image, isotropic std, weight); with
    v_k = abar * s_k^2 + 1 - abar the marginal at step t is
    sum_k pi_k N(sqrt(abar) mu_k, v_k I) and the returned noise is the
    minimum-MSE estimate -sqrt(1-abar) * grad log p_t(x).
    """

    means: Sequence[np.ndarray]
    stds: Sequence[float]
    weights: Sequence[float]
    schedule: NoiseSchedule

    def __post_init__(self):
        if len(self.means) == 0:
            raise InvalidArgumentError("mixture needs at least one component")
        if not (len(self.means) == len(self.stds) == len(self.weights)):
            raise InvalidArgumentError("component lists must have equal length")
        w = np.asarray(self.weights, dtype=np.float64)
        if np.any(w <= 0.0):
            raise InvalidArgumentError("mixture weights must be > 0")
        if abs(w.sum() - 1.0) > 1e-9:
            raise InvalidArgumentError("mixture weights must sum to 1")
        s = np.asarray(self.stds, dtype=np.float64)
        if np.any(s <= 0.0):
            raise InvalidArgumentError("component stds must be > 0")
        shape = self.means[0].shape
        for m in self.means:
            if m.shape != shape:
                raise InvalidArgumentError("component mean shapes differ")

    def predict(self, x_t: np.ndarray, t: int) -> np.ndarray:
        return self.predict_for_alpha_bar(x_t, float(self.schedule.alpha_bar[t]))

    def predict_for_alpha_bar(self, x_t: np.ndarray, alpha_bar: float) -> np.ndarray:
        if x_t.shape != self.means[0].shape:
            raise InvalidArgumentError("x_t shape differs from the mixture means")
        ab = alpha_bar
        sqrt_ab = np.sqrt(ab)
        n_dim = x_t.size
        log_terms = np.empty(len(self.means))
        diffs = []
        variances = []
        for k, (mu, s, pi) in enumerate(zip(self.means, self.stds, self.weights)):
            v = ab * s * s + 1.0 - ab
            d = x_t - sqrt_ab * mu
            diffs.append(d)
            variances.append(v)
            log_terms[k] = (np.log(pi) - 0.5 * n_dim * np.log(2.0 * np.pi * v)
                            - 0.5 * float(np.sum(d * d)) / v)
        # responsibilities via log-sum-exp
        m = log_terms.max()
        resp = np.exp(log_terms - m)
        resp /= resp.sum()
        score = np.zeros_like(x_t)
        for r, d, v in zip(resp, diffs, variances):
            score -= r * d / v
        return -np.sqrt(1.0 - ab) * score


def single_gaussian_oracle(mean: np.ndarray, std: float,
                           schedule: NoiseSchedule) -> GaussianMixtureOracle:
    return GaussianMixtureOracle(means=[mean], stds=[std], weights=[1.0],
                                 schedule=schedule)


DEFAULT_BACKGROUND = (1.0, 1.0, 1.0)


def render_prior_source(cloud: GaussianCloud, cam: Camera, width: int, height: int,
                        background: tuple[float, float, float] = DEFAULT_BACKGROUND
                        ) -> np.ndarray:
    """Coarse rendering at the target view, composited over a solid
    background and mapped to the sampling domain, ready for the LF prior."""
    out = render(cloud, cam, width, height)
    bg = np.asarray(background, dtype=np.float64)
    composed = out.color + (1.0 - out.alpha)[:, :, None] * bg[None, None, :]
    return pixel_to_sampling(composed)


def high_pass_boost(image: np.ndarray, strength: float = 1.5) -> np.ndarray:
    """image + strength * (image - box blur): cheap detail amplification."""
    blurred = np.empty_like(image)
    pad = np.pad(image, ((1, 1), (1, 1), (0, 0)), mode="edge")
    acc = np.zeros_like(image)
    for dy in (0, 1, 2):
        for dx in (0, 1, 2):
            acc += pad[dy:dy + image.shape[0], dx:dx + image.shape[1]]
    blurred = acc / 9.0
    return image + strength * (image - blurred)


def sharpen_oracle(targets: Sequence[np.ndarray], schedule: NoiseSchedule,
                   std: float = 0.1, strength: float = 1.5) -> GaussianMixtureOracle:
    """Oracle over high-pass-boosted targets; a stand-in HF restoration
    predictor whose effect on sampling is measurable in tests."""
    boosted = [high_pass_boost(t, strength) for t in targets]
    n = len(boosted)
    return GaussianMixtureOracle(means=boosted, stds=[std] * n,
                                 weights=[1.0 / n] * n, schedule=schedule)
