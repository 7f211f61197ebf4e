"""Sampling-time math: noise schedule, prior fusion, DDIM stepping.

All image math here operates on float64 arrays in the sampling domain
[-1, 1].  ``LatentImage`` carries the domain tag; conversions between the
sampling and pixel domains are explicit linear maps, never implicit.

Timestep convention: the DDIM grid has indices t = 0 .. steps-1 with
t = steps-1 the noisiest (alpha_bar smallest) and t = 0 the cleanest.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateTimestepError, InvalidArgumentError

SAMPLING = "sampling"  # value domain [-1, 1]
PIXEL = "pixel"        # value domain [0, 1]


@dataclass(frozen=True)
class LatentImage:
    """An H x W x C image tagged with its value domain."""

    data: np.ndarray
    domain: str = SAMPLING

    def __post_init__(self):
        if self.domain not in (SAMPLING, PIXEL):
            raise InvalidArgumentError(f"unknown domain {self.domain!r}")
        if self.data.ndim != 3:
            raise InvalidArgumentError("LatentImage data must be H x W x C")

    @property
    def shape(self):
        return self.data.shape

    def to_sampling(self) -> "LatentImage":
        if self.domain == SAMPLING:
            return self
        return LatentImage(pixel_to_sampling(self.data), SAMPLING)

    def to_pixel(self) -> "LatentImage":
        if self.domain == PIXEL:
            return self
        return LatentImage(sampling_to_pixel(self.data), PIXEL)


def pixel_to_sampling(img: np.ndarray) -> np.ndarray:
    """[0, 1] -> [-1, 1], linear."""
    return 2.0 * np.asarray(img, dtype=np.float64) - 1.0


def sampling_to_pixel(img: np.ndarray) -> np.ndarray:
    """[-1, 1] -> [0, 1], linear (no clipping)."""
    return (np.asarray(img, dtype=np.float64) + 1.0) / 2.0


# ---------------------------------------------------------------------------
# Noise schedule
# ---------------------------------------------------------------------------

LINEAR_BETA = "linear-beta"
COSINE = "cosine"

_VIRTUAL_STEPS = 1000
_BETA_START = 1e-4
_BETA_END = 2e-2
_COSINE_S = 0.008


@dataclass(frozen=True)
class NoiseSchedule:
    """Strictly decreasing alpha_bar sequence over the DDIM step grid."""

    steps: int
    alpha_bar: np.ndarray
    kind: str

    def __post_init__(self):
        ab = self.alpha_bar
        if len(ab) != self.steps:
            raise InvalidArgumentError("alpha_bar length must equal steps")
        if not (np.all(ab > 0.0) and np.all(ab <= 1.0)):
            raise InvalidArgumentError("alpha_bar values must lie in (0, 1]")
        if not np.all(np.diff(ab) < 0.0):
            raise InvalidArgumentError("alpha_bar must be strictly decreasing in t")


def make_schedule(steps: int, kind: str = LINEAR_BETA) -> NoiseSchedule:
    """Build a noise schedule over ``steps`` DDIM grid points.

    linear-beta subsamples the cumulative product of (1 - beta) with beta
    linearly spaced from 1e-4 to 2e-2 over 1000 virtual steps; cosine uses
    cos^2((t/steps + s)/(1 + s) * pi/2) with s = 0.008.
    """
    if steps < 2:
        raise InvalidArgumentError(f"steps must be >= 2, got {steps}")
    if kind == LINEAR_BETA:
        if steps > _VIRTUAL_STEPS:
            raise InvalidArgumentError(
                f"linear-beta supports at most {_VIRTUAL_STEPS} steps, got {steps}")
        betas = np.linspace(_BETA_START, _BETA_END, _VIRTUAL_STEPS)
        abar_full = np.cumprod(1.0 - betas)
        idx = np.round(np.linspace(0, _VIRTUAL_STEPS - 1, steps)).astype(int)
        alpha_bar = abar_full[idx]
    elif kind == COSINE:
        t = np.arange(steps, dtype=np.float64)
        alpha_bar = np.cos((t / steps + _COSINE_S) / (1.0 + _COSINE_S) * math.pi / 2.0) ** 2
    else:
        raise InvalidArgumentError(f"unknown schedule kind {kind!r}")
    return NoiseSchedule(steps=steps, alpha_bar=alpha_bar, kind=kind)


def _check_t(t: int, sched: NoiseSchedule, minimum: int = 0):
    if not (minimum <= t < sched.steps):
        raise InvalidArgumentError(
            f"timestep {t} outside [{minimum}, {sched.steps - 1}]")


# ---------------------------------------------------------------------------
# Fusion weights and per-step noise construction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FusionWeights:
    """tanh crossfade parameters: transition point, smoothness, HF scale."""

    tau: float = 22.0
    sigma: float = 7.0
    eta: float = 4.0

    def __post_init__(self):
        if self.sigma <= 0.0:
            raise InvalidArgumentError("sigma must be > 0")
        if self.eta <= 0.0:
            raise InvalidArgumentError("eta must be > 0")


@dataclass(frozen=True)
class ViewPrediction:
    """One view-conditioned noise prediction with its fusion weight."""

    noise: np.ndarray
    weight: float
    source_view_id: str = ""

    def __post_init__(self):
        if self.weight <= 0.0:
            raise InvalidArgumentError("prediction weight must be > 0")


def schedule_weights(t: int, w: FusionWeights) -> tuple[float, float]:
    """LF/HF mixing weights at step t: a tanh crossfade centred at tau."""
    w_lf = (math.tanh(-(t - w.tau) / w.sigma) + 1.0) / 2.0
    w_hf = (1.0 - w_lf) / w.eta
    return w_lf, w_hf


def lf_noise_from_render(x_t: np.ndarray, x_lf: np.ndarray, t: int,
                         sched: NoiseSchedule) -> np.ndarray:
    """Noise that would take the rendered image x_lf to the current x_t.

    x_lf must already be in the sampling domain.
    """
    if x_t.shape != x_lf.shape:
        raise InvalidArgumentError("x_t and x_lf shapes differ")
    _check_t(t, sched)
    ab = sched.alpha_bar[t]
    if ab >= 1.0:
        raise DegenerateTimestepError(f"alpha_bar[{t}] = 1 makes the LF noise singular")
    return (x_t - math.sqrt(ab) * x_lf) / math.sqrt(1.0 - ab)


def fuse_mvd(predictions: Sequence[ViewPrediction], normalize: bool = True) -> np.ndarray:
    """Weighted sum of view-conditioned predictions.

    Weights are normalized to sum 1 by default; ``normalize=False``
    reproduces the raw weighted sum.
    """
    if len(predictions) == 0:
        raise InvalidArgumentError("need at least one prediction")
    shape = predictions[0].noise.shape
    for p in predictions:
        if p.noise.shape != shape:
            raise InvalidArgumentError("prediction shapes differ")
    weights = np.array([p.weight for p in predictions], dtype=np.float64)
    if normalize:
        weights = weights / weights.sum()
    out = np.zeros(shape, dtype=np.float64)
    for p, wi in zip(predictions, weights):
        out += wi * p.noise
    return out


def fuse_noise(eps_mvd: np.ndarray, eps_hf: np.ndarray, eps_lf: np.ndarray,
               t: int, w: FusionWeights) -> np.ndarray:
    """Additive combination eps_mvd + w_hf(t)*eps_hf + w_lf(t)*eps_lf."""
    if not (eps_mvd.shape == eps_hf.shape == eps_lf.shape):
        raise InvalidArgumentError("noise term shapes differ")
    w_lf, w_hf = schedule_weights(t, w)
    return eps_mvd + w_hf * eps_hf + w_lf * eps_lf


def ddim_step(x_t: np.ndarray, eps_t: np.ndarray, t: int, sched: NoiseSchedule,
              canonical: bool = False) -> np.ndarray:
    """One reverse step x_t -> x_{t-1}.

    Default is the simplified additive update
        x_{t-1} = x_t + (sqrt(ab_{t-1}) - sqrt(ab_t)) * eps_t / sqrt(1 - ab_t);
    ``canonical=True`` selects the standard deterministic DDIM update via the
    predicted clean image.
    """
    if x_t.shape != eps_t.shape:
        raise InvalidArgumentError("x_t and eps_t shapes differ")
    _check_t(t, sched, minimum=1)
    ab_t = sched.alpha_bar[t]
    ab_prev = sched.alpha_bar[t - 1]
    if ab_t >= 1.0:
        raise DegenerateTimestepError(f"alpha_bar[{t}] = 1 makes the step singular")
    if canonical:
        x0 = (x_t - math.sqrt(1.0 - ab_t) * eps_t) / math.sqrt(ab_t)
        return math.sqrt(ab_prev) * x0 + math.sqrt(1.0 - ab_prev) * eps_t
    return x_t + (math.sqrt(ab_prev) - math.sqrt(ab_t)) * eps_t / math.sqrt(1.0 - ab_t)


def ddim_sigma(t: int, sched: NoiseSchedule, noise_eta: float) -> float:
    """Stochastic-injection scale for step t (0 when noise_eta is 0)."""
    ab_t = sched.alpha_bar[t]
    ab_prev = sched.alpha_bar[t - 1]
    return noise_eta * math.sqrt((1.0 - ab_prev) / (1.0 - ab_t)) * math.sqrt(
        1.0 - ab_t / ab_prev)


def variance_compensate(x_orig: np.ndarray, x_avg: np.ndarray,
                        noise_term: np.ndarray, delta: float = 1e-8
                        ) -> tuple[np.ndarray, np.ndarray]:
    """Rescale the stochastic component so fused samples keep the original variance.

    Per channel c:
        lambda_c = sqrt(max(Var(x_orig) - Var(x_avg) + Var(noise), 0)
                        / (Var(noise) + delta))
    and the stochastic component of x_avg is replaced by lambda_c * noise_term.
    Variances are per-channel sample variances over pixels.
    """
    if not (x_orig.shape == x_avg.shape == noise_term.shape):
        raise InvalidArgumentError("variance compensation shapes differ")
    if delta <= 0.0:
        raise InvalidArgumentError("delta must be > 0")
    channels = x_orig.shape[-1]
    var_orig = x_orig.reshape(-1, channels).var(axis=0)
    var_avg = x_avg.reshape(-1, channels).var(axis=0)
    var_noise = noise_term.reshape(-1, channels).var(axis=0)
    numer = np.maximum(var_orig - var_avg + var_noise, 0.0)
    lam = np.sqrt(numer / (var_noise + delta))
    x_adjusted = x_avg - noise_term + lam * noise_term
    return lam, x_adjusted


# ---------------------------------------------------------------------------
# Full sampling loop
# ---------------------------------------------------------------------------


@dataclass
class PriorBundle:
    """Noise sources for one target view.

    ``mvd`` pairs each view-conditioned predictor with its fusion weight.
    ``lf_image`` is the coarse rendering at the target view (sampling
    domain), or None to disable the rendering prior.  ``hf`` is the
    restoration predictor, or None for the null predictor.
    """

    mvd: list  # list[(NoisePredictor, weight, view_id)]
    lf_image: np.ndarray | None = None
    hf: object | None = None


@dataclass(frozen=True)
class SampleOptions:
    canonical_ddim: bool = False
    normalize_mvd: bool = True
    invert_t: bool = False
    lf_enabled: bool = True
    noise_eta: float = 0.0
    variance_compensation: bool = False
    vc_delta: float = 1e-8


def sample(shape: tuple[int, int, int], providers: PriorBundle,
           sched: NoiseSchedule, w: FusionWeights, seed: int,
           options: SampleOptions = SampleOptions(),
           weight_log: list | None = None) -> LatentImage:
    """Run one fused DDIM chain and return the pixel-domain result.

    Deterministic given (seed, inputs, options).  ``weight_log`` (if given)
    receives (t, w_lf, w_hf) triples for the visited steps.
    """
    if len(providers.mvd) == 0:
        raise InvalidArgumentError("PriorBundle needs at least one MVD predictor")
    rng = np.random.default_rng(np.random.PCG64(seed))
    x = rng.standard_normal(shape)
    zeros = np.zeros(shape, dtype=np.float64)
    lf = providers.lf_image if options.lf_enabled else None
    if lf is not None and lf.shape != shape:
        raise InvalidArgumentError("LF image shape differs from the latent shape")
    for t in range(sched.steps - 1, 0, -1):
        preds = [ViewPrediction(pred.predict(x, t), weight, view_id)
                 for pred, weight, view_id in providers.mvd]
        eps_mvd = fuse_mvd(preds, normalize=options.normalize_mvd)
        eps_lf = lf_noise_from_render(x, lf, t, sched) if lf is not None else zeros
        eps_hf = providers.hf.predict(x, t) if providers.hf is not None else zeros
        tw = (sched.steps - 1) - t if options.invert_t else t
        eps_t = fuse_noise(eps_mvd, eps_hf, eps_lf, tw, w)
        if weight_log is not None:
            w_lf, w_hf = schedule_weights(tw, w)
            weight_log.append((t, w_lf, w_hf))
        x_next = ddim_step(x, eps_t, t, sched, canonical=options.canonical_ddim)
        if options.noise_eta > 0.0 and t > 1:
            sigma_t = ddim_sigma(t, sched, options.noise_eta)
            noise_term = sigma_t * rng.standard_normal(shape)
            if options.variance_compensation:
                x_orig = ddim_step(x, preds[0].noise, t, sched,
                                   canonical=options.canonical_ddim) + noise_term
                _, x_next = variance_compensate(
                    x_orig, x_next + noise_term, noise_term, options.vc_delta)
            else:
                x_next = x_next + noise_term
        x = x_next
    return LatentImage(sampling_to_pixel(x), PIXEL)
