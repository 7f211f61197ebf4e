"""Image-quality metrics and the visible/invisible evaluation protocol."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError
from .losses import MULTISCALE_L1, perceptual_value

PSNR_CAP_DB = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def psnr(a: np.ndarray, b: np.ndarray, mask: np.ndarray | None = None) -> float:
    """10*log10(1/MSE) over masked pixels in the [0,1] domain, capped at 99 dB."""
    if a.shape != b.shape:
        raise InvalidArgumentError("psnr inputs must share a shape")
    if mask is not None:
        if mask.shape != a.shape[:2]:
            raise InvalidArgumentError("mask shape must be H x W")
        sel = mask > 0.5
        if not np.any(sel):
            raise InvalidArgumentError("psnr mask selects no pixels")
        diff = (a - b)[sel]
    else:
        diff = a - b
    mse = float(np.mean(diff * diff))
    if mse <= 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * math.log10(1.0 / mse))


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size) - half
    w = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return w / w.sum()


def _filter_valid(img: np.ndarray, window: np.ndarray) -> np.ndarray:
    """Separable 'valid'-mode correlation with a 1-D window along both axes."""
    n = len(window)
    h, w = img.shape
    rows = np.zeros((h, w - n + 1))
    for i, wi in enumerate(window):
        rows += wi * img[:, i:i + w - n + 1]
    out = np.zeros((h - n + 1, w - n + 1))
    for i, wi in enumerate(window):
        out += wi * rows[i:i + h - n + 1, :]
    return out


def ssim(a: np.ndarray, b: np.ndarray, mask: np.ndarray | None = None,
         window: int = SSIM_WINDOW, k1: float = SSIM_K1, k2: float = SSIM_K2
         ) -> float:
    """Mean local SSIM with a gaussian window (sigma 1.5), per channel then
    averaged.  Windows run over the 'valid' interior; with a mask, only
    windows centred on masked pixels count."""
    if a.shape != b.shape:
        raise InvalidArgumentError("ssim inputs must share a shape")
    if min(a.shape[0], a.shape[1]) < window:
        raise InvalidArgumentError(f"image smaller than the {window}px window")
    win = _gaussian_window(window, SSIM_SIGMA)
    c1 = (k1 * 1.0) ** 2
    c2 = (k2 * 1.0) ** 2
    if a.ndim == 2:
        a = a[:, :, None]
        b = b[:, :, None]
    half = window // 2
    sel = None
    if mask is not None:
        core = mask[half:mask.shape[0] - half, half:mask.shape[1] - half] > 0.5
        if np.any(core):
            sel = core
    vals = []
    for ch in range(a.shape[2]):
        x = a[:, :, ch]
        y = b[:, :, ch]
        mu_x = _filter_valid(x, win)
        mu_y = _filter_valid(y, win)
        xx = _filter_valid(x * x, win) - mu_x * mu_x
        yy = _filter_valid(y * y, win) - mu_y * mu_y
        xy = _filter_valid(x * y, win) - mu_x * mu_y
        num = (2.0 * mu_x * mu_y + c1) * (2.0 * xy + c2)
        den = (mu_x * mu_x + mu_y * mu_y + c1) * (xx + yy + c2)
        smap = num / den
        vals.append(float(np.mean(smap[sel])) if sel is not None else float(np.mean(smap)))
    return float(np.mean(vals))


VISIBLE = "visible"
INVISIBLE = "invisible"


def in_observed_range(azimuth: float, observed_range: tuple[float, float]) -> bool:
    start, end = observed_range
    span = (end - start) % 360.0
    if span == 0.0:
        span = 360.0
    return (azimuth - start) % 360.0 <= span


@dataclass
class MetricRow:
    view_id: str
    azimuth: float
    region: str
    psnr: float
    ssim: float
    perceptual: float


@dataclass
class MetricReport:
    rows: list[MetricRow]
    perceptual_kind: str = MULTISCALE_L1

    def aggregate(self, region: str | None = None) -> dict:
        rows = [r for r in self.rows if region is None or r.region == region]
        if not rows:
            return {"count": 0, "psnr": float("nan"), "ssim": float("nan"),
                    "perceptual": float("nan")}
        return {
            "count": len(rows),
            "psnr": float(np.mean([r.psnr for r in rows])),
            "ssim": float(np.mean([r.ssim for r in rows])),
            "perceptual": float(np.mean([r.perceptual for r in rows])),
        }

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["view_id", "azimuth", "region", "psnr_db", "ssim",
                    f"perceptual[{self.perceptual_kind}]"])
        for r in self.rows:
            w.writerow([r.view_id, f"{r.azimuth:.3f}", r.region,
                        f"{r.psnr:.4f}", f"{r.ssim:.6f}", f"{r.perceptual:.6f}"])
        for region in (VISIBLE, INVISIBLE, None):
            agg = self.aggregate(region)
            w.writerow([f"aggregate[{region or 'total'}]", "", region or "total",
                        f"{agg['psnr']:.4f}", f"{agg['ssim']:.6f}",
                        f"{agg['perceptual']:.6f}"])
        return out.getvalue()

    def to_text(self) -> str:
        lines = [f"{'view':>16} {'azim':>8} {'region':>10} {'psnr':>8} "
                 f"{'ssim':>8} {'perc':>8}"]
        for r in self.rows:
            lines.append(f"{r.view_id:>16} {r.azimuth:8.2f} {r.region:>10} "
                         f"{r.psnr:8.3f} {r.ssim:8.4f} {r.perceptual:8.4f}")
        for region in (VISIBLE, INVISIBLE, None):
            agg = self.aggregate(region)
            name = region or "total"
            lines.append(f"{'mean[' + name + ']':>16} {'':8} {name:>10} "
                         f"{agg['psnr']:8.3f} {agg['ssim']:8.4f} "
                         f"{agg['perceptual']:8.4f}")
        return "\n".join(lines) + "\n"


def evaluate(cloud, ground_truth_views, observed_range: tuple[float, float],
             perceptual_kind: str = MULTISCALE_L1, bridge_cfg=None,
             full_frame: bool = False,
             background: tuple[float, float, float] = (1.0, 1.0, 1.0)
             ) -> MetricReport:
    """Render every ground-truth view, score it over the foreground mask and
    classify it visible/invisible by azimuth."""
    from .splat.render import render  # local import to keep metrics standalone

    if not ground_truth_views:
        raise InvalidArgumentError("need at least one ground-truth view")
    rows = []
    for obs in ground_truth_views:
        h, w = obs.image.shape[:2]
        out = render(cloud, obs.camera, w, h)
        if full_frame:
            bg = np.asarray(background)
            rendered = out.color + (1.0 - out.alpha)[:, :, None] * bg[None, None, :]
            mask = np.ones((h, w))
        else:
            rendered = out.color
            mask = obs.mask
        region = VISIBLE if in_observed_range(obs.view_spec.azimuth,
                                              observed_range) else INVISIBLE
        rows.append(MetricRow(
            view_id=obs.view_id, azimuth=obs.view_spec.azimuth, region=region,
            psnr=psnr(rendered, obs.image, mask),
            ssim=ssim(rendered, obs.image, mask),
            perceptual=perceptual_value(rendered, obs.image, mask,
                                        perceptual_kind, bridge_cfg)))
    rows.sort(key=lambda r: r.view_id)
    return MetricReport(rows=rows, perceptual_kind=perceptual_kind)
