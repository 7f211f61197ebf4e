"""Command-line interface: synth | init | sample | refine | eval | render | config.

Exit codes: 0 ok, 2 usage or data problem, 3 optimization failure,
4 bridge failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .bridge import BridgeConfig, BridgePredictor, KIND_MVD
from .dataset import Dataset, load_dataset
from .diffusion import (FusionWeights, PriorBundle, SampleOptions,
                        make_schedule, sample, schedule_weights)
from .errors import (BridgeError, DatasetError, InvalidArgumentError,
                     OptimizationFailureError, Zp3Error)
from .io_image import save_png
from .metrics import INVISIBLE, VISIBLE, evaluate, in_observed_range
from .priors import render_prior_source
from .reconstruct import (Observation, coarse_fit, init_cloud, masked_psnr_over,
                          refine)
from .splat.cloud import load_cloud, save_cloud
from .splat.render import render
from .synth import ToyOracleProvider, toy_provider_for_dataset, write_dataset
from .views import ViewSpec, camera_from_spec, make_input_set

LOCK_NAME = ".zp3.lock"


@contextmanager
def _dir_lock(directory: Path):
    directory.mkdir(parents=True, exist_ok=True)
    lock = directory / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise DatasetError(
            f"output directory {directory} is locked by another writer "
            f"(remove {lock} if stale)")
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        try:
            lock.unlink()
        except OSError:
            pass


def _build_config(args) -> cfgmod.RunConfig:
    cfg = cfgmod.RunConfig()
    if getattr(args, "config", None):
        cfg = cfgmod.load_config(args.config)
    overrides = list(getattr(args, "set", []) or [])
    if overrides:
        cfg = cfgmod.apply_overrides(cfg, overrides)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def _mvd_provider(ds: Dataset, cfg: cfgmod.RunConfig, width: int, height: int):
    """Oracle provider from the dataset's generating cloud, or a bridge."""
    sched = make_schedule(cfg.schedule.steps, cfg.schedule.kind)
    if ds.gt_cloud_path is not None:
        gt = load_cloud(ds.gt_cloud_path)
        radius = ds.observations[0].view_spec.radius
        return toy_provider_for_dataset(
            gt, ds.observed_range, sched, width, height,
            background=cfg.render.background, seed=cfg.seed, radius=radius)
    if cfg.bridge.enabled:
        return _BridgeProvider(ds, cfg)
    raise DatasetError(
        "no MVD source: dataset has no gt_cloud and no bridge is configured")


class _BridgeProvider:
    """Conditions a bridge backend on the dataset views nearest the input set."""

    def __init__(self, ds: Dataset, cfg: cfgmod.RunConfig):
        self._cfg = BridgeConfig(transport=cfg.bridge.transport,
                                 executable=tuple(cfg.bridge.executable),
                                 watch_dir=cfg.bridge.watch_dir,
                                 timeout=cfg.bridge.timeout)
        cond_specs = make_input_set(ds.observed_range, 3)
        train = ds.training_views()
        self._cond = []
        for spec in cond_specs:
            nearest = min(train, key=lambda o: abs(o.view_spec.azimuth - spec.azimuth))
            self._cond.append((nearest.image * 2.0 - 1.0, nearest.view_spec))

    def bundle_for(self, view, cam, lf_image, batch_index) -> PriorBundle:
        from .views import classify_view
        mvd = []
        for ci, (img, spec) in enumerate(self._cond):
            predictor = BridgePredictor(self._cfg, [img], kind=KIND_MVD)
            mvd.append((predictor, classify_view(spec, view.azimuth), f"cond{ci}"))
        return PriorBundle(mvd=mvd, lf_image=lf_image, hf=None)


def _write_json(path: Path, payload: dict):
    path.write_text(json.dumps(payload, indent=2, sort_keys=True))


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    out = Path(args.out)
    with _dir_lock(out):
        write_dataset(out, seed=args.seed, width=args.size, height=args.size,
                      n_azimuths=args.views,
                      elevations=tuple(float(e) for e in args.elevations.split(",")),
                      observed_range=tuple(float(v) for v in args.observed_range.split(",")))
    print(f"wrote toy dataset to {out}")
    return 0


def cmd_init(args) -> int:
    cfg = _build_config(args)
    ds = load_dataset(args.dataset)
    train = ds.training_views()
    if not train:
        raise DatasetError("no views inside the observed range")
    out_path = Path(args.out)
    with _dir_lock(out_path.parent if out_path.parent != Path("") else Path(".")):
        cloud = init_cloud(train, args.points, cfg.seed)
        history: list = []
        cloud = coarse_fit(cloud, train, args.steps, cfg, seed=cfg.seed,
                           loss_history=history)
        save_cloud(out_path, cloud)
        train_psnr = masked_psnr_over(cloud, train, cfg.render.dilation)
        _write_json(out_path.with_suffix(".json"), {
            "config": cfgmod.config_to_dict(cfg),
            "seed": cfg.seed,
            "stage": "coarse",
            "steps": args.steps,
            "points": args.points,
            "n_gaussians": len(cloud),
            "metrics": {"masked_train_psnr_db": train_psnr,
                        "loss_first": history[0], "loss_last": history[-1]},
        })
    print(f"coarse checkpoint: {out_path} ({len(cloud)} gaussians)")
    print(f"masked training PSNR: {train_psnr:.2f} dB")
    return 0


def cmd_sample(args) -> int:
    cfg = _build_config(args)
    cloud = load_cloud(args.checkpoint)
    az, el = (float(v) for v in args.view.split(","))
    if not (0.0 <= az < 360.0) or not (-90.0 <= el <= 90.0):
        raise InvalidArgumentError("view must lie in [0,360) x [-90,90]")
    ds = load_dataset(args.dataset) if args.dataset else None
    if ds is None:
        raise DatasetError("sample needs --dataset for intrinsics and the MVD source")
    w, h = cfg.render.width, cfg.render.height
    ref = ds.observations[0]
    scale = w / ref.image.shape[1]
    spec = ViewSpec(azimuth=az, elevation=el, radius=ref.view_spec.radius,
                    target=ds.target)
    cam = camera_from_spec(spec, ref.camera.fx * scale, ref.camera.fy * scale,
                           w / 2.0, h / 2.0)
    provider = _mvd_provider(ds, cfg, w, h)
    lf = render_prior_source(cloud, cam, w, h, cfg.render.background)
    bundle = provider.bundle_for(spec, cam, lf, 0)
    sched = make_schedule(cfg.schedule.steps, cfg.schedule.kind)
    weights = FusionWeights(cfg.fusion.tau, cfg.fusion.sigma, cfg.fusion.eta)
    options = SampleOptions(canonical_ddim=cfg.sampler.canonical_ddim,
                            normalize_mvd=cfg.fusion.normalize,
                            invert_t=cfg.fusion.invert_t,
                            lf_enabled=cfg.sampler.lf_enabled,
                            noise_eta=cfg.sampler.noise_eta,
                            variance_compensation=cfg.sampler.variance_compensation,
                            vc_delta=cfg.sampler.vc_delta)
    img = sample((h, w, 3), bundle, sched, weights, cfg.seed, options)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_png(out_path, np.clip(img.to_pixel().data, 0.0, 1.0))
    fw = weights
    _write_json(out_path.with_suffix(out_path.suffix + ".json"), {
        "view": {"azimuth": az, "elevation": el},
        "seed": cfg.seed,
        "steps": cfg.schedule.steps,
        "weights": [{"t": t, "w_lf": schedule_weights(t, fw)[0],
                     "w_hf": schedule_weights(t, fw)[1]}
                    for t in range(cfg.schedule.steps)],
    })
    print(f"sampled view ({az}, {el}) -> {out_path}")
    return 0


def cmd_refine(args) -> int:
    cfg = _build_config(args)
    ds = load_dataset(args.dataset)
    out_dir = Path(args.out)
    cloud = load_cloud(args.checkpoint)
    train = ds.training_views()
    if not train:
        raise DatasetError("no views inside the observed range")
    w, h = cfg.render.width, cfg.render.height
    provider = _mvd_provider(ds, cfg, w, h)

    start_batch = 0
    if args.resume and out_dir.exists():
        done = sorted(out_dir.glob("batch_*.zp3g"))
        if done:
            last = done[-1]
            start_batch = int(last.stem.split("_")[1]) + 1
            cloud = load_cloud(last)
            print(f"resuming after {last.name}")

    visible = [o for o in ds.observations
               if in_observed_range(o.view_spec.azimuth, ds.observed_range)]
    invisible = [o for o in ds.observations
                 if not in_observed_range(o.view_spec.azimuth, ds.observed_range)]
    history = []

    with _dir_lock(out_dir):
        def on_batch(batch_index, batch_cloud, supervision):
            save_cloud(out_dir / f"batch_{batch_index:03d}.zp3g", batch_cloud)
            sup_dir = out_dir / "supervision" / f"batch_{batch_index:03d}"
            sup_dir.mkdir(parents=True, exist_ok=True)
            for obs in supervision:
                save_png(sup_dir / f"{obs.view_id}.png", obs.image)
            entry = {"batch": batch_index,
                     "visible_psnr_db": masked_psnr_over(batch_cloud, visible,
                                                         cfg.render.dilation)}
            if invisible:
                entry["invisible_psnr_db"] = masked_psnr_over(
                    batch_cloud, invisible, cfg.render.dilation)
            history.append(entry)
            _write_json(out_dir / f"batch_{batch_index:03d}.json", entry)

        refined = refine(cloud, train, cfg, provider, cfg.seed,
                         batch_callback=on_batch, start_batch=start_batch)
        save_cloud(out_dir / "final.zp3g", refined)
        summary = {"config": cfgmod.config_to_dict(cfg), "seed": cfg.seed,
                   "history": history,
                   "final": {"visible_psnr_db": masked_psnr_over(
                       refined, visible, cfg.render.dilation)}}
        if invisible:
            before = masked_psnr_over(cloud, invisible, cfg.render.dilation)
            after = masked_psnr_over(refined, invisible, cfg.render.dilation)
            summary["final"]["invisible_psnr_db"] = after
            summary["coarse_invisible_psnr_db"] = before
            print(f"invisible-region masked PSNR: coarse {before:.2f} dB "
                  f"-> refined {after:.2f} dB")
        _write_json(out_dir / "final.json", summary)
    print(f"refined checkpoint: {out_dir / 'final.zp3g'}")
    return 0


def cmd_eval(args) -> int:
    cfg = _build_config(args)
    ds = load_dataset(args.dataset)
    cloud = load_cloud(args.checkpoint)
    report = evaluate(cloud, ds.observations, ds.observed_range,
                      full_frame=args.full_frame,
                      background=cfg.render.background)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(report.to_csv())
    text = report.to_text()
    out_path.with_suffix(".txt").write_text(text)
    print(text, end="")
    return 0


def cmd_render(args) -> int:
    cfg = _build_config(args)
    cloud = load_cloud(args.checkpoint)
    out_dir = Path(args.out)
    size = args.size
    bg = np.asarray(cfg.render.background)
    with _dir_lock(out_dir):
        for k in range(args.orbit):
            azimuth = 360.0 * k / args.orbit
            spec = ViewSpec(azimuth=azimuth, elevation=args.elevation,
                            radius=args.radius)
            f = 1.4 * size
            cam = camera_from_spec(spec, f, f, size / 2.0, size / 2.0)
            out = render(cloud, cam, size, size, dilation=cfg.render.dilation)
            img = out.color + (1.0 - out.alpha)[:, :, None] * bg[None, None, :]
            save_png(out_dir / f"{k:03d}.png", img)
    print(f"wrote {args.orbit} orbit frames to {out_dir}")
    return 0


def cmd_config(args) -> int:
    if args.dump_defaults:
        print(cfgmod.dump_config(cfgmod.RunConfig()))
        return 0
    if args.config:
        print(cfgmod.dump_config(_build_config(args)))
        return 0
    print(cfgmod.dump_config(cfgmod.RunConfig()))
    return 0


def _add_common(p, config=True):
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    if config:
        p.add_argument("--config", type=str, default=None, help="JSON config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="config override, e.g. schedule.steps=20")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="zp3", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the bundled toy dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--views", type=int, default=16)
    p.add_argument("--observed-range", default="0,90")
    p.add_argument("--elevations", default="0")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("init", help="seed and coarse-fit a scene from a dataset")
    p.add_argument("dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--points", type=int, default=1000)
    p.add_argument("--steps", type=int, default=800)
    _add_common(p)
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("sample", help="run one fused sampling chain for a view")
    p.add_argument("checkpoint")
    p.add_argument("--view", required=True, metavar="AZ,EL")
    p.add_argument("--out", required=True)
    p.add_argument("--dataset", default=None)
    _add_common(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("refine", help="iterative rotated-view refinement")
    p.add_argument("checkpoint")
    p.add_argument("dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--resume", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("eval", help="visible/invisible metric report")
    p.add_argument("checkpoint")
    p.add_argument("dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--full-frame", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", help="render an azimuth orbit")
    p.add_argument("checkpoint")
    p.add_argument("--orbit", type=int, default=8)
    p.add_argument("--out", required=True)
    p.add_argument("--elevation", type=float, default=0.0)
    p.add_argument("--radius", type=float, default=2.2)
    p.add_argument("--size", type=int, default=128)
    _add_common(p)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("config", help="print configuration")
    p.add_argument("--dump-defaults", action="store_true")
    p.add_argument("--config", type=str, default=None)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_config)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InvalidArgumentError, DatasetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OptimizationFailureError as exc:
        print(f"optimization failed: {exc}", file=sys.stderr)
        return 3
    except BridgeError as exc:
        print(f"bridge failure: {exc}", file=sys.stderr)
        return 4
    except Zp3Error as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
