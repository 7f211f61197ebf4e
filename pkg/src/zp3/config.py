"""Run configuration: nested dataclasses with a JSON round-trip.

Defaults follow the reference hyper-parameters: tau=22, sigma=7, eta=4,
delta_theta=45, delta_e=6, lambda=1, 50 DDIM steps, 3000 refinement steps
per iteration with densification during the first 1300.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import InvalidArgumentError


@dataclass
class ScheduleConfig:
    kind: str = "linear-beta"
    steps: int = 50


@dataclass
class FusionConfig:
    tau: float = 22.0
    sigma: float = 7.0
    eta: float = 4.0
    normalize: bool = True     # normalize MVD weights to sum 1
    invert_t: bool = False     # flip the step index fed to the weight schedule


@dataclass
class SamplerConfig:
    canonical_ddim: bool = False
    lf_enabled: bool = True
    noise_eta: float = 0.0
    variance_compensation: bool = False
    vc_delta: float = 1e-8


@dataclass
class PlanConfig:
    theta0: float = 0.0
    delta_theta: float = 45.0
    delta_e: float = 6.0
    iterations: int = 8
    batch_size: int = 8
    elevations: tuple[float, ...] = (-30.0, 0.0, 30.0)


@dataclass
class LearningRates:
    position: float = 1.6e-4
    position_final_fraction: float = 0.01  # exponential decay endpoint
    sh: float = 2.5e-3
    opacity: float = 5e-2
    scale: float = 5e-3
    rotation: float = 1e-3


@dataclass
class DensityConfig:
    interval: int = 100
    grad_threshold: float = 2e-4
    clone_scale_fraction: float = 0.01
    split_factor: float = 1.6
    prune_opacity: float = 0.005


@dataclass
class RefineConfig:
    steps_per_iteration: int = 3000
    densify_until: int = 1300
    lam: float = 1.0
    perceptual: str = "multiscale-l1"
    supervision_weight: float = 1.0
    alpha_loss_weight: float = 0.1
    retain_supervision: bool = False
    lrs: LearningRates = field(default_factory=LearningRates)
    density: DensityConfig = field(default_factory=DensityConfig)

    def __post_init__(self):
        if self.densify_until > self.steps_per_iteration:
            raise InvalidArgumentError("densify_until must be <= steps_per_iteration")
        if self.lam < 0.0:
            raise InvalidArgumentError("lambda must be >= 0")


@dataclass
class RenderConfig:
    width: int = 64
    height: int = 64
    background: tuple[float, float, float] = (1.0, 1.0, 1.0)
    dilation: float = 0.3
    far_field_factor: float = 100.0
    far_field_enabled: bool = False


@dataclass
class BridgeSection:
    enabled: bool = False
    transport: str = "stdio-subprocess"
    executable: tuple[str, ...] = ()
    watch_dir: str = ""
    timeout: float = 10.0


@dataclass
class RunConfig:
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    plan: PlanConfig = field(default_factory=PlanConfig)
    refine: RefineConfig = field(default_factory=RefineConfig)
    render: RenderConfig = field(default_factory=RenderConfig)
    bridge: BridgeSection = field(default_factory=BridgeSection)
    seed: int = 0


_TUPLE_FIELDS = {"elevations", "executable", "background"}


def _from_dict(cls, data: dict):
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        if dataclasses.is_dataclass(f.type) or f.name in (
                "schedule", "fusion", "sampler", "plan", "refine", "render",
                "bridge", "lrs", "density"):
            sub = {"schedule": ScheduleConfig, "fusion": FusionConfig,
                   "sampler": SamplerConfig, "plan": PlanConfig,
                   "refine": RefineConfig, "render": RenderConfig,
                   "bridge": BridgeSection, "lrs": LearningRates,
                   "density": DensityConfig}[f.name]
            kwargs[f.name] = _from_dict(sub, value)
        elif f.name in _TUPLE_FIELDS:
            kwargs[f.name] = tuple(value)
        else:
            kwargs[f.name] = value
    return cls(**kwargs)


def config_to_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


def config_from_dict(data: dict) -> RunConfig:
    return _from_dict(RunConfig, data)


def dump_config(cfg: RunConfig) -> str:
    return json.dumps(config_to_dict(cfg), indent=2, sort_keys=True)


def load_config(path: str | Path) -> RunConfig:
    return config_from_dict(json.loads(Path(path).read_text()))


def apply_overrides(cfg: RunConfig, overrides: list[str]) -> RunConfig:
    """Apply ``section.key=value`` strings on top of a config (flags win)."""
    data = config_to_dict(cfg)
    for item in overrides:
        if "=" not in item:
            raise InvalidArgumentError(f"override {item!r} is not key=value")
        path, raw = item.split("=", 1)
        keys = path.strip().split(".")
        node = data
        for k in keys[:-1]:
            if k not in node or not isinstance(node[k], dict):
                raise InvalidArgumentError(f"unknown config section {k!r} in {item!r}")
            node = node[k]
        leaf = keys[-1]
        if leaf not in node:
            raise InvalidArgumentError(f"unknown config key {path!r}")
        try:
            node[leaf] = json.loads(raw)
        except json.JSONDecodeError:
            node[leaf] = raw  # bare strings stay strings
    return config_from_dict(data)
