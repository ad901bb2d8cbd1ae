"""Experiment configuration: a YAML key-value tree mapped onto dataclasses.

Unknown keys are fatal, so a misspelt ``zeta`` cannot silently fall back to a
default. See README.md for the full key reference.
"""

from __future__ import annotations

import dataclasses
import itertools
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from ..errors import ConfigurationError
from ..operator import LinearOperator, make_operator
from ..prior import GaussianMixturePrior, GaussianPrior, ScoreModel, squared_exponential_covariance
from ..sampler import STEP_SIZE_MODES, VARIANTS, ConditioningMethod
from ..schedule import DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_STEP_COUNT, ScheduleSpec

RESOLVED_CONFIG_NAME = "resolved_config.yaml"


@dataclass
class ScheduleConfig:
    beta_start: float = DEFAULT_BETA_START
    beta_end: float = DEFAULT_BETA_END
    step_count: int = DEFAULT_STEP_COUNT


@dataclass
class MixtureComponent:
    weight: float = 1.0
    mean: Any = 0.0
    cov: Any = 1.0


@dataclass
class PriorConfig:
    type: str = "gaussian"
    # scalar, per-coordinate list, full matrix, or
    # {kernel: squared_exponential, length_scale, variance, jitter}
    mean: Any = 0.0
    cov: Any = 1.0
    components: list[MixtureComponent] = field(default_factory=list)


@dataclass
class OperatorConfig:
    kind: str = "downsample_avg"
    factor: int = 4
    radius: int = 3
    sigma: float = 1.0
    value: float = 1.0
    noise_sigma: float = 0.05


@dataclass
class DataConfig:
    source: str = "synthetic"
    shape: list[int] = field(default_factory=lambda: [8, 8, 1])
    count: int = 16
    seed: int = 0
    path: str | None = None
    limit: int | None = None


@dataclass
class ConditioningConfig:
    step_size_mode: str = "residual_normalized"
    mcg_projection: bool = True
    deterministic_noise: bool = False


@dataclass
class SweepConfig:
    variants: list[str] = field(default_factory=lambda: ["dps"])
    zeta: list[float] = field(default_factory=lambda: [1.0])
    steps: list[int] | None = None  # defaults to [schedule.step_count]


@dataclass
class MetricsConfig:
    max_value: float = 1.0
    clamp_output: bool | None = None  # None: clamp to [0, 1] for image data only


@dataclass
class VerifyConfig:
    variant: str = "dps"
    zeta: float = 1.0
    step_count: int = DEFAULT_STEP_COUNT
    chains: int = 2000
    y: list[float] | None = None  # defaults to the first dataset measurement
    sigma_slack: float = 1.0


@dataclass
class EvaluateConfig:
    recon_dir: str | None = None
    ref_dir: str | None = None


@dataclass
class ExperimentConfig:
    seed: int = 0
    workers: int = 1
    repeats: int = 1
    chunk_size: int = 256
    output_dir: str = "runs/default"
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    prior: PriorConfig = field(default_factory=PriorConfig)
    operator: OperatorConfig = field(default_factory=OperatorConfig)
    data: DataConfig = field(default_factory=DataConfig)
    conditioning: ConditioningConfig = field(default_factory=ConditioningConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    verify: VerifyConfig = field(default_factory=VerifyConfig)
    evaluate: EvaluateConfig = field(default_factory=EvaluateConfig)

    @property
    def schedule_spec(self) -> ScheduleSpec:
        s = self.schedule
        return ScheduleSpec(s.beta_start, s.beta_end, s.step_count)

    @property
    def step_counts(self) -> list[int]:
        return list(self.sweep.steps) if self.sweep.steps else [self.schedule.step_count]

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(int(v) for v in self.data.shape)

    def conditioning_method(self, variant: str, zeta: float | None) -> ConditioningMethod:
        return ConditioningMethod(
            variant=variant,
            zeta=0.0 if zeta is None else float(zeta),
            step_size_mode=self.conditioning.step_size_mode,
            projection=self.conditioning.mcg_projection,
        )


_NESTED = {
    "schedule": ScheduleConfig, "prior": PriorConfig, "operator": OperatorConfig,
    "data": DataConfig, "conditioning": ConditioningConfig, "sweep": SweepConfig,
    "metrics": MetricsConfig, "verify": VerifyConfig, "evaluate": EvaluateConfig,
}


def _build(cls, data, path: str):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path or 'config'}: expected a mapping, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        where = ", ".join(f"{path}.{k}" if path else k for k in unknown)
        raise ConfigurationError(f"unknown configuration key(s): {where}")
    kwargs = {}
    for key, value in data.items():
        sub = f"{path}.{key}" if path else key
        if cls is ExperimentConfig and key in _NESTED:
            kwargs[key] = _build(_NESTED[key], value, sub)
        elif cls is PriorConfig and key == "components":
            if not isinstance(value, list):
                raise ConfigurationError(f"{sub}: expected a list of components")
            kwargs[key] = [_build(MixtureComponent, v, f"{sub}[{i}]") for i, v in enumerate(value)]
        else:
            kwargs[key] = value
    return cls(**kwargs)


def _require(cond: bool, key: str, message: str):
    if not cond:
        raise ConfigurationError(f"{key}: {message}")


def _is_int(v) -> bool:
    return isinstance(v, (int, np.integer)) and not isinstance(v, bool)


def _is_number(v) -> bool:
    return isinstance(v, (int, float, np.integer, np.floating)) and not isinstance(v, bool)


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    """Check invariants and normalise types; raises ``ConfigurationError`` naming the key."""
    for key in ("seed", "workers", "repeats", "chunk_size"):
        _require(_is_int(getattr(cfg, key)), key, "must be an integer")
    _require(cfg.seed >= 0, "seed", "must be >= 0")
    _require(cfg.workers >= 1, "workers", "must be >= 1")
    _require(cfg.repeats >= 1, "repeats", "must be >= 1")
    _require(cfg.chunk_size >= 1, "chunk_size", "must be >= 1")

    s = cfg.schedule
    _require(_is_number(s.beta_start) and _is_number(s.beta_end), "schedule", "beta endpoints must be numbers")
    _require(0 < s.beta_start <= s.beta_end < 1, "schedule", "need 0 < beta_start <= beta_end < 1")
    _require(_is_int(s.step_count) and s.step_count >= 1, "schedule.step_count", "must be a positive integer")

    _require(cfg.prior.type in ("gaussian", "mixture"), "prior.type", "must be 'gaussian' or 'mixture'")
    if cfg.prior.type == "mixture":
        _require(len(cfg.prior.components) >= 1, "prior.components", "mixture needs at least one component")

    op = cfg.operator
    _require(op.kind in ("identity", "scale", "downsample_avg", "gaussian_blur"), "operator.kind",
             f"unknown operator kind {op.kind!r}")
    _require(_is_number(op.noise_sigma) and op.noise_sigma >= 0, "operator.noise_sigma", "must be >= 0")

    d = cfg.data
    _require(d.source in ("synthetic", "images"), "data.source", "must be 'synthetic' or 'images'")
    _require(isinstance(d.shape, list) and len(d.shape) == 3 and all(_is_int(v) and v > 0 for v in d.shape),
             "data.shape", "must be [height, width, channels] of positive integers")
    _require(_is_int(d.count) and d.count >= 1, "data.count", "must be >= 1")
    _require(_is_int(d.seed) and d.seed >= 0, "data.seed", "must be a non-negative integer")
    if d.source == "images":
        _require(d.path is not None, "data.path", "required for image data")
        _require(Path(d.path).is_dir(), "data.path", f"directory {d.path!r} does not exist")
    _require(d.limit is None or (_is_int(d.limit) and d.limit >= 1), "data.limit", "must be >= 1")

    c = cfg.conditioning
    _require(c.step_size_mode in STEP_SIZE_MODES, "conditioning.step_size_mode",
             f"must be one of {', '.join(STEP_SIZE_MODES)}")

    sw = cfg.sweep
    _require(isinstance(sw.variants, list) and len(sw.variants) > 0, "sweep.variants", "must be a non-empty list")
    for v in sw.variants:
        _require(v in VARIANTS, "sweep.variants", f"unknown variant {v!r}")
    _require(len(set(sw.variants)) == len(sw.variants), "sweep.variants", "duplicate entries")
    _require(isinstance(sw.zeta, list) and len(sw.zeta) > 0, "sweep.zeta", "must be a non-empty list")
    for z in sw.zeta:
        _require(_is_number(z) and math.isfinite(z) and z >= 0, "sweep.zeta", f"invalid step size {z!r}")
    sw.zeta = [float(z) for z in sw.zeta]
    if sw.steps is not None:
        _require(isinstance(sw.steps, list) and len(sw.steps) > 0, "sweep.steps", "must be a non-empty list")
        for t in sw.steps:
            _require(_is_int(t) and t >= 1, "sweep.steps", f"invalid step count {t!r}")

    _require(_is_number(cfg.metrics.max_value) and cfg.metrics.max_value > 0, "metrics.max_value", "must be > 0")

    v = cfg.verify
    _require(v.variant in VARIANTS, "verify.variant", f"unknown variant {v.variant!r}")
    _require(_is_number(v.zeta) and v.zeta >= 0, "verify.zeta", "must be >= 0")
    _require(_is_int(v.step_count) and v.step_count >= 1, "verify.step_count", "must be >= 1")
    _require(_is_int(v.chains) and v.chains >= 2, "verify.chains", "must be >= 2")
    _require(_is_number(v.sigma_slack) and v.sigma_slack > 0, "verify.sigma_slack", "must be > 0")

    for key in ("recon_dir", "ref_dir"):
        p = getattr(cfg.evaluate, key)
        _require(p is None or Path(p).is_dir(), f"evaluate.{key}", f"directory {p!r} does not exist")
    return cfg


def _resolve_path(p: str | None, base: Path) -> str | None:
    if p is None:
        return None
    q = Path(p)
    return str(q if q.is_absolute() else (base / q).resolve())


def load_config(path: str | os.PathLike, overrides: dict | None = None) -> ExperimentConfig:
    """Read, fill defaults, apply CLI overrides and validate a configuration file.

    Relative paths inside the file resolve against the file's directory.
    """
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"cannot parse config {path}: {exc}") from exc
    cfg = _build(ExperimentConfig, raw, "")
    base = path.parent.resolve()
    cfg.data.path = _resolve_path(cfg.data.path, base)
    cfg.evaluate.recon_dir = _resolve_path(cfg.evaluate.recon_dir, base)
    cfg.evaluate.ref_dir = _resolve_path(cfg.evaluate.ref_dir, base)
    cfg.output_dir = _resolve_path(cfg.output_dir, base)
    for key, value in (overrides or {}).items():
        if value is not None:
            setattr(cfg, key, value)
    return validate(cfg)


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(dataclasses.asdict(cfg), sort_keys=False, default_flow_style=None)


def write_resolved_config(cfg: ExperimentConfig, out_dir: str | os.PathLike) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    target = out / RESOLVED_CONFIG_NAME
    target.write_text(dump_config(cfg), encoding="utf-8")
    return target


def candidate_settings(cfg: ExperimentConfig) -> list[tuple[int, float]]:
    """Every (step_count, zeta) pair of the sweep grid, before variant filtering."""
    return list(itertools.product(cfg.step_counts, cfg.sweep.zeta))


def sweep_settings(cfg: ExperimentConfig) -> list[tuple[str, int, float | None]]:
    """(variant, step_count, zeta) triples in run order; vanilla ignores zeta."""
    out = []
    for variant in cfg.sweep.variants:
        for steps in cfg.step_counts:
            if variant == "vanilla":
                out.append((variant, steps, None))
            else:
                out.extend((variant, steps, z) for z in cfg.sweep.zeta)
    return out


def _covariance(spec, shape, key: str):
    if isinstance(spec, dict):
        unknown = set(spec) - {"kernel", "length_scale", "variance", "jitter"}
        _require(not unknown, key, f"unknown kernel keys {sorted(unknown)}")
        _require(spec.get("kernel") == "squared_exponential", f"{key}.kernel", "only 'squared_exponential'")
        _require("length_scale" in spec, f"{key}.length_scale", "required")
        return squared_exponential_covariance(
            shape, float(spec["length_scale"]), float(spec.get("variance", 1.0)), float(spec.get("jitter", 1e-6))
        )
    return np.asarray(spec, dtype=np.float64)


def build_prior(cfg: ExperimentConfig, shape: tuple[int, ...] | None = None) -> ScoreModel:
    shape = tuple(shape or cfg.image_shape)
    dim = math.prod(shape)
    p = cfg.prior
    try:
        if p.type == "gaussian":
            model = GaussianPrior(p.mean, _covariance(p.cov, shape, "prior.cov"), dim=dim)
        else:
            comps = p.components
            model = GaussianMixturePrior(
                [c.weight for c in comps],
                [c.mean for c in comps],
                [_covariance(c.cov, shape, f"prior.components[{i}].cov") for i, c in enumerate(comps)],
                dim=dim,
            )
    except ConfigurationError:
        raise
    except Exception as exc:
        raise ConfigurationError(f"prior: {exc}") from exc
    if model.dim != dim:
        raise ConfigurationError(f"prior dimension {model.dim} does not match data shape {shape} (d={dim})")
    return model


def build_operator(cfg: ExperimentConfig, shape: tuple[int, ...] | None = None) -> LinearOperator:
    o = cfg.operator
    return make_operator(
        o.kind, tuple(shape or cfg.image_shape),
        factor=o.factor, radius=o.radius, sigma=o.sigma, value=o.value,
    )
