"""Run configuration: typed blocks loaded from a flat ``section.key=value`` file.

Precedence, lowest first: defaults, config file, environment (paths and seed
only), command-line overrides.  Cross-field constraints are checked before
any command does work.
"""

from __future__ import annotations

import dataclasses
import os
import typing
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterable, Mapping

from .denoiser import AdamConfig, DenoiserConfig
from .errors import ConfigError
from .hspace import (
    BLEND_KINDS,
    MIN_OMEGA,
    STANDARDIZE_MODES,
    InjectionConfig,
    build_gamma_schedule,
    load_mask,
)
from .schedule import NoiseSchedule, TimestepPlan, make_plan, make_schedule

__all__ = ["RunConfig", "load_config", "parse_flat", "format_flat", "ENV_PREFIX"]

ENV_PREFIX = "CONTENTINJECT_"


@dataclass
class ScheduleBlock:
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    kind: str = "linear"
    eta: float = 0.0
    inference_steps: int = 50


@dataclass
class DenoiserBlock:
    resolution: int = 32
    channels: tuple[int, ...] = (16, 32, 64)
    levels: int = 3
    bottleneck_channels: int = 64
    temb_dim: int = 64
    groups: int = 4


@dataclass
class TrainBlock:
    steps: int = 6000
    batch_size: int = 16
    lr: float = 2e-4
    log_every: int = 500
    snapshot_every: int = 0


@dataclass
class DataBlock:
    n_samples: int = 4096
    n_pairs: int = 32


@dataclass
class InjectionBlock:
    gamma: float = 0.6
    gamma_schedule: str = "constant"
    omega: float = 0.3
    t_edit: int = 400
    t_boost: int = 200
    mask: str = ""
    blend_kind: str = "slerp"
    standardize_pt: str = "std_match"
    calibrate: bool = True
    boost: bool = True
    boost_power: int = 1


@dataclass
class SweepBlock:
    gamma: tuple[float, ...] = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
    omega: tuple[float, ...] = ()


@dataclass
class DiagnosticsBlock:
    pairing_shift: int = 1
    traces: bool = False


@dataclass
class PathsBlock:
    checkpoint: str = "checkpoint.npz"
    dataset: str = ""
    original: str = ""
    content: str = ""
    output: str = "out"


SECTIONS = {
    "schedule": ScheduleBlock,
    "denoiser": DenoiserBlock,
    "train": TrainBlock,
    "data": DataBlock,
    "injection": InjectionBlock,
    "sweep": SweepBlock,
    "diagnostics": DiagnosticsBlock,
    "paths": PathsBlock,
}
ENV_SECTIONS = ("paths",)


@dataclass
class RunConfig:
    schedule: ScheduleBlock = field(default_factory=ScheduleBlock)
    denoiser: DenoiserBlock = field(default_factory=DenoiserBlock)
    train: TrainBlock = field(default_factory=TrainBlock)
    data: DataBlock = field(default_factory=DataBlock)
    injection: InjectionBlock = field(default_factory=InjectionBlock)
    sweep: SweepBlock = field(default_factory=SweepBlock)
    diagnostics: DiagnosticsBlock = field(default_factory=DiagnosticsBlock)
    paths: PathsBlock = field(default_factory=PathsBlock)
    seed: int = 0

    # ---- derived objects -------------------------------------------------

    def make_schedule(self) -> NoiseSchedule:
        s = self.schedule
        return make_schedule(s.T, s.beta_start, s.beta_end, s.kind, s.eta)

    def make_plan(self, inject: bool = True) -> TimestepPlan:
        s, i = self.schedule, self.injection
        t_boost = i.t_boost if i.boost else 0
        return make_plan(s.T, s.inference_steps, i.t_edit if inject else None, t_boost)

    def denoiser_config(self) -> DenoiserConfig:
        d = self.denoiser
        return DenoiserConfig(
            resolution=d.resolution,
            widths=d.channels,
            bottleneck_channels=d.bottleneck_channels,
            temb_dim=d.temb_dim,
            groups=d.groups,
        )

    def adam(self) -> AdamConfig:
        return AdamConfig(lr=self.train.lr)

    def injection_config(self, **overrides) -> InjectionConfig:
        i = self.injection
        gamma = overrides.pop("gamma", i.gamma)
        if i.gamma_schedule != "constant" and 0.0 < gamma < 1.0:
            n = len(self.make_plan().inject_steps)
            gamma = build_gamma_schedule(i.gamma_schedule, gamma, n)
        mask = None
        if i.mask:
            mask = load_mask(i.mask, self.denoiser_config().bottleneck_shape[1:])
        kw = dict(
            gamma=gamma,
            omega=i.omega,
            t_edit=i.t_edit,
            t_boost=i.t_boost if i.boost else 0,
            mask=mask,
            standardize_pt=i.standardize_pt,
            blend_kind=i.blend_kind,
            calibrate=i.calibrate,
            boost_power=i.boost_power,
        )
        kw.update(overrides)
        return InjectionConfig(**kw)

    # ---- validation ------------------------------------------------------

    def validate(self, require_paths: Iterable[str] = ()) -> "RunConfig":
        s, d, i = self.schedule, self.denoiser, self.injection
        self.make_schedule()
        if not 1 <= s.inference_steps <= s.T:
            raise ConfigError("schedule.inference_steps", f"must lie in [1, {s.T}], got {s.inference_steps}")
        if d.levels != len(d.channels):
            raise ConfigError("denoiser.levels", f"{d.levels} levels but {len(d.channels)} channel widths")
        self.denoiser_config()
        if not 0 <= i.t_boost < i.t_edit <= s.T:
            raise ConfigError(
                "injection.t_edit", f"need 0 <= t_boost < t_edit <= T, got {i.t_boost}, {i.t_edit}, {s.T}"
            )
        if not 0.0 <= i.gamma <= 1.0:
            raise ConfigError("injection.gamma", f"must lie in [0, 1], got {i.gamma}")
        if not MIN_OMEGA <= i.omega <= 1.0:
            raise ConfigError("injection.omega", f"must lie in [{MIN_OMEGA}, 1], got {i.omega}")
        if i.gamma_schedule not in ("constant", "decreasing", "increasing"):
            raise ConfigError("injection.gamma_schedule", f"unknown kind {i.gamma_schedule!r}")
        if i.blend_kind not in BLEND_KINDS:
            raise ConfigError("injection.blend_kind", f"unknown blend kind {i.blend_kind!r}")
        if i.standardize_pt not in STANDARDIZE_MODES:
            raise ConfigError("injection.standardize_pt", f"unknown mode {i.standardize_pt!r}")
        if i.mask and not Path(i.mask).is_file():
            raise ConfigError("injection.mask", f"file not found: {i.mask}")
        for g in self.sweep.gamma:
            if not 0.0 <= g <= 1.0:
                raise ConfigError("sweep.gamma", f"value {g} outside [0, 1]")
        for w in self.sweep.omega:
            if not MIN_OMEGA <= w <= 1.0:
                raise ConfigError("sweep.omega", f"value {w} outside [{MIN_OMEGA}, 1]")
        for name, val in (("train.steps", self.train.steps), ("train.snapshot_every", self.train.snapshot_every),
                          ("train.batch_size", self.train.batch_size),
                          ("data.n_samples", self.data.n_samples), ("data.n_pairs", self.data.n_pairs)):
            if val < (0 if name in ("train.steps", "train.snapshot_every") else 1):
                raise ConfigError(name, f"out of range: {val}")
        if self.seed < 0:
            raise ConfigError("seed", f"must be >= 0, got {self.seed}")
        for key in require_paths:
            value = getattr(self.paths, key)
            if not value:
                raise ConfigError(f"paths.{key}", "required but not set")
            if not Path(value).exists():
                raise ConfigError(f"paths.{key}", f"not found: {value}")
        self.injection_config()
        return self

    # ---- serialization ---------------------------------------------------

    def items(self) -> list[tuple[str, object]]:
        out = []
        for section in SECTIONS:
            block = getattr(self, section)
            for f in fields(block):
                out.append((f"{section}.{f.name}", getattr(block, f.name)))
        out.append(("seed", self.seed))
        return out

    def set(self, key: str, raw: str) -> None:
        if key == "seed":
            self.seed = _coerce("seed", int, raw)
            return
        section, _, name = key.partition(".")
        if section not in SECTIONS or not name:
            raise ConfigError(key, "unknown configuration key")
        block = getattr(self, section)
        hints = typing.get_type_hints(type(block))
        if name not in hints:
            raise ConfigError(key, "unknown configuration key")
        setattr(block, name, _coerce(key, hints[name], raw))


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(_format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _coerce(key: str, kind, raw: str):
    raw = raw.strip()
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if typing.get_origin(kind) is tuple:
            inner = typing.get_args(kind)[0]
            return tuple(inner(p) for p in raw.split(",") if p.strip())
        return raw
    except ValueError:
        name = getattr(kind, "__name__", str(kind))
        raise ConfigError(key, f"cannot parse {raw!r} as {name}") from None


def parse_flat(text: str, source: str = "<config>") -> dict[str, str]:
    """``key=value`` lines; ``#`` starts a comment; later keys win."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError("config", f"{source}:{lineno}: expected key=value, got {line!r}")
        out[key.strip()] = value.strip()
    return out


def format_flat(cfg: RunConfig, header: Iterable[str] = ()) -> str:
    lines = [f"# {h}" for h in header]
    lines += [f"{k}={_format_value(v)}" for k, v in cfg.items()]
    return "\n".join(lines) + "\n"


def env_overrides(environ: Mapping[str, str]) -> dict[str, str]:
    """``CONTENTINJECT_SEED`` and ``CONTENTINJECT_PATHS_<KEY>`` only."""
    out = {}
    for var, value in environ.items():
        if not var.startswith(ENV_PREFIX):
            continue
        rest = var[len(ENV_PREFIX):].lower()
        if rest == "seed":
            out["seed"] = value
            continue
        section, _, name = rest.partition("_")
        if section not in ENV_SECTIONS:
            raise ConfigError(var, "environment may only override paths.* and seed")
        out[f"{section}.{name}"] = value
    return out


def load_config(
    path: str | Path | None = None,
    overrides: Mapping[str, str] | None = None,
    environ: Mapping[str, str] | None = None,
) -> RunConfig:
    cfg = RunConfig()
    layers = []
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError("config", f"file not found: {p}")
        layers.append(parse_flat(p.read_text(), str(p)))
    layers.append(env_overrides(os.environ if environ is None else environ))
    layers.append(dict(overrides or {}))
    for layer in layers:
        for key, raw in layer.items():
            cfg.set(key, raw)
    return cfg


def replace(cfg: RunConfig, **changes) -> RunConfig:
    """Deep copy with ``section__key=value`` style overrides applied."""
    new = RunConfig(**{s: dataclasses.replace(getattr(cfg, s)) for s in SECTIONS}, seed=cfg.seed)
    for key, value in changes.items():
        section, _, name = key.partition("__")
        if name:
            setattr(getattr(new, section), name, value)
        else:
            setattr(new, section, value)
    return new
