"""Discrete noise schedule, DDIM variance and inference-time respacing.

Indexing convention: ``alphas_cum[t]`` is the cumulative signal fraction at
timestep ``t`` for ``t = 0..T`` with ``alphas_cum[0] == 1``; ``betas[t - 1]``
is the variance added by step ``t``.  All schedule arithmetic is float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError

__all__ = [
    "NoiseSchedule",
    "TimestepPlan",
    "make_schedule",
    "make_plan",
    "sigma",
]


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    betas: np.ndarray
    alphas_cum: np.ndarray
    eta: float = 0.0

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        cum = np.asarray(self.alphas_cum, dtype=np.float64)
        if betas.shape != (self.T,) or cum.shape != (self.T + 1,):
            raise ContractError(
                f"schedule arrays must have lengths T={self.T} and T+1, "
                f"got {betas.shape} and {cum.shape}"
            )
        betas.setflags(write=False)
        cum.setflags(write=False)
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alphas_cum", cum)

    def alpha_bar(self, t: int) -> float:
        """Cumulative product of (1 - beta) up to and including step ``t``."""
        if not 0 <= t <= self.T:
            raise ContractError(f"timestep {t} outside [0, {self.T}]")
        return float(self.alphas_cum[t])

    def with_eta(self, eta: float) -> "NoiseSchedule":
        if eta < 0:
            raise ConfigError("schedule.eta", f"must be >= 0, got {eta}")
        return NoiseSchedule(self.T, self.betas, self.alphas_cum, float(eta))


def make_schedule(
    T: int = 1000,
    beta_start: float = 1e-4,
    beta_end: float = 0.02,
    kind: str = "linear",
    eta: float = 0.0,
) -> NoiseSchedule:
    if not isinstance(T, (int, np.integer)) or T < 1:
        raise ConfigError("schedule.T", f"must be an integer >= 1, got {T!r}")
    if not 0.0 < beta_start < 1.0:
        raise ConfigError("schedule.beta_start", f"must lie in (0, 1), got {beta_start}")
    if not 0.0 < beta_end < 1.0:
        raise ConfigError("schedule.beta_end", f"must lie in (0, 1), got {beta_end}")
    if beta_start > beta_end:
        raise ConfigError(
            "schedule.beta_start", f"must not exceed beta_end ({beta_start} > {beta_end})"
        )
    if kind != "linear":
        raise ConfigError("schedule.kind", f"unsupported schedule kind {kind!r}")
    if eta < 0:
        raise ConfigError("schedule.eta", f"must be >= 0, got {eta}")

    betas = np.linspace(beta_start, beta_end, int(T), dtype=np.float64)
    alphas_cum = np.empty(int(T) + 1, dtype=np.float64)
    alphas_cum[0] = 1.0
    # sequential product so that alphas_cum[t] == alphas_cum[t-1] * (1 - betas[t-1]) exactly
    for t in range(1, int(T) + 1):
        alphas_cum[t] = alphas_cum[t - 1] * (1.0 - betas[t - 1])
    return NoiseSchedule(int(T), betas, alphas_cum, float(eta))


def sigma(sched: NoiseSchedule, t: int, t_prev: int, eta: float | None = None) -> float:
    """DDIM noise scale for the jump ``t -> t_prev``.

    ``eta`` defaults to the schedule's own value.
    """
    if not 1 <= t <= sched.T:
        raise ContractError(f"timestep t={t} outside [1, {sched.T}]")
    if t_prev >= t:
        raise ContractError(f"t_prev must precede t (got t_prev={t_prev} >= t={t})")
    if t_prev < 0:
        raise ContractError(f"t_prev must be >= 0, got {t_prev}")
    eta = sched.eta if eta is None else float(eta)
    if eta < 0:
        raise ConfigError("schedule.eta", f"must be >= 0, got {eta}")
    if eta == 0.0:
        return 0.0
    a_t = sched.alphas_cum[t]
    a_prev = sched.alphas_cum[t_prev]
    ratio = max(1.0 - a_t / a_prev, 0.0)
    return float(eta * math.sqrt((1.0 - a_prev) / (1.0 - a_t)) * math.sqrt(ratio))


@dataclass(frozen=True)
class TimestepPlan:
    """Respaced inference steps, largest first.

    ``inject_steps`` are the steps with ``t >= t_edit``; ``boost_steps`` the
    steps with ``t < t_boost``.  The step after ``steps[-1]`` is always 0.
    """

    steps: tuple[int, ...]
    inject_steps: tuple[int, ...] = ()
    boost_steps: tuple[int, ...] = ()
    T: int = field(default=0)

    def __post_init__(self):
        steps = tuple(int(s) for s in self.steps)
        if not steps:
            raise ContractError("plan needs at least one step")
        if any(b >= a for a, b in zip(steps, steps[1:])):
            raise ContractError("plan steps must be strictly decreasing")
        if steps[-1] < 1 or (self.T and steps[0] > self.T):
            raise ContractError(f"plan steps must lie in [1, {self.T}]")
        inject = tuple(int(s) for s in self.inject_steps)
        boost = tuple(int(s) for s in self.boost_steps)
        if not set(inject) <= set(steps) or not set(boost) <= set(steps):
            raise ContractError("inject/boost steps must be a subset of the plan")
        if set(inject) & set(boost):
            raise ContractError("inject and boost steps overlap")
        object.__setattr__(self, "steps", steps)
        object.__setattr__(self, "inject_steps", inject)
        object.__setattr__(self, "boost_steps", boost)

    def pairs(self) -> list[tuple[int, int]]:
        """Consecutive ``(t, t_prev)`` pairs in reverse-process order, ending at 0."""
        nxt = self.steps[1:] + (0,)
        return list(zip(self.steps, nxt))

    def branch(self, t: int) -> str:
        if t in self.inject_steps:
            return "inject"
        if t in self.boost_steps:
            return "boost"
        return "plain"


def make_plan(
    T: int,
    n_steps: int,
    t_edit: int | None = None,
    t_boost: int = 0,
) -> TimestepPlan:
    """Uniform-stride respacing ``T, T - s, ..., T - (n-1)s`` with ``s = T // n_steps``.

    ``t_edit=None`` disables injection.
    """
    if n_steps < 1 or n_steps > T:
        raise ConfigError("schedule.inference_steps", f"must lie in [1, {T}], got {n_steps}")
    stride = T // n_steps
    steps = tuple(T - k * stride for k in range(n_steps))
    if t_edit is not None and not t_boost < t_edit <= T:
        raise ConfigError(
            "injection.t_edit", f"need t_boost < t_edit <= T, got t_boost={t_boost}, t_edit={t_edit}"
        )
    if t_boost < 0:
        raise ConfigError("injection.t_boost", f"must be >= 0, got {t_boost}")
    inject = tuple(s for s in steps if t_edit is not None and s >= t_edit)
    boost = tuple(s for s in steps if s < t_boost)
    return TimestepPlan(steps, inject, boost, T)
