"""Epsilon-prediction training loop with a hand-rolled Adam update."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..errors import ContractError, NumericalError
from ..schedule import NoiseSchedule
from .unet import DenoiserParams, loss_and_grads

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class Adam:
    def __init__(self, params: DenoiserParams, cfg: AdamConfig = AdamConfig()):
        self.cfg = cfg
        self.k = 0
        self.m = {n: np.zeros_like(v) for n, v in params.tensors.items()}
        self.v = {n: np.zeros_like(v) for n, v in params.tensors.items()}

    def step(self, params: DenoiserParams, grads: dict[str, np.ndarray]) -> None:
        c = self.cfg
        self.k += 1
        corr1 = 1.0 - c.beta1**self.k
        corr2 = 1.0 - c.beta2**self.k
        for name, p in params.tensors.items():
            g = grads[name].astype(p.dtype, copy=False)
            m, v = self.m[name], self.v[name]
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * (g * g)
            p -= (c.lr * (m / corr1) / (np.sqrt(v / corr2) + c.eps)).astype(p.dtype)


def noisy_batch(x0: np.ndarray, sched: NoiseSchedule, t: np.ndarray, noise: np.ndarray) -> np.ndarray:
    """Forward-diffuse ``x0`` to timesteps ``t``: sqrt(abar) x0 + sqrt(1 - abar) noise."""
    abar = sched.alphas_cum[t].astype(x0.dtype)[:, None, None, None]
    return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * noise


def _first_nonfinite(grads: dict[str, np.ndarray], order: list[str]) -> str | None:
    for name in order:
        if not np.isfinite(grads[name]).all():
            return name
    return None


def train(
    params: DenoiserParams,
    dataset: np.ndarray | Sequence,
    sched: NoiseSchedule,
    steps: int,
    rng: np.random.Generator | int = 0,
    batch_size: int = 16,
    optim: AdamConfig = AdamConfig(),
    on_step: Callable[[int, float], None] | None = None,
    log_every: int = 100,
    snapshot_every: int = 0,
    on_snapshot: Callable[[int, DenoiserParams], None] | None = None,
) -> DenoiserParams:
    """Minimise the noise-prediction MSE; returns a trained copy of ``params``.

    Each step draws a minibatch (with replacement), timesteps uniformly from
    ``[1, T]`` and Gaussian noise, all from ``rng``.  ``on_step(step, loss)``
    receives every training loss; ``on_snapshot(steps_done, params)`` is
    called every ``snapshot_every`` steps with the live parameters.
    """
    data = np.asarray(
        [getattr(s, "image", s) for s in dataset] if not isinstance(dataset, np.ndarray) else dataset,
        dtype=params.dtype,
    )
    if data.ndim != 4 or len(data) == 0:
        raise ContractError(f"dataset must be a non-empty (N, C, H, W) stack, got {data.shape}")
    if steps < 0:
        raise ContractError(f"steps must be >= 0, got {steps}")
    rng = np.random.default_rng(rng)
    params = params.copy()
    if steps == 0:
        return params
    opt = Adam(params, optim)
    order = params.names()
    running = None
    for step in range(steps):
        idx = rng.integers(len(data), size=batch_size)
        t = rng.integers(1, sched.T + 1, size=batch_size)
        noise = rng.standard_normal(size=(batch_size,) + data.shape[1:]).astype(data.dtype)
        x_t = noisy_batch(data[idx], sched, t, noise)
        loss, grads = loss_and_grads(params, x_t, t, noise)
        if not np.isfinite(loss):
            bad = _first_nonfinite(grads, order)
            raise NumericalError(
                f"non-finite loss at step {step}; first non-finite gradient: {bad or 'none'}"
            )
        opt.step(params, grads)
        if on_step is not None:
            on_step(step, loss)
        if on_snapshot is not None and snapshot_every and (step + 1) % snapshot_every == 0:
            on_snapshot(step + 1, params)
        running = loss if running is None else 0.98 * running + 0.02 * loss
        if log_every and (step + 1) % log_every == 0:
            log.info("step %d loss %.5f (smoothed %.5f)", step + 1, loss, running)
    return params
