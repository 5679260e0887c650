"""Deterministic DDIM stepping, inversion and the asymmetric (Asyrp) step.

Tensors may be a single image (C, H, W) or a batch (B, C, H, W); every
sample in a batch shares the timestep.  A "model" is either
:class:`DenoiserParams` or any object with ``forward(x, t)`` and
``forward_injected(x, t, h)`` methods returning :class:`DenoiserOutput`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..denoiser import unet
from ..denoiser.unet import DenoiserOutput, DenoiserParams
from ..errors import ConfigError, ContractError
from ..schedule import NoiseSchedule, TimestepPlan

__all__ = [
    "LatentState",
    "ZeroPredictor",
    "asyrp_step",
    "capture_content_trace",
    "ddim_invert",
    "ddim_step",
    "direction_to_xt",
    "predict_x0",
    "reconstruct",
    "run_model",
]


@dataclass
class LatentState:
    x: np.ndarray
    t: int

    def __post_init__(self):
        if not np.isfinite(self.x).all():
            raise ContractError(f"non-finite latent at t={self.t}")
        if self.t < 0:
            raise ContractError(f"timestep must be >= 0, got {self.t}")


def run_model(model, x: np.ndarray, t: int, h_new: np.ndarray | None = None) -> DenoiserOutput:
    if isinstance(model, DenoiserParams):
        if h_new is None:
            return unet.forward(model, x, t)
        return unet.forward_injected(model, x, t, h_new)
    if h_new is None:
        return model.forward(x, t)
    return model.forward_injected(x, t, h_new)


class ZeroPredictor:
    """Stub model predicting zero noise; its bottleneck is a constant ones tensor."""

    def __init__(self, bottleneck_shape=(4, 2, 2), n_skips: int = 1):
        self.bottleneck_shape = tuple(bottleneck_shape)
        self.n_skips = n_skips

    def forward(self, x, t):
        lead = x.shape[:-3]
        h = np.ones(lead + self.bottleneck_shape, dtype=x.dtype)
        return DenoiserOutput(np.zeros_like(x), h, [x.copy() for _ in range(self.n_skips)])

    def forward_injected(self, x, t, h_new):
        out = self.forward(x, t)
        return DenoiserOutput(out.eps, out.h, out.skips)


def predict_x0(x_t: np.ndarray, eps: np.ndarray, alpha_bar: float) -> np.ndarray:
    """Predicted clean sample ``(x_t - sqrt(1 - abar) eps) / sqrt(abar)``."""
    if not 0.0 < alpha_bar <= 1.0:
        raise ContractError(f"alpha_bar must lie in (0, 1], got {alpha_bar}")
    return (x_t - math.sqrt(1.0 - alpha_bar) * eps) / math.sqrt(alpha_bar)


def direction_to_xt(eps: np.ndarray, alpha_bar_prev: float, sigma: float = 0.0) -> np.ndarray:
    """Direction term ``sqrt(1 - abar_prev - sigma^2) eps``."""
    rad = 1.0 - alpha_bar_prev - sigma * sigma
    if rad < 0.0:
        if rad > -1e-12:
            rad = 0.0
        else:
            raise ConfigError(
                "schedule.eta", f"negative direction radicand {rad:.3e} (sigma too large for step)"
            )
    return math.sqrt(rad) * eps


def _update(x, eps_pred, eps_dir, a_t, a_prev, sigma=0.0, noise=None):
    x_prev = math.sqrt(a_prev) * predict_x0(x, eps_pred, a_t) + direction_to_xt(eps_dir, a_prev, sigma)
    if sigma > 0.0:
        x_prev = x_prev + sigma * noise
    return x_prev.astype(x.dtype, copy=False)


def ddim_step(
    state: LatentState,
    eps: np.ndarray,
    t_prev: int,
    sched: NoiseSchedule,
    sigma: float = 0.0,
    noise: np.ndarray | None = None,
) -> LatentState:
    """One reverse update ``x_t -> x_{t_prev}``; ``noise`` is required when ``sigma > 0``."""
    if t_prev >= state.t:
        raise ContractError(f"t_prev={t_prev} must be below t={state.t}")
    if sigma > 0.0 and noise is None:
        raise ContractError(f"sigma={sigma} > 0 at t={state.t} but no noise was supplied")
    a_t = sched.alpha_bar(state.t)
    a_prev = sched.alpha_bar(t_prev)
    return LatentState(_update(state.x, eps, eps, a_t, a_prev, sigma, noise), t_prev)


def reconstruct(
    x_T: LatentState | np.ndarray,
    model,
    sched: NoiseSchedule,
    plan: TimestepPlan,
    record_steps=(),
) -> tuple[np.ndarray, dict[int, np.ndarray]]:
    """Plain deterministic reverse process over ``plan``.

    Returns ``x_0`` and the bottleneck activations at ``record_steps``.
    """
    x = x_T.x if isinstance(x_T, LatentState) else np.asarray(x_T)
    wanted = set(record_steps)
    trace: dict[int, np.ndarray] = {}
    for t, t_prev in plan.pairs():
        out = run_model(model, x, t)
        if t in wanted:
            trace[t] = out.h
        x = _update(x, out.eps, out.eps, sched.alpha_bar(t), sched.alpha_bar(t_prev))
    return x, trace


def capture_content_trace(
    x_T: LatentState | np.ndarray, model, sched: NoiseSchedule, plan: TimestepPlan
) -> dict[int, np.ndarray]:
    """Bottleneck features of the plain reconstruction at every injection step."""
    _, trace = reconstruct(x_T, model, sched, plan, record_steps=plan.inject_steps)
    return trace


def ddim_invert(x_0: np.ndarray, model, sched: NoiseSchedule, plan: TimestepPlan) -> LatentState:
    """Run the deterministic update towards increasing ``t`` to obtain ``x_T``.

    Moving ``t_prev -> t`` uses the prediction at the current latent with the
    destination timestep, i.e. ``eps(x_t_prev, t)`` stands in for the unknown
    ``eps(x_t, t)``.
    """
    if sched.eta != 0.0:
        raise ContractError(f"inversion requires eta == 0, schedule has eta={sched.eta}")
    x = np.asarray(x_0)
    for t, t_prev in reversed(plan.pairs()):
        eps = run_model(model, x, t).eps
        a_t, a_prev = sched.alpha_bar(t), sched.alpha_bar(t_prev)
        x0_hat = predict_x0(x, eps, a_prev)
        x = (math.sqrt(a_t) * x0_hat + math.sqrt(1.0 - a_t) * eps).astype(x.dtype, copy=False)
    return LatentState(x, plan.steps[0])


def asyrp_step(
    state: LatentState, model, h_new: np.ndarray, t_prev: int, sched: NoiseSchedule
) -> LatentState:
    """Asymmetric step: the injected prediction feeds only the predicted-x0 term."""
    eps_injected = run_model(model, state.x, state.t, h_new).eps
    eps = run_model(model, state.x, state.t).eps
    a_t, a_prev = sched.alpha_bar(state.t), sched.alpha_bar(t_prev)
    return LatentState(_update(state.x, eps_injected, eps, a_t, a_prev), t_prev)
