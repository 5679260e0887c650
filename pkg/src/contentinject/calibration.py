"""Latent calibration: turn an h-space injection into a direct shift of ``x_t``.

The injected and plain noise predictions give two predicted-x0 tensors.  The
injected one is optionally standardized, the difference is converted to a
latent displacement ``dx`` scaled by ``omega`` and added to ``x_t``, and a
plain deterministic step is taken from the shifted latent.

Intermediates are computed in float64 so the literal displacement formula
and its rearranged form can be compared at tight tolerances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateInputError
from .hspace import MIN_OMEGA, STANDARDIZE_MODES
from .sampler.ddim import LatentState, _update, predict_x0, run_model
from .schedule import NoiseSchedule

__all__ = ["CalibrationIntermediates", "latent_calibration_step", "regularize_pt"]

_STAT_AXES = (-3, -2, -1)


@dataclass
class CalibrationIntermediates:
    p_plain: np.ndarray
    p_injected: np.ndarray
    p_regularized: np.ndarray
    d_p: np.ndarray
    d_eps: np.ndarray
    d_x: np.ndarray
    x_calibrated: np.ndarray


def _stats(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return a.mean(axis=_STAT_AXES, keepdims=True), a.std(axis=_STAT_AXES, keepdims=True)


def _norms(a: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(np.square(a), axis=_STAT_AXES, keepdims=True))


def regularize_pt(p_injected: np.ndarray, p_plain: np.ndarray, mode: str = "std_match") -> np.ndarray:
    """Standardize the injected predicted-x0 against the plain one.

    Statistics are taken per sample over (C, H, W).

    * ``std_match``: keep the injected mean, rescale the spread to the plain std.
    * ``algorithm``: ``mean_inj + (p_inj - mean_inj) * std_plain`` (no division
      by the injected std).
    * ``norm``: centre, rescale by ``|p_plain| / |p_inj|``, add the mean back.
    * ``none``: identity.
    """
    if mode == "none":
        return p_injected
    if mode not in STANDARDIZE_MODES:
        raise ConfigError("injection.standardize_pt", f"unknown mode {mode!r}")
    mu_i, sd_i = _stats(p_injected)
    centred = p_injected - mu_i
    if mode == "std_match":
        _, sd_p = _stats(p_plain)
        if np.any(sd_p == 0.0) or np.any(sd_i == 0.0):
            raise DegenerateInputError("zero standard deviation in predicted x0")
        # written as a correction to p_injected so equal stds give it back exactly
        return p_injected + centred * (sd_p / sd_i - 1.0)
    if mode == "algorithm":
        _, sd_p = _stats(p_plain)
        if np.any(sd_p == 0.0):
            raise DegenerateInputError("zero standard deviation in plain predicted x0")
        return mu_i + centred * sd_p
    n_i, n_p = _norms(p_injected), _norms(p_plain)
    if np.any(n_i == 0.0):
        raise DegenerateInputError("zero-norm injected predicted x0")
    return centred / n_i * n_p + mu_i


def latent_calibration_step(
    state: LatentState,
    t_prev: int,
    model,
    h_blend: np.ndarray,
    omega: float,
    sched: NoiseSchedule,
    mode: str = "std_match",
    eps: np.ndarray | None = None,
) -> tuple[LatentState, CalibrationIntermediates]:
    """Calibrate ``x_t`` towards the injected prediction and step to ``t_prev``.

    ``eps`` may carry an already computed plain prediction at ``state.x``.
    """
    if not MIN_OMEGA <= omega <= 1.0:
        raise ConfigError("injection.omega", f"must lie in [{MIN_OMEGA}, 1], got {omega}")
    x = state.x
    if eps is None:
        eps = run_model(model, x, state.t).eps
    eps_inj = run_model(model, x, state.t, h_blend).eps

    a_t = sched.alpha_bar(state.t)
    sa, sn = math.sqrt(a_t), math.sqrt(1.0 - a_t)
    x64 = x.astype(np.float64)
    e64 = eps.astype(np.float64)
    ei64 = eps_inj.astype(np.float64)
    p_plain = predict_x0(x64, e64, a_t)
    p_inj = predict_x0(x64, ei64, a_t)
    p_reg = regularize_pt(p_inj, p_plain, mode)
    d_eps = ei64 - e64
    # sqrt(a) (p_reg - p_plain) + omega sn d_eps, using p_inj - p_plain = -(sn/sa) d_eps
    d_x = sa * (p_reg - p_inj) + (omega - 1.0) * sn * d_eps
    x_cal = (x64 + d_x).astype(x.dtype)

    eps_cal = run_model(model, x_cal, state.t).eps
    x_prev = _update(x_cal, eps_cal, eps_cal, a_t, sched.alpha_bar(t_prev))
    inter = CalibrationIntermediates(
        p_plain=p_plain,
        p_injected=p_inj,
        p_regularized=p_reg,
        d_p=p_reg - p_plain,
        d_eps=d_eps,
        d_x=d_x,
        x_calibrated=x_cal,
    )
    return LatentState(x_prev, t_prev), inter
