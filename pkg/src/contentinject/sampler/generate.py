"""The full content-injection reverse process.

Each step of the plan runs exactly one branch:

* ``inject`` (t >= t_edit): blend the bottleneck towards the content trace,
  then latent calibration (or the asymmetric step when calibration is off);
* ``plain``: deterministic DDIM step;
* ``boost`` (t < t_boost): stochastic step with eta = 1 and fresh noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..errors import ContractError
from ..hspace import InjectionConfig, blend_batch
from ..schedule import NoiseSchedule, TimestepPlan, sigma
from .ddim import LatentState, asyrp_step, ddim_step, run_model

__all__ = ["StepRecord", "GenerationResult", "injectfusion_generate"]


def _flat_norms(a: np.ndarray, batched: bool) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if not batched:
        a = a[None]
    return np.sqrt(np.sum(np.square(a.reshape(a.shape[0], -1)), axis=1))


@dataclass
class StepRecord:
    t: int
    t_prev: int
    branch: str
    gamma: float = 0.0
    sigma: float = 0.0
    h_norm: np.ndarray | None = None
    h_tilde_norm: np.ndarray | None = None
    dx_norm: np.ndarray | None = None
    h: np.ndarray | None = field(default=None, repr=False)
    h_tilde: np.ndarray | None = field(default=None, repr=False)
    d_x: np.ndarray | None = field(default=None, repr=False)
    intermediates: object | None = field(default=None, repr=False)


@dataclass
class GenerationResult:
    x0: np.ndarray
    records: list[StepRecord]

    def branches(self) -> list[str]:
        return [r.branch for r in self.records]


def injectfusion_generate(
    x_T: LatentState | np.ndarray,
    content: dict[int, np.ndarray],
    cfg: InjectionConfig,
    model,
    sched: NoiseSchedule,
    plan: TimestepPlan,
    rng: np.random.Generator | int | None = 0,
    on_step: Callable[[StepRecord], None] | None = None,
    keep_arrays: bool = False,
) -> GenerationResult:
    """Run the reverse process from ``x_T`` with content injection.

    ``plan`` should be built with ``cfg.t_edit`` and ``cfg.t_boost`` so its
    branch labels agree with the configuration.  ``content`` maps every
    injection timestep to the content image's bottleneck tensor.  With
    ``keep_arrays`` each record also holds ``h``, the blended ``h`` and the
    calibration intermediates.
    """
    state = x_T if isinstance(x_T, LatentState) else LatentState(np.asarray(x_T), plan.steps[0])
    if state.t != plan.steps[0]:
        raise ContractError(f"x_T is at t={state.t} but the plan starts at t={plan.steps[0]}")
    missing = [t for t in plan.inject_steps if t not in content]
    if missing:
        raise ContractError(f"content trace missing injection step t={missing[0]}")
    from ..calibration import latent_calibration_step

    rng = np.random.default_rng(rng)
    batched = state.x.ndim == 4
    records: list[StepRecord] = []
    k_inject = 0
    for t, t_prev in plan.pairs():
        branch = plan.branch(t)
        rec = StepRecord(t, t_prev, branch)
        if branch == "inject":
            gamma = cfg.gamma_at(k_inject)
            k_inject += 1
            out = run_model(model, state.x, t)
            h_c = np.asarray(content[t], dtype=out.h.dtype)
            if h_c.shape != out.h.shape:
                raise ContractError(f"content h at t={t} has shape {h_c.shape}, expected {out.h.shape}")
            h_tilde = blend_batch(out.h, h_c, cfg.mask, gamma, cfg.blend_kind)
            rec.gamma = gamma
            rec.h_norm = _flat_norms(out.h, batched)
            rec.h_tilde_norm = _flat_norms(h_tilde, batched)
            if cfg.calibrate:
                state, inter = latent_calibration_step(
                    state, t_prev, model, h_tilde, cfg.omega, sched, cfg.standardize_pt, eps=out.eps
                )
                rec.dx_norm = _flat_norms(inter.d_x, batched)
                if keep_arrays:
                    rec.d_x = inter.d_x
                    rec.intermediates = inter
            else:
                state = asyrp_step(state, model, h_tilde, t_prev, sched)
            if keep_arrays:
                rec.h, rec.h_tilde = out.h, h_tilde
        elif branch == "plain":
            eps = run_model(model, state.x, t).eps
            state = ddim_step(state, eps, t_prev, sched)
        else:
            s = sigma(sched, t, t_prev, eta=1.0) ** cfg.boost_power
            rec.sigma = s
            eps = run_model(model, state.x, t).eps
            z = rng.standard_normal(size=state.x.shape).astype(state.x.dtype)
            state = ddim_step(state, eps, t_prev, sched, sigma=s, noise=z)
        records.append(rec)
        if on_step is not None:
            on_step(rec)
    return GenerationResult(state.x, records)
