"""Finite-difference verification of the analytic parameter gradients."""

from __future__ import annotations

from typing import Iterable

import numpy as np

from ..errors import ContractError
from ..schedule import NoiseSchedule
from .train import noisy_batch
from .unet import DenoiserParams, loss_and_grads


def grad_check(
    params: DenoiserParams,
    x_0: np.ndarray,
    t: int,
    n_probes: int,
    rng: np.random.Generator | int = 0,
    sched: NoiseSchedule | None = None,
    names: Iterable[str] | None = None,
    zero_grad: Iterable[str] = (),
    rel_step: float = 1e-4,
) -> float:
    """Max relative error ``|analytic - fd| / (|fd| + 1e-8)`` over probed weights.

    Runs in float64 on a copy of ``params``.  Probes cycle through the
    parameter tensors (restricted to ``names`` if given) in a random order,
    each at a random coordinate, and use central differences with step
    ``rel_step * max(|w|, 1)``.  With ``sched`` the input is forward-diffused
    to ``t`` first; otherwise ``x_0`` is fed directly.  Tensors whose names
    start with a prefix in ``zero_grad`` get their analytic gradient zeroed,
    which is how the check's own sensitivity is tested.
    """
    if n_probes < 1:
        raise ContractError(f"n_probes must be >= 1, got {n_probes}")
    rng = np.random.default_rng(rng)
    p = params.astype(np.float64)
    x = np.asarray(x_0, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    target = rng.standard_normal(size=x.shape)
    tt = np.full(x.shape[0], int(t))
    if sched is not None:
        x = noisy_batch(x, sched, tt, rng.standard_normal(size=x.shape))

    pool = list(names) if names is not None else p.names()
    unknown = set(pool) - set(p.tensors)
    if unknown:
        raise ContractError(f"unknown parameter names {sorted(unknown)}")
    prefixes = tuple(zero_grad)

    _, grads = loss_and_grads(p, x, tt, target, reduction="sum")
    worst = 0.0
    order = [pool[i] for i in rng.permutation(len(pool))]
    for k in range(n_probes):
        name = order[k % len(order)]
        w = p.tensors[name]
        idx = tuple(int(rng.integers(s)) for s in w.shape)
        analytic = 0.0 if prefixes and name.startswith(prefixes) else float(grads[name][idx])
        w0 = w[idx]
        h = rel_step * max(abs(w0), 1.0)
        w[idx] = w0 + h
        lp, _ = loss_and_grads(p, x, tt, target, reduction="sum")
        w[idx] = w0 - h
        lm, _ = loss_and_grads(p, x, tt, target, reduction="sum")
        w[idx] = w0
        fd = (lp - lm) / (2.0 * h)
        worst = max(worst, abs(analytic - fd) / (abs(fd) + 1e-8))
    return worst
