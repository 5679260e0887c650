"""Bottleneck (h-space) blending primitives and injection settings.

All blends treat the bottleneck tensor as one flat vector.  The content
feature is first rescaled to the norm of the feature being edited, so every
blend kind returns the norm-matched content exactly at ``gamma == 1``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np
from scipy.optimize import brentq

from .errors import ConfigError, ContractError, DegenerateInputError

__all__ = [
    "BLEND_KINDS",
    "STANDARDIZE_MODES",
    "GammaSchedule",
    "InjectionConfig",
    "blend",
    "build_gamma_schedule",
    "cumulative_content_fraction",
    "lerp_norm_matched",
    "load_mask",
    "masked_blend",
    "slerp_norm_matched",
]

BLEND_KINDS = ("slerp", "lerp_norm", "lerp")
STANDARDIZE_MODES = ("std_match", "algorithm", "norm", "none")

PARALLEL_EPS = 1e-4
MIN_OMEGA = 1e-3


def _norm(v: np.ndarray) -> float:
    return float(np.sqrt(np.sum(np.square(v, dtype=np.float64))))


def _matched(h: np.ndarray, h_content: np.ndarray) -> tuple[float, np.ndarray]:
    nh, nc = _norm(h), _norm(h_content)
    if nh == 0.0 or nc == 0.0:
        raise DegenerateInputError(f"zero-norm input to blend (|h|={nh}, |h_content|={nc})")
    if h.shape != h_content.shape:
        raise ContractError(f"blend shape mismatch {h.shape} vs {h_content.shape}")
    return nh, h_content * (nh / nc)


def _angle(a: np.ndarray, b: np.ndarray, norm: float) -> float:
    # 2*atan2(|u - v|, |u + v|) stays accurate near 0 and pi, unlike arccos
    u = a.ravel() / norm
    v = b.ravel() / norm
    return 2.0 * math.atan2(_norm(u - v), _norm(u + v))


def lerp_norm_matched(
    h: np.ndarray, h_content: np.ndarray, gamma: float, restore_norm: bool = True
) -> np.ndarray:
    """Linear blend towards the norm-matched content.

    With ``restore_norm`` the result is rescaled back to ``|h|``; without it
    this is the plain-Lerp ablation whose norm shrinks mid-way.
    """
    nh, c = _matched(h, h_content)
    if gamma == 0:
        return h.copy()
    if gamma == 1:
        return c
    v = h + gamma * (c - h)
    if not restore_norm:
        return v
    nv = _norm(v)
    if nv == 0.0:
        raise DegenerateInputError("linear blend passed through the origin")
    return v * (nh / nv)


def slerp_norm_matched(h: np.ndarray, h_content: np.ndarray, gamma: float) -> np.ndarray:
    """Spherical interpolation from ``h`` to ``h_content`` rescaled to ``|h|``."""
    nh, c = _matched(h, h_content)
    if gamma == 0:
        return h.copy()
    if gamma == 1:
        return c
    theta = _angle(h, c, nh)
    if theta < PARALLEL_EPS:
        return lerp_norm_matched(h, h_content, gamma)
    if theta > math.pi - PARALLEL_EPS:
        raise DegenerateInputError("antiparallel inputs: spherical interpolation is undefined")
    s = math.sin(theta)
    return (math.sin((1.0 - gamma) * theta) / s) * h + (math.sin(gamma * theta) / s) * c


def blend(h: np.ndarray, h_content: np.ndarray, gamma: float, kind: str = "slerp") -> np.ndarray:
    if kind == "slerp":
        return slerp_norm_matched(h, h_content, gamma)
    if kind == "lerp_norm":
        return lerp_norm_matched(h, h_content, gamma)
    if kind == "lerp":
        return lerp_norm_matched(h, h_content, gamma, restore_norm=False)
    raise ConfigError("injection.blend_kind", f"unknown blend kind {kind!r}")


def masked_blend(
    h: np.ndarray,
    h_content: np.ndarray,
    mask: np.ndarray | None,
    gamma: float,
    blend_kind: str = "slerp",
) -> np.ndarray:
    """Blend only the masked bottleneck cells; unmasked cells are returned untouched.

    ``h`` is (C, Hb, Wb) and ``mask`` is (Hb, Wb), broadcast over channels.
    Norm matching and the interpolation angle use the masked cells only.
    """
    if mask is None:
        mask = np.ones(h.shape[-2:], dtype=bool)
    m = np.asarray(mask).astype(bool)
    if m.shape != h.shape[-2:]:
        raise ContractError(f"mask shape {m.shape} does not match bottleneck grid {h.shape[-2:]}")
    if not m.any():
        if gamma > 0:
            warnings.warn("all-zero injection mask; returning h unchanged", RuntimeWarning, stacklevel=2)
        return h.copy()
    out = h.copy()
    out[:, m] = blend(h[:, m], h_content[:, m], gamma, blend_kind)
    return out


def cumulative_content_fraction(gamma: float, n: int) -> tuple[float, float]:
    """Share of the original and of the content feature after ``n`` repeated blends."""
    if n < 0:
        raise ContractError(f"n must be >= 0, got {n}")
    original = (1.0 - gamma) ** n
    return original, 1.0 - original


@dataclass(frozen=True)
class GammaSchedule:
    """Per-injection-step ratios, in execution order (largest timestep first)."""

    kind: str
    total_amount: float
    values: tuple[float, ...]

    def __post_init__(self):
        if any(not 0.0 <= g <= 1.0 for g in self.values):
            raise ConfigError("injection.gamma", f"per-step gamma outside [0, 1]: {self.values}")

    def original_fraction(self) -> float:
        return float(np.prod([1.0 - g for g in self.values]))

    def at(self, k: int) -> float:
        return self.values[min(k, len(self.values) - 1)]


def build_gamma_schedule(kind: str, total_amount: float, n_steps: int) -> GammaSchedule:
    """Per-step ratios whose compounded content share equals ``total_amount``.

    ``decreasing`` and ``increasing`` scale linear weights ``(n - k)/n`` or
    ``(k + 1)/n`` by a common factor found with a 1-D root solve.
    """
    if not 0.0 < total_amount < 1.0:
        raise ConfigError("injection.gamma_total", f"must lie in (0, 1), got {total_amount}")
    if n_steps < 1:
        raise ConfigError("injection.gamma_steps", f"must be >= 1, got {n_steps}")
    keep = 1.0 - total_amount
    if kind == "constant":
        g = 1.0 - keep ** (1.0 / n_steps)
        return GammaSchedule(kind, total_amount, (g,) * n_steps)
    k = np.arange(n_steps, dtype=np.float64)
    if kind == "decreasing":
        w = (n_steps - k) / n_steps
    elif kind == "increasing":
        w = (k + 1) / n_steps
    else:
        raise ConfigError("injection.gamma_kind", f"unknown schedule kind {kind!r}")
    w = w / w.max()

    def residual(c: float) -> float:
        return float(np.sum(np.log1p(-c * w)) - math.log(keep))

    # residual(0) > 0 and residual -> -inf as c -> 1 because max(w) == 1
    upper = 1.0 - 1e-15
    if residual(upper) > 0:
        raise ConfigError("injection.gamma_total", f"total {total_amount} infeasible for {n_steps} steps")
    c = brentq(residual, 0.0, upper, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    return GammaSchedule(kind, total_amount, tuple(float(g) for g in c * w))


def load_mask(path: str | Path, shape: tuple[int, int] | None = None) -> np.ndarray:
    """Read a whitespace-separated 0/1 grid."""
    grid = np.loadtxt(path, dtype=np.float64, ndmin=2)
    if not np.isin(grid, (0.0, 1.0)).all():
        raise ConfigError("injection.mask", f"{path}: entries must be 0 or 1")
    if shape is not None and grid.shape != tuple(shape):
        raise ConfigError("injection.mask", f"{path}: grid {grid.shape} != bottleneck grid {tuple(shape)}")
    return grid.astype(bool)


GammaLike = Union[float, GammaSchedule]


@dataclass(frozen=True)
class InjectionConfig:
    gamma: GammaLike = 0.6
    omega: float = 0.3
    t_edit: int = 400
    t_boost: int = 200
    mask: np.ndarray | None = field(default=None, compare=False)
    standardize_pt: str = "std_match"
    blend_kind: str = "slerp"
    calibrate: bool = True
    boost_power: int = 1  # exponent of sigma on the boosting noise term

    def __post_init__(self):
        if not isinstance(self.gamma, GammaSchedule) and not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("injection.gamma", f"must lie in [0, 1], got {self.gamma}")
        if not MIN_OMEGA <= self.omega <= 1.0:
            raise ConfigError("injection.omega", f"must lie in [{MIN_OMEGA}, 1], got {self.omega}")
        if not 0 <= self.t_boost < self.t_edit:
            raise ConfigError(
                "injection.t_edit", f"need 0 <= t_boost < t_edit, got {self.t_boost}, {self.t_edit}"
            )
        if self.mask is not None:
            m = np.asarray(self.mask)
            if m.ndim != 2 or not np.isin(m, (0, 1)).all():
                raise ConfigError("injection.mask", "mask must be a 2-D grid of 0/1 entries")
            object.__setattr__(self, "mask", m.astype(bool))
        if self.standardize_pt not in STANDARDIZE_MODES:
            raise ConfigError("injection.standardize_pt", f"unknown mode {self.standardize_pt!r}")
        if self.blend_kind not in BLEND_KINDS:
            raise ConfigError("injection.blend_kind", f"unknown blend kind {self.blend_kind!r}")
        if self.boost_power not in (1, 2):
            raise ConfigError("injection.boost_power", f"must be 1 or 2, got {self.boost_power}")

    def gamma_at(self, k: int) -> float:
        """Ratio for the ``k``-th executed injection step."""
        if isinstance(self.gamma, GammaSchedule):
            return self.gamma.at(k)
        return float(self.gamma)

    @classmethod
    def scaled(cls, T: int, **overrides) -> "InjectionConfig":
        """Defaults with ``t_edit = 0.4 T`` and ``t_boost = 0.2 T``."""
        base = dict(t_edit=int(round(0.4 * T)), t_boost=int(round(0.2 * T)))
        base.update(overrides)
        return cls(**base)


def blend_batch(
    h: np.ndarray, h_content: np.ndarray, mask, gamma: float, kind: str = "slerp"
) -> np.ndarray:
    """:func:`masked_blend` applied independently to each sample of a leading batch axis."""
    if h.ndim == 3:
        return masked_blend(h, h_content, mask, gamma, kind)
    return np.stack([masked_blend(a, b, mask, gamma, kind) for a, b in zip(h, h_content)])

