"""Small fixed-architecture U-Net epsilon-predictor with exposed bottleneck.

An input 3x3 conv lifts the image to the first width.  Every level runs one
pre-activation residual block::

    out = skip(x) + conv2(SiLU(GN(conv1(SiLU(GN(x))) + temb)))

where ``skip`` is the identity or a 1x1 projection when the width changes.
The residual path keeps per-sample feature scale visible in the block
outputs.  The encoder average-pools between levels, the decoder upsamples
(nearest), concatenates the matching skip and runs the same block.  The
bottleneck block's output is ``h``; ``forward_injected`` swaps it before
decoding.  The head is ``GN -> SiLU -> conv3x3``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from ..errors import ConfigError, ContractError
from . import layers as L

__all__ = [
    "DenoiserConfig",
    "DenoiserParams",
    "DenoiserOutput",
    "init_params",
    "forward",
    "forward_injected",
    "loss_and_grads",
]


@dataclass(frozen=True)
class DenoiserConfig:
    resolution: int = 32
    in_channels: int = 3
    widths: tuple[int, ...] = (16, 32, 64)
    bottleneck_channels: int = 64
    temb_dim: int = 64
    groups: int = 4

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        r = self.resolution
        if r < 2 or r & (r - 1):
            raise ConfigError("denoiser.resolution", f"must be a power of two, got {r}")
        if not self.widths:
            raise ConfigError("denoiser.channels", "need at least one level")
        if r >> self.levels < 2:
            raise ConfigError(
                "denoiser.levels",
                f"resolution {r} with {self.levels} levels leaves a bottleneck below 2x2",
            )
        for name, c in [("denoiser.channels", w) for w in self.widths] + [
            ("denoiser.bottleneck_channels", self.bottleneck_channels)
        ]:
            if c % self.groups:
                raise ConfigError(name, f"{c} channels not divisible by {self.groups} groups")
        if self.temb_dim < 2 or self.temb_dim % 2:
            raise ConfigError("denoiser.temb_dim", f"must be even and >= 2, got {self.temb_dim}")

    @property
    def levels(self) -> int:
        return len(self.widths)

    @property
    def bottleneck_shape(self) -> tuple[int, int, int]:
        side = self.resolution >> self.levels
        return (self.bottleneck_channels, side, side)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return (self.in_channels, self.resolution, self.resolution)

    def block_specs(self) -> Iterator[tuple[str, int, int]]:
        """(name, in_channels, out_channels) for every residual block, in forward order."""
        c_in = self.widths[0]
        for i, w in enumerate(self.widths):
            yield f"enc{i}", c_in, w
            c_in = w
        yield "mid", c_in, self.bottleneck_channels
        c_in = self.bottleneck_channels
        for i in reversed(range(self.levels)):
            w = self.widths[i]
            yield f"dec{i}", c_in + w, w
            c_in = w

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        e = self.temb_dim
        shapes: dict[str, tuple[int, ...]] = {
            "temb.fc1.w": (e, e),
            "temb.fc1.b": (e,),
            "temb.fc2.w": (e, e),
            "temb.fc2.b": (e,),
        }
        shapes["in.conv.w"] = (self.widths[0], self.in_channels, 3, 3)
        shapes["in.conv.b"] = (self.widths[0],)
        for name, ci, co in self.block_specs():
            shapes.update(
                {
                    f"{name}.norm1.g": (ci,),
                    f"{name}.norm1.b": (ci,),
                    f"{name}.conv1.w": (co, ci, 3, 3),
                    f"{name}.conv1.b": (co,),
                    f"{name}.temb.w": (co, e),
                    f"{name}.temb.b": (co,),
                    f"{name}.norm2.g": (co,),
                    f"{name}.norm2.b": (co,),
                    f"{name}.conv2.w": (co, co, 3, 3),
                    f"{name}.conv2.b": (co,),
                }
            )
            if ci != co:
                shapes[f"{name}.skip.w"] = (co, ci)
                shapes[f"{name}.skip.b"] = (co,)
        shapes["out.norm.g"] = (self.widths[0],)
        shapes["out.norm.b"] = (self.widths[0],)
        shapes["out.conv.w"] = (self.in_channels, self.widths[0], 3, 3)
        shapes["out.conv.b"] = (self.in_channels,)
        return shapes


@dataclass
class DenoiserParams:
    """Named parameter tensors of one denoiser."""

    config: DenoiserConfig
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        expected = self.config.param_shapes()
        if set(expected) != set(self.tensors):
            missing = sorted(set(expected) - set(self.tensors))
            extra = sorted(set(self.tensors) - set(expected))
            raise ContractError(f"parameter names mismatch: missing={missing} extra={extra}")
        for k, shape in expected.items():
            if self.tensors[k].shape != shape:
                raise ContractError(f"{k}: expected shape {shape}, got {self.tensors[k].shape}")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def names(self) -> list[str]:
        return list(self.config.param_shapes())

    def astype(self, dtype) -> "DenoiserParams":
        return DenoiserParams(
            self.config, {k: v.astype(dtype, copy=True) for k, v in self.tensors.items()}
        )

    def copy(self) -> "DenoiserParams":
        return DenoiserParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    @property
    def dtype(self):
        return self.tensors["out.conv.w"].dtype

    def count(self) -> int:
        return sum(v.size for v in self.tensors.values())

    def all_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.tensors.values())


@dataclass
class DenoiserOutput:
    eps: np.ndarray
    h: np.ndarray
    skips: list[np.ndarray]


def init_params(config: DenoiserConfig, seed: int | np.random.Generator = 0, dtype=np.float32):
    """Fan-in scaled uniform weights, zero biases, unit norm gains."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in config.param_shapes().items():
        kind = name.rsplit(".", 1)[-1]
        if kind == "w":
            fan_in = int(np.prod(shape[1:]))
            bound = 1.0 / np.sqrt(fan_in)
            tensors[name] = rng.uniform(-bound, bound, size=shape)
        elif kind == "g":
            tensors[name] = np.ones(shape)
        else:
            tensors[name] = np.zeros(shape)
    return DenoiserParams(config, {k: v.astype(dtype) for k, v in tensors.items()})


def _as_batch(config: DenoiserConfig, x: np.ndarray, t) -> tuple[np.ndarray, np.ndarray, bool]:
    x = np.asarray(x)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4 or x.shape[1:] != config.image_shape:
        raise ContractError(
            f"x_t shape mismatch: expected {config.image_shape} (optionally batched), "
            f"got {tuple(np.shape(x)) if not single else tuple(x.shape[1:])}"
        )
    if not np.issubdtype(x.dtype, np.floating):
        x = x.astype(np.float64)
    t = np.asarray(t)
    if t.ndim == 0:
        t = np.full(x.shape[0], int(t))
    if t.shape != (x.shape[0],):
        raise ContractError(f"timestep batch {t.shape} does not match x batch {x.shape[0]}")
    if (t < 1).any():
        raise ContractError(f"timesteps must be >= 1, got min {int(t.min())}")
    return x, t, single


def _block_forward(p, name, x, e, groups):
    a, n1 = L.groupnorm_forward(x, p[f"{name}.norm1.g"], p[f"{name}.norm1.b"], groups)
    a, s1 = L.silu_forward(a)
    a, c1 = L.conv_forward(a, p[f"{name}.conv1.w"], p[f"{name}.conv1.b"])
    proj, lc = L.linear_forward(e, p[f"{name}.temb.w"], p[f"{name}.temb.b"])
    a = a + proj.T[:, :, None, None]
    a, n2 = L.groupnorm_forward(a, p[f"{name}.norm2.g"], p[f"{name}.norm2.b"], groups)
    a, s2 = L.silu_forward(a)
    a, c2 = L.conv_forward(a, p[f"{name}.conv2.w"], p[f"{name}.conv2.b"])
    if f"{name}.skip.w" in p:
        r, cs = L.pointwise_forward(x, p[f"{name}.skip.w"], p[f"{name}.skip.b"])
    else:
        r, cs = x, None
    return a + r, (n1, s1, c1, lc, n2, s2, c2, cs)


def _block_backward(name, dout, cache, grads):
    n1, s1, c1, lc, n2, s2, c2, cs = cache
    d, grads[f"{name}.conv2.w"], grads[f"{name}.conv2.b"] = L.conv_backward(dout, c2)
    d = L.silu_backward(d, s2)
    d, grads[f"{name}.norm2.g"], grads[f"{name}.norm2.b"] = L.groupnorm_backward(d, n2)
    de, grads[f"{name}.temb.w"], grads[f"{name}.temb.b"] = L.linear_backward(
        d.sum(axis=(2, 3)).T, lc
    )
    d, grads[f"{name}.conv1.w"], grads[f"{name}.conv1.b"] = L.conv_backward(d, c1)
    d = L.silu_backward(d, s1)
    d, grads[f"{name}.norm1.g"], grads[f"{name}.norm1.b"] = L.groupnorm_backward(d, n1)
    if cs is None:
        return d + dout, de
    dr, grads[f"{name}.skip.w"], grads[f"{name}.skip.b"] = L.pointwise_backward(dout, cs)
    return d + dr, de


def _run(params: DenoiserParams, x, t, h_new=None, keep_cache=False):
    cfg = params.config
    dt = x.dtype
    p = {k: v.astype(dt, copy=False) for k, v in params.tensors.items()}
    tape: dict = {}

    feats = L.timestep_features(t, cfg.temb_dim, dt)
    e, tape["fc1"] = L.linear_forward(feats, p["temb.fc1.w"], p["temb.fc1.b"])
    e, tape["act1"] = L.silu_forward(e)
    e, tape["fc2"] = L.linear_forward(e, p["temb.fc2.w"], p["temb.fc2.b"])
    e, tape["act2"] = L.silu_forward(e)

    skips = []
    a = np.ascontiguousarray(x.transpose(1, 0, 2, 3))
    a, tape["in"] = L.conv_forward(a, p["in.conv.w"], p["in.conv.b"])
    for i in range(cfg.levels):
        a, tape[f"enc{i}"] = _block_forward(p, f"enc{i}", a, e, cfg.groups)
        skips.append(a)
        a, tape[f"pool{i}"] = L.avgpool2_forward(a)
    h, tape["mid"] = _block_forward(p, "mid", a, e, cfg.groups)

    a = h if h_new is None else np.ascontiguousarray(h_new.astype(dt).transpose(1, 0, 2, 3))
    for i in reversed(range(cfg.levels)):
        a = L.upsample2_forward(a)
        tape[f"split{i}"] = a.shape[0]
        a = np.concatenate([a, skips[i]], axis=0)
        a, tape[f"dec{i}"] = _block_forward(p, f"dec{i}", a, e, cfg.groups)
    a, tape["out_norm"] = L.groupnorm_forward(a, p["out.norm.g"], p["out.norm.b"], cfg.groups)
    a, tape["out_act"] = L.silu_forward(a)
    eps, tape["out"] = L.conv_forward(a, p["out.conv.w"], p["out.conv.b"])
    out = DenoiserOutput(_nchw(eps), _nchw(h), [_nchw(g) for g in skips])
    return out, (tape if keep_cache else None)


def _nchw(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a.transpose(1, 0, 2, 3))


def _backward(params: DenoiserParams, tape: dict, d_eps: np.ndarray) -> dict[str, np.ndarray]:
    cfg = params.config
    grads: dict[str, np.ndarray] = {}
    d_eps = np.ascontiguousarray(d_eps.transpose(1, 0, 2, 3))
    d, grads["out.conv.w"], grads["out.conv.b"] = L.conv_backward(d_eps, tape["out"])
    d = L.silu_backward(d, tape["out_act"])
    d, grads["out.norm.g"], grads["out.norm.b"] = L.groupnorm_backward(d, tape["out_norm"])
    de_total = 0.0
    d_skips: dict[int, np.ndarray] = {}
    for i in range(cfg.levels):
        d, de = _block_backward(f"dec{i}", d, tape[f"dec{i}"], grads)
        de_total = de_total + de
        n_up = tape[f"split{i}"]
        d_skips[i] = d[n_up:]
        d = L.upsample2_backward(d[:n_up])
    d, de = _block_backward("mid", d, tape["mid"], grads)
    de_total = de_total + de
    for i in reversed(range(cfg.levels)):
        d = L.avgpool2_backward(d, tape[f"pool{i}"]) + d_skips[i]
        d, de = _block_backward(f"enc{i}", d, tape[f"enc{i}"], grads)
        de_total = de_total + de
    _, grads["in.conv.w"], grads["in.conv.b"] = L.conv_backward(d, tape["in"])

    d = L.silu_backward(de_total, tape["act2"])
    d, grads["temb.fc2.w"], grads["temb.fc2.b"] = L.linear_backward(d, tape["fc2"])
    d = L.silu_backward(d, tape["act1"])
    _, grads["temb.fc1.w"], grads["temb.fc1.b"] = L.linear_backward(d, tape["fc1"])
    return grads


def _unbatch(out: DenoiserOutput, single: bool) -> DenoiserOutput:
    if not single:
        return out
    return DenoiserOutput(out.eps[0], out.h[0], [g[0] for g in out.skips])


def forward(params: DenoiserParams, x_t: np.ndarray, t) -> DenoiserOutput:
    """Predict epsilon for ``x_t`` (C,H,W or B,C,H,W) at timestep(s) ``t``.

    The returned output also carries the bottleneck activation ``h`` and the
    encoder skips (outermost first).  Computation runs in ``x_t``'s dtype.
    """
    x, t, single = _as_batch(params.config, x_t, t)
    out, _ = _run(params, x, t)
    return _unbatch(out, single)


def forward_injected(params: DenoiserParams, x_t: np.ndarray, t, h_new: np.ndarray) -> DenoiserOutput:
    """Same as :func:`forward` but decode from ``h_new`` instead of the computed bottleneck.

    The reported ``h`` is the bottleneck the encoder actually produced; the
    reported skips are the unmodified encoder skips.
    """
    x, t, single = _as_batch(params.config, x_t, t)
    h_new = np.asarray(h_new)
    want = params.config.bottleneck_shape
    if single:
        h_new = h_new[None] if h_new.shape == want else h_new
    if h_new.shape != (x.shape[0],) + want:
        raise ContractError(
            f"bottleneck shape mismatch: expected {want} (optionally batched), got {np.shape(h_new)}"
        )
    out, _ = _run(params, x, t, h_new=h_new)
    return _unbatch(out, single)


def loss_and_grads(
    params: DenoiserParams, x_t: np.ndarray, t, target: np.ndarray, reduction: str = "mean"
) -> tuple[float, dict[str, np.ndarray]]:
    """Squared error between predicted and true noise, with parameter gradients.

    ``reduction="mean"`` averages over every element (the training loss);
    ``"sum"`` is used by gradient checks for better-conditioned differences.
    """
    x, t, single = _as_batch(params.config, x_t, t)
    target = np.asarray(target, dtype=x.dtype)
    if single:
        target = target[None]
    out, tape = _run(params, x, t, keep_cache=True)
    diff = out.eps - target
    scale = 1.0 / diff.size if reduction == "mean" else 1.0
    loss = float(np.sum(diff * diff) * scale)
    grads = _backward(params, tape, 2.0 * scale * diff)
    return loss, grads
