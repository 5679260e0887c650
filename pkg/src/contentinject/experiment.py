"""Batch orchestration shared by the command line and the benchmark tests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hspace import InjectionConfig
from .sampler import capture_content_trace, ddim_invert, injectfusion_generate, reconstruct
from .sampler.generate import GenerationResult
from .schedule import NoiseSchedule, TimestepPlan
from .toyset import ToySample, color_hist_distance, shape_iou, stack

__all__ = ["PreparedPairs", "TransferMetrics", "prepare_pairs", "psnr", "run_transfer", "transfer_metrics"]


def psnr(a: np.ndarray, b: np.ndarray, data_range: float = 2.0) -> np.ndarray:
    """Per-image PSNR in dB for images in [-1, 1] (leading batch axis optional)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 3:
        a, b = a[None], b[None]
    mse = np.mean((a - b) ** 2, axis=(1, 2, 3))
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(data_range**2 / mse)


@dataclass
class PreparedPairs:
    """Inverted originals and the content images' bottleneck traces."""

    originals: list[ToySample]
    contents: list[ToySample]
    x_T: np.ndarray
    content_trace: dict[int, np.ndarray]
    reconstruction: np.ndarray


def prepare_pairs(
    pairs: list[tuple[ToySample, ToySample]], model, sched: NoiseSchedule, plan: TimestepPlan
) -> PreparedPairs:
    originals = [a for a, _ in pairs]
    contents = [b for _, b in pairs]
    x_T = ddim_invert(stack(originals), model, sched, plan).x
    c_T = ddim_invert(stack(contents), model, sched, plan)
    trace = capture_content_trace(c_T, model, sched, plan)
    recon, _ = reconstruct(x_T, model, sched, plan)
    return PreparedPairs(originals, contents, x_T, trace, recon)


def run_transfer(
    prepared: PreparedPairs,
    cfg: InjectionConfig,
    model,
    sched: NoiseSchedule,
    plan: TimestepPlan,
    seed: int = 0,
    **kwargs,
) -> GenerationResult:
    return injectfusion_generate(prepared.x_T, prepared.content_trace, cfg, model, sched, plan, seed, **kwargs)


@dataclass
class TransferMetrics:
    iou_content: np.ndarray
    iou_original: np.ndarray
    hist_original: np.ndarray
    hist_content: np.ndarray

    @property
    def shape_wins(self) -> np.ndarray:
        return self.iou_content > self.iou_original

    @property
    def color_wins(self) -> np.ndarray:
        return self.hist_original < self.hist_content

    def rows(self):
        for i in range(len(self.iou_content)):
            yield (i, self.iou_content[i], self.iou_original[i], self.hist_original[i], self.hist_content[i])


def transfer_metrics(results: np.ndarray, prepared: PreparedPairs) -> TransferMetrics:
    cols = [[], [], [], []]
    for img, orig, cont in zip(results, prepared.originals, prepared.contents):
        img = np.clip(img, -1.0, 1.0)
        cols[0].append(shape_iou(img, cont))
        cols[1].append(shape_iou(img, orig))
        cols[2].append(color_hist_distance(img, orig.image))
        cols[3].append(color_hist_distance(img, cont.image))
    return TransferMetrics(*(np.asarray(c) for c in cols))
