"""Bottleneck/skip norm traces and the homo/hetero correlation analysis.

For each timestep and skip level the analysis correlates ``|h|`` with ``|g|``
across samples twice: once pairing every sample with itself (homo) and once
with another sample chosen by a cyclic index shift (hetero).
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError, DegenerateInputError
from .sampler.ddim import _update, run_model
from .schedule import NoiseSchedule, TimestepPlan

__all__ = [
    "CorrelationReport",
    "CorrelationRow",
    "FeatureTrace",
    "homo_hetero",
    "pearson",
    "record_trace",
    "write_report_csv",
    "write_trace_csv",
]

TRACE_HEADER = ("sample_id", "t", "level", "h_norm", "g_norm")
REPORT_HEADER = ("t", "level", "r_homo", "r_hetero", "n")


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ContractError(f"pearson needs two equal-length 1-D sequences, got {x.shape} and {y.shape}")
    if x.size < 3:
        raise ContractError(f"pearson needs at least 3 values, got {x.size}")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise DegenerateInputError("zero variance in pearson input")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


@dataclass
class FeatureTrace:
    """``(sample_id, t) -> (|h|, (|g_level0|, |g_level1|, ...))``."""

    entries: dict[tuple[int, int], tuple[float, tuple[float, ...]]] = field(default_factory=dict)

    def add(self, sample_id: int, t: int, h_norm: float, g_norms: Iterable[float]) -> None:
        key = (int(sample_id), int(t))
        if key in self.entries:
            raise ContractError(f"duplicate trace entry for sample {key[0]} at t={key[1]}")
        g = tuple(float(v) for v in g_norms)
        if h_norm < 0 or any(v < 0 for v in g):
            raise ContractError("norms must be non-negative")
        self.entries[key] = (float(h_norm), g)

    def timesteps(self) -> list[int]:
        return sorted({t for _, t in self.entries}, reverse=True)

    def samples(self, t: int) -> list[int]:
        return sorted(s for s, tt in self.entries if tt == t)

    def n_levels(self) -> int:
        return min((len(g) for _, g in self.entries.values()), default=0)

    def rows(self):
        for (sid, t), (h, gs) in sorted(self.entries.items(), key=lambda kv: (kv[0][0], -kv[0][1])):
            for level, g in enumerate(gs):
                yield sid, t, level, h, g


@dataclass(frozen=True)
class CorrelationRow:
    t: int
    level: int
    r_homo: float
    r_hetero: float
    n: int
    p_value: float | None = None  # reserved, not computed


@dataclass
class CorrelationReport:
    rows: list[CorrelationRow]
    pairing_shift: int = 1

    def levels(self) -> list[int]:
        return sorted({r.level for r in self.rows})

    def window_means(self, t_min: int) -> dict[int, tuple[float, float]]:
        """Per level, mean ``(r_homo, r_hetero)`` over rows with ``t >= t_min``."""
        out = {}
        for level in self.levels():
            sel = [r for r in self.rows if r.level == level and r.t >= t_min]
            if sel:
                out[level] = (
                    float(np.mean([r.r_homo for r in sel])),
                    float(np.mean([r.r_hetero for r in sel])),
                )
        return out

    def gap(self, t_min: int) -> float:
        """Level-averaged ``mean r_homo - mean r_hetero`` over ``t >= t_min``."""
        means = self.window_means(t_min)
        if not means:
            raise ContractError(f"no report rows with t >= {t_min}")
        return float(np.mean([h - e for h, e in means.values()]))


def homo_hetero(traces: FeatureTrace, pairing_shift: int = 1) -> CorrelationReport:
    """Correlate ``|h|`` with same-sample and shifted-sample skip norms.

    Samples are ordered by id; the hetero pairing matches sample ``i``'s skip
    norm with the bottleneck norm of sample ``(i + shift) mod n``.
    """
    if pairing_shift == 0:
        warnings.warn("pairing_shift=0 pairs every sample with itself; r_hetero equals r_homo",
                      RuntimeWarning, stacklevel=2)
    rows = []
    for t in traces.timesteps():
        ids = traces.samples(t)
        if len(ids) < 3:
            raise ContractError(f"need at least 3 samples at t={t}, got {len(ids)}")
        h = np.array([traces.entries[(s, t)][0] for s in ids])
        h_shift = np.roll(h, -pairing_shift)
        for level in range(traces.n_levels()):
            g = np.array([traces.entries[(s, t)][1][level] for s in ids])
            rows.append(CorrelationRow(t, level, pearson(h, g), pearson(h_shift, g), len(ids)))
    return CorrelationReport(rows, pairing_shift)


def _norms(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    return np.sqrt(np.sum(np.square(a.reshape(a.shape[0], -1)), axis=1))


def record_trace(
    x_T: np.ndarray,
    model,
    sched: NoiseSchedule,
    plan: TimestepPlan,
    sample_ids: Sequence[int] | None = None,
    batch_size: int = 32,
    trace: FeatureTrace | None = None,
) -> FeatureTrace:
    """Run the plain reverse process on a batch and record norms at every step."""
    x_T = np.asarray(x_T)
    if x_T.ndim != 4:
        raise ContractError(f"x_T must be a batch (B, C, H, W), got shape {x_T.shape}")
    ids = list(range(len(x_T))) if sample_ids is None else list(sample_ids)
    if len(ids) != len(x_T):
        raise ContractError("sample_ids length does not match the batch")
    trace = FeatureTrace() if trace is None else trace
    for lo in range(0, len(x_T), batch_size):
        x = x_T[lo : lo + batch_size]
        chunk = ids[lo : lo + batch_size]
        for t, t_prev in plan.pairs():
            out = run_model(model, x, t)
            hn = _norms(out.h)
            gn = [_norms(g) for g in out.skips]
            for i, sid in enumerate(chunk):
                trace.add(sid, t, hn[i], [g[i] for g in gn])
            x = _update(x, out.eps, out.eps, sched.alpha_bar(t), sched.alpha_bar(t_prev))
    return trace


def write_trace_csv(trace: FeatureTrace, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_HEADER)
        for sid, t, level, h, g in trace.rows():
            w.writerow((sid, t, level, repr(h), repr(g)))


def read_trace_csv(path: str | Path) -> FeatureTrace:
    grouped: dict[tuple[int, int], tuple[float, dict[int, float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != TRACE_HEADER:
            raise ContractError(f"{path}: unexpected trace header {reader.fieldnames}")
        for row in reader:
            key = (int(row["sample_id"]), int(row["t"]))
            h, gs = grouped.setdefault(key, (float(row["h_norm"]), {}))
            gs[int(row["level"])] = float(row["g_norm"])
    trace = FeatureTrace()
    for (sid, t), (h, gs) in grouped.items():
        trace.add(sid, t, h, [gs[k] for k in sorted(gs)])
    return trace


def write_report_csv(report: CorrelationReport, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_HEADER)
        for r in report.rows:
            w.writerow((r.t, r.level, repr(r.r_homo), repr(r.r_hetero), r.n))
