"""Synthetic shapes with separable content (geometry) and style (colour).

Content is the shape kind, its centre and its size; style is the pair of
foreground/background palette colours.  The two factors are sampled
independently.  Images are (3, H, W) float arrays in [-1, 1].

Also hosts the proxy metrics used to score content transfer: a shape IoU
against a reference's rendered mask, and a colour-histogram distance.
"""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from skimage.filters import threshold_otsu

from .errors import ConfigError

log = logging.getLogger(__name__)

SHAPES = ("circle", "square", "triangle")

# RGB in [0, 1]
PALETTE: dict[str, tuple[float, float, float]] = {
    "black": (0.05, 0.05, 0.05),
    "white": (0.95, 0.95, 0.95),
    "red": (0.9, 0.1, 0.1),
    "green": (0.1, 0.75, 0.2),
    "blue": (0.15, 0.2, 0.9),
    "yellow": (0.95, 0.85, 0.1),
    "cyan": (0.1, 0.8, 0.85),
    "magenta": (0.85, 0.15, 0.8),
}

LUMA = np.array([0.299, 0.587, 0.114])


def luminance(rgb) -> float:
    return float(np.dot(LUMA, rgb))


@dataclass(frozen=True)
class ContentLabel:
    shape: str
    center: tuple[float, float]  # (x, y) in pixel units, origin at the top-left corner
    size: float  # circle radius / square half-side / triangle circumradius


@dataclass(frozen=True)
class StyleLabel:
    fg: str
    bg: str


@dataclass(frozen=True)
class ToySample:
    image: np.ndarray
    content: ContentLabel
    style: StyleLabel


@dataclass(frozen=True)
class ToysetConfig:
    resolution: int = 32
    shapes: tuple[str, ...] = SHAPES
    size_range: tuple[float, float] = (5.0, 9.0)
    margin: float = 2.0
    colors: tuple[str, ...] = tuple(PALETTE)
    min_contrast: float = 0.3
    supersample: int = 4

    def __post_init__(self):
        object.__setattr__(self, "shapes", tuple(self.shapes))
        object.__setattr__(self, "colors", tuple(self.colors))
        bad = [s for s in self.shapes if s not in SHAPES]
        if not self.shapes or bad:
            raise ConfigError("toyset.shapes", f"unknown or empty shape list {self.shapes}")
        bad = [c for c in self.colors if c not in PALETTE]
        if bad:
            raise ConfigError("toyset.colors", f"unknown colours {bad}")
        lo, hi = self.size_range
        if not 0 < lo <= hi:
            raise ConfigError("toyset.size_range", f"invalid range {self.size_range}")
        if self.resolution < 2 * (hi + self.margin) + 1:
            raise ConfigError(
                "toyset.resolution", f"{self.resolution} px cannot hold shapes of size {hi}"
            )
        if not self.style_pairs():
            raise ConfigError("toyset.colors", "no colour pair satisfies the contrast bound")

    def style_pairs(self) -> list[tuple[str, str]]:
        return [
            (fg, bg)
            for fg in self.colors
            for bg in self.colors
            if fg != bg
            and abs(luminance(PALETTE[fg]) - luminance(PALETTE[bg])) >= self.min_contrast
        ]


def coverage(content: ContentLabel, resolution: int, supersample: int = 4) -> np.ndarray:
    """Fraction of each pixel covered by the shape, via a regular sub-pixel grid."""
    n = resolution * supersample
    coords = (np.arange(n) + 0.5) / supersample
    X, Y = np.meshgrid(coords, coords)
    cx, cy = content.center
    s = content.size
    dx, dy = X - cx, Y - cy
    if content.shape == "circle":
        inside = dx * dx + dy * dy <= s * s
    elif content.shape == "square":
        inside = (np.abs(dx) <= s) & (np.abs(dy) <= s)
    elif content.shape == "triangle":
        # equilateral, apex up (image y grows downward)
        verts = [
            (cx + s * np.cos(a), cy - s * np.sin(a))
            for a in np.deg2rad([90.0, 210.0, 330.0])
        ]
        inside = np.ones_like(X, dtype=bool)
        for (x0, y0), (x1, y1) in zip(verts, verts[1:] + verts[:1]):
            # interior lies on the same side as the centroid for every edge
            side = (x1 - x0) * (Y - y0) - (y1 - y0) * (X - x0)
            ref = (x1 - x0) * (cy - y0) - (y1 - y0) * (cx - x0)
            inside &= side * np.sign(ref) >= 0
    else:
        raise ConfigError("toyset.shapes", f"unknown shape {content.shape!r}")
    return inside.reshape(resolution, supersample, resolution, supersample).mean(axis=(1, 3))


def render_mask(content: ContentLabel, resolution: int = 32, supersample: int = 4) -> np.ndarray:
    return coverage(content, resolution, supersample) >= 0.5


def render(content: ContentLabel, style: StyleLabel, resolution: int = 32, supersample: int = 4):
    cov = coverage(content, resolution, supersample)
    fg = np.asarray(PALETTE[style.fg])[:, None, None]
    bg = np.asarray(PALETTE[style.bg])[:, None, None]
    rgb = bg + cov[None] * (fg - bg)
    return rgb * 2.0 - 1.0


def _sample_content(rng: np.random.Generator, cfg: ToysetConfig) -> ContentLabel:
    shape = cfg.shapes[rng.integers(len(cfg.shapes))]
    size = float(rng.uniform(*cfg.size_range))
    lo = size + cfg.margin
    hi = cfg.resolution - size - cfg.margin
    cx, cy = rng.uniform(lo, hi, size=2)
    return ContentLabel(shape, (float(cx), float(cy)), size)


def _sample_style(rng: np.random.Generator, cfg: ToysetConfig) -> StyleLabel:
    pairs = cfg.style_pairs()
    fg, bg = pairs[rng.integers(len(pairs))]
    return StyleLabel(fg, bg)


def make_sample(content: ContentLabel, style: StyleLabel, cfg: ToysetConfig = ToysetConfig()):
    return ToySample(render(content, style, cfg.resolution, cfg.supersample), content, style)


def generate(
    n: int, seed: int = 0, config: ToysetConfig | None = None, resolution: int | None = None
) -> list[ToySample]:
    """Draw ``n`` samples; content and style come from independent child streams.

    ``resolution``, when given, must agree with the config (it is the
    denoiser's input size).
    """
    cfg = config or ToysetConfig()
    if n < 1:
        raise ConfigError("toyset.n", f"must be >= 1, got {n}")
    if resolution is not None and resolution != cfg.resolution:
        raise ConfigError(
            "toyset.resolution",
            f"dataset resolution {cfg.resolution} does not match denoiser resolution {resolution}",
        )
    content_rng, style_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    return [
        make_sample(_sample_content(content_rng, cfg), _sample_style(style_rng, cfg), cfg)
        for _ in range(n)
    ]


def stack(samples: list[ToySample], dtype=np.float32) -> np.ndarray:
    return np.stack([s.image for s in samples]).astype(dtype)


def make_pairs(
    n_pairs: int, seed: int = 0, config: ToysetConfig | None = None, max_overlap: float = 0.2
) -> list[tuple[ToySample, ToySample]]:
    """Draw (original, content) pairs whose factors are distinguishable.

    A pair is kept only when the two shapes are different kinds with mask IoU
    at most ``max_overlap`` and the background colours differ, so that both
    proxy metrics can tell which image a result resembles.
    """
    cfg = config or ToysetConfig()
    rng = np.random.default_rng(seed)
    pairs = []
    while len(pairs) < n_pairs:
        a = (_sample_content(rng, cfg), _sample_style(rng, cfg))
        b = (_sample_content(rng, cfg), _sample_style(rng, cfg))
        if a[0].shape == b[0].shape or a[1].bg == b[1].bg:
            continue
        ma = render_mask(a[0], cfg.resolution, cfg.supersample)
        mb = render_mask(b[0], cfg.resolution, cfg.supersample)
        if _iou(ma, mb) > max_overlap:
            continue
        pairs.append((make_sample(*a, cfg), make_sample(*b, cfg)))
    return pairs


def _iou(a: np.ndarray, b: np.ndarray) -> float:
    union = np.logical_or(a, b).sum()
    return float(np.logical_and(a, b).sum() / union) if union else 0.0


def estimate_background(image: np.ndarray) -> np.ndarray:
    """Median colour of the one-pixel border, in [0, 1] RGB."""
    rgb = (np.asarray(image, dtype=np.float64) + 1.0) / 2.0
    border = np.concatenate(
        [rgb[:, 0, :], rgb[:, -1, :], rgb[:, 1:-1, 0], rgb[:, 1:-1, -1]], axis=1
    )
    return np.median(border, axis=1)


def foreground_mask(image: np.ndarray, min_contrast: float = 0.05) -> np.ndarray:
    """Otsu split of per-pixel luminance distance to the estimated background."""
    rgb = (np.asarray(image, dtype=np.float64) + 1.0) / 2.0
    lum = np.tensordot(LUMA, rgb, axes=(0, 0))
    dist = np.abs(lum - luminance(estimate_background(image)))
    if dist.max() < min_contrast:
        return np.zeros(dist.shape, dtype=bool)
    # Otsu over the exact distinct values: anti-aliased renders have a handful
    # of coverage levels and a 256-bin histogram would put the cut on one of them
    values, counts = np.unique(np.round(dist, 9), return_counts=True)
    return np.round(dist, 9) > threshold_otsu(hist=(counts, values))


def reference_mask(content: ContentLabel, resolution: int = 32) -> np.ndarray:
    """The shape as segmented from a clean white-on-black rendering.

    Using the same Otsu rule as for the scored image keeps the anti-aliasing
    bias of the threshold identical on both sides of the IoU.
    """
    return foreground_mask(render(content, StyleLabel("white", "black"), resolution))


def shape_iou(image: np.ndarray, reference: ToySample | ContentLabel) -> float:
    """IoU between the segmented foreground of ``image`` and the reference shape mask."""
    content = reference.content if isinstance(reference, ToySample) else reference
    seg = foreground_mask(image)
    if not seg.any():
        warnings.warn("empty foreground segmentation; shape IoU is 0", RuntimeWarning, stacklevel=2)
        return 0.0
    return _iou(seg, reference_mask(content, seg.shape[0]))


def color_histogram(image: np.ndarray, bins: int = 16) -> np.ndarray:
    img = np.clip(np.asarray(image, dtype=np.float64), -1.0, 1.0)
    hists = [np.histogram(ch, bins=bins, range=(-1.0, 1.0))[0] for ch in img]
    h = np.asarray(hists, dtype=np.float64)
    return h / h.sum(axis=1, keepdims=True)


def color_hist_distance(a: np.ndarray, b: np.ndarray, bins: int = 16) -> float:
    """Mean over channels of the L1 distance between normalised histograms; in [0, 2]."""
    if np.shape(a) != np.shape(b):
        raise ValueError(f"shape mismatch {np.shape(a)} vs {np.shape(b)}")
    return float(np.abs(color_histogram(a, bins) - color_histogram(b, bins)).sum(axis=1).mean())


def write_dataset(samples: list[ToySample], directory: str | Path) -> Path:
    """Write one PPM per sample plus ``labels.csv``; returns the manifest path."""
    from .imageio import write_ppm

    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    manifest = out / "labels.csv"
    with manifest.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "shape", "center_x", "center_y", "size", "fg", "bg"])
        for i, s in enumerate(samples):
            name = f"{i:05d}.ppm"
            write_ppm(out / name, s.image)
            c = s.content
            w.writerow([name, c.shape, f"{c.center[0]:.6f}", f"{c.center[1]:.6f}", f"{c.size:.6f}", s.style.fg, s.style.bg])
    log.info("wrote %d samples to %s", len(samples), out)
    return manifest


def read_dataset(directory: str | Path) -> list[ToySample]:
    from .imageio import read_ppm

    root = Path(directory)
    samples = []
    with (root / "labels.csv").open() as fh:
        for row in csv.DictReader(fh):
            content = ContentLabel(
                row["shape"], (float(row["center_x"]), float(row["center_y"])), float(row["size"])
            )
            samples.append(ToySample(read_ppm(root / row["id"]), content, StyleLabel(row["fg"], row["bg"])))
    return samples
