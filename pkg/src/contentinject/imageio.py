"""Image and tensor file formats.

Images: binary PPM (P6, maxval 255) is canonical.  A value ``v`` in [-1, 1]
maps to ``round((v + 1) / 2 * 255)`` clamped to [0, 255], rounding half away
from zero.  PNG output stores the same bytes.

Tensors: ``.npy`` (versioned header with shape, row-major, little-endian
float32).  Content traces are ``.npz`` archives with one ``t{timestep}``
entry per injection step plus a format-version entry.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ContractError

TRACE_FORMAT_VERSION = 1


def quantize(image: np.ndarray) -> np.ndarray:
    """(3, H, W) floats in [-1, 1] -> (H, W, 3) uint8."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ContractError(f"expected a (3, H, W) image, got shape {img.shape}")
    q = np.clip((img + 1.0) / 2.0 * 255.0, 0.0, 255.0)
    q = np.floor(q + 0.5)  # non-negative after clipping, so this is half-away-from-zero
    return q.astype(np.uint8).transpose(1, 2, 0)


def dequantize(pixels: np.ndarray) -> np.ndarray:
    return pixels.astype(np.float64).transpose(2, 0, 1) / 255.0 * 2.0 - 1.0


def encode_ppm(image: np.ndarray) -> bytes:
    px = quantize(image)
    h, w, _ = px.shape
    return b"P6\n%d %d\n255\n" % (w, h) + px.tobytes()


def write_ppm(path: str | Path, image: np.ndarray) -> None:
    Path(path).write_bytes(encode_ppm(image))


def decode_ppm(data: bytes) -> np.ndarray:
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic != b"P6" or maxval != 255:
        raise ContractError(f"unsupported PPM variant {magic!r} maxval={maxval}")
    pos += 1  # single whitespace byte before the raster
    raster = np.frombuffer(data[pos : pos + w * h * 3], dtype=np.uint8)
    if raster.size != w * h * 3:
        raise ContractError("truncated PPM raster")
    return dequantize(raster.reshape(h, w, 3))


def read_ppm(path: str | Path) -> np.ndarray:
    return decode_ppm(Path(path).read_bytes())


def write_png(path: str | Path, image: np.ndarray) -> None:
    from PIL import Image

    Image.fromarray(quantize(image), mode="RGB").save(path, format="PNG")


def write_image(path: str | Path, image: np.ndarray) -> None:
    path = Path(path)
    if path.suffix.lower() == ".png":
        write_png(path, image)
    else:
        write_ppm(path, image)


def save_tensor(path: str | Path, array: np.ndarray) -> None:
    with open(path, "wb") as fh:
        np.save(fh, np.asarray(array, dtype="<f4"), allow_pickle=False)


def load_tensor(path: str | Path) -> np.ndarray:
    return np.load(path, allow_pickle=False).astype(np.float32)


def save_trace(path: str | Path, trace: dict[int, np.ndarray]) -> None:
    entries = {f"t{int(t)}": np.asarray(h, dtype="<f4") for t, h in trace.items()}
    np.savez(path, format_version=np.array(TRACE_FORMAT_VERSION), **entries)


def load_trace(path: str | Path) -> dict[int, np.ndarray]:
    with np.load(path, allow_pickle=False) as z:
        version = int(z["format_version"])
        if version != TRACE_FORMAT_VERSION:
            raise ContractError(f"unsupported trace format version {version}")
        return {int(k[1:]): z[k].astype(np.float32) for k in z.files if k.startswith("t")}
