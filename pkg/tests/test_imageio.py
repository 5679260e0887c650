import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from contentinject.errors import ContractError
from contentinject.imageio import (
    decode_ppm,
    encode_ppm,
    load_tensor,
    load_trace,
    quantize,
    read_ppm,
    save_tensor,
    save_trace,
    write_image,
    write_ppm,
)


def test_quantize_endpoints_and_rounding():
    img = np.array([-1.0, 1.0, 0.0, -2.0, 3.0, -0.5, 0.5])[None, None, :].repeat(3, 0)
    # 0 -> 127.5 rounds up; -0.5 -> 63.75; 0.5 -> 191.25
    assert quantize(img)[0, :, 0].tolist() == [0, 255, 128, 0, 255, 64, 191]


def test_quantize_shape_check():
    with pytest.raises(ContractError):
        quantize(np.zeros((4, 2, 2)))


def test_ppm_header_and_round_trip(tmp_path):
    img = np.random.default_rng(0).uniform(-1, 1, (3, 5, 7))
    data = encode_ppm(img)
    assert data.startswith(b"P6\n7 5\n255\n")
    assert len(data) == len(b"P6\n7 5\n255\n") + 5 * 7 * 3
    write_ppm(tmp_path / "a.ppm", img)
    back = read_ppm(tmp_path / "a.ppm")
    assert back.shape == img.shape
    assert np.abs(back - img).max() <= 1 / 255 + 1e-12
    assert encode_ppm(back) == data


def test_ppm_comments_and_variants():
    px = bytes(range(12))
    img = decode_ppm(b"P6\n# comment\n2 2\n255\n" + px)
    assert quantize(img).tobytes() == px
    with pytest.raises(ContractError):
        decode_ppm(b"P3\n1 1\n255\n" + bytes(3))
    with pytest.raises(ContractError, match="truncated"):
        decode_ppm(b"P6\n2 2\n255\n" + bytes(5))


def test_png_same_bytes(tmp_path):
    img = np.random.default_rng(1).uniform(-1, 1, (3, 6, 4))
    write_image(tmp_path / "a.png", img)
    write_image(tmp_path / "a.ppm", img)
    png = np.asarray(Image.open(tmp_path / "a.png"))
    assert png.tobytes() == quantize(img).tobytes()
    assert np.asarray(Image.open(io.BytesIO((tmp_path / "a.ppm").read_bytes()))).tobytes() == png.tobytes()


@given(arrays(np.uint8, (3, 4, 5), elements=st.integers(0, 255)))
@settings(max_examples=100, deadline=None)
def test_quantize_inverts_dequantize(px):
    hwc = px.transpose(1, 2, 0)
    img = decode_ppm(b"P6\n5 4\n255\n" + hwc.tobytes())
    assert quantize(img).tobytes() == hwc.tobytes()


def test_tensor_format(tmp_path):
    a = np.random.default_rng(2).standard_normal((2, 3, 4)).astype(np.float64)
    save_tensor(tmp_path / "x.npy", a)
    raw = np.load(tmp_path / "x.npy")
    assert raw.dtype.str == "<f4" and raw.shape == (2, 3, 4)
    np.testing.assert_array_equal(load_tensor(tmp_path / "x.npy"), a.astype(np.float32))


def test_trace_format(tmp_path):
    tr = {1000: np.ones((2, 4, 2, 2)), 600: np.zeros((2, 4, 2, 2))}
    save_trace(tmp_path / "c.npz", tr)
    back = load_trace(tmp_path / "c.npz")
    assert sorted(back) == [600, 1000]
    assert back[1000].dtype == np.float32
    np.savez(tmp_path / "bad.npz", format_version=np.array(7), t5=np.zeros(1))
    with pytest.raises(ContractError, match="version"):
        load_trace(tmp_path / "bad.npz")
