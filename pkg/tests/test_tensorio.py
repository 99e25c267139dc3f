import struct

import numpy as np
import pytest
from PIL import Image

from dipdefense.errors import InputError
from dipdefense.tensorio import (
    load_image,
    read_config_file,
    read_tensor,
    save_image,
    write_config_file,
    write_tensor,
)


def test_tensor_roundtrip(tmp_path, rng):
    x = rng.random((3, 5, 7)).astype(np.float32)
    write_tensor(tmp_path / "x.dpt", x)
    y = read_tensor(tmp_path / "x.dpt")
    assert y.dtype == np.float32 and y.shape == x.shape
    assert np.array_equal(x, y)


def test_tensor_header_layout(tmp_path):
    write_tensor(tmp_path / "x.dpt", np.arange(6, dtype=np.float32).reshape(2, 3))
    raw = (tmp_path / "x.dpt").read_bytes()
    assert raw[:4] == b"DPT1"
    assert struct.unpack("<III", raw[4:16]) == (2, 2, 3)
    assert np.array_equal(np.frombuffer(raw[16:], "<f4"), np.arange(6))


def test_tensor_rejects_bad_files(tmp_path):
    (tmp_path / "bad.dpt").write_bytes(b"NOPE" + bytes(8))
    with pytest.raises(InputError):
        read_tensor(tmp_path / "bad.dpt")
    write_tensor(tmp_path / "t.dpt", np.zeros(4, np.float32))
    (tmp_path / "t.dpt").write_bytes((tmp_path / "t.dpt").read_bytes()[:-2])
    with pytest.raises(InputError):
        read_tensor(tmp_path / "t.dpt")


def test_png_roundtrip_is_exact_on_8bit_values(tmp_path, rng):
    x = (rng.integers(0, 256, (3, 8, 8)) / 255.0).astype(np.float32)
    save_image(tmp_path / "x.png", x)
    assert np.array_equal(load_image(tmp_path / "x.png"), x)


def test_load_image_center_resize(tmp_path):
    arr = np.zeros((40, 80, 3), np.uint8)
    arr[:, 20:60] = 255  # the centre square survives the crop
    Image.fromarray(arr).save(tmp_path / "wide.png")
    x = load_image(tmp_path / "wide.png", size=20)
    assert x.shape == (3, 20, 20)
    assert x.min() > 0.9


def test_config_file_roundtrip(tmp_path):
    sections = {"generator": {"num_scales": 3, "filters_down": (32, 32, 32)}, "detection": {"tau": 0.7}}
    write_config_file(tmp_path / "c.ini", sections)
    back = read_config_file(tmp_path / "c.ini")
    assert back["generator"]["num_scales"] == "3"
    assert back["detection"]["tau"] == "0.7"
    assert "32" in back["generator"]["filters_down"]
