"""Image and tensor file formats.

Raw tensor layout (little endian)::

    bytes 0-3   magic b"DPT1"
    bytes 4-7   uint32 number of dimensions n
    next 4*n    uint32 dimension sizes, outermost first
    remainder   float32 values in row-major (C) order

Images are held in memory as float32 arrays of shape (C, H, W) with values
in [0, 1].
"""

from __future__ import annotations

import configparser
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigurationError, InputError

MAGIC = b"DPT1"


def write_tensor(path, array) -> None:
    arr = np.ascontiguousarray(array, dtype="<f4")
    header = MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    Path(path).write_bytes(header + arr.tobytes(order="C"))


def read_tensor(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise InputError(f"{path}: not a raw tensor file (bad magic {raw[:4]!r})")
    (ndim,) = struct.unpack_from("<I", raw, 4)
    shape = struct.unpack_from(f"<{ndim}I", raw, 8)
    offset = 8 + 4 * ndim
    expected = int(np.prod(shape, dtype=np.int64)) * 4
    if len(raw) - offset != expected:
        raise InputError(f"{path}: payload is {len(raw) - offset} bytes, header implies {expected}")
    return np.frombuffer(raw, dtype="<f4", offset=offset).reshape(shape).astype(np.float32)


def load_image(path, size: int | None = None) -> np.ndarray:
    """Load a PNG/JPEG file as a (C, H, W) float32 array in [0, 1].

    If ``size`` is given the shorter side is resized to ``size`` and the
    result is center-cropped to ``size`` x ``size``.
    """
    with Image.open(path) as im:
        im = im.convert("RGB")
        if size is not None:
            im = center_resize(im, size)
        arr = np.asarray(im, dtype=np.float32) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def center_resize(im: Image.Image, size: int) -> Image.Image:
    w, h = im.size
    scale = size / min(w, h)
    nw, nh = max(size, round(w * scale)), max(size, round(h * scale))
    im = im.resize((nw, nh), Image.BICUBIC)
    left, top = (nw - size) // 2, (nh - size) // 2
    return im.crop((left, top, left + size, top + size))


def save_image(path, image) -> None:
    """Write a (C, H, W) [0, 1] array as an 8-bit PNG/JPEG (by extension)."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 3:
        raise InputError(f"expected a (C, H, W) image, got shape {arr.shape}")
    arr = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    if arr.shape[2] == 1:
        arr = arr[:, :, 0]
    Image.fromarray(arr).save(path)


def read_config_file(path) -> dict[str, dict[str, str]]:
    """Parse an INI-style config into ``{section: {key: raw string}}``.

    Keys before any section header land in section ``""``.
    """
    text = Path(path).read_text()
    parser = configparser.ConfigParser(interpolation=None, default_section="\0defaults")
    parser.optionxform = str
    try:
        parser.read_string("[\0top]\n" + text)
    except configparser.Error as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc
    out = {}
    for name in parser.sections():
        out["" if name == "\0top" else name] = dict(parser[name])
    return out


def write_config_file(path, sections: dict[str, dict]) -> None:
    lines = []
    for key, value in sections.get("", {}).items():
        lines.append(f"{key} = {_fmt(value)}")
    for name, values in sections.items():
        if name == "":
            continue
        if lines:
            lines.append("")
        lines.append(f"[{name}]")
        lines.extend(f"{k} = {_fmt(v)}" for k, v in values.items())
    Path(path).write_text("\n".join(lines) + "\n")


def _fmt(value) -> str:
    if isinstance(value, (list, tuple)):
        return ", ".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)
