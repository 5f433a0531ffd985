"""Byteplot images: layout, resizing, network input conditioning and PGM I/O."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from . import backend
from .errors import EmptyBytes, InvalidNormalization, MalformedPgm, ShapeMismatch

INTERPOLATIONS = ("bilinear", "nearest")

# File-size thresholds (KiB) -> row width, after Nataraj et al.
_AUTO_WIDTHS = ((10, 32), (30, 64), (60, 128), (100, 256), (200, 384), (500, 512), (1000, 768))


@dataclass(frozen=True, eq=False)
class GrayImage:
    """8-bit grayscale raster; ``pixels`` is a ``(height, width)`` uint8 array."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.ascontiguousarray(self.pixels, dtype=np.uint8)
        if px.ndim != 2 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ShapeMismatch(f"image needs a non-empty 2-D pixel grid, got shape {px.shape}")
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    def pixel(self, row: int, col: int) -> int:
        return int(self.pixels[row, col])

    def __eq__(self, other):
        return isinstance(other, GrayImage) and np.array_equal(self.pixels, other.pixels)


@dataclass(frozen=True)
class ResizeSpec:
    target_width: int = 256
    target_height: int = 256
    method: str = "bilinear"

    def __post_init__(self):
        if self.target_width < 1 or self.target_height < 1:
            raise ValueError("resize target must be at least 1x1")
        if self.method not in INTERPOLATIONS:
            raise ValueError(f"unknown interpolation {self.method!r}")

    @classmethod
    def parse(cls, text: str, method: str = "bilinear") -> "ResizeSpec":
        """Parse ``"256x256"`` (width x height)."""
        w, _, h = text.lower().partition("x")
        return cls(int(w), int(h), method)


def auto_row_width(n_bytes: int) -> int:
    """File-size dependent width used by the classic byteplot literature."""
    kib = n_bytes / 1024
    for limit, width in _AUTO_WIDTHS:
        if kib < limit:
            return width
    return 1024


def bytes_to_image(data, row_width: Union[int, str] = 16, pad_value: int = 0) -> GrayImage:
    """Lay bytes out row-major, ``row_width`` per row; pad the last row with ``pad_value``.

    ``row_width="auto"`` picks the width from the byte count.
    """
    arr = np.asarray(data, dtype=np.uint8).ravel()
    n = arr.shape[0]
    if n == 0:
        raise EmptyBytes("cannot build an image from zero bytes")
    if row_width == "auto":
        row_width = auto_row_width(n)
    row_width = int(row_width)
    if row_width < 1:
        raise ValueError("row_width must be >= 1")
    height = math.ceil(n / row_width)
    px = np.full(height * row_width, pad_value, dtype=np.uint8)
    px[:n] = arr
    return GrayImage(px.reshape(height, row_width))


def _nearest_index(src: int, dst: int) -> np.ndarray:
    idx = np.floor((np.arange(dst) + 0.5) * (src / dst)).astype(np.int64)
    return np.minimum(idx, src - 1)


def resize(img: GrayImage, spec: ResizeSpec, kernels=None) -> GrayImage:
    """Resize with half-pixel centres.

    Bilinear samples source coordinate ``(d + 0.5) * src/dst - 0.5`` clamped
    to the image, then rounds half away from zero. Identical size is a no-op.
    """
    if (img.width, img.height) == (spec.target_width, spec.target_height):
        return GrayImage(img.pixels.copy())
    if spec.method == "nearest":
        rows = _nearest_index(img.height, spec.target_height)
        cols = _nearest_index(img.width, spec.target_width)
        return GrayImage(img.pixels[rows][:, cols])
    k = kernels or backend.kernels
    return GrayImage(k.resize_bilinear(img.pixels, spec.target_height, spec.target_width))


def to_input_tensor(img: Union[GrayImage, np.ndarray], channels: int = 1, normalization: str = "unit",
                    mean: Union[float, Sequence[float]] = 0.0, std: Union[float, Sequence[float]] = 1.0,
                    dtype=np.float32) -> np.ndarray:
    """Scale pixels to ``[0, 1]`` and optionally standardise; returns ``(C, H, W)``.

    Also accepts a stack of images as a ``(N, H, W)`` uint8 array, returning
    ``(N, C, H, W)``. Three channels replicate the gray plane.
    """
    px = img.pixels if isinstance(img, GrayImage) else np.asarray(img)
    if channels not in (1, 3):
        raise ValueError("channels must be 1 or 3")
    x = px.astype(dtype) / dtype(255.0)
    x = np.expand_dims(x, -3)
    if channels == 3:
        x = np.repeat(x, 3, axis=-3)
    if normalization == "meanstd":
        m = np.broadcast_to(np.asarray(mean, dtype=np.float64), (channels,))
        s = np.broadcast_to(np.asarray(std, dtype=np.float64), (channels,))
        if np.any(s == 0):
            raise InvalidNormalization("std must be non-zero")
        x = ((x - m.reshape(-1, 1, 1)) / s.reshape(-1, 1, 1)).astype(dtype)
    elif normalization != "unit":
        raise InvalidNormalization(f"unknown normalization {normalization!r}")
    return np.ascontiguousarray(x)


def encode_pgm(img: GrayImage) -> bytes:
    return f"P5\n{img.width} {img.height}\n255\n".encode("ascii") + img.pixels.tobytes()


def write_pgm(img: GrayImage, sink) -> None:
    """Write binary PGM (P5, maxval 255) to a path or binary file object."""
    data = encode_pgm(img)
    if hasattr(sink, "write"):
        sink.write(data)
    else:
        with open(sink, "wb") as fh:
            fh.write(data)


def _header_fields(buf: bytes):
    """Yield the four header fields and the offset of the raster."""
    fields = []
    pos = 0
    n = len(buf)
    while len(fields) < 4:
        while pos < n and (buf[pos:pos + 1].isspace() or buf[pos:pos + 1] == b"#"):
            if buf[pos:pos + 1] == b"#":
                while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            else:
                pos += 1
        start = pos
        while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise MalformedPgm("truncated header")
        fields.append(buf[start:pos])
    if pos >= n or not buf[pos:pos + 1].isspace():
        raise MalformedPgm("missing whitespace after maxval")
    return fields, pos + 1


def decode_pgm(buf: bytes) -> GrayImage:
    fields, offset = _header_fields(buf)
    if fields[0] != b"P5":
        raise MalformedPgm(f"bad magic {fields[0]!r}")
    try:
        width, height, maxval = (int(f) for f in fields[1:])
    except ValueError:
        raise MalformedPgm("non-numeric header field") from None
    if maxval != 255:
        raise MalformedPgm(f"unsupported maxval {maxval}")
    if width < 1 or height < 1:
        raise MalformedPgm("empty image")
    need = width * height
    if len(buf) - offset < need:
        raise MalformedPgm(f"truncated payload: {len(buf) - offset} of {need} bytes")
    px = np.frombuffer(buf, dtype=np.uint8, count=need, offset=offset)
    return GrayImage(px.reshape(height, width).copy())


def read_pgm(source) -> GrayImage:
    """Read a P5 PGM from a path, bytes object or binary file object."""
    if isinstance(source, (bytes, bytearray)):
        return decode_pgm(bytes(source))
    if hasattr(source, "read"):
        return decode_pgm(source.read())
    with open(source, "rb") as fh:
        return decode_pgm(fh.read())


def convert_hexdump(path: Union[str, os.PathLike], row_width: Union[int, str] = 16,
                    spec: ResizeSpec = ResizeSpec(), unknown: str = "zero") -> GrayImage:
    """``.bytes`` file -> resized byteplot; the ``convert`` pipeline for one file."""
    from .bytesource import read_hexdump, resolve_unknown

    seq = read_hexdump(path)
    img = bytes_to_image(resolve_unknown(seq, unknown), row_width=row_width)
    return resize(img, spec)
