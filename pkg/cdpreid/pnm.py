"""
Binary PPM (P6) and PGM (P5) image files with maxval 255.
"""

import os
from typing import List, Tuple, Union

import numpy as np

from .enums import ValueDomain
from .errors import InvalidInputError
from .imaging import ImageTensor

PathLike = Union[str, "os.PathLike[str]"]

_MAGIC_CHANNELS = {b"P5": 1, b"P6": 3}


def encode(img: ImageTensor) -> bytes:
    if img.domain is not ValueDomain.U8:
        raise InvalidInputError("only u8 images can be written as PPM/PGM")
    magic = b"P6" if img.channels == 3 else b"P5"
    header = magic + b"\n%d %d\n255\n" % (img.width, img.height)
    return header + np.ascontiguousarray(img.data).tobytes()


def _header_tokens(blob: bytes) -> Tuple[List[bytes], int]:
    """
    First four whitespace separated header tokens, skipping ``#`` comments,
    and the offset of the pixel data.
    """
    tokens: List[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(blob):
            raise InvalidInputError("truncated PNM header")
        if blob[pos:pos + 1] == b"#":
            end = blob.find(b"\n", pos)
            pos = len(blob) if end < 0 else end + 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        tokens.append(blob[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def decode(blob: bytes) -> ImageTensor:
    tokens, offset = _header_tokens(blob)
    magic, width, height, maxval = tokens
    if magic not in _MAGIC_CHANNELS:
        raise InvalidInputError(f"unsupported PNM magic {magic!r}, expected P5 or P6")
    try:
        width_i, height_i, maxval_i = int(width), int(height), int(maxval)
    except ValueError:
        raise InvalidInputError("malformed PNM header") from None
    if maxval_i != 255:
        raise InvalidInputError(f"only maxval 255 is supported, got {maxval_i}")
    channels = _MAGIC_CHANNELS[magic]
    expected = width_i * height_i * channels
    raster = blob[offset:offset + expected]
    if len(raster) != expected:
        raise InvalidInputError(f"PNM raster has {len(raster)} bytes, expected {expected}")
    data = np.frombuffer(raster, dtype=np.uint8).reshape(height_i, width_i, channels).copy()
    return ImageTensor(data, ValueDomain.U8)


def read_image(path: PathLike) -> ImageTensor:
    with open(path, "rb") as fh:
        blob = fh.read()
    try:
        return decode(blob)
    except InvalidInputError as exc:
        raise InvalidInputError(f"{path}: {exc}") from None


def write_image(path: PathLike, img: ImageTensor) -> None:
    with open(path, "wb") as fh:
        fh.write(encode(img))


def suffix_for(img: ImageTensor) -> str:
    return ".ppm" if img.channels == 3 else ".pgm"
