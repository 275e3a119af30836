"""Binary portable pixmap (P6) and graymap (P5) reading and writing, maxval 255.

Images are ``uint8`` arrays, H x W x 3 for P6 and H x W for P5.
"""

from __future__ import annotations

import os

import numpy as np

MAX_EXTENT = 1 << 16


class ImageFormatError(ValueError):
    """Base class for image decoding failures."""


class MalformedHeaderError(ImageFormatError):
    pass


class ExtentOverflowError(ImageFormatError):
    pass


class TruncatedPayloadError(ImageFormatError):
    pass


class UnsupportedDepthError(ImageFormatError):
    pass


def _header_tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace-separated header tokens, skipping '#' comments.

    Returns the tokens and the offset of the single whitespace byte that
    terminates the last one.
    """
    tokens: list[bytes] = []
    i, n = 0, len(buf)
    while len(tokens) < count:
        while i < n and buf[i : i + 1].isspace():
            i += 1
        if i < n and buf[i : i + 1] == b"#":
            while i < n and buf[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        start = i
        while i < n and not buf[i : i + 1].isspace() and buf[i : i + 1] != b"#":
            i += 1
        if start == i:
            raise MalformedHeaderError(f"header ended after {len(tokens)} of {count} fields")
        tokens.append(buf[start:i])
    if i >= n or not buf[i : i + 1].isspace():
        raise MalformedHeaderError("header not terminated by a single whitespace byte")
    return tokens, i


def decode(buf: bytes) -> np.ndarray:
    if len(buf) < 2 or buf[:2] not in (b"P5", b"P6"):
        raise MalformedHeaderError(f"unsupported magic {buf[:2]!r}; expected P5 or P6")
    tokens, end = _header_tokens(buf, 4)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise MalformedHeaderError(f"non-numeric header fields {tokens[1:]!r}") from None
    if width <= 0 or height <= 0:
        raise MalformedHeaderError(f"non-positive extent {width}x{height}")
    if width > MAX_EXTENT or height > MAX_EXTENT:
        raise ExtentOverflowError(f"extent {width}x{height} exceeds limit {MAX_EXTENT}")
    if maxval != 255:
        raise UnsupportedDepthError(f"maxval {maxval} unsupported; only 255 is accepted")
    channels = 3 if buf[:2] == b"P6" else 1
    expected = width * height * channels
    payload = buf[end + 1 :]
    if len(payload) < expected:
        raise TruncatedPayloadError(f"payload has {len(payload)} bytes, header declares {expected}")
    arr = np.frombuffer(payload[:expected], dtype=np.uint8)
    return arr.reshape((height, width, 3) if channels == 3 else (height, width)).copy()


def encode(image: np.ndarray) -> bytes:
    image = np.asarray(image)
    if image.dtype != np.uint8:
        raise TypeError(f"images must be uint8, got {image.dtype}")
    if image.ndim == 3 and image.shape[2] == 3:
        magic = b"P6"
    elif image.ndim == 2:
        magic = b"P5"
    else:
        raise ValueError(f"image shape {image.shape} is neither H x W x 3 nor H x W")
    h, w = image.shape[:2]
    return magic + f"\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(image).tobytes()


def load_image(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode(fh.read())


def save_image(path: str | os.PathLike, image: np.ndarray) -> None:
    data = encode(image)
    with open(path, "wb") as fh:
        fh.write(data)


def save_mask(path: str | os.PathLike, mask: np.ndarray) -> None:
    """Write a boolean mask as a P5 graymap with values {0, 255}."""
    save_image(path, np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8))


def load_mask(path: str | os.PathLike) -> np.ndarray:
    img = load_image(path)
    if img.ndim != 2:
        raise ImageFormatError(f"{path}: mask must be a single-channel graymap")
    bad = (img != 0) & (img != 255)
    if bad.any():
        raise ImageFormatError(f"{path}: mask contains values other than 0 and 255")
    return img == 255
