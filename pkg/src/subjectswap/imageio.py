"""PNG/JPEG decoding and pinned, byte-deterministic PNG encoding."""

from __future__ import annotations

import io
import os
import tempfile
from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from .core import ImageBuffer
from .errors import DecodeError

# Pinned encoder settings: no metadata chunks, fixed zlib level, no optimizer pass.
PNG_COMPRESS_LEVEL = 6


def encode_png(image: ImageBuffer) -> bytes:
    mode = "RGBA" if image.pixels.shape[2] == 4 else "RGB"
    buf = io.BytesIO()
    Image.fromarray(image.pixels, mode=mode).save(
        buf, format="PNG", compress_level=PNG_COMPRESS_LEVEL, optimize=False
    )
    return buf.getvalue()


def decode_image(data: bytes, keep_alpha: bool = False) -> ImageBuffer:
    """Decode PNG/JPEG bytes to RGB8 (or RGBA8 when ``keep_alpha`` and present)."""
    try:
        with Image.open(io.BytesIO(data)) as img:
            img.load()
            has_alpha = img.mode in ("RGBA", "LA", "PA") or "transparency" in img.info
            if keep_alpha and has_alpha:
                img = img.convert("RGBA")
            else:
                img = img.convert("RGB")
            return ImageBuffer(np.asarray(img, dtype=np.uint8))
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise DecodeError(f"cannot decode image: {exc}") from None


def load_image(path: Union[str, Path], keep_alpha: bool = False) -> ImageBuffer:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise DecodeError(f"cannot read image {path}: {exc}") from None
    try:
        return decode_image(data, keep_alpha=keep_alpha)
    except DecodeError as exc:
        raise DecodeError(f"{path}: {exc}") from None


def atomic_write_bytes(path: Union[str, Path], data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=path.suffix)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def save_png(path: Union[str, Path], image: ImageBuffer) -> bytes:
    """Write ``image`` as PNG atomically and return the encoded bytes."""
    data = encode_png(image)
    atomic_write_bytes(path, data)
    return data
