"""Shared fixtures-in-function-form for the test suite."""

import io
import random
from pathlib import Path

from PIL import Image


def jpeg_bytes(color=(200, 30, 30), size=(32, 24)) -> bytes:
    buf = io.BytesIO()
    Image.new("RGB", size, color).save(buf, format="JPEG")
    return buf.getvalue()


def frame_color(i: int) -> tuple[int, int, int]:
    return ((i * 20) % 256, (i * 7 + 40) % 256, (i * 13 + 90) % 256)


def write_frames_dir(directory: Path, count: int, size=(32, 24)) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    for i in range(count):
        path = directory / ("frame_%04d.jpg" % i)
        path.write_bytes(jpeg_bytes(frame_color(i), size))
    return directory


def pseudo_jpeg(seed: int, length: int = 64) -> bytes:
    """Deterministic JPEG-looking blob; fast, not decodable as an image."""
    rng = random.Random(seed)
    body = bytes(rng.randrange(256) for _ in range(length))
    return b"\xff\xd8\xff\xe0" + body + b"\xff\xd9"
