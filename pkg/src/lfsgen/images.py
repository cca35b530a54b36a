"""8-bit RGB PNG ingestion/emission; tensors live in [-1, 1]."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import torch
from PIL import Image


def to_uint8(img: torch.Tensor) -> np.ndarray:
    """(3, h, w) in [-1, 1] -> (h, w, 3) uint8."""
    arr = img.detach().cpu().numpy()
    arr = np.clip((arr + 1.0) * 127.5, 0.0, 255.0)
    return np.rint(arr).astype(np.uint8).transpose(1, 2, 0)


def from_uint8(arr: np.ndarray) -> torch.Tensor:
    """(h, w, 3) uint8 -> (3, h, w) float32 in [-1, 1]."""
    t = torch.from_numpy(arr.astype(np.float32).transpose(2, 0, 1))
    return t / 127.5 - 1.0


def save_png(path: Path | str, img: torch.Tensor) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(img), mode="RGB").save(path, format="PNG")


def load_png(path: Path | str) -> torch.Tensor:
    with Image.open(path) as im:
        return from_uint8(np.asarray(im.convert("RGB")))


def png_bytes(img: torch.Tensor) -> bytes:
    import io

    buf = io.BytesIO()
    Image.fromarray(to_uint8(img), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def load_image_dir(path: Path | str) -> torch.Tensor:
    """All PNGs of a directory, sorted by filename, as one (k, 3, h, w) batch."""
    files = sorted(Path(path).glob("*.png"))
    if not files:
        raise FileNotFoundError(f"no .png files in {path}")
    return torch.stack([load_png(f) for f in files])


def save_image_grid(path: Path | str, images: torch.Tensor, cols: int | None = None) -> None:
    n = images.shape[0]
    if n == 0:
        raise ValueError("cannot lay out an empty grid")
    cols = cols or max(1, int(math.ceil(math.sqrt(n))))
    rows = int(math.ceil(n / cols))
    _, c, h, w = images.shape
    grid = torch.full((c, rows * h, cols * w), -1.0)
    for i in range(n):
        rr, cc = divmod(i, cols)
        grid[:, rr * h : (rr + 1) * h, cc * w : (cc + 1) * w] = images[i]
    save_png(path, grid)
