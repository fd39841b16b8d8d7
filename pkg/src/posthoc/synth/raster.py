"""Decision-surface rasters written as binary PGM images."""

from __future__ import annotations

from pathlib import Path
from typing import Callable

import numpy as np

from ..errors import ValidationError


def render_decision_surface(predict: Callable[[np.ndarray], np.ndarray], bounds,
                            resolution: int) -> np.ndarray:
    """Predicted class on a ``resolution x resolution`` lattice.

    ``predict`` maps an (M, 2) array of points to M class indices. Row 0 of
    the returned grid is the top edge (``y = ymax``), column 0 is ``x = xmin``.
    """
    xmin, xmax, ymin, ymax = (float(b) for b in bounds)
    if resolution < 2:
        raise ValidationError(f"resolution must be >= 2, got {resolution}")
    if not (xmin < xmax and ymin < ymax):
        raise ValidationError(f"degenerate bounds {bounds}")
    xs = np.linspace(xmin, xmax, resolution)
    ys = np.linspace(ymax, ymin, resolution)
    gx, gy = np.meshgrid(xs, ys)
    points = np.stack([gx.ravel(), gy.ravel()], axis=1)
    classes = np.asarray(predict(points)).reshape(resolution, resolution)
    return classes.astype(np.int64)


def to_pgm(grid: np.ndarray, n_classes: int = 2) -> bytes:
    """Encode a class grid as P5 with pixel value ``class * 255 / (C - 1)``."""
    if n_classes < 2:
        raise ValidationError("need at least two classes")
    grid = np.asarray(grid)
    h, w = grid.shape
    pixels = np.rint(grid * 255.0 / (n_classes - 1)).astype(np.uint8)
    return f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes()


def read_pgm(data: bytes) -> np.ndarray:
    parts = data.split(maxsplit=4)
    if len(parts) < 5 or parts[0] != b"P5":
        raise ValidationError("not a binary PGM image")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ValidationError(f"unsupported maxval {maxval}")
    return np.frombuffer(parts[4][:w * h], dtype=np.uint8).reshape(h, w)


def save_pgm(grid: np.ndarray, path, n_classes: int = 2) -> None:
    Path(path).write_bytes(to_pgm(grid, n_classes))
