"""Input validation helpers used by the public entry points."""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, SemanticsError


def check_semantics(img, expected) -> None:
    if img.semantics is not expected:
        raise SemanticsError(
            f"expected {expected.value} raster, got {img.semantics.value}"
        )


def check_same_dims(img, mask) -> None:
    if (img.height, img.width) != (mask.height, mask.width):
        raise DimensionError(
            f"mask dims {mask.width}x{mask.height} do not match "
            f"image dims {img.width}x{img.height}"
        )


def check_square(img) -> None:
    if img.width != img.height:
        raise DimensionError(f"square raster required, got {img.width}x{img.height}")


def check_even_dims(grid: np.ndarray) -> None:
    h, w = grid.shape
    if h % 2 or w % 2:
        raise DimensionError(f"even dimensions required, got {h}x{w}")


def as_real_grid(grid) -> np.ndarray:
    arr = np.asarray(grid, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise DimensionError(f"2D grid required, got shape {arr.shape}")
    return arr


def as_instances(bag) -> np.ndarray:
    """Coerce a bag to an (n, d) float64 matrix with n >= 1."""
    arr = np.asarray(bag, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionError(f"bag must be a non-empty (n, d) matrix, got {arr.shape}")
    return arr


def check_finite(arr: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise DimensionError(f"{name} contains non-finite values")


def bags_feature_dim(bags) -> int:
    """Common feature dimension of a bag collection (error on mismatch)."""
    dims = {b.instances.shape[1] for b in bags}
    if len(dims) != 1:
        raise DimensionError(f"bags disagree on feature dimension: {sorted(dims)}")
    return dims.pop()
