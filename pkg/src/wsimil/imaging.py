"""Raster model, YCbCr color conversion, and malignant-ROI patch extraction."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import DimensionError, SemanticsError
from .validation import check_same_dims, check_semantics

LUMA_R = 0.299
LUMA_G = 0.587
LUMA_B = 0.114
CR_SCALE = 0.713
CB_SCALE = 0.564

DEFAULT_PATCH_SIZE = 640
DEFAULT_MAX_BLANK = 0.3
DEFAULT_WHITENESS = 230.0
DEFAULT_ROI_COVER = 0.5


class Semantics(enum.Enum):
    """Channel interpretation of a raster."""

    RGB8 = "rgb8"
    YCBCR = "ycbcr"
    SUBBAND12 = "subband12"
    SPECTRUM3 = "spectrum3"
    GRAY1 = "gray1"


_CHANNELS = {
    Semantics.RGB8: 3,
    Semantics.YCBCR: 3,
    Semantics.SUBBAND12: 12,
    Semantics.SPECTRUM3: 3,
    Semantics.GRAY1: 1,
}


@dataclass(frozen=True)
class RasterImage:
    """Dense multi-channel raster, stored as (channels, height, width) float64.

    RGB8 rasters keep 8-bit values as reals in [0, 255]; converted spaces
    hold arbitrary reals. Treated as immutable: every operation returns a
    new raster.
    """

    data: np.ndarray
    semantics: Semantics

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3:
            raise DimensionError(f"raster data must be (C, H, W), got {arr.shape}")
        want = _CHANNELS[self.semantics]
        if arr.shape[0] != want:
            raise SemanticsError(
                f"{self.semantics.value} raster needs {want} channels, "
                f"got {arr.shape[0]}"
            )
        if arr.shape[1] < 1 or arr.shape[2] < 1:
            raise DimensionError(f"empty raster {arr.shape}")
        if self.semantics is Semantics.RGB8 and (arr.min() < 0 or arr.max() > 255):
            raise SemanticsError("rgb8 values must lie in [0, 255]")
        object.__setattr__(self, "data", arr)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class RoiMask:
    """Binary malignancy mask aligned to a WSI raster (True = malignant)."""

    bits: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.bits, dtype=bool)
        if arr.ndim != 2:
            raise DimensionError(f"mask must be 2D, got {arr.shape}")
        object.__setattr__(self, "bits", arr)

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]


@dataclass(frozen=True)
class Patch:
    """A square window cut from a source WSI."""

    source_wsi: str
    origin: tuple[int, int]  # (x, y) pixel offset in the source raster
    image: RasterImage


def rgb_to_ycbcr(img: RasterImage) -> RasterImage:
    """Convert RGB8 to YCbCr (Y = 0.299R + 0.587G + 0.114B, Cr/Cb scaled diffs).

    Luma is evaluated as B + 0.299(R-B) + 0.587(G-B), algebraically identical
    because the weights sum to 1, so gray pixels land on Cb = Cr = 0 exactly.
    """
    check_semantics(img, Semantics.RGB8)
    r, g, b = img.data
    y = b + LUMA_R * (r - b) + LUMA_G * (g - b)
    cb = (b - y) * CB_SCALE
    cr = (r - y) * CR_SCALE
    return RasterImage(np.stack([y, cb, cr]), Semantics.YCBCR)


def ycbcr_to_rgb(img: RasterImage) -> RasterImage:
    """Algebraic inverse of rgb_to_ycbcr.

    Results are clipped into [0, 255]; for round trips from valid RGB this
    only removes float noise at the cube boundary, out-of-gamut YCbCr inputs
    are clamped.
    """
    check_semantics(img, Semantics.YCBCR)
    y, cb, cr = img.data
    r = y + cr / CR_SCALE
    b = y + cb / CB_SCALE
    g = (y - LUMA_R * r - LUMA_B * b) / LUMA_G
    return RasterImage(np.clip(np.stack([r, g, b]), 0.0, 255.0), Semantics.RGB8)


def blank_ratio(patch: Patch, whiteness: float = DEFAULT_WHITENESS) -> float:
    """Fraction of patch pixels with min(R, G, B) >= whiteness."""
    check_semantics(patch.image, Semantics.RGB8)
    return float(np.mean(patch.image.data.min(axis=0) >= whiteness))


def _integral(counts: np.ndarray) -> np.ndarray:
    """Zero-padded 2D prefix-sum table of a boolean grid (exact int64)."""
    table = np.zeros((counts.shape[0] + 1, counts.shape[1] + 1), dtype=np.int64)
    np.cumsum(np.cumsum(counts, axis=0, dtype=np.int64), axis=1, out=table[1:, 1:])
    return table


def _window_sum(table: np.ndarray, y: int, x: int, size: int) -> int:
    return int(
        table[y + size, x + size]
        - table[y, x + size]
        - table[y + size, x]
        + table[y, x]
    )


def _axis_positions(start: int, span: int, window: int, stride: int) -> list[int]:
    """Stride-grid offsets covering [start, start+span), last window clamped."""
    positions = list(range(start, start + span - window + 1, stride))
    last = start + span - window
    if positions[-1] != last:
        positions.append(last)
    return positions


def extract_patches(
    wsi: RasterImage,
    mask: RoiMask,
    patch_size: int = DEFAULT_PATCH_SIZE,
    stride: int | None = None,
    max_blank: float = DEFAULT_MAX_BLANK,
    roi_cover: float = DEFAULT_ROI_COVER,
    whiteness: float = DEFAULT_WHITENESS,
    wsi_id: str = "",
) -> list[Patch]:
    """Slide windows over each ROI connected component and keep tissue patches.

    Components (8-connected) whose bounding box is smaller than the patch in
    either dimension are ignored. Within a surviving box, windows sit on the
    stride grid anchored at the box origin with the last window clamped to
    the box edge; a window is kept when at least `roi_cover` of its pixels
    are mask-true and its blank ratio is at most `max_blank`. Output order
    is (component, y, x) and is fully deterministic.
    """
    check_semantics(wsi, Semantics.RGB8)
    check_same_dims(wsi, mask)
    if patch_size <= 0 or (stride is not None and stride <= 0):
        raise DimensionError("patch_size and stride must be positive")
    if stride is None:
        stride = patch_size // 2

    labels, n_components = ndimage.label(mask.bits, structure=np.ones((3, 3)))
    if n_components == 0:
        return []

    mask_table = _integral(mask.bits)
    white_table = _integral(wsi.data.min(axis=0) >= whiteness)
    area = patch_size * patch_size

    patches: list[Patch] = []
    for box in ndimage.find_objects(labels):
        if box is None:
            continue
        ys, xs = box
        box_h = ys.stop - ys.start
        box_w = xs.stop - xs.start
        if box_h < patch_size or box_w < patch_size:
            continue
        for y in _axis_positions(ys.start, box_h, patch_size, stride):
            for x in _axis_positions(xs.start, box_w, patch_size, stride):
                covered = _window_sum(mask_table, y, x, patch_size)
                if covered < roi_cover * area:
                    continue
                if _window_sum(white_table, y, x, patch_size) > max_blank * area:
                    continue
                crop = wsi.data[:, y : y + patch_size, x : x + patch_size].copy()
                patches.append(
                    Patch(wsi_id, (x, y), RasterImage(crop, Semantics.RGB8))
                )
    return patches


def resize_bilinear(img: RasterImage, out_w: int, out_h: int) -> RasterImage:
    """Bilinear resize, edge-clamped, align-corners-false."""
    if out_w < 1 or out_h < 1:
        raise DimensionError("output dimensions must be >= 1")
    in_h, in_w = img.height, img.width

    src_y = np.clip((np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5, 0.0, in_h - 1.0)
    src_x = np.clip((np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5, 0.0, in_w - 1.0)
    y0 = np.floor(src_y).astype(np.int64)
    x0 = np.floor(src_x).astype(np.int64)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    fy = (src_y - y0)[None, :, None]
    fx = (src_x - x0)[None, None, :]

    d = img.data
    rows0, rows1 = y0[:, None], y1[:, None]
    cols0, cols1 = x0[None, :], x1[None, :]
    top = (1.0 - fx) * d[:, rows0, cols0] + fx * d[:, rows0, cols1]
    bottom = (1.0 - fx) * d[:, rows1, cols0] + fx * d[:, rows1, cols1]
    out = (1.0 - fy) * top + fy * bottom
    return RasterImage(out, img.semantics)


def load_rgb_png(path: str | Path) -> RasterImage:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return RasterImage(arr.astype(np.float64).transpose(2, 0, 1), Semantics.RGB8)


def load_mask_png(path: str | Path) -> RoiMask:
    """8-bit grayscale mask; any nonzero pixel counts as malignant."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return RoiMask(arr != 0)


def save_rgb_png(img: RasterImage, path: str | Path) -> None:
    check_semantics(img, Semantics.RGB8)
    arr = np.rint(img.data).clip(0, 255).astype(np.uint8).transpose(1, 2, 0)
    Image.fromarray(arr, "RGB").save(str(path), format="PNG")


def save_channel_pngs(img: RasterImage, prefix: str | Path) -> list[Path]:
    """Dump each channel as a min-max normalized grayscale PNG.

    For human inspection only; the scaling is per channel and non-canonical.
    """
    paths = []
    for i, channel in enumerate(img.data):
        lo, hi = float(channel.min()), float(channel.max())
        scaled = (channel - lo) / (hi - lo) if hi > lo else np.zeros_like(channel)
        out = Path(f"{prefix}_c{i}.png")
        Image.fromarray(np.rint(scaled * 255).astype(np.uint8), "L").save(
            str(out), format="PNG"
        )
        paths.append(out)
    return paths
