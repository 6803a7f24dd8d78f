"""Dataset manifest CSV: one record per WSI with paths, raw labels, split."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

from .bags import FactorLabels, RawLabels
from .errors import LabelError, ManifestError

MANIFEST_HEADER = ["wsi_id", "image", "mask", "er", "pr", "her2", "hg", "ms", "aln", "split"]
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class ManifestRow:
    wsi_id: str
    image: str
    mask: str
    labels: FactorLabels
    split: str


def load_manifest(path: str | Path) -> list[ManifestRow]:
    """Parse and validate a manifest.

    wsi_ids must be unique, label tokens and split values valid, and any
    non-empty image/mask path must exist (empty paths mean the record is
    backed by feature-bag files instead of rasters).
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    base = path.parent
    rows: list[ManifestRow] = []
    seen: set[str] = set()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != MANIFEST_HEADER:
            raise ManifestError(
                f"bad manifest header {header}, expected {MANIFEST_HEADER}"
            )
        for lineno, record in enumerate(reader, start=2):
            if len(record) != len(MANIFEST_HEADER):
                raise ManifestError(f"{path}:{lineno}: expected "
                                    f"{len(MANIFEST_HEADER)} fields, got {len(record)}")
            wsi_id, image, mask, er, pr, her2, hg, ms, aln, split = record
            if not wsi_id:
                raise ManifestError(f"{path}:{lineno}: empty wsi_id")
            if wsi_id in seen:
                raise ManifestError(f"{path}:{lineno}: duplicate wsi_id {wsi_id!r}")
            seen.add(wsi_id)
            if split not in SPLITS:
                raise ManifestError(
                    f"{path}:{lineno}: split must be one of {SPLITS}, got {split!r}"
                )
            for field, value in (("image", image), ("mask", mask)):
                if value and not (base / value).exists() and not Path(value).exists():
                    raise ManifestError(
                        f"{path}:{lineno}: {field} file not found: {value}"
                    )
            try:
                labels = FactorLabels.from_raw(RawLabels(er, pr, her2, hg, ms, aln))
            except LabelError as exc:
                raise ManifestError(f"{path}:{lineno}: {exc}") from exc
            rows.append(ManifestRow(wsi_id, image, mask, labels, split))
    return rows


def resolve_path(manifest_path: str | Path, value: str) -> Path:
    """Interpret manifest file fields relative to the manifest location."""
    p = Path(value)
    if p.is_absolute() or p.exists():
        return p
    return Path(manifest_path).parent / value


def write_manifest(path: str | Path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_HEADER)
        for row in rows:
            raw = row.labels.raw
            if raw is None:
                raise ManifestError(
                    f"cannot write manifest row {row.wsi_id!r} without raw labels"
                )
            writer.writerow(
                [row.wsi_id, row.image, row.mask,
                 raw.er, raw.pr, raw.her2, raw.hg, raw.ms, raw.aln, row.split]
            )
