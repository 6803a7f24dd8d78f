"""Feature bags: label mapping, block-statistics extraction, normalization,
joint-stream assembly, and the FBAG binary file format."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, FormatError, LabelError
from .imaging import RasterImage
from .validation import as_instances

FACTOR_NAMES = ("ER", "PR", "HER2", "HG", "MS", "ALN")
N_FACTORS = len(FACTOR_NAMES)

DOMAIN_NAMES = ("rgb", "dft", "dwt")
DOMAIN_CODES = {name: code for code, name in enumerate(DOMAIN_NAMES)}

ER_PR_HER2_TOKENS = ("pos", "neg")
HG_TOKENS = ("G1", "G2", "G3")
MS_TOKENS = ("LumA", "LumB", "TN", "HER2+")
ALN_TOKENS = ("N0", "N1-2", "N2+")

NORM_EPS = 1e-8

_FBAG_MAGIC = b"FBAG"
_FBAG_VERSION = 1
_STATS_MAGIC = b"FNRM"
_STATS_VERSION = 1


@dataclass(frozen=True)
class RawLabels:
    """Source multi-class labels as manifest tokens."""

    er: str
    pr: str
    her2: str
    hg: str
    ms: str
    aln: str


def map_raw_labels(raw: RawLabels) -> np.ndarray:
    """Collapse raw labels to the 6 binary targets (ER, PR, HER2, HG, MS, ALN).

    ER/PR/HER2 pass through; grade G3 is positive (poorly differentiated);
    molecular subtype is positive unless triple-negative; node status is
    positive for anything but N0.
    """
    for value, allowed, field in (
        (raw.er, ER_PR_HER2_TOKENS, "er"),
        (raw.pr, ER_PR_HER2_TOKENS, "pr"),
        (raw.her2, ER_PR_HER2_TOKENS, "her2"),
        (raw.hg, HG_TOKENS, "hg"),
        (raw.ms, MS_TOKENS, "ms"),
        (raw.aln, ALN_TOKENS, "aln"),
    ):
        if value not in allowed:
            raise LabelError(f"unknown {field} token {value!r} (allowed: {allowed})")
    bits = [
        raw.er == "pos",
        raw.pr == "pos",
        raw.her2 == "pos",
        raw.hg == "G3",
        raw.ms != "TN",
        raw.aln != "N0",
    ]
    return np.array(bits, dtype=np.uint8)


@dataclass(frozen=True)
class FactorLabels:
    """Six binary targets plus (optionally) their raw multi-class source."""

    binary: tuple[int, ...]
    raw: RawLabels | None = None

    def __post_init__(self):
        if len(self.binary) != N_FACTORS or any(b not in (0, 1) for b in self.binary):
            raise LabelError(f"binary labels must be {N_FACTORS} bits: {self.binary}")
        if self.raw is not None:
            derived = tuple(int(v) for v in map_raw_labels(self.raw))
            if derived != tuple(self.binary):
                raise LabelError(
                    f"binary labels {self.binary} do not match raw labels {derived}"
                )

    @classmethod
    def from_raw(cls, raw: RawLabels) -> "FactorLabels":
        return cls(tuple(int(v) for v in map_raw_labels(raw)), raw)

    @classmethod
    def from_binary(cls, bits) -> "FactorLabels":
        return cls(tuple(int(v) for v in bits))

    def as_array(self) -> np.ndarray:
        return np.array(self.binary, dtype=np.uint8)


@dataclass(frozen=True)
class FeatureBag:
    """Variable-length set of per-patch feature vectors for one WSI."""

    wsi_id: str
    instances: np.ndarray  # (n, d) float64
    domains: np.ndarray  # (n,) uint8 codes into DOMAIN_NAMES
    labels: FactorLabels

    def __post_init__(self):
        inst = as_instances(self.instances)
        doms = np.asarray(self.domains, dtype=np.uint8)
        if doms.shape != (inst.shape[0],):
            raise DimensionError(
                f"domain tags {doms.shape} do not match {inst.shape[0]} instances"
            )
        if doms.size and doms.max() >= len(DOMAIN_NAMES):
            raise LabelError(f"unknown domain code {int(doms.max())}")
        object.__setattr__(self, "instances", inst)
        object.__setattr__(self, "domains", doms)

    @property
    def size(self) -> int:
        return self.instances.shape[0]

    @property
    def dim(self) -> int:
        return self.instances.shape[1]


def make_bag(wsi_id: str, instances, domain: str, labels: FactorLabels) -> FeatureBag:
    """Bag with a single domain tag applied to every instance."""
    inst = as_instances(instances)
    code = DOMAIN_CODES[domain]
    return FeatureBag(
        wsi_id, inst, np.full(inst.shape[0], code, dtype=np.uint8), labels
    )


def baseline_extract(stack: RasterImage, grid: int = 4) -> np.ndarray:
    """Per-channel per-block statistics: (mean, std, min, max, energy).

    The raster is cut into grid x grid blocks; each contributes five numbers
    per channel, so d = channels * grid^2 * 5. Deterministic stand-in for a
    learned feature extractor; energy is the mean of squares.
    """
    c, h, w = stack.data.shape
    if h % grid or w % grid:
        raise DimensionError(f"{h}x{w} raster not divisible into {grid}x{grid} blocks")
    bh, bw = h // grid, w // grid
    blocks = stack.data.reshape(c, grid, bh, grid, bw).transpose(0, 1, 3, 2, 4)
    flat = blocks.reshape(c, grid, grid, bh * bw)
    stats = np.stack(
        [
            flat.mean(axis=-1),
            flat.std(axis=-1),
            flat.min(axis=-1),
            flat.max(axis=-1),
            np.mean(flat * flat, axis=-1),
        ],
        axis=-1,
    )
    return stats.reshape(-1)


@dataclass(frozen=True)
class DomainStats:
    """Per-dimension normalization moments for one domain tag."""

    mean: np.ndarray
    std: np.ndarray


def compute_domain_stats(bags) -> dict[int, DomainStats]:
    """Population mean/std per feature dimension, grouped by domain tag.

    Call this on the training split only and reuse the result everywhere.
    """
    rows: dict[int, list[np.ndarray]] = {}
    for bag in bags:
        for code in np.unique(bag.domains):
            rows.setdefault(int(code), []).append(
                bag.instances[bag.domains == code]
            )
    stats = {}
    for code, chunks in sorted(rows.items()):
        data = np.vstack(chunks)
        stats[code] = DomainStats(mean=data.mean(axis=0), std=data.std(axis=0))
    return stats


def normalize_features(
    bags, stats: dict[int, DomainStats], eps: float = NORM_EPS
) -> list[FeatureBag]:
    """Standardize instances with per-domain train statistics (std floored at eps)."""
    out = []
    for bag in bags:
        inst = bag.instances.copy()
        for code in np.unique(bag.domains):
            code = int(code)
            if code not in stats:
                raise DimensionError(
                    f"no normalization stats for domain {DOMAIN_NAMES[code]!r}"
                )
            st = stats[code]
            if st.mean.shape != (bag.dim,):
                raise DimensionError(
                    f"stats dimension {st.mean.shape[0]} != bag dimension {bag.dim}"
                )
            sel = bag.domains == code
            inst[sel] = (inst[sel] - st.mean) / np.maximum(st.std, eps)
        out.append(FeatureBag(bag.wsi_id, inst, bag.domains, bag.labels))
    return out


def join_streams(bags, mode: str = "bag-union") -> FeatureBag:
    """Merge per-domain bags of one WSI into a single training bag.

    bag-union stacks the instances of all domains (d unchanged, tags kept);
    instance-concat concatenates aligned instances along the feature axis
    (n unchanged, tags taken from the first stream).
    """
    bags = list(bags)
    if not bags:
        raise DimensionError("join_streams needs at least one bag")
    first = bags[0]
    for bag in bags[1:]:
        if bag.wsi_id != first.wsi_id:
            raise LabelError(f"wsi_id mismatch: {bag.wsi_id!r} != {first.wsi_id!r}")
        if tuple(bag.labels.binary) != tuple(first.labels.binary):
            raise LabelError(f"label mismatch across domains for {first.wsi_id!r}")
    if len(bags) == 1:
        return first
    if mode == "bag-union":
        dims = {b.dim for b in bags}
        if len(dims) != 1:
            raise DimensionError(f"bag-union needs equal dimensions, got {sorted(dims)}")
        return FeatureBag(
            first.wsi_id,
            np.vstack([b.instances for b in bags]),
            np.concatenate([b.domains for b in bags]),
            first.labels,
        )
    if mode == "instance-concat":
        sizes = {b.size for b in bags}
        if len(sizes) != 1:
            raise DimensionError(
                f"instance-concat needs aligned instance counts, got {sorted(sizes)}"
            )
        return FeatureBag(
            first.wsi_id,
            np.hstack([b.instances for b in bags]),
            first.domains.copy(),
            first.labels,
        )
    raise ValueError(f"unknown stream mode {mode!r}")


def write_bag(bag: FeatureBag, path: str | Path) -> None:
    """Serialize a bag to the little-endian FBAG format (float32 payload)."""
    wsi_bytes = bag.wsi_id.encode("utf-8")
    if bag.size >= 2**32 or bag.dim >= 2**32 or len(wsi_bytes) >= 2**32:
        raise FormatError("bag dimensions overflow the FBAG header")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sI", _FBAG_MAGIC, _FBAG_VERSION))
        fh.write(struct.pack("<I", len(wsi_bytes)))
        fh.write(wsi_bytes)
        fh.write(struct.pack("<II", bag.size, bag.dim))
        fh.write(bag.domains.astype("<u1").tobytes())
        fh.write(bag.labels.as_array().astype("<u1").tobytes())
        fh.write(np.ascontiguousarray(bag.instances, dtype="<f4").tobytes())


def read_bag(path: str | Path) -> FeatureBag:
    """Read an FBAG file; rejects bad magic, unknown versions, truncation."""
    blob = Path(path).read_bytes()
    off = 0

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > len(blob):
            raise FormatError(f"truncated FBAG file {path}")
        out = blob[off : off + n]
        off += n
        return out

    magic, version = struct.unpack("<4sI", take(8))
    if magic != _FBAG_MAGIC:
        raise FormatError(f"bad magic {magic!r} in {path}")
    if version != _FBAG_VERSION:
        raise FormatError(f"unsupported FBAG version {version} in {path}")
    (id_len,) = struct.unpack("<I", take(4))
    wsi_id = take(id_len).decode("utf-8")
    n, d = struct.unpack("<II", take(8))
    if n < 1 or d < 1:
        raise FormatError(f"degenerate bag {n}x{d} in {path}")
    domains = np.frombuffer(take(n), dtype="<u1").copy()
    labels = FactorLabels.from_binary(np.frombuffer(take(N_FACTORS), dtype="<u1"))
    payload = np.frombuffer(take(n * d * 4), dtype="<f4")
    if off != len(blob):
        raise FormatError(f"{len(blob) - off} trailing bytes in {path}")
    instances = payload.reshape(n, d).astype(np.float64)
    return FeatureBag(wsi_id, instances, domains, labels)


def write_norm_stats(path: str | Path, stats: dict[int, DomainStats]) -> None:
    """Sidecar file for normalization moments (checkpoint companion)."""
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sII", _STATS_MAGIC, _STATS_VERSION, len(stats)))
        for code in sorted(stats):
            st = stats[code]
            fh.write(struct.pack("<BI", code, st.mean.shape[0]))
            fh.write(np.ascontiguousarray(st.mean, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(st.std, dtype="<f8").tobytes())


def read_norm_stats(path: str | Path) -> dict[int, DomainStats]:
    blob = Path(path).read_bytes()
    off = 0

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > len(blob):
            raise FormatError(f"truncated stats file {path}")
        out = blob[off : off + n]
        off += n
        return out

    magic, version, count = struct.unpack("<4sII", take(12))
    if magic != _STATS_MAGIC:
        raise FormatError(f"bad magic {magic!r} in {path}")
    if version != _STATS_VERSION:
        raise FormatError(f"unsupported stats version {version} in {path}")
    stats = {}
    for _ in range(count):
        code, dim = struct.unpack("<BI", take(5))
        mean = np.frombuffer(take(dim * 8), dtype="<f8").copy()
        std = np.frombuffer(take(dim * 8), dtype="<f8").copy()
        stats[int(code)] = DomainStats(mean=mean, std=std)
    if off != len(blob):
        raise FormatError(f"{len(blob) - off} trailing bytes in {path}")
    return stats
