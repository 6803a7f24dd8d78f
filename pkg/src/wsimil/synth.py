"""Synthetic feature-bag datasets for desk-scale end-to-end checks.

Each WSI gets a bag of instances drawn from a background Gaussian; a factor
label is positive iff the bag holds at least one instance from that factor's
signal Gaussian, whose mean is shifted by `difficulty` along a
factor-specific unit direction. The label mixing table mimics the class
imbalance of a real cohort (ER about 79% positive, molecular subtype
positive unless triple-negative, etc.).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bags import FactorLabels, FeatureBag, RawLabels, make_bag
from .errors import DimensionError

BAG_MIN = 1
BAG_MAX = 30
# background spread; the difficulty shift is absolute, so this sets the SNR
BACKGROUND_SIGMA = 0.3
# each factor direction = FACTOR_WEIGHT * own axis + MARKER_WEIGHT * shared
# marker axis (unit norm); the marker makes signal instances of different
# factors score alike under attention, the factor axis identifies them
FACTOR_WEIGHT = 0.9
MARKER_WEIGHT = float(np.sqrt(1.0 - FACTOR_WEIGHT**2))

# marginals / conditionals mimicking the cohort's imbalance
P_ER = 0.785
P_PR_GIVEN_ER = 0.88
P_PR_GIVEN_NOT_ER = 0.25
P_HER2 = 0.262
P_HG_POOR = 0.40
P_ALN_POS = 0.381
P_G1_GIVEN_WELL = 0.068
P_LUMA_GIVEN_LUM = 0.436
P_N12_GIVEN_POS = 0.521

SPLIT_FRACTIONS = (0.6, 0.2, 0.2)  # train, val, test


@dataclass(frozen=True)
class SynthRecord:
    """One generated WSI: per-domain bags plus its manifest fields."""

    wsi_id: str
    bags: dict[str, FeatureBag]
    labels: FactorLabels
    split: str


def _draw_raw_labels(rng: np.random.Generator) -> RawLabels:
    er = rng.random() < P_ER
    pr = rng.random() < (P_PR_GIVEN_ER if er else P_PR_GIVEN_NOT_ER)
    her2 = rng.random() < P_HER2
    poorly = rng.random() < P_HG_POOR
    aln_pos = rng.random() < P_ALN_POS
    triple_negative = not (er or pr or her2)
    if triple_negative:
        ms = "TN"
    elif her2:
        ms = "HER2+"
    else:
        ms = "LumA" if rng.random() < P_LUMA_GIVEN_LUM else "LumB"
    if poorly:
        hg = "G3"
    else:
        hg = "G1" if rng.random() < P_G1_GIVEN_WELL else "G2"
    if aln_pos:
        aln = "N1-2" if rng.random() < P_N12_GIVEN_POS else "N2+"
    else:
        aln = "N0"
    return RawLabels(
        er="pos" if er else "neg",
        pr="pos" if pr else "neg",
        her2="pos" if her2 else "neg",
        hg=hg,
        ms=ms,
        aln=aln,
    )


def _draw_instances(
    rng: np.random.Generator,
    dim: int,
    difficulty: float,
    positives: list[int],
    axes: dict[int, int],
    marker_axis: int,
) -> np.ndarray:
    """Background-noise bag with >= 1 signal instance per positive factor.

    Beyond the guaranteed one, filler instances cycle through the positive
    factors round-robin so every present factor gets a near-equal share.
    """
    n = int(rng.integers(BAG_MIN, BAG_MAX + 1))
    n = max(n, len(positives))
    sources = np.full(n, -1, dtype=np.int64)
    sources[: len(positives)] = positives
    for j in range(len(positives), n):
        if positives:
            sources[j] = positives[j % len(positives)]
    rng.shuffle(sources)
    instances = rng.standard_normal((n, dim)) * BACKGROUND_SIGMA
    for j, factor in enumerate(sources):
        if factor >= 0:
            instances[j, axes[int(factor)]] += difficulty * FACTOR_WEIGHT
            instances[j, marker_axis] += difficulty * MARKER_WEIGHT
    return instances


def _split_of(index: int, total: int) -> str:
    train_end = int(round(SPLIT_FRACTIONS[0] * total))
    val_end = train_end + int(round(SPLIT_FRACTIONS[1] * total))
    if index < train_end:
        return "train"
    if index < val_end:
        return "val"
    return "test"


def make_dataset(
    seed: int,
    n_wsis: int = 300,
    dim: int = 32,
    difficulty: float = 3.0,
    split_domains: bool = False,
) -> list[SynthRecord]:
    """Generate bags + labels + splits, fully determined by the seed.

    With split_domains, factors 0-2 signal only inside the 'rgb' stream and
    factors 3-5 only inside the 'dft' stream (disjoint feature axes), so a
    single stream cannot see half the factors while their union can.
    """
    if dim < 7:
        raise DimensionError("need dim >= 7 for six factor directions plus marker")
    if split_domains and dim < 14:
        raise DimensionError("need dim >= 14 for two disjoint factor subspaces")
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    records = []
    for i in range(n_wsis):
        wsi_id = f"synth{i:04d}"
        raw = _draw_raw_labels(rng)
        labels = FactorLabels.from_raw(raw)
        positives = [k for k, bit in enumerate(labels.binary) if bit]
        if split_domains:
            half = dim // 2
            groups = {
                "rgb": ([k for k in positives if k < 3], {0: 0, 1: 1, 2: 2}, 3),
                "dft": (
                    [k for k in positives if k >= 3],
                    {3: half, 4: half + 1, 5: half + 2},
                    half + 3,
                ),
            }
        else:
            groups = {"rgb": (positives, {k: k for k in range(6)}, 6)}
        bags = {
            domain: make_bag(
                wsi_id,
                _draw_instances(rng, dim, difficulty, pos, axes, marker),
                domain,
                labels,
            )
            for domain, (pos, axes, marker) in groups.items()
        }
        records.append(SynthRecord(wsi_id, bags, labels, _split_of(i, n_wsis)))
    return records


def bags_by_split(records, domain: str | None = None) -> dict[str, list[FeatureBag]]:
    """Collect single-domain bags per split (first domain when unspecified)."""
    out: dict[str, list[FeatureBag]] = {"train": [], "val": [], "test": []}
    for rec in records:
        key = domain if domain is not None else next(iter(rec.bags))
        out[rec.split].append(rec.bags[key])
    return out
