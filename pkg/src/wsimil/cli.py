"""Command-line pipeline: extract, features, train, eval, synth."""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .bags import (
    DOMAIN_NAMES,
    FeatureBag,
    baseline_extract,
    join_streams,
    make_bag,
    read_bag,
    write_bag,
)
from .config import load_train_config
from .errors import WsimilError
from .estimators import MILBagClassifier
from .frequency import dft_stack, dwt_stack
from .imaging import (
    extract_patches,
    load_mask_png,
    load_rgb_png,
    rgb_to_ycbcr,
    save_rgb_png,
)
from .manifest import ManifestRow, load_manifest, resolve_path, write_manifest
from .metrics import evaluate, format_report_table, write_report_csv, write_roc_csvs
from .synth import make_dataset
from .training import data_digest, write_run_metadata

INDEX_HEADER = ["wsi_id", "x", "y", "file"]


def _fail_records(errors: list[tuple[str, str]]) -> int:
    for wsi_id, message in errors:
        print(f"error: {wsi_id}: {message}", file=sys.stderr)
    return 1 if errors else 0


def _parse_domain_list(raw: str) -> list[str]:
    names = [token.strip() for token in raw.split(",") if token.strip()]
    for name in names:
        if name not in DOMAIN_NAMES:
            raise WsimilError(f"unknown domain {name!r} (expected from {DOMAIN_NAMES})")
    if not names:
        raise WsimilError("at least one domain required")
    return names


def cmd_extract(args) -> int:
    rows = load_manifest(args.manifest)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    index_rows: list[tuple[str, int, int, str]] = []
    errors: list[tuple[str, str]] = []
    for row in rows:
        if not row.image or not row.mask:
            errors.append((row.wsi_id, "manifest record has no image/mask path"))
            continue
        try:
            wsi = load_rgb_png(resolve_path(args.manifest, row.image))
            mask = load_mask_png(resolve_path(args.manifest, row.mask))
            patches = extract_patches(
                wsi,
                mask,
                patch_size=args.patch_size,
                stride=args.stride,
                max_blank=args.max_blank,
                roi_cover=args.roi_cover,
                whiteness=args.whiteness,
                wsi_id=row.wsi_id,
            )
        except (WsimilError, OSError) as exc:
            errors.append((row.wsi_id, str(exc)))
            continue
        for patch in patches:
            x, y = patch.origin
            name = f"{row.wsi_id}_x{x}_y{y}.png"
            save_rgb_png(patch.image, out_dir / name)
            index_rows.append((row.wsi_id, x, y, name))
    with open(out_dir / "index.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(INDEX_HEADER)
        writer.writerows(index_rows)
    print(f"wrote {len(index_rows)} patches for {len(rows) - len(errors)} WSIs "
          f"to {out_dir}")
    return _fail_records(errors)


def _load_index(path: Path) -> dict[str, list[tuple[int, int, str]]]:
    if not path.is_file():
        raise WsimilError(f"patch index not found: {path}")
    grouped: dict[str, list[tuple[int, int, str]]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != INDEX_HEADER:
            raise WsimilError(f"bad index header {header}, expected {INDEX_HEADER}")
        for wsi_id, x, y, name in reader:
            grouped.setdefault(wsi_id, []).append((int(x), int(y), name))
    return grouped


def _domain_vector(patch_img, domain: str, grid: int) -> np.ndarray:
    if domain == "rgb":
        return baseline_extract(patch_img, grid)
    ycbcr = rgb_to_ycbcr(patch_img)
    if domain == "dft":
        return baseline_extract(dft_stack(ycbcr), grid)
    return baseline_extract(dwt_stack(ycbcr), grid)


def cmd_features(args) -> int:
    domains = _parse_domain_list(args.domains)
    labels_by_id = {row.wsi_id: row.labels for row in load_manifest(args.manifest)}
    index_path = Path(args.index)
    grouped = _load_index(index_path)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    errors: list[tuple[str, str]] = []
    written = 0
    for wsi_id, entries in grouped.items():
        if wsi_id not in labels_by_id:
            errors.append((wsi_id, "not present in manifest"))
            continue
        try:
            images = [load_rgb_png(index_path.parent / name) for _, _, name in entries]
            for domain in domains:
                vectors = [_domain_vector(img, domain, args.grid) for img in images]
                bag = make_bag(wsi_id, np.stack(vectors), domain, labels_by_id[wsi_id])
                write_bag(bag, out_dir / f"{wsi_id}.{domain}.fbag")
                written += 1
        except (WsimilError, OSError) as exc:
            errors.append((wsi_id, str(exc)))
    print(f"wrote {written} feature bags to {out_dir}")
    return _fail_records(errors)


def _load_split_bags(
    manifest_path: Path, bags_dir: Path, domains, stream_mode: str
) -> tuple[dict[str, list[FeatureBag]], list[tuple[str, str]]]:
    splits: dict[str, list[FeatureBag]] = {"train": [], "val": [], "test": []}
    errors: list[tuple[str, str]] = []
    for row in load_manifest(manifest_path):
        per_domain = []
        try:
            for domain in domains:
                path = bags_dir / f"{row.wsi_id}.{domain}.fbag"
                if not path.exists():
                    raise WsimilError(f"missing feature bag {path}")
                per_domain.append(read_bag(path))
            splits[row.split].append(join_streams(per_domain, stream_mode))
        except WsimilError as exc:
            errors.append((row.wsi_id, str(exc)))
    return splits, errors


def cmd_train(args) -> int:
    cfg, spec = load_train_config(args.config)
    if args.head is not None:
        cfg = replace(cfg, head=args.head)
    splits, errors = _load_split_bags(
        spec.manifest, spec.bags_dir, spec.domains, spec.stream_mode
    )
    if errors:
        return _fail_records(errors)
    model = MILBagClassifier(
        head=cfg.head,
        hidden=cfg.hidden,
        dropout_rate=cfg.dropout_rate,
        lr=cfg.lr,
        weight_decay=cfg.weight_decay,
        clip=cfg.clip,
        epochs=cfg.epochs,
        gamma_pos=cfg.asl.gamma_pos,
        gamma_neg=cfg.asl.gamma_neg,
        margin=cfg.asl.margin,
        seed=cfg.seed,
        normalize=spec.normalize,
    )
    model.fit(splits["train"], val_bags=splits["val"] or None)
    spec.out_dir.mkdir(parents=True, exist_ok=True)
    checkpoint = spec.out_dir / "checkpoint.mrlp"
    model.save(checkpoint)
    write_run_metadata(
        spec.out_dir / "run_meta.txt",
        cfg,
        model.history_,
        digests={split: data_digest(bags) for split, bags in splits.items() if bags},
        extra={
            "manifest": str(spec.manifest),
            "bags_dir": str(spec.bags_dir),
            "domains": ",".join(spec.domains),
            "normalize": str(spec.normalize),
        },
    )
    best = max(model.history_, key=lambda r: r.val_map, default=None)
    if best is not None:
        print(f"best val mAP {best.val_map:.4f} at epoch {best.epoch}")
    print(f"wrote {checkpoint}")
    return 0


def cmd_eval(args) -> int:
    domains = _parse_domain_list(args.domains)
    splits, errors = _load_split_bags(
        Path(args.manifest), Path(args.bags_dir), domains, args.stream_mode
    )
    if errors:
        return _fail_records(errors)
    bags = splits[args.split]
    if not bags:
        print(f"error: split {args.split!r} is empty", file=sys.stderr)
        return 1
    model = MILBagClassifier.from_checkpoint(args.checkpoint)
    report = evaluate(model, bags, threshold=args.threshold)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_report_csv(report, out_dir / "report.csv")
    table = format_report_table(report)
    (out_dir / "report.txt").write_text(table)
    probs = model.predict_proba(bags)
    labels = np.stack([b.labels.as_array() for b in bags])
    write_roc_csvs(probs, labels, out_dir)
    print(table, end="")
    return 0


def cmd_synth(args) -> int:
    records = make_dataset(
        seed=args.seed,
        n_wsis=args.n_wsis,
        dim=args.dim,
        difficulty=args.difficulty,
        split_domains=args.split_domains,
    )
    out_dir = Path(args.out_dir)
    bags_dir = out_dir / "bags"
    bags_dir.mkdir(parents=True, exist_ok=True)
    manifest_rows = []
    n_bags = 0
    for rec in records:
        for domain, bag in rec.bags.items():
            write_bag(bag, bags_dir / f"{rec.wsi_id}.{domain}.fbag")
            n_bags += 1
        manifest_rows.append(ManifestRow(rec.wsi_id, "", "", rec.labels, rec.split))
    write_manifest(out_dir / "manifest.csv", manifest_rows)
    counts = {s: sum(1 for r in records if r.split == s) for s in ("train", "val", "test")}
    print(f"wrote {n_bags} bags for {len(records)} WSIs "
          f"({counts['train']}/{counts['val']}/{counts['test']} train/val/test) "
          f"to {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wsimil",
        description="Joint spatial/frequency feature bags with attention-based "
        "multiple-instance learning.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="cut ROI patches out of WSI rasters")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--patch-size", type=int, default=640)
    p.add_argument("--stride", type=int, default=None,
                   help="window step, default patch-size/2")
    p.add_argument("--max-blank", type=float, default=0.3)
    p.add_argument("--roi-cover", type=float, default=0.5)
    p.add_argument("--whiteness", type=float, default=230.0)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("features", help="build per-domain feature bags from patches")
    p.add_argument("--index", required=True, help="index.csv written by extract")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--domains", default="rgb",
                   help="comma list from rgb,dft,dwt")
    p.add_argument("--grid", type=int, default=4,
                   help="block grid of the statistics extractor")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", help="train an attention head from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--head", choices=("mil", "gmil", "mrl"), default=None,
                   help="override the configured head")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--bags-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--domains", default="rgb")
    p.add_argument("--stream-mode", default="bag-union",
                   choices=("bag-union", "instance-concat"))
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate a synthetic feature-bag dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-wsis", type=int, default=300)
    p.add_argument("--d", type=int, default=32, dest="dim")
    p.add_argument("--difficulty", type=float, default=3.0)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--split-domains", action="store_true",
                   help="put factors 0-2 and 3-5 into disjoint rgb/dft streams")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except WsimilError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
