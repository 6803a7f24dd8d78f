"""Per-factor and macro evaluation: confusion metrics, ROC-AUC, AP, reports."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bags import FACTOR_NAMES
from .errors import DimensionError

_trapezoid = getattr(np, "trapezoid", None) or np.trapz


def _as_pair(scores, labels):
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise DimensionError(f"scores {s.shape} and labels {y.shape} must match (1D)")
    return s, y.astype(bool)


def confusion(scores, labels, threshold: float = 0.5):
    """(TP, TN, FP, FN) with strict `score > threshold` positives."""
    s, y = _as_pair(scores, labels)
    pred = s > threshold
    tp = int(np.sum(pred & y))
    tn = int(np.sum(~pred & ~y))
    fp = int(np.sum(pred & ~y))
    fn = int(np.sum(~pred & y))
    return tp, tn, fp, fn


def _tied_ranks(values: np.ndarray) -> np.ndarray:
    """Average 1-based ranks with ties sharing their mean rank."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=np.float64)
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC: (concordant + 0.5 * tied) / (P * N). NaN if one class."""
    s, y = _as_pair(scores, labels)
    pos = int(y.sum())
    neg = y.size - pos
    if pos == 0 or neg == 0:
        return math.nan
    ranks = _tied_ranks(s)
    return float((ranks[y].sum() - pos * (pos + 1) / 2.0) / (pos * neg))


def roc_points(scores, labels) -> np.ndarray:
    """ROC curve as (fpr, tpr, threshold) rows, ties grouped, (0,0,inf) first."""
    s, y = _as_pair(scores, labels)
    pos = int(y.sum())
    neg = y.size - pos
    order = np.argsort(-s, kind="stable")
    sorted_scores = s[order]
    sorted_labels = y[order]
    # last index of every tie group
    distinct = np.nonzero(np.diff(sorted_scores))[0]
    idx = np.concatenate([distinct, [y.size - 1]])
    tps = np.cumsum(sorted_labels)[idx]
    fps = idx + 1 - tps
    rows = [(0.0, 0.0, math.inf)]
    for t, f, i in zip(tps, fps, idx):
        rows.append((f / neg if neg else math.nan,
                     t / pos if pos else math.nan,
                     float(sorted_scores[i])))
    return np.array(rows, dtype=np.float64)


def roc_auc_trapezoid(scores, labels) -> float:
    """AUC by trapezoidal integration of the ROC curve; agrees with roc_auc."""
    s, y = _as_pair(scores, labels)
    if y.all() or not y.any():
        return math.nan
    pts = roc_points(s, y)
    return float(_trapezoid(pts[:, 1], pts[:, 0]))


def average_precision(scores, labels) -> float:
    """Non-interpolated AP with a stable descending sort (ties keep input order)."""
    s, y = _as_pair(scores, labels)
    pos = int(y.sum())
    if pos == 0:
        return math.nan
    order = np.argsort(-s, kind="stable")
    hits = 0
    total = 0.0
    for rank, i in enumerate(order, start=1):
        if y[i]:
            hits += 1
            total += hits / rank
    return float(total / pos)


def _ratio(num: int, den: int) -> float | None:
    return num / den if den else None


@dataclass
class FactorMetrics:
    ap: float | None
    auc: float | None
    acc: float | None
    spec: float | None
    sen: float | None
    ppv: float | None
    npv: float | None
    f1: float | None
    tp: int
    tn: int
    fp: int
    fn: int


METRIC_COLUMNS = ("ap", "auc", "acc", "spec", "sen", "ppv", "npv", "f1")


@dataclass
class EvalReport:
    """Per-factor metrics plus unweighted macro means over defined values."""

    factors: dict[str, FactorMetrics]
    macro: dict[str, float | None]
    threshold: float


def _factor_metrics(scores, labels, threshold: float) -> FactorMetrics:
    tp, tn, fp, fn = confusion(scores, labels, threshold)
    auc = roc_auc(scores, labels)
    ap = average_precision(scores, labels)
    sen = _ratio(tp, tp + fn)
    ppv = _ratio(tp, tp + fp)
    f1 = None
    if sen is not None and ppv is not None and (sen + ppv) > 0:
        f1 = 2.0 * ppv * sen / (ppv + sen)
    return FactorMetrics(
        ap=None if math.isnan(ap) else ap,
        auc=None if math.isnan(auc) else auc,
        acc=_ratio(tp + tn, tp + tn + fp + fn),
        spec=_ratio(tn, tn + fp),
        sen=sen,
        ppv=ppv,
        npv=_ratio(tn, tn + fn),
        f1=f1,
        tp=tp,
        tn=tn,
        fp=fp,
        fn=fn,
    )


def compute_report(probs, labels, threshold: float = 0.5) -> EvalReport:
    """Report from per-bag probabilities and binary labels, both (n, 6)."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if probs.shape != labels.shape or probs.ndim != 2 or probs.shape[1] != len(FACTOR_NAMES):
        raise DimensionError(
            f"probs {probs.shape} and labels {labels.shape} must be (n, 6)"
        )
    factors = {
        name: _factor_metrics(probs[:, k], labels[:, k], threshold)
        for k, name in enumerate(FACTOR_NAMES)
    }
    macro: dict[str, float | None] = {}
    for column in METRIC_COLUMNS:
        defined = [getattr(m, column) for m in factors.values()
                   if getattr(m, column) is not None]
        macro[column] = float(np.mean(defined)) if defined else None
    macro["map"] = macro.pop("ap")
    return EvalReport(factors=factors, macro=macro, threshold=threshold)


def evaluate(model, bags, threshold: float = 0.5) -> EvalReport:
    """Run `model.predict_proba` over bags (eval mode) and build the report."""
    bags = list(bags)
    probs = model.predict_proba(bags)
    labels = np.stack([b.labels.as_array() for b in bags])
    return compute_report(probs, labels, threshold)


def _cell(value: float | None) -> str:
    return "undefined" if value is None else repr(value)


def write_report_csv(report: EvalReport, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["factor", *METRIC_COLUMNS, "tp", "tn", "fp", "fn"])
        for name, m in report.factors.items():
            writer.writerow(
                [name] + [_cell(getattr(m, c)) for c in METRIC_COLUMNS]
                + [m.tp, m.tn, m.fp, m.fn]
            )
        macro_cells = [_cell(report.macro["map"])] + [
            _cell(report.macro[c]) for c in METRIC_COLUMNS[1:]
        ]
        writer.writerow(["macro", *macro_cells, "", "", "", ""])


def _pct(value: float | None) -> str:
    return "undef" if value is None else f"{100.0 * value:.2f}"


def _num(value: float | None) -> str:
    return "undef" if value is None else f"{value:.4f}"


def format_report_table(report: EvalReport) -> str:
    """Aligned plain-text table: mAP | AUC | ACC% | SPEC% | SEN% | PPV% | NPV% | F1%."""
    header = ["factor", "mAP", "AUC", "ACC%", "SPEC%", "SEN%", "PPV%", "NPV%", "F1%"]
    rows = [header]
    for name, m in report.factors.items():
        rows.append(
            [name, _num(m.ap), _num(m.auc), _pct(m.acc), _pct(m.spec),
             _pct(m.sen), _pct(m.ppv), _pct(m.npv), _pct(m.f1)]
        )
    mac = report.macro
    rows.append(
        ["macro", _num(mac["map"]), _num(mac["auc"]), _pct(mac["acc"]),
         _pct(mac["spec"]), _pct(mac["sen"]), _pct(mac["ppv"]),
         _pct(mac["npv"]), _pct(mac["f1"])]
    )
    widths = [max(len(r[c]) for r in rows) for c in range(len(header))]
    lines = ["  ".join(cell.ljust(width) for cell, width in zip(row, widths)).rstrip()
             for row in rows]
    return "\n".join(lines) + "\n"


def write_roc_csvs(probs, labels, out_dir: str | Path) -> list[Path]:
    """One (fpr, tpr, threshold) CSV per factor for external plotting."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    out_dir = Path(out_dir)
    paths = []
    for k, name in enumerate(FACTOR_NAMES):
        path = out_dir / f"roc_{name}.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["fpr", "tpr", "threshold"])
            for fpr, tpr, thr in roc_points(probs[:, k], labels[:, k]):
                writer.writerow([repr(float(fpr)), repr(float(tpr)),
                                 "inf" if math.isinf(thr) else repr(float(thr))])
        paths.append(path)
    return paths
