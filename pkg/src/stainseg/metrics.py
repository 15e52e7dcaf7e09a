"""Segmentation scoring: Dice, aggregated Jaccard index, panoptic quality.

All functions take integer instance label maps (0 = background) of equal
shape. Ids may be arbitrary positive integers; scores never depend on the
numbering. Edge conventions: two empty maps score 1.0 everywhere; panoptic
quality with zero true positives but instances present scores 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, EmptyInput


@dataclass(frozen=True)
class MetricsReport:
    """One row of scores.

    For a single image pq == dq * sq exactly; a dataset-level report holds
    unweighted means of the per-image scores (so the product identity is a
    per-image property) and summed match counts.
    """

    dice: float
    aji: float
    pq: float
    dq: float
    sq: float
    tp: int
    fp: int
    fn: int
    per_image: dict[str, "MetricsReport"] | None = None


def _as_labels(arr: np.ndarray, name: str) -> np.ndarray:
    arr = np.asarray(arr)
    if arr.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2D, got shape {arr.shape}")
    return arr.astype(np.int64, copy=False)


def _check_pair(gt: np.ndarray, pred: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    gt = _as_labels(gt, "gt")
    pred = _as_labels(pred, "pred")
    if gt.shape != pred.shape:
        raise DimensionMismatch(f"gt {gt.shape} vs pred {pred.shape}")
    return gt, pred


def dice(gt: np.ndarray, pred: np.ndarray) -> float:
    """Binary Dice over id>0 pixels; 1.0 when both maps are empty."""
    gt, pred = _check_pair(gt, pred)
    a = gt > 0
    b = pred > 0
    denom = int(a.sum()) + int(b.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / denom


def _overlap_tables(gt: np.ndarray, pred: np.ndarray):
    """Intersection counts and areas with ids compacted to row/col indices.

    Returns (inter[G, P], gt_areas[G], pred_areas[P]); rows follow ascending
    GT id, columns ascending prediction id.
    """
    gt_ids = np.unique(gt)
    gt_ids = gt_ids[gt_ids > 0]
    pred_ids = np.unique(pred)
    pred_ids = pred_ids[pred_ids > 0]
    g, p = len(gt_ids), len(pred_ids)

    gt_idx = np.searchsorted(gt_ids, gt.ravel())
    gt_code = np.where(np.isin(gt.ravel(), gt_ids), gt_idx + 1, 0)
    pred_idx = np.searchsorted(pred_ids, pred.ravel())
    pred_code = np.where(np.isin(pred.ravel(), pred_ids), pred_idx + 1, 0)

    joint = np.bincount(gt_code * (p + 1) + pred_code, minlength=(g + 1) * (p + 1))
    joint = joint.reshape(g + 1, p + 1)
    inter = joint[1:, 1:]
    gt_areas = joint[1:, :].sum(axis=1)
    pred_areas = joint[:, 1:].sum(axis=0)
    return inter, gt_areas, pred_areas


def aji(gt: np.ndarray, pred: np.ndarray) -> float:
    """Aggregated Jaccard index, unique-use greedy matching.

    GT instances are visited in ascending id order; each takes the not-yet-
    used prediction with the highest IoU (ties to the smaller prediction id,
    zero-overlap predictions never match). The union pool collects matched
    unions, unmatched GT areas, and leftover prediction areas.
    """
    gt, pred = _check_pair(gt, pred)
    inter, gt_areas, pred_areas = _overlap_tables(gt, pred)
    g, p = inter.shape
    if g == 0 and p == 0:
        return 1.0

    used = np.zeros(p, dtype=bool)
    inter_total = 0
    union_total = 0
    for gi in range(g):
        best = -1
        best_iou = 0.0
        for pi in range(p):
            if used[pi] or inter[gi, pi] == 0:
                continue
            iou = inter[gi, pi] / (gt_areas[gi] + pred_areas[pi] - inter[gi, pi])
            if iou > best_iou:
                best = pi
                best_iou = iou
        if best >= 0:
            inter_total += int(inter[gi, best])
            union_total += int(gt_areas[gi] + pred_areas[best] - inter[gi, best])
            used[best] = True
        else:
            union_total += int(gt_areas[gi])
    union_total += int(pred_areas[~used].sum())
    return inter_total / union_total


def pq(gt: np.ndarray, pred: np.ndarray) -> tuple[float, float, float, int, int, int]:
    """Panoptic quality. Returns (pq, dq, sq, tp, fp, fn).

    Pairs match when IoU is strictly above 0.5, which makes the matching
    unique without any search.
    """
    gt, pred = _check_pair(gt, pred)
    inter, gt_areas, pred_areas = _overlap_tables(gt, pred)
    g, p = inter.shape
    if g == 0 and p == 0:
        return 1.0, 1.0, 1.0, 0, 0, 0

    matched_ious = []
    for gi in range(g):
        for pi in range(p):
            if inter[gi, pi] == 0:
                continue
            iou = inter[gi, pi] / (gt_areas[gi] + pred_areas[pi] - inter[gi, pi])
            if iou > 0.5:
                matched_ious.append(iou)
                break
    tp = len(matched_ious)
    fp = p - tp
    fn = g - tp
    dq = tp / (tp + 0.5 * fp + 0.5 * fn)
    sq = float(np.mean(matched_ious)) if tp else 0.0
    return dq * sq, dq, sq, tp, fp, fn


def score_pair(gt: np.ndarray, pred: np.ndarray) -> MetricsReport:
    """All metrics for one image pair."""
    pq_v, dq_v, sq_v, tp, fp, fn = pq(gt, pred)
    return MetricsReport(
        dice=dice(gt, pred), aji=aji(gt, pred),
        pq=pq_v, dq=dq_v, sq=sq_v, tp=tp, fp=fp, fn=fn,
    )


def aggregate(per_image: dict[str, MetricsReport]) -> MetricsReport:
    """Dataset report: unweighted mean of each score, summed counts."""
    if not per_image:
        raise EmptyInput("cannot aggregate an empty report set")
    reports = list(per_image.values())
    n = len(reports)
    return MetricsReport(
        dice=sum(r.dice for r in reports) / n,
        aji=sum(r.aji for r in reports) / n,
        pq=sum(r.pq for r in reports) / n,
        dq=sum(r.dq for r in reports) / n,
        sq=sum(r.sq for r in reports) / n,
        tp=sum(r.tp for r in reports),
        fp=sum(r.fp for r in reports),
        fn=sum(r.fn for r in reports),
        per_image=dict(per_image),
    )


def report_to_dict(report: MetricsReport) -> dict:
    out = {
        "dice": report.dice, "aji": report.aji, "pq": report.pq,
        "dq": report.dq, "sq": report.sq,
        "tp": report.tp, "fp": report.fp, "fn": report.fn,
    }
    if report.per_image is not None:
        out["per_image"] = {
            k: report_to_dict(v) for k, v in sorted(report.per_image.items())
        }
    return out


def report_to_json(report: MetricsReport) -> str:
    return json.dumps(report_to_dict(report), indent=2) + "\n"


def format_table(rows: list[tuple[str, MetricsReport]]) -> str:
    """Aligned text table, one row per (name, report)."""
    headers = ["run", "dice", "aji", "pq", "dq", "sq", "tp", "fp", "fn"]
    cells = [headers]
    for name, r in rows:
        cells.append([
            name,
            f"{r.dice:.4f}", f"{r.aji:.4f}", f"{r.pq:.4f}",
            f"{r.dq:.4f}", f"{r.sq:.4f}",
            str(r.tp), str(r.fp), str(r.fn),
        ])
    widths = [max(len(row[i]) for row in cells) for i in range(len(headers))]
    lines = []
    for i, row in enumerate(cells):
        lines.append("  ".join(
            c.ljust(w) if j == 0 else c.rjust(w)
            for j, (c, w) in enumerate(zip(row, widths))
        ))
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
