"""Referring multi-object tracking metrics: HOTA/DetA/AssA, MOTA, IDF1.

Each expression is evaluated independently on its own ground truth (the
referred objects) and predictions; reports are then averaged over
expressions.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .matching import hungarian

log = logging.getLogger(__name__)

HOTA_ALPHAS = np.arange(1, 20) * 0.05
CLEAR_THRESHOLD = 0.5
METRIC_NAMES = ("HOTA", "DetA", "AssA", "MOTA", "IDF1")
COUNT_NAMES = ("TP", "FP", "FN", "IDSW", "IDTP", "IDFP", "IDFN")


class MOTFormatError(ValueError):
    """A malformed line in a MOT-style CSV file."""


@dataclass(frozen=True)
class TrackRecord:
    """One box observation; (x, y) is the top-left corner."""

    frame: int
    track_id: int
    x: float
    y: float
    w: float
    h: float
    conf: float = 1.0


@dataclass
class ExpressionEval:
    expression_id: str
    gt: list[TrackRecord]
    pred: list[TrackRecord]

    def __post_init__(self):
        for r in (*self.gt, *self.pred):
            if r.frame < 1 or r.track_id < 0:
                raise ValueError(f"bad record {r}: frames start at 1 and ids are non-negative")


@dataclass
class MetricReport:
    expression_id: str
    HOTA: float
    DetA: float
    AssA: float
    MOTA: float
    IDF1: float
    counts: dict[str, int] = field(default_factory=dict)
    per_expression: list["MetricReport"] = field(default_factory=list)

    def metrics(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in METRIC_NAMES}

    def to_dict(self) -> dict:
        d = {"expression_id": self.expression_id, **self.metrics(), "counts": dict(self.counts)}
        if self.per_expression:
            d["per_expression"] = [r.to_dict() for r in self.per_expression]
        return d


# ---------------------------------------------------------------------------
# MOT CSV: frame,id,x,y,w,h,conf


def read_mot_csv(path: str | Path) -> list[TrackRecord]:
    path = Path(path)
    records = []
    seen = set()
    with path.open(encoding="utf-8", newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 7:
                raise MOTFormatError(f"{path}:{lineno}: expected 7 fields, got {len(parts)}")
            try:
                frame, tid = int(parts[0]), int(parts[1])
                x, y, w, h, conf = (float(v) for v in parts[2:])
            except ValueError as exc:
                raise MOTFormatError(f"{path}:{lineno}: {exc}") from None
            if frame < 1 or tid < 0 or w < 0 or h < 0:
                raise MOTFormatError(f"{path}:{lineno}: frame must be >= 1, id and extents >= 0")
            if (frame, tid) in seen:
                raise MOTFormatError(f"{path}:{lineno}: duplicate (frame, id) = ({frame}, {tid})")
            seen.add((frame, tid))
            records.append(TrackRecord(frame, tid, x, y, w, h, conf))
    return records


def format_mot_line(r: TrackRecord) -> str:
    return f"{r.frame},{r.track_id},{r.x:.4f},{r.y:.4f},{r.w:.4f},{r.h:.4f},{r.conf:.4f}"


def write_mot_csv(path: str | Path, records: Iterable[TrackRecord]) -> None:
    rows = sorted(records, key=lambda r: (r.frame, r.track_id))
    text = "".join(format_mot_line(r) + "\n" for r in rows)
    Path(path).write_text(text, encoding="utf-8", newline="\n")


# ---------------------------------------------------------------------------
# Per-frame geometry


def box_iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """IoU between top-left (x, y, w, h) rows of ``a`` (n, 4) and ``b`` (m, 4)."""
    if len(a) == 0 or len(b) == 0:
        return np.zeros((len(a), len(b)))
    ax0, ay0 = a[:, 0:1], a[:, 1:2]
    ax1, ay1 = ax0 + a[:, 2:3], ay0 + a[:, 3:4]
    bx0, by0 = b[:, 0], b[:, 1]
    bx1, by1 = bx0 + b[:, 2], by0 + b[:, 3]
    iw = np.clip(np.minimum(ax1, bx1) - np.maximum(ax0, bx0), 0, None)
    ih = np.clip(np.minimum(ay1, by1) - np.maximum(ay0, by0), 0, None)
    inter = iw * ih
    union = (a[:, 2] * a[:, 3])[:, None] + (b[:, 2] * b[:, 3])[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, inter / union, 0.0)


@dataclass
class _Frame:
    gt_ids: np.ndarray
    pred_ids: np.ndarray
    iou: np.ndarray


def _frames(gt: Sequence[TrackRecord], pred: Sequence[TrackRecord]) -> list[_Frame]:
    by_gt, by_pred = defaultdict(list), defaultdict(list)
    for r in gt:
        by_gt[r.frame].append(r)
    for r in pred:
        by_pred[r.frame].append(r)
    out = []
    for f in sorted(set(by_gt) | set(by_pred)):
        g, p = by_gt.get(f, []), by_pred.get(f, [])
        gb = np.array([[r.x, r.y, r.w, r.h] for r in g]).reshape(-1, 4)
        pb = np.array([[r.x, r.y, r.w, r.h] for r in p]).reshape(-1, 4)
        out.append(_Frame(np.array([r.track_id for r in g], dtype=np.int64),
                          np.array([r.track_id for r in p], dtype=np.int64),
                          box_iou_matrix(gb, pb)))
    return out


def _match_by_iou(iou: np.ndarray, alpha: float) -> list[tuple[int, int]]:
    if iou.size == 0:
        return []
    allowed = np.where(iou >= alpha, iou, 0.0)
    return [(i, j) for i, j in hungarian(-allowed) if iou[i, j] >= alpha]


def match_frames(gt: Sequence[TrackRecord], pred: Sequence[TrackRecord], frame: int,
                 alpha: float) -> list[tuple[int, int]]:
    """Max-total-IoU matching in one frame, restricted to pairs with IoU >= alpha.

    Returns (gt track id, predicted track id) pairs.
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    g = [r for r in gt if r.frame == frame]
    p = [r for r in pred if r.frame == frame]
    iou = box_iou_matrix(np.array([[r.x, r.y, r.w, r.h] for r in g]).reshape(-1, 4),
                         np.array([[r.x, r.y, r.w, r.h] for r in p]).reshape(-1, 4))
    return [(g[i].track_id, p[j].track_id) for i, j in _match_by_iou(iou, alpha)]


# ---------------------------------------------------------------------------
# Metrics


def _vacuous(ev: ExpressionEval) -> bool:
    if not ev.gt and not ev.pred:
        log.warning("expression %s has no ground truth and no predictions; scoring it 1.0",
                    ev.expression_id)
        return True
    return False


def hota_at(frames: list[_Frame], alpha: float) -> tuple[float, float, int, int, int]:
    """(DetA, AssA, TP, FN, FP) at one localization threshold."""
    tp = fn = fp = 0
    pair_tp: dict[tuple[int, int], int] = defaultdict(int)
    gt_count: dict[int, int] = defaultdict(int)
    pred_count: dict[int, int] = defaultdict(int)
    for fr in frames:
        for g in fr.gt_ids:
            gt_count[int(g)] += 1
        for p in fr.pred_ids:
            pred_count[int(p)] += 1
        pairs = _match_by_iou(fr.iou, alpha)
        tp += len(pairs)
        fn += len(fr.gt_ids) - len(pairs)
        fp += len(fr.pred_ids) - len(pairs)
        for i, j in pairs:
            pair_tp[(int(fr.gt_ids[i]), int(fr.pred_ids[j]))] += 1
    denom = tp + fn + fp
    det_a = tp / denom if denom else 0.0
    if tp == 0:
        return det_a, 0.0, tp, fn, fp
    # every TP of pair (g, p) shares TPA = n, FNA = |g| - n, FPA = |p| - n
    ass_sum = sum(n * n / (gt_count[g] + pred_count[p] - n) for (g, p), n in pair_tp.items())
    return det_a, ass_sum / tp, tp, fn, fp


def compute_hota(ev: ExpressionEval) -> tuple[float, float, float]:
    """(HOTA, DetA, AssA), each averaged over alpha = 0.05, 0.10, ..., 0.95."""
    if _vacuous(ev):
        return 1.0, 1.0, 1.0
    frames = _frames(ev.gt, ev.pred)
    hota, det, ass = [], [], []
    for alpha in HOTA_ALPHAS:
        d, a, *_ = hota_at(frames, float(alpha))
        det.append(d)
        ass.append(a)
        hota.append(math.sqrt(d * a))
    return float(np.mean(hota)), float(np.mean(det)), float(np.mean(ass))


def clear_counts(ev: ExpressionEval, threshold: float = CLEAR_THRESHOLD) -> dict[str, int]:
    """TP/FP/FN/IDSW under CLEAR matching with match persistence across frames."""
    tp = fp = fn = idsw = 0
    prev: dict[int, int] = {}        # gt id -> pred id matched in the previous frame
    last: dict[int, int] = {}        # gt id -> most recent matched pred id
    for fr in _frames(ev.gt, ev.pred):
        gt_idx = {int(g): i for i, g in enumerate(fr.gt_ids)}
        pred_idx = {int(p): j for j, p in enumerate(fr.pred_ids)}
        pairs = []
        for g, p in prev.items():
            if g in gt_idx and p in pred_idx and fr.iou[gt_idx[g], pred_idx[p]] >= threshold:
                pairs.append((gt_idx[g], pred_idx[p]))
        kept_rows = {i for i, _ in pairs}
        kept_cols = {j for _, j in pairs}
        rows = [i for i in range(len(fr.gt_ids)) if i not in kept_rows]
        cols = [j for j in range(len(fr.pred_ids)) if j not in kept_cols]
        if rows and cols:
            sub = fr.iou[np.ix_(rows, cols)]
            pairs += [(rows[a], cols[b]) for a, b in _match_by_iou(sub, threshold)]
        current = {}
        for i, j in pairs:
            g, p = int(fr.gt_ids[i]), int(fr.pred_ids[j])
            if g in last and last[g] != p:
                idsw += 1
            last[g] = p
            current[g] = p
        prev = current
        tp += len(pairs)
        fn += len(fr.gt_ids) - len(pairs)
        fp += len(fr.pred_ids) - len(pairs)
    return {"TP": tp, "FP": fp, "FN": fn, "IDSW": idsw}


def compute_mota(ev: ExpressionEval) -> float:
    """1 - (FN + FP + IDSW) / GT; NaN when there is no ground truth but there are predictions."""
    if _vacuous(ev):
        return 1.0
    if not ev.gt:
        log.error("MOTA undefined for expression %s: no ground truth", ev.expression_id)
        return float("nan")
    c = clear_counts(ev)
    return 1.0 - (c["FN"] + c["FP"] + c["IDSW"]) / len(ev.gt)


def identity_counts(ev: ExpressionEval, threshold: float = CLEAR_THRESHOLD) -> dict[str, int]:
    """IDTP/IDFP/IDFN under the best one-to-one gt-id / pred-id assignment."""
    gt_ids = sorted({r.track_id for r in ev.gt})
    pred_ids = sorted({r.track_id for r in ev.pred})
    overlap = np.zeros((len(gt_ids), len(pred_ids)))
    gi = {g: i for i, g in enumerate(gt_ids)}
    pj = {p: j for j, p in enumerate(pred_ids)}
    for fr in _frames(ev.gt, ev.pred):
        hit = fr.iou >= threshold
        for a, b in zip(*np.nonzero(hit)):
            overlap[gi[int(fr.gt_ids[a])], pj[int(fr.pred_ids[b])]] += 1
    idtp = int(sum(overlap[i, j] for i, j in hungarian(-overlap))) if overlap.size else 0
    return {"IDTP": idtp, "IDFP": len(ev.pred) - idtp, "IDFN": len(ev.gt) - idtp}


def compute_idf1(ev: ExpressionEval) -> float:
    if _vacuous(ev):
        return 1.0
    c = identity_counts(ev)
    denom = 2 * c["IDTP"] + c["IDFP"] + c["IDFN"]
    return 2 * c["IDTP"] / denom if denom else 0.0


def evaluate_expression(ev: ExpressionEval) -> MetricReport:
    hota, det, ass = compute_hota(ev)
    counts = {**clear_counts(ev), **identity_counts(ev)}
    return MetricReport(ev.expression_id, hota, det, ass, compute_mota(ev), compute_idf1(ev), counts)


def aggregate_report(reports: Sequence[MetricReport]) -> MetricReport:
    """Arithmetic mean of every metric over expressions; counts are summed."""
    if not reports:
        raise ValueError("cannot aggregate an empty list of reports")
    means = {k: float(np.mean([getattr(r, k) for r in reports])) for k in METRIC_NAMES}
    counts = {k: int(sum(r.counts.get(k, 0) for r in reports)) for k in COUNT_NAMES}
    return MetricReport("aggregate", **means, counts=counts, per_expression=list(reports))


# ---------------------------------------------------------------------------
# Report files


def report_json(report: MetricReport) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"


def write_summary_csv(path: str | Path, report: MetricReport) -> None:
    rows = report.per_expression or [report]
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["expression_id", *METRIC_NAMES])
        for r in [*rows, report] if report.per_expression else rows:
            w.writerow([r.expression_id, *(f"{getattr(r, k):.6f}" for k in METRIC_NAMES)])
