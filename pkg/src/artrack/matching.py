"""Set-prediction matching and the composite tracking loss."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor, as_tensor

CLASS_THRESHOLD = 0.7
REFERRING_THRESHOLD = 0.5


@dataclass(frozen=True)
class Box:
    """Center-size box (cx, cy, w, h)."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if self.w < 0 or self.h < 0:
            raise ValueError(f"box extents must be non-negative, got w={self.w}, h={self.h}")

    @classmethod
    def from_corner(cls, x: float, y: float, w: float, h: float) -> "Box":
        """Build from top-left corner form (x, y, w, h)."""
        return cls(x + w / 2.0, y + h / 2.0, w, h)

    def corners(self) -> tuple[float, float, float, float]:
        return (self.cx - self.w / 2, self.cy - self.h / 2, self.cx + self.w / 2, self.cy + self.h / 2)

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.w, self.h])


@dataclass(frozen=True)
class LossWeights:
    lambda_cls: float = 2.0
    lambda_l1: float = 5.0
    lambda_iou: float = 2.0
    lambda_act: float = 2.0

    def __post_init__(self):
        if min(asdict(self).values()) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass(frozen=True)
class Prediction:
    class_score: float
    referring_score: float
    box: Box | None = None

    def __post_init__(self):
        for name in ("class_score", "referring_score"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")


def select_referred(pred: Prediction, class_threshold: float = CLASS_THRESHOLD,
                    referring_threshold: float = REFERRING_THRESHOLD) -> bool:
    return pred.class_score > class_threshold and pred.referring_score > referring_threshold


# ---------------------------------------------------------------------------
# Assignment


def hungarian(cost) -> list[tuple[int, int]]:
    """Minimum-cost assignment of ``min(N, M)`` row/column pairs.

    Shortest augmenting path with dual potentials, solved on the orientation
    with fewer rows.  Among equally cheap assignments the lexicographically
    smallest (row, then column) is returned.  Pairs come back sorted by row.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError(f"cost must be a 2-D matrix, got shape {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix contains non-finite entries")
    n_rows, n_cols = cost.shape
    if n_rows == 0 or n_cols == 0:
        return []
    n = max(n_rows, n_cols)
    col_of = np.full(n, -1, dtype=np.int64)
    if n_rows <= n_cols:
        col_of[:n_rows], r_pot, c_pot = _solve_rect(cost)
    else:
        row_of_col, c_pot, r_pot = _solve_rect(cost.T)
        col_of[row_of_col] = np.arange(n_cols)

    # Optimal assignments are exactly the perfect matchings of the tight graph,
    # padded to a square: a dummy partner is tight to any line with zero potential
    # (a line with nonzero potential must be matched in every optimum).
    tol = 1e-9 * max(1.0, float(np.max(np.abs(cost))))
    tight = np.zeros((n, n), dtype=bool)
    tight[:n_rows, :n_cols] = cost - r_pot[:, None] - c_pot[None, :] <= tol
    if n_rows < n_cols:
        tight[n_rows:, :] = (np.abs(c_pot) <= tol)[None, :]
    elif n_rows > n_cols:
        tight[:, n_cols:] = (np.abs(r_pot) <= tol)[:, None]
    free_cols = np.setdiff1d(np.arange(n), col_of[col_of >= 0])
    col_of[col_of < 0] = free_cols
    _lexicographic(col_of, tight, n_rows)
    return [(i, int(col_of[i])) for i in range(n_rows) if col_of[i] < n_cols]


def _solve_rect(cost: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rows <= columns.  Returns (column of each row, row potentials, column potentials).

    Column potentials only ever decrease, and only on columns that end up
    matched, so unmatched columns keep potential 0.
    """
    n, m = cost.shape
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    owner = np.zeros(m + 1, dtype=np.int64)   # owner[j] = row (1-based) holding column j
    way = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            free = ~used[1:]
            reduced = cost[i0 - 1] - u[i0] - v[1:]
            better = free & (reduced < minv[1:])
            minv[1:][better] = reduced[better]
            way[1:][better] = j0
            candidates = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(candidates)) + 1
            delta = candidates[j1 - 1]
            u[owner[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1
    col_of = np.zeros(n, dtype=np.int64)
    for j in range(1, m + 1):
        if owner[j]:
            col_of[owner[j] - 1] = j - 1
    return col_of, u[1:], v[1:]


def _lexicographic(col_of: np.ndarray, tight: np.ndarray, n_rows: int) -> None:
    """Move a perfect matching of the tight graph to its lexicographically smallest form.

    Every perfect matching of the tight (zero reduced cost) subgraph is optimal.
    Rows are fixed in order; row i takes the smallest tight column that still
    admits a perfect matching of the unfixed rows, found as an alternating
    cycle through i's current column.  Works in place.
    """
    n = len(col_of)
    row_of = np.empty(n, dtype=np.int64)
    row_of[col_of] = np.arange(n)
    fixed = np.zeros(n, dtype=bool)

    def reroute(r: int, target: int, seen: np.ndarray) -> bool:
        # give row r a new tight column, ending the alternating path at ``target``
        for c in np.flatnonzero(tight[r]):
            if seen[c] or fixed[row_of[c]] and c != target:
                continue
            seen[c] = True
            if c == target or reroute(int(row_of[c]), target, seen):
                col_of[r], row_of[c] = c, r
                return True
        return False

    for i in range(n_rows):
        current = int(col_of[i])
        fixed[i] = True
        for j in np.flatnonzero(tight[i, :current]):
            r = int(row_of[j])
            if fixed[r]:
                continue
            seen = np.zeros(n, dtype=bool)
            seen[j] = True
            if reroute(r, current, seen):
                col_of[i], row_of[j] = j, i
                break


def assignment_cost(cost, pairs) -> float:
    cost = np.asarray(cost, dtype=np.float64)
    return float(sum(cost[r, c] for r, c in pairs))


# ---------------------------------------------------------------------------
# Boxes


def iou_giou(a: Box, b: Box) -> tuple[float, float]:
    ax0, ay0, ax1, ay1 = a.corners()
    bx0, by0, bx1, by1 = b.corners()
    inter = max(0.0, min(ax1, bx1) - max(ax0, bx0)) * max(0.0, min(ay1, by1) - max(ay0, by0))
    union = a.w * a.h + b.w * b.h - inter
    iou = inter / union if union > 0 else 0.0
    hull = (max(ax1, bx1) - min(ax0, bx0)) * (max(ay1, by1) - min(ay0, by0))
    giou = iou - (hull - union) / hull if hull > 0 else iou
    return iou, giou


def pairwise_giou(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    """GIoU between every row of ``pred`` (P, 4) and ``target`` (G, 4), cxcywh."""
    out = np.zeros((len(pred), len(target)))
    for i, p in enumerate(pred):
        for j, t in enumerate(target):
            out[i, j] = iou_giou(Box(*p), Box(*t))[1]
    return out


def giou_tensor(pred, target) -> tuple[Tensor, Tensor]:
    """Row-wise (IoU, GIoU) for matched (K, 4) cxcywh boxes, differentiable in both."""
    pred, target = as_tensor(pred), as_tensor(target)

    def corners(b):
        half_w, half_h = b[:, 2] * 0.5, b[:, 3] * 0.5
        return b[:, 0] - half_w, b[:, 1] - half_h, b[:, 0] + half_w, b[:, 1] + half_h

    px0, py0, px1, py1 = corners(pred)
    tx0, ty0, tx1, ty1 = corners(target)
    iw = T.maximum(T.minimum(px1, tx1) - T.maximum(px0, tx0), 0.0)
    ih = T.maximum(T.minimum(py1, ty1) - T.maximum(py0, ty0), 0.0)
    inter = iw * ih
    union = pred[:, 2] * pred[:, 3] + target[:, 2] * target[:, 3] - inter
    iou = inter / union
    hull = (T.maximum(px1, tx1) - T.minimum(px0, tx0)) * (T.maximum(py1, ty1) - T.minimum(py0, ty0))
    return iou, iou - (hull - union) / hull


# ---------------------------------------------------------------------------
# Losses


def focal_cls_loss(p, y, alpha: float = 0.25, gamma: float = 2.0) -> Tensor:
    """Elementwise sigmoid focal loss on probabilities ``p`` with 0/1 labels ``y``."""
    p = as_tensor(p)
    if not np.all((p.data > 0.0) & (p.data < 1.0)):
        raise ValueError("focal loss needs probabilities strictly inside (0, 1)")
    y = np.broadcast_to(np.asarray(y, dtype=np.float64), p.shape)
    pos = -alpha * T.power(1.0 - p, gamma) * T.log(p)
    neg = -(1.0 - alpha) * T.power(p, gamma) * T.log(1.0 - p)
    return pos * Tensor(y) + neg * Tensor(1.0 - y)


def focal_cls_loss_logits(z, y, alpha: float = 0.25, gamma: float = 2.0) -> Tensor:
    """Same loss as :func:`focal_cls_loss` on ``sigmoid(z)``, stable for saturated logits."""
    z = as_tensor(z)
    y = np.broadcast_to(np.asarray(y, dtype=np.float64), z.shape)
    p = T.sigmoid(z)
    pos = -alpha * T.power(1.0 - p, gamma) * T.log_sigmoid(z)
    neg = -(1.0 - alpha) * T.power(p, gamma) * T.log_sigmoid(-z)
    return pos * Tensor(y) + neg * Tensor(1.0 - y)


def focal_cost_matrix(prob: np.ndarray, alpha: float = 0.25, gamma: float = 2.0) -> np.ndarray:
    """Per-prediction classification cost for matching: positive minus negative focal term."""
    p = np.clip(prob, 1e-12, 1 - 1e-12)
    pos = alpha * (1 - p) ** gamma * -np.log(p)
    neg = (1 - alpha) * p**gamma * -np.log(1 - p)
    return pos - neg


def matching_cost(class_prob, pred_boxes, target_boxes, weights: LossWeights = LossWeights(),
                  alpha: float = 0.25, gamma: float = 2.0) -> np.ndarray:
    """(P, G) cost mirroring the loss: class focal + L1 + (1 - GIoU), lambda-weighted."""
    class_prob = np.asarray(class_prob, dtype=np.float64).reshape(-1)
    pred_boxes = np.asarray(pred_boxes, dtype=np.float64)
    target_boxes = np.asarray(target_boxes, dtype=np.float64)
    cls = focal_cost_matrix(class_prob, alpha, gamma)[:, None]
    l1 = np.abs(pred_boxes[:, None, :] - target_boxes[None, :, :]).sum(axis=-1)
    iou = 1.0 - pairwise_giou(pred_boxes, target_boxes)
    return weights.lambda_cls * cls + weights.lambda_l1 * l1 + weights.lambda_iou * iou


def combine_losses(components: dict, weights: LossWeights = LossWeights()):
    """lambda-weighted sum of the ``cls``, ``l1``, ``iou`` and ``act`` terms."""
    return (weights.lambda_cls * components["cls"] + weights.lambda_l1 * components["l1"]
            + weights.lambda_iou * components["iou"] + weights.lambda_act * components["act"])


def track_loss(class_prob, pred_boxes, target_boxes, assignment, weights: LossWeights = LossWeights(),
               actl=0.0, alpha: float = 0.25, gamma: float = 2.0,
               from_logits: bool = False) -> tuple[Tensor, dict[str, float]]:
    """Composite loss over P predictions given (pred, target) matched pairs.

    Classification: focal loss over all predictions, matched ones labelled
    positive, summed and divided by the number of matches.  Box terms: mean
    per-coordinate L1 and mean (1 - GIoU) over matched pairs.  With
    ``from_logits`` the first argument holds pre-sigmoid class logits.
    """
    class_prob = T.reshape(as_tensor(class_prob), (-1,))
    pred_boxes = as_tensor(pred_boxes)
    target_boxes = as_tensor(target_boxes)
    n_pred = class_prob.shape[0]
    pairs = list(assignment)
    for r, c in pairs:
        if not (0 <= r < n_pred and 0 <= c < target_boxes.shape[0]):
            raise ValueError(f"assignment pair {(r, c)} out of range")
    labels = np.zeros(n_pred)
    labels[[r for r, _ in pairs]] = 1.0
    n_match = max(len(pairs), 1)

    focal = focal_cls_loss_logits if from_logits else focal_cls_loss
    l_cls = T.sum(focal(class_prob, labels, alpha, gamma)) / n_match
    if pairs:
        rows = np.array([r for r, _ in pairs])
        cols = np.array([c for _, c in pairs])
        matched = pred_boxes[rows]
        targets = target_boxes[cols]
        l_l1 = T.mean(T.abs(matched - targets))
        _, giou = giou_tensor(matched, targets)
        l_iou = T.mean(1.0 - giou)
    else:
        l_l1 = Tensor(0.0)
        l_iou = Tensor(0.0)
    l_act = as_tensor(actl)
    parts = {"cls": l_cls, "l1": l_l1, "iou": l_iou, "act": l_act}
    total = combine_losses(parts, weights)
    breakdown = {k: v.item() for k, v in parts.items()}
    breakdown["total"] = total.item()
    return total, breakdown
