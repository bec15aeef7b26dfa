"""Evaluation protocol: confusion-matrix mIoU, probability-map thinning,
distance-tolerance boundary matching, and dataset-scale MF/AP sweeps.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data import IGNORE_LABEL
from .errors import InvalidArgumentError, InvalidStateError

DEFAULT_THRESHOLDS = np.arange(1, 100) / 100.0


# ---------------------------------------------------------------------------
# segmentation


class ConfusionMatrix:
    """K x K count table; counts[i][j] = pixels of true class i predicted j."""

    def __init__(self, classes):
        self.classes = classes
        self.counts = np.zeros((classes, classes), dtype=np.int64)

    def update(self, pred, gt):
        pred = np.asarray(pred).reshape(-1)
        gt = np.asarray(gt).reshape(-1)
        if pred.shape != gt.shape:
            raise InvalidArgumentError(
                f"prediction/ground-truth sizes differ: {pred.shape} vs {gt.shape}"
            )
        keep = gt != IGNORE_LABEL
        pred, gt = pred[keep], gt[keep]
        if (pred >= self.classes).any() or (gt >= self.classes).any():
            raise InvalidArgumentError("label outside class range in confusion update")
        flat = gt * self.classes + pred
        self.counts += np.bincount(
            flat, minlength=self.classes * self.classes
        ).reshape(self.classes, self.classes)
        return self

    def merge(self, other):
        self.counts += other.counts
        return self


def miou(confusion):
    """Per-class IoU and their mean; classes with empty union are excluded."""
    counts = confusion.counts
    diag = np.diag(counts).astype(np.float64)
    rows = counts.sum(axis=1).astype(np.float64)
    cols = counts.sum(axis=0).astype(np.float64)
    union = rows + cols - diag
    per_class = np.full(confusion.classes, np.nan)
    present = union > 0
    per_class[present] = diag[present] / union[present]
    mean = float(per_class[present].mean()) if present.any() else float("nan")
    return per_class, mean


# ---------------------------------------------------------------------------
# boundary thinning


def _bilinear_sample(values, ys, xs):
    h, w = values.shape
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy, fx = ys - y0, xs - x0
    return (
        (1 - fy) * (1 - fx) * values[y0, x0]
        + (1 - fy) * fx * values[y0, x1]
        + fy * (1 - fx) * values[y1, x0]
        + fy * fx * values[y1, x1]
    )


def nms_thin(prob):
    """Suppress pixels that are not ridge maxima along the local gradient.

    A pixel survives when its value is >= both bilinear samples taken one
    pixel away along +/- the gradient direction; zero-gradient pixels
    sample themselves and therefore survive.
    """
    prob = np.asarray(prob, dtype=np.float64)
    if prob.ndim != 2:
        raise InvalidArgumentError(f"nms_thin expects a 2-d map, got {prob.shape}")
    gy, gx = np.gradient(prob)
    mag = np.hypot(gy, gx)
    scale = np.where(mag > 0, 1.0 / np.where(mag > 0, mag, 1.0), 0.0)
    uy, ux = gy * scale, gx * scale
    yy, xx = np.mgrid[0 : prob.shape[0], 0 : prob.shape[1]].astype(np.float64)
    ahead = _bilinear_sample(prob, yy + uy, xx + ux)
    behind = _bilinear_sample(prob, yy - uy, xx - ux)
    keep = (prob >= ahead) & (prob >= behind)
    return np.where(keep, prob, 0.0)


# ---------------------------------------------------------------------------
# boundary matching


@dataclass(frozen=True)
class MatchTolerance:
    """Matching slack as a fraction of the image diagonal."""

    fraction: float = 0.00375

    def __post_init__(self):
        if self.fraction < 0:
            raise InvalidArgumentError(
                f"tolerance fraction must be >= 0, got {self.fraction}"
            )

    def resolved_radius(self, h, w):
        return self.fraction * float(np.hypot(h, w))


def _augmenting_matching(adjacency, n_right):
    """Maximum bipartite matching by BFS augmenting paths (iterative)."""
    match_left = [-1] * len(adjacency)
    match_right = [-1] * n_right
    size = 0
    for start in range(len(adjacency)):
        if not adjacency[start]:
            continue
        parent_left = {start: None}
        parent_right = {}
        queue = [start]
        goal = -1
        while queue and goal < 0:
            u = queue.pop()
            for r in adjacency[u]:
                if r in parent_right:
                    continue
                parent_right[r] = u
                nxt = match_right[r]
                if nxt < 0:
                    goal = r
                    break
                if nxt not in parent_left:
                    parent_left[nxt] = r
                    queue.append(nxt)
        if goal < 0:
            continue
        size += 1
        r = goal
        while r is not None:
            u = parent_right[r]
            prev_r = parent_left[u]
            match_right[r] = u
            match_left[u] = r
            r = prev_r
    return size


def match_boundaries(pred, gt, tol):
    """One-to-one tolerance matching between binary boundary maps.

    Returns (tp_pred, n_pred, tp_gt, n_gt) with tp_pred == tp_gt, the
    maximum-cardinality matching over pixel pairs within the resolved
    radius.
    """
    pred = np.asarray(pred).astype(bool)
    gt = np.asarray(gt).astype(bool)
    if pred.shape != gt.shape:
        raise InvalidArgumentError(
            f"boundary map sizes differ: {pred.shape} vs {gt.shape}"
        )
    n_pred = int(pred.sum())
    n_gt = int(gt.sum())
    radius = tol.resolved_radius(*pred.shape)
    if radius < 1.0:
        # distinct pixels are at least 1 apart, so only exact overlaps match
        tp = int(np.count_nonzero(pred & gt))
        return tp, n_pred, tp, n_gt
    if n_pred == 0 or n_gt == 0:
        return 0, n_pred, 0, n_gt

    gt_index = {}
    for j, (y, x) in enumerate(zip(*np.nonzero(gt))):
        gt_index[(int(y), int(x))] = j
    reach = int(np.floor(radius))
    offsets = [
        (dy, dx)
        for dy in range(-reach, reach + 1)
        for dx in range(-reach, reach + 1)
        if dy * dy + dx * dx <= radius * radius
    ]
    adjacency = []
    for y, x in zip(*np.nonzero(pred)):
        row = []
        for dy, dx in offsets:
            j = gt_index.get((int(y) + dy, int(x) + dx))
            if j is not None:
                row.append(j)
        adjacency.append(row)
    tp = _augmenting_matching(adjacency, n_gt)
    return tp, n_pred, tp, n_gt


# ---------------------------------------------------------------------------
# dataset-scale precision/recall


class PRAccumulator:
    """Per-class, per-threshold matched counts aggregated over a dataset."""

    def __init__(self, classes, thresholds=None):
        self.classes = classes
        self.thresholds = (
            DEFAULT_THRESHOLDS.copy() if thresholds is None else np.asarray(thresholds)
        )
        shape = (classes, len(self.thresholds))
        self.tp_pred = np.zeros(shape, dtype=np.int64)
        self.n_pred = np.zeros(shape, dtype=np.int64)
        self.tp_gt = np.zeros(shape, dtype=np.int64)
        self.n_gt = np.zeros(shape, dtype=np.int64)
        self.updates = 0

    def add_counts(self, cls, threshold_index, tp_pred, n_pred, tp_gt, n_gt):
        self.tp_pred[cls, threshold_index] += tp_pred
        self.n_pred[cls, threshold_index] += n_pred
        self.tp_gt[cls, threshold_index] += tp_gt
        self.n_gt[cls, threshold_index] += n_gt
        self.updates += 1

    def accumulate_image(self, pred_probs, gt_bits, tol, apply_nms=False):
        """Sweep all thresholds for one image's per-class probability maps."""
        pred_probs = np.asarray(pred_probs, dtype=np.float64)
        gt_bits = np.asarray(gt_bits).astype(bool)
        if pred_probs.shape != gt_bits.shape or pred_probs.shape[0] != self.classes:
            raise InvalidArgumentError(
                f"probability/gt shapes {pred_probs.shape}/{gt_bits.shape} do not "
                f"match {self.classes} classes"
            )
        for k in range(self.classes):
            prob = nms_thin(pred_probs[k]) if apply_nms else pred_probs[k]
            gt = gt_bits[k]
            for ti, tau in enumerate(self.thresholds):
                tp_p, n_p, tp_g, n_g = match_boundaries(prob >= tau, gt, tol)
                self.add_counts(k, ti, tp_p, n_p, tp_g, n_g)
        return self

    def merge(self, other):
        if not np.array_equal(self.thresholds, other.thresholds):
            raise InvalidArgumentError("cannot merge accumulators with different sweeps")
        self.tp_pred += other.tp_pred
        self.n_pred += other.n_pred
        self.tp_gt += other.tp_gt
        self.n_gt += other.n_gt
        self.updates += other.updates
        return self

    def _require_data(self, op):
        if self.updates == 0:
            raise InvalidStateError(f"{op} on an empty accumulator")

    def precision_recall(self):
        """Dataset-aggregated P(tau), R(tau) arrays of shape [K, T]; 0/0 -> 0."""
        self._require_data("precision_recall")
        with np.errstate(invalid="ignore", divide="ignore"):
            precision = np.where(
                self.n_pred > 0, self.tp_pred / np.maximum(self.n_pred, 1), 0.0
            )
            recall = np.where(
                self.n_gt > 0, self.tp_gt / np.maximum(self.n_gt, 1), 0.0
            )
        return precision, recall


def _f_measure(precision, recall):
    denom = precision + recall
    return np.where(denom > 0, 2.0 * precision * recall / np.where(denom > 0, denom, 1.0), 0.0)


def mf_ods(acc):
    """Maximum F-measure at a single dataset-wide threshold per class.

    Classes absent from the ground truth are excluded from the mean.
    """
    acc._require_data("mf_ods")
    precision, recall = acc.precision_recall()
    f = _f_measure(precision, recall)
    per_class = f.max(axis=1)
    present = acc.n_gt.sum(axis=1) > 0
    per_class = np.where(present, per_class, np.nan)
    mean = float(per_class[present].mean()) if present.any() else float("nan")
    return per_class, mean


def average_precision(acc):
    """Trapezoid area under each class's recall-sorted PR points.

    Points sort by recall (ties: precision descending) and the curve is
    anchored at (0, first precision). Classes with no ground truth are
    excluded.
    """
    acc._require_data("average_precision")
    precision, recall = acc.precision_recall()
    per_class = np.full(acc.classes, np.nan)
    for k in range(acc.classes):
        if acc.n_gt[k].sum() == 0:
            continue
        order = np.lexsort((-precision[k], recall[k]))
        rs = np.concatenate(([0.0], recall[k][order]))
        ps = np.concatenate(([precision[k][order[0]]], precision[k][order]))
        per_class[k] = float(np.trapezoid(ps, rs))
    valid = ~np.isnan(per_class)
    mean = float(per_class[valid].mean()) if valid.any() else float("nan")
    return per_class, mean


# ---------------------------------------------------------------------------
# dataset drivers


def thread_count():
    """Worker cap for per-image evaluation; PYRSEG_THREADS overrides."""
    env = os.environ.get("PYRSEG_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise InvalidArgumentError(f"PYRSEG_THREADS={env!r} is not an integer")
    return min(4, os.cpu_count() or 1)


def evaluate_segmentation(pred_masks, gt_masks, classes):
    """Confusion matrix over aligned (pred, gt) mask sequences."""
    pred_masks, gt_masks = list(pred_masks), list(gt_masks)
    if len(pred_masks) != len(gt_masks):
        raise InvalidArgumentError("prediction/ground-truth counts differ")

    def job(pair):
        return ConfusionMatrix(classes).update(*pair)

    total = ConfusionMatrix(classes)
    with ThreadPoolExecutor(max_workers=thread_count()) as pool:
        for partial in pool.map(job, zip(pred_masks, gt_masks)):
            total.merge(partial)
    return total


def evaluate_boundaries(pred_prob_stacks, gt_bit_stacks, classes,
                        tol=None, apply_nms=False, thresholds=None):
    """PR accumulator over aligned per-class probability/gt stacks."""
    tol = tol if tol is not None else MatchTolerance()
    preds, gts = list(pred_prob_stacks), list(gt_bit_stacks)
    if len(preds) != len(gts):
        raise InvalidArgumentError("prediction/ground-truth counts differ")

    def job(pair):
        return PRAccumulator(classes, thresholds).accumulate_image(
            pair[0], pair[1], tol, apply_nms=apply_nms
        )

    total = PRAccumulator(classes, thresholds)
    with ThreadPoolExecutor(max_workers=thread_count()) as pool:
        for partial in pool.map(job, zip(preds, gts)):
            total.merge(partial)
    return total
