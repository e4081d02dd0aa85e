"""PASCAL-style detection metrics extended with viewpoint and keypoints.

All AP-family scores share one greedy matcher: predictions are visited in
descending score order (input order on ties) and each claims the still
unmatched ground truth it overlaps most. A prediction that claims a ground
truth but fails the extra predicate (viewpoint, for AVP/AAVP) is a false
positive and the ground truth stays claimed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, MissingAzimuth
from .geometry import BBox, azimuth_error, iou

IOU_THRESHOLD = 0.5
AAVP_GRID = np.arange(0, 181, dtype=float)
# slack on "error <= D" so round-off in a fitted angle does not flip a match
ANGLE_TOL = 1e-6
APP_HEIGHT = 100.0
APP_DISTANCE = 25.0


@dataclass
class GroundTruthObject:
    image_id: str
    cls: str
    bbox: BBox
    azimuth: float = 0.0
    elevation: float = 0.0
    theta: float = 0.0
    distance: float | None = None
    keypoints: dict = field(default_factory=dict)  # name -> (x, y, visible)
    difficult: bool = False
    mask: np.ndarray | None = None
    prototype_id: str | None = None
    id: int | None = None


@dataclass
class ScoredPrediction:
    image_id: str
    cls: str
    bbox: BBox
    score: float
    azimuth: float | None = None
    mask: np.ndarray | None = None
    keypoints: dict | None = None
    id: int | str | None = None


@dataclass
class PRCurve:
    recall: np.ndarray
    precision: np.ndarray
    ap: float
    n_gt: int
    tp: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))


def score_order(scores):
    """Indices by descending score; equal scores keep input order."""
    return np.argsort(-np.asarray(scores, dtype=float), kind="stable")


def average_precision(recall, precision, mode="allpoints"):
    recall = np.asarray(recall, dtype=float)
    precision = np.asarray(precision, dtype=float)
    if mode == "11pt":
        ap = 0.0
        for t in np.linspace(0.0, 1.0, 11):
            p = precision[recall >= t]
            ap += (p.max() if p.size else 0.0) / 11.0
        return float(ap)
    if mode != "allpoints":
        raise ValueError(f"unknown AP mode {mode!r}")
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    i = np.where(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[i + 1] - mrec[i]) * mpre[i + 1]))


def pr_curve(tp, n_gt, mode="allpoints") -> PRCurve:
    """Precision/recall from TP flags listed in score order."""
    tp = np.asarray(tp, dtype=bool)
    ctp = np.cumsum(tp)
    cfp = np.cumsum(~tp)
    if n_gt == 0:
        return PRCurve(np.zeros(len(tp)), np.zeros(len(tp)), 0.0, 0, tp)
    rec = ctp / n_gt
    prec = ctp / np.maximum(ctp + cfp, 1)
    return PRCurve(rec, prec, average_precision(rec, prec, mode), n_gt, tp)


def _eligible(gts):
    return [g for g in gts if not g.difficult]


def match(preds, gts, iou_threshold=IOU_THRESHOLD):
    """Greedy IoU matching.

    Returns ``(order, matched)`` where ``order`` lists prediction indices in
    score order and ``matched[k]`` is the index into ``gts`` claimed by
    prediction ``order[k]``, or None. Difficult ground truths never match.
    """
    by_image = {}
    for j, g in enumerate(gts):
        if not g.difficult:
            by_image.setdefault((g.image_id, g.cls), []).append(j)
    taken = set()
    order = score_order([p.score for p in preds])
    matched = []
    for i in order:
        p = preds[i]
        best, best_iou = None, iou_threshold
        for j in by_image.get((p.image_id, p.cls), ()):
            if j in taken:
                continue
            o = iou(p.bbox, gts[j].bbox)
            if o >= best_iou and (best is None or o > best_iou):
                best, best_iou = j, o
        if best is not None:
            taken.add(best)
        matched.append(best)
    return order, matched


def match_and_pr(preds, gts, is_tp=None, iou_threshold=IOU_THRESHOLD, ap_mode="allpoints") -> PRCurve:
    """AP with an optional extra true-positive predicate ``is_tp(pred, gt)``."""
    order, matched = match(preds, gts, iou_threshold)
    tp = [j is not None and (is_tp is None or bool(is_tp(preds[i], gts[j])))
          for i, j in zip(order, matched)]
    return pr_curve(tp, len(_eligible(gts)), ap_mode)


def _require_azimuth(preds):
    for p in preds:
        if p.azimuth is None:
            raise MissingAzimuth(f"prediction {p.id!r} on image {p.image_id!r} has no azimuth")


def viewpoint_bin(azimuth, V):
    """Bin index with bin ``k`` centered on ``k * 360 / V``."""
    width = 360.0 / V
    return int(((azimuth + width / 2.0) % 360.0) // width) % V


def avp_binned(preds, gts, V, **kw) -> PRCurve:
    _require_azimuth(preds)
    return match_and_pr(preds, gts, lambda p, g: viewpoint_bin(p.azimuth, V) == viewpoint_bin(g.azimuth, V), **kw)


def aavp(preds, gts, grid=None, angle_tol=ANGLE_TOL, iou_threshold=IOU_THRESHOLD, ap_mode="allpoints"):
    """AVP as a function of the allowed azimuth error ``D``, and its mean.

    Returns ``(grid, avp_values, aavp)``.
    """
    _require_azimuth(preds)
    grid = AAVP_GRID if grid is None else np.asarray(grid, dtype=float)
    if grid.size == 0 or grid.min() < 0 or grid.max() > 180 or np.any(np.diff(grid) < 0):
        raise ValueError("grid must be a sorted subset of [0, 180]")
    order, matched = match(preds, gts, iou_threshold)
    n_gt = len(_eligible(gts))
    err = np.array([azimuth_error(preds[i].azimuth, gts[j].azimuth) if j is not None else np.inf
                    for i, j in zip(order, matched)])
    values = np.array([pr_curve(err <= D + angle_tol, n_gt, ap_mode).ap for D in grid])
    return grid, values, float(values.mean())


@dataclass(frozen=True)
class GTKeypoint:
    image_id: str
    name: str
    x: float
    y: float
    object_height: float


def gt_keypoints(gts):
    """Visible keypoints of non-difficult objects, tagged with their box height."""
    out = []
    for g in gts:
        if g.difficult:
            continue
        for name, (x, y, visible) in g.keypoints.items():
            if visible:
                out.append(GTKeypoint(g.image_id, name, float(x), float(y), g.bbox.height))
    return out


def app(pred_keypoints, gt_kps, H=APP_HEIGHT, P=APP_DISTANCE, ap_mode="allpoints"):
    """Keypoint average precision per keypoint name.

    ``pred_keypoints`` carry ``image_id, name, x, y, score``. A prediction
    claims the nearest unclaimed ground-truth keypoint of its name in the same
    image whose allowed radius ``P * object_height / H`` covers it.
    Returns ``{name: PRCurve}`` over every name seen in either input.
    """
    if H <= 0 or P <= 0:
        raise ValueError("H and P must be positive")
    names = sorted({k.name for k in gt_kps} | {k.name for k in pred_keypoints})
    out = {}
    for name in names:
        preds = [k for k in pred_keypoints if k.name == name]
        gts = [k for k in gt_kps if k.name == name]
        by_image = {}
        for j, g in enumerate(gts):
            by_image.setdefault(g.image_id, []).append(j)
        taken, tp = set(), []
        for i in score_order([p.score for p in preds]):
            p = preds[i]
            best, best_d = None, math.inf
            for j in by_image.get(p.image_id, ()):
                if j in taken:
                    continue
                g = gts[j]
                d = math.hypot(p.x - g.x, p.y - g.y)
                if d <= P * g.object_height / H and d < best_d:
                    best, best_d = j, d
            if best is not None:
                taken.add(best)
            tp.append(best is not None)
        out[name] = pr_curve(tp, len(gts), ap_mode)
    return out


def box_pixels(bbox: BBox, width, height):
    """Slices of pixels whose centers fall inside ``bbox`` (clipped to the image)."""
    c0 = max(math.ceil(bbox.xmin), 0)
    c1 = min(math.floor(bbox.xmax), width - 1)
    r0 = max(math.ceil(bbox.ymin), 0)
    r1 = min(math.floor(bbox.ymax), height - 1)
    return slice(r0, r1 + 1), slice(c0, c1 + 1)


def seg_accuracy(pred_mask, gt_mask, gt_bbox: BBox) -> float:
    """Fraction of pixels inside the ground-truth box labeled like the ground truth."""
    pred_mask = np.asarray(pred_mask, dtype=bool)
    gt_mask = np.asarray(gt_mask, dtype=bool)
    if pred_mask.shape != gt_mask.shape:
        raise DimensionMismatch(f"mask shapes differ: {pred_mask.shape} vs {gt_mask.shape}")
    rows, cols = box_pixels(gt_bbox, gt_mask.shape[1], gt_mask.shape[0])
    p, g = pred_mask[rows, cols], gt_mask[rows, cols]
    if g.size == 0:
        raise ValueError("ground-truth box covers no pixel centers")
    return float(np.count_nonzero(p == g) / g.size)
