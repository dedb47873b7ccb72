"""Segmentation, localization and classification metrics."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage

from .campost import extract_boxes

SCHEMA_VERSION = 1


class EmptyMaskError(ValueError):
    """Raised when a distance metric is undefined because a mask is empty."""


def _check_pair(pred, gt):
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    return pred, gt


def iou(pred, gt) -> float:
    pred, gt = _check_pair(pred, gt)
    union = np.count_nonzero(pred | gt)
    if union == 0:
        return 1.0
    return np.count_nonzero(pred & gt) / union


def dice(pred, gt) -> float:
    pred, gt = _check_pair(pred, gt)
    total = np.count_nonzero(pred) + np.count_nonzero(gt)
    if total == 0:
        return 1.0
    return 2.0 * np.count_nonzero(pred & gt) / total


def _directed_distances(src, dst):
    # distance from every foreground pixel of src to the nearest foreground pixel of dst
    return ndimage.distance_transform_edt(~dst)[src]


def hausdorff(pred, gt, percentile: float = 100.0) -> float:
    """Symmetric Hausdorff distance in pixels between two non-empty masks.

    ``percentile < 100`` replaces each directed maximum by that percentile.
    """
    pred, gt = _check_pair(pred, gt)
    if not pred.any() or not gt.any():
        raise EmptyMaskError("Hausdorff distance needs two non-empty masks")
    forward = _directed_distances(pred, gt)
    backward = _directed_distances(gt, pred)
    if percentile >= 100.0:
        return float(max(forward.max(), backward.max()))
    return float(max(np.percentile(forward, percentile), np.percentile(backward, percentile)))


def box_iou(a, b) -> float:
    """IoU of two half-open ``(x0, y0, x1, y1)`` boxes."""
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    inter = max(iw, 0) * max(ih, 0)
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    union = area_a + area_b - inter
    return inter / union if union > 0 else 0.0


def corloc(pred_boxes, gt_boxes, threshold: float = 0.5) -> bool:
    """True iff some predicted box overlaps some ground-truth box with IoU > threshold."""
    return any(box_iou(p, g) > threshold for p in pred_boxes for g in gt_boxes)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def classification_accuracy(logits, labels, frame_scores=None, frame_labels=None,
                            frame_threshold: float = 0.5):
    """Video- and frame-level accuracy in percent.

    ``logits`` and ``labels`` are ``(clips, N)``. ``frame_scores`` holds the
    per-frame spatial maxima of normalized CAMs, ``(clips, D, N)``; a class is
    predicted in a frame when its score exceeds ``frame_threshold`` and the
    clip-level prediction for that class is positive. Frame accuracy is
    ``None`` without frame-level ground truth.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    video_pred = _sigmoid(logits) > 0.5
    video_acc = 100.0 * np.mean(video_pred == labels)
    if frame_scores is None or frame_labels is None:
        return video_acc, None
    frame_pred = (np.asarray(frame_scores) > frame_threshold) & video_pred[:, None, :]
    frame_acc = 100.0 * np.mean(frame_pred == np.asarray(frame_labels).astype(bool))
    return video_acc, frame_acc


@dataclass
class MetricsReport:
    """Aggregated evaluation results; percentages in [0, 100], HD in pixels."""

    variant: str
    class_names: list
    iou: dict = field(default_factory=dict)
    dice: dict = field(default_factory=dict)
    hd: dict = field(default_factory=dict)
    corloc: dict = field(default_factory=dict)
    mean_iou: Optional[float] = None
    mean_dice: Optional[float] = None
    mean_hd: Optional[float] = None
    mean_corloc: Optional[float] = None
    video_accuracy: Optional[float] = None
    frame_accuracy: Optional[float] = None
    num_clips: int = 0
    num_frames: int = 0
    num_evaluated_pairs: int = 0
    num_hd_excluded: int = 0
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, **asdict(self)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "MetricsReport":
        data = dict(data)
        version = data.pop("schema_version", None)
        if version != SCHEMA_VERSION:
            raise ValueError(f"unsupported metrics schema version {version!r}")
        return cls(**data)

    def table(self) -> str:
        columns = [("Variant", self.variant), ("V-AC[%]", self.video_accuracy),
                   ("F-AC[%]", self.frame_accuracy), ("IoU[%]", self.mean_iou),
                   ("Dice[%]", self.mean_dice), ("HD[pixel]", self.mean_hd),
                   ("CorLoc[%]", self.mean_corloc)]
        cells = [v if isinstance(v, str) else ("n/a" if v is None else f"{v:.2f}") for _, v in columns]
        widths = [max(len(name), len(cell)) for (name, _), cell in zip(columns, cells)]
        header = " | ".join(name.rjust(w) for (name, _), w in zip(columns, widths))
        row = " | ".join(cell.rjust(w) for cell, w in zip(cells, widths))
        return "\n".join([header, "-" * len(header), row])


class MetricAccumulator:
    """Collects per-(class, frame) metrics for frames where the class is present."""

    def __init__(self, class_names, hd_percentile=100.0, min_area=1):
        self.class_names = list(class_names)
        self.hd_percentile = hd_percentile
        self.min_area = min_area
        n = len(self.class_names)
        self.values = {key: [[] for _ in range(n)] for key in ("iou", "dice", "hd", "corloc")}
        self.hd_excluded = 0
        self.frames = 0

    def add_frame(self, pred: np.ndarray, gt: np.ndarray, gt_boxes=None) -> None:
        """Score one ``(H, W, N)`` predicted mask against ground truth.

        ``gt_boxes[n]`` overrides boxes derived from the ground-truth mask.
        """
        self.frames += 1
        for n in range(len(self.class_names)):
            g = gt[..., n]
            boxes_n = gt_boxes[n] if gt_boxes is not None else None
            if not g.any() and not boxes_n:
                continue
            p = pred[..., n]
            if g.any():
                self.values["iou"][n].append(iou(p, g))
                self.values["dice"][n].append(dice(p, g))
                try:
                    self.values["hd"][n].append(hausdorff(p, g, self.hd_percentile))
                except EmptyMaskError:
                    self.hd_excluded += 1
            if boxes_n is None:
                boxes_n = extract_boxes(g)
            pred_boxes = extract_boxes(p, self.min_area)
            self.values["corloc"][n].append(float(corloc(pred_boxes, boxes_n)))

    def report(self, variant, video_accuracy=None, frame_accuracy=None, num_clips=0) -> MetricsReport:
        rep = MetricsReport(variant=variant, class_names=self.class_names,
                            video_accuracy=video_accuracy, frame_accuracy=frame_accuracy,
                            num_clips=num_clips, num_frames=self.frames,
                            num_hd_excluded=self.hd_excluded)
        scale = {"iou": 100.0, "dice": 100.0, "hd": 1.0, "corloc": 100.0}
        for key, per_class in self.values.items():
            out = getattr(rep, key)
            for name, vals in zip(self.class_names, per_class):
                if vals:
                    out[name] = scale[key] * float(np.mean(vals))
            pooled = [v for vals in per_class for v in vals]
            if pooled:
                setattr(rep, f"mean_{key}", scale[key] * float(np.mean(pooled)))
        rep.num_evaluated_pairs = sum(len(v) for v in self.values["iou"])
        if self.hd_excluded:
            rep.notes.append(f"{self.hd_excluded} class-frame pairs had an empty prediction; excluded from HD")
        if rep.num_evaluated_pairs == 0:
            rep.notes.append("no ground-truth masks available; segmentation metrics unavailable")
        return rep
