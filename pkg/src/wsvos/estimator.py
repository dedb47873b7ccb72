"""scikit-learn style wrapper around the teacher/student trainer."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import campost
from .config import config_from_dict
from .dataio import ClipDataset, default_class_names
from .encoder import VideoClip
from .trainer import VARIANT_ALIASES, VARIANTS, _sigmoid, predict, score_predictions, train, variant_outputs
from .validation import check_fraction, check_label_matrix, check_mask_array, check_video_array


class WeakVideoSegmenter(BaseEstimator):
    """Learn per-frame object masks from clip-level multi-labels.

    ``fit`` takes clips ``X`` of shape ``(n, D, H, W, ch)`` with values in
    [0, 1] and a 0/1 label matrix ``y`` of shape ``(n, N)``. After fitting,
    ``predict`` returns clip labels, ``transform`` the normalized CAMs at
    patch resolution and ``predict_masks`` binary masks at pixel resolution.

    Parameters map one to one onto the run configuration; ``variant`` picks
    which CAM the outputs come from (``"full"`` uses the student).
    """

    def __init__(self, patch_size=8, embed_dim=64, hidden_width=64, pooling="ranked_topk",
                 k1_fraction=0.10, k2_fraction=0.40, alpha=1.0, gate_mode="soft",
                 teacher_only_epochs=9, joint_epochs=30, lr=1e-4, batch_size=8,
                 backbone_mode="refine_by_teacher", structure="full", variant="full",
                 threshold=0.5, random_state=0):
        self.patch_size = patch_size
        self.embed_dim = embed_dim
        self.hidden_width = hidden_width
        self.pooling = pooling
        self.k1_fraction = k1_fraction
        self.k2_fraction = k2_fraction
        self.alpha = alpha
        self.gate_mode = gate_mode
        self.teacher_only_epochs = teacher_only_epochs
        self.joint_epochs = joint_epochs
        self.lr = lr
        self.batch_size = batch_size
        self.backbone_mode = backbone_mode
        self.structure = structure
        self.variant = variant
        self.threshold = threshold
        self.random_state = random_state

    def _run_config(self):
        w = self.hidden_width
        return config_from_dict({
            "encoder": {"patch_size": self.patch_size, "embed_dim": self.embed_dim, "seed": self.random_state},
            "teacher": {"hidden_width": w, "out_channels": w},
            "student": {"hidden_width": w, "out_channels": w},
            "pooling": {"mode": self.pooling, "k1_fraction": float(self.k1_fraction),
                        "k2_fraction": float(self.k2_fraction)},
            "distill": {"alpha": float(self.alpha), "gate_mode": self.gate_mode},
            "trainer": {"teacher_only_epochs": self.teacher_only_epochs, "joint_epochs": self.joint_epochs,
                        "lr": float(self.lr), "batch_size": self.batch_size,
                        "backbone_mode": self.backbone_mode, "structure": self.structure,
                        "seed": self.random_state},
            "post": {"threshold": float(self.threshold)},
        })

    def _variant(self):
        variant = VARIANT_ALIASES.get(self.variant, self.variant)
        if variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        return variant

    def fit(self, X, y):
        """Train on clips ``X`` and clip-level labels ``y``; no mask supervision is used."""
        check_fraction(self.threshold, "threshold", high_open=True)
        self._variant()
        cfg = self._run_config()
        X = check_video_array(X, cfg.encoder.patch_size)
        y = check_label_matrix(y, n_samples=len(X))
        self.config_ = cfg
        self.n_classes_ = y.shape[1]
        self.n_channels_ = X.shape[-1]
        self.clip_shape_ = X.shape[1:4]
        self.class_names_ = default_class_names(self.n_classes_)
        dataset = ClipDataset([VideoClip(x, lab, clip_id=str(i)) for i, (x, lab) in enumerate(zip(X, y))],
                              self.class_names_)
        self.checkpoint_, self.training_log_ = train(dataset, cfg)
        self.model_ = self.checkpoint_.build_model()
        return self

    def _check_input(self, X):
        check_is_fitted(self, "model_")
        X = check_video_array(X, self.config_.encoder.patch_size)
        if X.shape[-1] != self.n_channels_:
            raise ValueError(f"X has {X.shape[-1]} channels, the model was fitted on {self.n_channels_}")
        return X

    def _outputs(self, X):
        pred = predict(self.model_, X, self.config_, self.config_.trainer.batch_size)
        return pred, variant_outputs(pred, self._variant())

    def decision_function(self, X):
        """Clip-level logits ``(n, N)``."""
        _, (_, logits) = self._outputs(self._check_input(X))
        return logits

    def predict_proba(self, X):
        return _sigmoid(self.decision_function(X))

    def predict(self, X):
        """Clip-level 0/1 labels ``(n, N)``."""
        return (self.decision_function(X) > 0).astype(np.int64)

    def transform(self, X):
        """Normalized class activation maps ``(n, D, h, w, N)`` in [0, 1]."""
        _, (cams, _) = self._outputs(self._check_input(X))
        return cams

    def fit_transform(self, X, y):
        return self.fit(X, y).transform(X)

    def predict_masks(self, X):
        """Binary masks ``(n, D, H, W, N)`` at input resolution."""
        X = self._check_input(X)
        cams = self.transform(X)
        H, W = X.shape[2:4]
        return np.stack([campost.upsample_mask(campost.binarize(c, self.threshold), (H, W)) for c in cams])

    def score(self, X, y, masks=None):
        """Mean mask IoU when ``masks`` are given, otherwise video accuracy (both as fractions)."""
        X = self._check_input(X)
        y = check_label_matrix(y, n_samples=len(X), n_classes=self.n_classes_)
        if masks is not None:
            masks = check_mask_array(masks, X.shape, self.n_classes_)
        clips = [VideoClip(x, lab, clip_id=str(i), masks=None if masks is None else masks[i])
                 for i, (x, lab) in enumerate(zip(X, y))]
        pred = predict(self.model_, X, self.config_, self.config_.trainer.batch_size)
        report = score_predictions(pred, ClipDataset(clips, self.class_names_), self._variant(), self.config_)
        if masks is not None:
            return (report.mean_iou or 0.0) / 100.0
        return report.video_accuracy / 100.0
