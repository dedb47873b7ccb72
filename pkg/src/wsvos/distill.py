"""Training losses: multi-label classification, TPC gating and gated CAM distillation."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

GATE_MODES = ("soft", "ones")
CAM_NORMALIZATIONS = ("clip_max", "none")
TEACHER_TARGETS = ("clean", "train")


@dataclass
class DistillConfig:
    alpha: float = 1.0
    gate_mode: str = "soft"
    cam_normalization: str = "clip_max"
    teacher_target: str = "clean"  # clean: CAM from a deterministic teacher pass

    def validate(self) -> list[str]:
        problems = []
        if not (self.alpha >= 0 and self.alpha < float("inf")):
            problems.append(f"alpha must be finite and >= 0, got {self.alpha}")
        if self.gate_mode not in GATE_MODES:
            problems.append(f"gate_mode must be one of {GATE_MODES}, got {self.gate_mode!r}")
        if self.cam_normalization not in CAM_NORMALIZATIONS:
            problems.append(f"cam_normalization must be one of {CAM_NORMALIZATIONS}, "
                            f"got {self.cam_normalization!r}")
        if self.teacher_target not in TEACHER_TARGETS:
            problems.append(f"teacher_target must be one of {TEACHER_TARGETS}, got {self.teacher_target!r}")
        return problems


def multilabel_soft_margin(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean over classes (and batch) of the per-class logistic loss."""
    labels = labels.to(logits.dtype)
    return F.multilabel_soft_margin_loss(logits.reshape(-1, logits.shape[-1]),
                                         labels.reshape(-1, labels.shape[-1]))


def slice_prediction(teacher_cam: torch.Tensor) -> torch.Tensor:
    """Per-frame spatial maximum of a CAM: ``(..., D, h, w, N) -> (..., D, N)``."""
    return teacher_cam.amax(dim=(-3, -2))


def tpc_kernel(slice_pred: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Gate ``(..., D, N)`` keeping teacher slice scores of ground-truth classes only.

    The result is detached: it acts as a constant weight on the student loss.
    """
    labels = labels.to(slice_pred.dtype).unsqueeze(-2)
    return (slice_pred * labels).detach()


def gated_kd_loss(student_cam: torch.Tensor, teacher_cam: torch.Tensor,
                  gate: torch.Tensor) -> torch.Tensor:
    """Mean squared error between gated student and teacher CAMs.

    ``gate`` of shape ``(..., D, N)`` is broadcast over every spatial position.
    Only the student CAM receives gradient.
    """
    if student_cam.shape != teacher_cam.shape:
        raise ValueError(f"CAM shapes differ: {tuple(student_cam.shape)} vs {tuple(teacher_cam.shape)}")
    if gate.shape != student_cam.shape[:-3] + student_cam.shape[-1:]:
        raise ValueError(f"gate shape {tuple(gate.shape)} does not match CAM shape {tuple(student_cam.shape)}")
    g = gate.detach().unsqueeze(-2).unsqueeze(-2)
    return F.mse_loss(student_cam * g, teacher_cam.detach() * g)


def build_gate(teacher_cam: torch.Tensor, labels: torch.Tensor, gate_mode: str = "soft") -> torch.Tensor:
    """TPC gate for ``gate_mode='soft'``; an all-ones gate for the no-TPC ablation."""
    if gate_mode == "ones":
        return torch.ones(teacher_cam.shape[:-3] + teacher_cam.shape[-1:], dtype=teacher_cam.dtype)
    if gate_mode != "soft":
        raise ValueError(f"unknown gate_mode {gate_mode!r}")
    return tpc_kernel(slice_prediction(teacher_cam), labels)


def normalize_cam_torch(cam: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    """Divide each (clip, class) channel of a ``(B, D, h, w, N)`` CAM by its maximum.

    Differentiable, so the student is pushed towards the teacher's shape rather
    than its scale.
    """
    peak = cam.amax(dim=(-4, -3, -2), keepdim=True)
    return cam / (peak + eps)


def student_total_loss(student_logits: torch.Tensor, labels: torch.Tensor,
                       kd: torch.Tensor, cfg: DistillConfig) -> torch.Tensor:
    return multilabel_soft_margin(student_logits, labels) + cfg.alpha * kd
