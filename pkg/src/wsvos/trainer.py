"""Two-phase teacher/student training, checkpointing and evaluation."""

from __future__ import annotations

import copy
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch
from torch import nn

from . import campost
from .config import RunConfig, config_from_dict, config_to_dict
from .dataio import ClipDataset
from .distill import build_gate, gated_kd_loss, multilabel_soft_margin, normalize_cam_torch
from .encoder import make_toy_backbone
from .metrics import MetricAccumulator, classification_accuracy
from .student import StudentHead
from .teacher import TeacherHead

logger = logging.getLogger(__name__)

VARIANTS = ("teacher_only", "ts_fusion", "full")
VARIANT_ALIASES = {"t": "teacher_only", "fusion": "ts_fusion", "full": "full"}


class NonFiniteLossError(RuntimeError):
    def __init__(self, message, state):
        super().__init__(message)
        self.state = state


class CamNet(nn.Module):
    """Shared backbone feeding an MLP teacher and a temporal-conv student."""

    def __init__(self, cfg: RunConfig, num_classes: int, in_channels: int = 3):
        super().__init__()
        enc, tch, stu = cfg.encoder, cfg.teacher, cfg.student
        self.backbone = make_toy_backbone(enc.patch_size, enc.embed_dim, enc.depth, enc.seed, in_channels)
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(_derive_seed(cfg.trainer.seed, "heads"))
            self.teacher = TeacherHead(enc.embed_dim, num_classes, tch.hidden_width, tch.out_channels,
                                       dropout=tch.dropout, downsample_prob=tch.downsample_prob)
            self.student = StudentHead(enc.embed_dim, num_classes, stu.hidden_width, stu.out_channels,
                                       temporal_kernel=stu.temporal_kernel, spatial_kernel=stu.spatial_kernel,
                                       dropout=stu.dropout, padding_mode=stu.padding_mode)
        self.num_classes = num_classes
        self.in_channels = in_channels


def _derive_seed(seed: int, *keys) -> int:
    words = [seed] + [k if isinstance(k, int) else sum(ord(c) << (8 * (i % 4)) for i, c in enumerate(k))
                      for k in keys]
    return int(np.random.SeedSequence(words).generate_state(1, dtype=np.uint64)[0] >> 1)


def _generator(seed: int, *keys) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(_derive_seed(seed, *keys))
    return g


@dataclass
class Checkpoint:
    model_state: dict
    optimizer_state: Optional[dict]
    epoch: int  # epochs completed
    config: dict
    class_names: list
    in_channels: int
    rng_state: dict = field(default_factory=dict)
    log: list = field(default_factory=list)

    @property
    def run_config(self) -> RunConfig:
        return config_from_dict(self.config)

    @property
    def student_trained(self) -> bool:
        tr = self.run_config.trainer
        if tr.structure == "student_only":
            return self.epoch > 0
        if tr.structure == "teacher_only":
            return False
        return self.epoch > tr.teacher_only_epochs

    def build_model(self) -> CamNet:
        model = CamNet(self.run_config, len(self.class_names), self.in_channels)
        model.load_state_dict(self.model_state)
        return model


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(ckpt.__dict__, path)
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint {path} does not exist")
    data = torch.load(path, map_location="cpu", weights_only=False)
    return Checkpoint(**data)


def _batch(dataset, idx):
    frames = torch.from_numpy(np.stack([dataset[i].frames for i in idx]))
    labels = torch.from_numpy(np.stack([dataset[i].label for i in idx])).float()
    return frames, labels


def _make_optimizer(model: CamNet, cfg: RunConfig):
    params = list(model.teacher.parameters()) + list(model.student.parameters())
    if cfg.trainer.backbone_mode != "frozen":
        params += list(model.backbone.parameters())
    return torch.optim.Adam(params, lr=cfg.trainer.lr, weight_decay=cfg.trainer.weight_decay)


def _video_acc(logits, labels):
    return 100.0 * ((logits > 0) == labels.bool()).float().mean().item()


def train(dataset: ClipDataset, cfg: RunConfig, resume: Optional[Checkpoint] = None,
          stop_after: Optional[int] = None, log_path=None,
          on_epoch_end: Optional[Callable[[int, CamNet], None]] = None):
    """Train a CamNet on video-level labels.

    Phase 1 (the first ``teacher_only_epochs``) trains the teacher; phase 2
    adds the student, supervised by its own classification loss plus the
    gated distillation loss. The backbone only receives gradient from the
    branch named by ``backbone_mode``.

    Returns ``(checkpoint, log)`` where ``log`` holds one record per epoch.
    ``stop_after`` ends training after that many completed epochs so a run
    can later be continued with ``resume``.
    """
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    problems = cfg.validate()
    if problems:
        raise ValueError("invalid config: " + "; ".join(problems))
    for clip in dataset.clips:
        if not clip.label.any():
            raise ValueError(f"clip {clip.clip_id!r} has an all-zero label; remove it before training")

    tr = cfg.trainer
    in_channels = int(dataset[0].frames.shape[-1])
    model = CamNet(cfg, dataset.num_classes, in_channels)
    optimizer = _make_optimizer(model, cfg)
    start, log = 0, []
    if resume is not None:
        model.load_state_dict(resume.model_state)
        if resume.optimizer_state is not None:
            optimizer.load_state_dict(resume.optimizer_state)
        start, log = resume.epoch, list(resume.log)
    end = tr.total_epochs if stop_after is None else min(stop_after, tr.total_epochs)

    log_file = open(log_path, "a") if log_path is not None else None
    try:
        for epoch in range(start, end):
            record = _run_epoch(model, optimizer, dataset, cfg, epoch)
            log.append(record)
            logger.info("epoch %d %s", epoch, record)
            if log_file is not None:
                log_file.write(json.dumps(record) + "\n")
                log_file.flush()
            if on_epoch_end is not None:
                on_epoch_end(epoch, model)
    finally:
        if log_file is not None:
            log_file.close()

    ckpt = Checkpoint(
        model_state=copy.deepcopy(model.state_dict()),
        optimizer_state=copy.deepcopy(optimizer.state_dict()),
        epoch=max(end, start),
        config=config_to_dict(cfg),
        class_names=list(dataset.class_names),
        in_channels=in_channels,
        rng_state={"scheme": "per-epoch streams derived from trainer.seed", "seed": tr.seed},
        log=log,
    )
    return ckpt, log


def _run_epoch(model: CamNet, optimizer, dataset, cfg: RunConfig, epoch: int) -> dict:
    tr, mode = cfg.trainer, cfg.trainer.backbone_mode
    phase = 1 if epoch < tr.teacher_only_epochs else 2
    teacher_on = tr.structure != "student_only"
    student_on = tr.structure == "student_only" or (tr.structure == "full" and phase == 2)
    distill_on = tr.structure == "full" and student_on and cfg.distill.alpha > 0
    backbone_learns = (mode == "refine_by_teacher" and teacher_on) or (mode == "refine_by_student" and student_on)

    # teacher dropout only while the teacher trains alone
    model.teacher.dropout = cfg.teacher.dropout if phase == 1 else 0.0
    model.train()
    order = np.random.default_rng(_derive_seed(tr.seed, "shuffle", epoch)).permutation(len(dataset))
    gen_t = _generator(tr.seed, "teacher", epoch)
    gen_s = _generator(tr.seed, "student", epoch)

    sums = {"l_ml_teacher": 0.0, "l_ml_student": 0.0, "l_kd": 0.0}
    acc_t = acc_s = 0.0
    seen = 0
    for start in range(0, len(order), tr.batch_size):
        idx = order[start:start + tr.batch_size]
        frames, labels = _batch(dataset, idx)
        if backbone_learns:
            tokens = model.backbone(frames)
        else:
            with torch.no_grad():
                tokens = model.backbone(frames)
        loss = 0.0
        terms = {}
        if teacher_on:
            t_in = tokens if mode == "refine_by_teacher" else tokens.detach()
            feats_t, logits_t = model.teacher(t_in, cfg.pooling, gen_t)
            terms["l_ml_teacher"] = multilabel_soft_margin(logits_t, labels)
            loss = loss + terms["l_ml_teacher"]
            acc_t += _video_acc(logits_t.detach(), labels) * len(idx)
        if student_on:
            s_in = tokens if mode == "refine_by_student" else tokens.detach()
            feats_s, logits_s = model.student(s_in, cfg.pooling, gen_s)
            terms["l_ml_student"] = multilabel_soft_margin(logits_s, labels)
            loss = loss + terms["l_ml_student"]
            acc_s += _video_acc(logits_s.detach(), labels) * len(idx)
            if distill_on:
                cam_t = _teacher_target(model, t_in, feats_t, cfg)
                cam_s = model.student.cam(feats_s)
                if cfg.distill.cam_normalization == "clip_max":
                    cam_t, cam_s = normalize_cam_torch(cam_t), normalize_cam_torch(cam_s)
                gate = build_gate(cam_t, labels, cfg.distill.gate_mode)
                terms["l_kd"] = gated_kd_loss(cam_s, cam_t, gate)
                loss = loss + cfg.distill.alpha * terms["l_kd"]
        if not torch.isfinite(loss):
            state = {"epoch": epoch, "batch_start": start,
                     "clip_ids": [dataset[i].clip_id for i in idx],
                     "terms": {k: float(v.detach()) for k, v in terms.items()}}
            raise NonFiniteLossError(f"non-finite loss at epoch {epoch}: {state}", state)
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()
        for key, value in terms.items():
            sums[key] += value.item() * len(idx)
        seen += len(idx)

    record = {"epoch": epoch, "phase": phase}
    record["l_ml_teacher"] = sums["l_ml_teacher"] / seen if teacher_on else None
    record["l_ml_student"] = sums["l_ml_student"] / seen if student_on else None
    record["l_kd"] = sums["l_kd"] / seen if distill_on else None
    record["video_acc_teacher"] = acc_t / seen if teacher_on else None
    record["video_acc_student"] = acc_s / seen if student_on else None
    record["video_acc"] = record["video_acc_student"] if student_on else record["video_acc_teacher"]
    return record


@torch.no_grad()
def _teacher_target(model, tokens, feats_t, cfg):
    if cfg.distill.teacher_target == "train":
        return model.teacher.cam(feats_t).detach()
    model.teacher.eval()
    try:
        return model.teacher.cam(model.teacher.features(tokens.detach()))
    finally:
        model.teacher.train()


@torch.no_grad()
def predict(model: CamNet, frames: np.ndarray, cfg: RunConfig, batch_size: int = 8) -> dict:
    """Eval-mode forward passes over ``(clips, D, H, W, ch)`` frames.

    Returns raw teacher/student CAMs ``(clips, D, h, w, N)`` and logits ``(clips, N)``.
    """
    model.eval()
    out = {"teacher_cam": [], "student_cam": [], "teacher_logits": [], "student_logits": []}
    for start in range(0, len(frames), batch_size):
        x = torch.from_numpy(np.ascontiguousarray(frames[start:start + batch_size], dtype=np.float32))
        tokens = model.backbone(x)
        feats_t, logits_t = model.teacher(tokens, cfg.pooling)
        feats_s, logits_s = model.student(tokens, cfg.pooling)
        out["teacher_cam"].append(model.teacher.cam(feats_t).numpy())
        out["student_cam"].append(model.student.cam(feats_s).numpy())
        out["teacher_logits"].append(logits_t.numpy())
        out["student_logits"].append(logits_s.numpy())
    return {k: np.concatenate(v) for k, v in out.items()}


def variant_outputs(pred: dict, variant: str):
    """Normalized CAMs ``(clips, D, h, w, N)`` and clip logits for one output variant."""
    variant = VARIANT_ALIASES.get(variant, variant)
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    norm_t = np.stack([campost.normalize_cam(c) for c in pred["teacher_cam"]])
    if variant == "teacher_only":
        return norm_t, pred["teacher_logits"]
    norm_s = np.stack([campost.normalize_cam(c) for c in pred["student_cam"]])
    if variant == "full":
        return norm_s, pred["student_logits"]
    fused = np.stack([campost.fuse_cams(t, s) for t, s in zip(norm_t, norm_s)])
    prob = (_sigmoid(pred["teacher_logits"]) + _sigmoid(pred["student_logits"])) / 2.0
    prob = np.clip(prob, 1e-12, 1 - 1e-12)
    return fused, np.log(prob / (1.0 - prob))


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def evaluate(model_or_ckpt, dataset: ClipDataset, variant: str = "full",
             cfg: Optional[RunConfig] = None):
    """Score one output variant against the dataset's ground truth."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    if isinstance(model_or_ckpt, Checkpoint):
        cfg = cfg or model_or_ckpt.run_config
        model = model_or_ckpt.build_model()
    else:
        model = model_or_ckpt
        if cfg is None:
            raise ValueError("cfg is required when evaluating a bare model")
    variant = VARIANT_ALIASES.get(variant, variant)
    pred = predict(model, dataset.frames_array(), cfg, cfg.trainer.batch_size)
    return score_predictions(pred, dataset, variant, cfg)


def score_predictions(pred: dict, dataset: ClipDataset, variant: str, cfg: RunConfig):
    cams, logits = variant_outputs(pred, variant)
    P = cfg.encoder.patch_size
    acc = MetricAccumulator(dataset.class_names, cfg.metrics.hd_percentile, cfg.post.min_area * P * P)
    frame_scores, frame_labels = [], []
    for clip, cam in zip(dataset.clips, cams):
        H, W = clip.frame_size
        masks = campost.upsample_mask(campost.binarize(cam, cfg.post.threshold), (H, W))
        if clip.masks is not None or clip.boxes is not None:
            gt = clip.masks if clip.masks is not None else np.zeros_like(masks)
            for d in range(clip.num_frames):
                acc.add_frame(masks[d], gt[d], clip.boxes[d] if clip.boxes is not None else None)
        frame_scores.append(cam.max(axis=(1, 2)))
        frame_labels.append(clip.frame_labels)
    have_frames = all(fl is not None for fl in frame_labels)
    video_acc, frame_acc = classification_accuracy(
        logits, dataset.labels_array(),
        np.stack(frame_scores) if have_frames else None,
        np.stack(frame_labels) if have_frames else None,
        cfg.metrics.frame_threshold,
    )
    report = acc.report(variant, video_acc, frame_acc, num_clips=len(dataset))
    if frame_acc is None:
        report.notes.append("frame-level labels missing; frame accuracy unavailable")
    return report

