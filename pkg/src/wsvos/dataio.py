"""Synthetic transient-presence videos, clip splitting, presence statistics and dataset IO."""

from __future__ import annotations

import colorsys
import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .encoder import VideoClip

logger = logging.getLogger(__name__)

DATASET_SCHEMA_VERSION = 1
SHAPES = ("circle", "square", "triangle", "diamond", "ring", "cross", "hbar", "vbar")


@dataclass
class SyntheticConfig:
    num_classes: int = 3
    clip_length: int = 8
    frame_size: tuple = (64, 64)  # (H, W)
    fpc_range: tuple = (1.0, 1.0)
    objects_per_clip_range: tuple = (1, 2)
    motion: str = "random_walk"
    camera_jitter: bool = False
    noise_std: float = 0.03
    size_range: tuple = (12, 20)  # object extent in pixels
    step_std: float = 1.5  # random-walk step in pixels per frame
    distractors: int = 0  # unlabeled grey shapes per clip, always present
    multi_interval: bool = False
    seed: int = 0

    def validate(self) -> list[str]:
        problems = []
        lo, hi = self.fpc_range
        if not 0 < lo <= hi <= 1:
            problems.append(f"fpc_range must satisfy 0 < lo <= hi <= 1, got {tuple(self.fpc_range)}")
        if self.num_classes < 1:
            problems.append("num_classes must be >= 1")
        if self.num_classes > len(SHAPES) * 4:
            problems.append(f"num_classes must be <= {len(SHAPES) * 4} for distinct appearances")
        if self.clip_length < 1:
            problems.append("clip_length must be >= 1")
        omin, omax = self.objects_per_clip_range
        if not 1 <= omin <= omax:
            problems.append("objects_per_clip_range must satisfy 1 <= min <= max")
        if self.motion not in ("static", "random_walk"):
            problems.append(f"motion must be 'static' or 'random_walk', got {self.motion!r}")
        if self.noise_std < 0:
            problems.append("noise_std must be >= 0")
        smin, smax = self.size_range
        H, W = self.frame_size
        if not 2 <= smin <= smax < min(H, W):
            problems.append("size_range must satisfy 2 <= min <= max < frame side")
        return problems


@dataclass
class ClipDataset:
    clips: list
    class_names: list
    stats: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.clips)

    def __getitem__(self, idx):
        return self.clips[idx]

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def frames_array(self) -> np.ndarray:
        return np.stack([c.frames for c in self.clips])

    def labels_array(self) -> np.ndarray:
        return np.stack([c.label for c in self.clips])


def pixels_to_float(pixels: np.ndarray) -> np.ndarray:
    """8-bit pixels to float32 in [0, 1]; the single conversion used on every path."""
    return np.asarray(pixels, dtype=np.uint8).astype(np.float32) / np.float32(255.0)


def class_appearance(index: int, num_classes: int):
    """Shape name and RGB colour for a class; every class gets a distinct pair."""
    shape = SHAPES[index % len(SHAPES)]
    hue = index / max(num_classes, 1)
    rgb = np.array(colorsys.hsv_to_rgb(hue, 0.85, 0.95), dtype=np.float64)
    return shape, rgb


def shape_mask(shape: str, cy: float, cx: float, size: float, H: int, W: int) -> np.ndarray:
    yy, xx = np.mgrid[0:H, 0:W]
    dy, dx = yy + 0.5 - cy, xx + 0.5 - cx
    r = size / 2.0
    if shape == "circle":
        return dy ** 2 + dx ** 2 <= r ** 2
    if shape == "square":
        s = r * 0.85
        return (np.abs(dy) <= s) & (np.abs(dx) <= s)
    if shape == "triangle":
        # apex up; width grows linearly from apex to base
        t = (dy + r) / (2 * r)
        return (t >= 0) & (t <= 1) & (np.abs(dx) <= t * r)
    if shape == "diamond":
        return np.abs(dy) + np.abs(dx) <= r
    if shape == "ring":
        d2 = dy ** 2 + dx ** 2
        return (d2 <= r ** 2) & (d2 >= (0.5 * r) ** 2)
    if shape == "cross":
        w = r * 0.35
        return ((np.abs(dy) <= w) & (np.abs(dx) <= r)) | ((np.abs(dx) <= w) & (np.abs(dy) <= r))
    if shape == "hbar":
        return (np.abs(dy) <= r * 0.4) & (np.abs(dx) <= r)
    if shape == "vbar":
        return (np.abs(dx) <= r * 0.4) & (np.abs(dy) <= r)
    raise ValueError(f"unknown shape {shape!r}")


def _smooth_texture(rng, H, W, cells=6):
    coarse = rng.uniform(0.25, 0.55, size=(cells + 1, cells + 1, 3))
    img = Image.fromarray((coarse * 255).astype(np.uint8)).resize((W, H), Image.BILINEAR)
    return np.asarray(img, dtype=np.float64) / 255.0


def _presence_frames(rng, D, lo, hi, multi_interval):
    length = int(np.clip(np.rint(rng.uniform(lo, hi) * D), 1, D))
    present = np.zeros(D, dtype=bool)
    if multi_interval and 2 <= length < D:
        first = int(rng.integers(1, length))
        gap = int(rng.integers(1, D - length + 1))
        start = int(rng.integers(0, D - length - gap + 1))
        present[start:start + first] = True
        present[start + first + gap:start + length + gap] = True
    else:
        start = int(rng.integers(0, D - length + 1))
        present[start:start + length] = True
    return present


def _trajectory(rng, D, size, H, W, motion, step_std):
    margin = size / 2.0
    cy = rng.uniform(margin, H - margin)
    cx = rng.uniform(margin, W - margin)
    path = np.empty((D, 2))
    for d in range(D):
        path[d] = cy, cx
        if motion == "random_walk":
            cy = float(np.clip(cy + rng.normal(0, step_std), margin, H - margin))
            cx = float(np.clip(cx + rng.normal(0, step_std), margin, W - margin))
    return path


def render_clip(cfg: SyntheticConfig, rng: np.random.Generator, clip_id: str) -> VideoClip:
    H, W = cfg.frame_size
    D, N = cfg.clip_length, cfg.num_classes
    if cfg.camera_jitter:
        pad = max(4, D)
        texture = _smooth_texture(rng, H + 2 * pad, W + 2 * pad)
        offsets = np.cumsum(rng.integers(-1, 2, size=(D, 2)), axis=0).clip(-pad, pad) + pad
    else:
        base = rng.uniform(0.3, 0.5, size=3)
        texture = None

    omin, omax = cfg.objects_per_clip_range
    count = int(rng.integers(omin, min(omax, N) + 1))
    classes = rng.choice(N, size=count, replace=False)
    objects = []
    for _ in range(cfg.distractors):
        size = rng.uniform(*cfg.size_range)
        objects.append((-1, "circle" if rng.random() < 0.5 else "square", np.full(3, rng.uniform(0.6, 0.8)),
                        size, _trajectory(rng, D, size, H, W, cfg.motion, cfg.step_std), np.ones(D, bool)))
    for n in classes:
        shape, color = class_appearance(int(n), N)
        size = rng.uniform(*cfg.size_range)
        path = _trajectory(rng, D, size, H, W, cfg.motion, cfg.step_std)
        present = _presence_frames(rng, D, cfg.fpc_range[0], cfg.fpc_range[1], cfg.multi_interval)
        objects.append((int(n), shape, color, size, path, present))

    frames = np.empty((D, H, W, 3))
    masks = np.zeros((D, H, W, N), dtype=bool)
    for d in range(D):
        if texture is not None:
            oy, ox = offsets[d]
            img = texture[oy:oy + H, ox:ox + W].copy()
        else:
            img = np.broadcast_to(base, (H, W, 3)).copy()
        for n, shape, color, size, path, present in objects:
            if not present[d]:
                continue
            m = shape_mask(shape, path[d, 0], path[d, 1], size, H, W)
            img[m] = color
            masks[d][m] = False  # later objects occlude earlier ones
            if n >= 0:
                masks[d, :, :, n] |= m
        if cfg.noise_std > 0:
            img = img + rng.normal(0.0, cfg.noise_std, size=img.shape)
        frames[d] = img
    frames = pixels_to_float(np.rint(np.clip(frames, 0.0, 1.0) * 255.0).astype(np.uint8))
    label = masks.any(axis=(0, 1, 2)).astype(np.int64)
    return VideoClip(frames=frames, label=label, clip_id=clip_id, masks=masks)


def default_class_names(n: int) -> list[str]:
    names = []
    for i in range(n):
        shape, _ = class_appearance(i, n)
        names.append(f"{shape}_{i}")
    return names


def generate_synthetic(cfg: SyntheticConfig, count: int) -> ClipDataset:
    """Render ``count`` clips; each clip is a pure function of ``(cfg, clip index)``."""
    problems = cfg.validate()
    if problems:
        raise ValueError("invalid synthetic config: " + "; ".join(problems))
    seeds = np.random.SeedSequence(cfg.seed).spawn(count)
    clips = [render_clip(cfg, np.random.default_rng(s), f"clip_{i:05d}") for i, s in enumerate(seeds)]
    ds = ClipDataset(clips=clips, class_names=default_class_names(cfg.num_classes))
    ds.stats = compute_presence_stats(ds)
    return ds


def split_clips(frames: np.ndarray, frame_labels: np.ndarray, clip_len: int,
                masks: Optional[np.ndarray] = None, class_names=None,
                video_id: str = "video") -> ClipDataset:
    """Cut a long video into non-overlapping clips labelled by OR-merging frame labels.

    A trailing remainder shorter than ``clip_len`` is dropped, as are clips
    whose merged label is all zero.
    """
    if clip_len < 1:
        raise ValueError(f"clip_len must be >= 1, got {clip_len}")
    frame_labels = np.asarray(frame_labels, dtype=np.int64)
    total = frame_labels.shape[0]
    if frames is not None and len(frames) != total:
        raise ValueError(f"{len(frames)} frames but {total} frame label rows")
    n = frame_labels.shape[1]
    names = list(class_names) if class_names is not None else [f"class_{i}" for i in range(n)]
    clips = []
    for k in range(total // clip_len):
        window = slice(k * clip_len, (k + 1) * clip_len)
        fl = frame_labels[window]
        label = fl.max(axis=0)
        if not label.any():
            continue
        clips.append(VideoClip(
            frames=frames[window] if frames is not None else np.zeros((clip_len, 1, 1, 1), np.float32),
            label=label,
            clip_id=f"{video_id}_{k:05d}",
            masks=masks[window] if masks is not None else None,
            frame_labels=fl,
        ))
    dropped = total % clip_len
    if dropped:
        logger.info("dropped %d trailing frames of %s", dropped, video_id)
    ds = ClipDataset(clips=clips, class_names=names)
    ds.stats = compute_presence_stats(ds)
    return ds


def compute_presence_stats(ds: ClipDataset) -> dict:
    """Per class: clips containing it, frames showing it, and mean frames-per-clip (%)."""
    stats = {}
    for n, name in enumerate(ds.class_names):
        clips = frames = 0
        fractions = []
        for clip in ds.clips:
            if clip.frame_labels is None:
                raise ValueError(f"clip {clip.clip_id!r} has no frame-level labels")
            if not clip.label[n]:
                continue
            present = int(clip.frame_labels[:, n].sum())
            clips += 1
            frames += present
            fractions.append(present / clip.num_frames)
        stats[name] = {
            "clips": clips,
            "frames": frames,
            "fpc": 100.0 * float(np.mean(fractions)) if fractions else None,
        }
    return stats


def _png_u8(array):
    return Image.fromarray(np.asarray(array, dtype=np.uint8))


def save_dataset(ds: ClipDataset, root) -> Path:
    root = Path(root)
    (root / "clips").mkdir(parents=True, exist_ok=True)
    index = []
    for clip in ds.clips:
        cdir = root / "clips" / clip.clip_id
        (cdir / "frames").mkdir(parents=True, exist_ok=True)
        pixels = np.rint(clip.frames * 255.0).astype(np.uint8)
        for d, frame in enumerate(pixels):
            _png_u8(frame[..., 0] if frame.shape[-1] == 1 else frame).save(cdir / "frames" / f"{d}.png")
        (cdir / "label.txt").write_text("".join(str(int(v)) for v in clip.label) + "\n")
        if clip.masks is not None:
            (cdir / "masks").mkdir(exist_ok=True)
            for d in range(clip.num_frames):
                for n in range(clip.num_classes):
                    _png_u8(clip.masks[d, :, :, n] * 255).save(cdir / "masks" / f"{d}_{n}.png")
        if clip.frame_labels is not None:
            with open(cdir / "frame_labels.csv", "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(ds.class_names)
                writer.writerows(clip.frame_labels.tolist())
        if clip.boxes is not None:
            (cdir / "boxes.json").write_text(json.dumps(clip.boxes))
        index.append({"id": clip.clip_id, "num_frames": clip.num_frames,
                      "channels": int(clip.frames.shape[-1]),
                      "has_masks": clip.masks is not None})
    manifest = {
        "schema_version": DATASET_SCHEMA_VERSION,
        "class_names": list(ds.class_names),
        "clips": index,
        "stats": ds.stats,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return root


def load_dataset(root) -> ClipDataset:
    root = Path(root)
    path = root / "manifest.json"
    if not path.is_file():
        raise FileNotFoundError(f"no manifest.json in {root}")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"corrupt manifest {path}: {exc}") from exc
    version = manifest.get("schema_version")
    if version != DATASET_SCHEMA_VERSION:
        raise ValueError(f"unsupported dataset schema version {version!r} in {path}")
    for key in ("class_names", "clips"):
        if key not in manifest:
            raise ValueError(f"manifest {path} is missing {key!r}")
    names = manifest["class_names"]
    clips = []
    for entry in manifest["clips"]:
        cdir = root / "clips" / entry["id"]
        frames = np.stack([np.asarray(Image.open(cdir / "frames" / f"{d}.png"))
                           for d in range(entry["num_frames"])])
        if frames.ndim == 3:
            frames = frames[..., None]
        frames = pixels_to_float(frames)
        label = np.array([int(c) for c in (cdir / "label.txt").read_text().strip()])
        masks = None
        if entry.get("has_masks"):
            masks = np.stack([
                np.stack([np.asarray(Image.open(cdir / "masks" / f"{d}_{n}.png")) > 0
                          for n in range(len(names))], axis=-1)
                for d in range(entry["num_frames"])
            ])
        frame_labels = None
        if (cdir / "frame_labels.csv").is_file():
            with open(cdir / "frame_labels.csv", newline="") as fh:
                rows = list(csv.reader(fh))[1:]
            frame_labels = np.array(rows, dtype=np.int64)
        boxes = None
        if (cdir / "boxes.json").is_file():
            boxes = json.loads((cdir / "boxes.json").read_text())
        clips.append(VideoClip(frames=frames, label=label, clip_id=entry["id"], masks=masks,
                               boxes=boxes, frame_labels=frame_labels))
    return ClipDataset(clips=clips, class_names=names, stats=manifest.get("stats", {}))


def read_frame_labels_csv(path) -> tuple[np.ndarray, list[str]]:
    """Read a per-frame presence table; a leading ``frame`` column is ignored."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path} is empty")
    header, body = rows[0], rows[1:]
    skip = 1 if header and header[0].strip().lower() == "frame" else 0
    return np.array([r[skip:] for r in body], dtype=np.int64), [h.strip() for h in header[skip:]]


def read_frame_dir(path) -> np.ndarray:
    """Load a directory of frame images, ordered by the numeric part of their names."""
    files = sorted((p for p in Path(path).iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg")),
                   key=lambda p: (int("".join(ch for ch in p.stem if ch.isdigit()) or 0), p.name))
    if not files:
        raise FileNotFoundError(f"no frame images in {path}")
    return pixels_to_float(np.stack([np.asarray(Image.open(f).convert("RGB")) for f in files]))


def synthetic_config_dict(cfg: SyntheticConfig) -> dict:
    data = asdict(cfg)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in data.items()}
