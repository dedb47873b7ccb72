"""Turning raw class activation maps into masks and boxes.

All functions take a single clip's CAM laid out as ``(D, h, w, N)``.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


def normalize_cam(cam: np.ndarray) -> np.ndarray:
    """ReLU, then divide each class channel by its spatio-temporal maximum.

    Channels without a positive entry come back as zeros.
    """
    cam = np.maximum(np.asarray(cam, dtype=np.float64), 0.0)
    peak = cam.reshape(-1, cam.shape[-1]).max(axis=0)
    scale = np.where(peak > 0, peak, 1.0)
    return cam / scale


def fuse_cams(teacher_cam: np.ndarray, student_cam: np.ndarray) -> np.ndarray:
    """Average two normalized CAMs and renormalize per class."""
    if teacher_cam.shape != student_cam.shape:
        raise ValueError(f"CAM shapes differ: {teacher_cam.shape} vs {student_cam.shape}")
    return normalize_cam((np.asarray(teacher_cam) + np.asarray(student_cam)) / 2.0)


def binarize(cam: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    return np.asarray(cam) > threshold


def upsample_mask(mask: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbour block upsampling of ``(D, h, w, N)`` to ``(D, H, W, N)``."""
    H, W = target
    h, w = mask.shape[1:3]
    if H % h or W % w:
        raise ValueError(f"target {H}x{W} is not a multiple of mask grid {h}x{w}")
    return np.repeat(np.repeat(mask, H // h, axis=1), W // w, axis=2)


def downsample_mask(mask: np.ndarray, grid: tuple[int, int]) -> np.ndarray:
    """Block-majority downsampling, the inverse of :func:`upsample_mask` on block-constant masks."""
    h, w = grid
    D, H, W, N = mask.shape
    if H % h or W % w:
        raise ValueError(f"mask {H}x{W} is not a multiple of grid {h}x{w}")
    blocks = mask.reshape(D, h, H // h, w, W // w, N)
    return blocks.mean(axis=(2, 4)) > 0.5


def extract_boxes(mask: np.ndarray, min_area: int = 1) -> list[tuple[int, int, int, int]]:
    """Tight ``(x0, y0, x1, y1)`` boxes, half-open, of 8-connected components.

    ``mask`` is a single ``(H, W)`` frame; x indexes columns. Components with
    fewer than ``min_area`` pixels are dropped.
    """
    mask = np.asarray(mask, dtype=bool)
    labels, count = ndimage.label(mask, structure=EIGHT_CONNECTED)
    if count == 0:
        return []
    areas = ndimage.sum_labels(mask, labels, index=np.arange(1, count + 1))
    boxes = []
    for idx, sl in enumerate(ndimage.find_objects(labels)):
        if areas[idx] < min_area:
            continue
        rows, cols = sl
        boxes.append((cols.start, rows.start, cols.stop, rows.stop))
    return boxes


def export_masks(masks: np.ndarray, out_dir, class_names, clip_id="clip") -> Path:
    """Write one PNG per frame with class ``n`` stored in bit ``n``.

    A ``manifest.json`` beside the images maps bit index to class name.
    """
    masks = np.asarray(masks, dtype=bool)
    n = masks.shape[-1]
    if n > 16:
        raise ValueError("bit-plane export supports at most 16 classes")
    out = Path(out_dir) / clip_id
    out.mkdir(parents=True, exist_ok=True)
    dtype = np.uint8 if n <= 8 else np.uint16
    weights = (1 << np.arange(n)).astype(dtype)
    planes = (masks.astype(dtype) * weights).sum(axis=-1, dtype=dtype)
    for d, frame in enumerate(planes):
        Image.fromarray(frame).save(out / f"{d:05d}.png")
    manifest = {
        "clip_id": clip_id,
        "num_frames": int(masks.shape[0]),
        "bit_depth": 8 if n <= 8 else 16,
        "classes": {str(i): name for i, name in enumerate(class_names)},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return out


def read_exported_masks(clip_dir) -> np.ndarray:
    clip_dir = Path(clip_dir)
    manifest = json.loads((clip_dir / "manifest.json").read_text())
    n = len(manifest["classes"])
    frames = [np.asarray(Image.open(clip_dir / f"{d:05d}.png")) for d in range(manifest["num_frames"])]
    planes = np.stack(frames).astype(np.int64)
    return ((planes[..., None] >> np.arange(n)) & 1).astype(bool)
