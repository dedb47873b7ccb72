"""Input checks shared by the estimator and the command line."""

from __future__ import annotations

import numpy as np


def check_video_array(X, patch_size=None, name="X") -> np.ndarray:
    """Validate a batch of clips ``(n, D, H, W, ch)`` and return it as float32.

    A 4-D array is read as single-channel clips. Values must be finite and
    lie in [0, 1]; when ``patch_size`` is given, H and W must be multiples of it.
    """
    X = np.asarray(X)
    if X.dtype == object or not np.issubdtype(X.dtype, np.number):
        raise TypeError(f"{name} must be numeric, got dtype {X.dtype}")
    if X.ndim == 4:
        X = X[..., None]
    if X.ndim != 5:
        raise ValueError(f"{name} must have shape (n, D, H, W, ch), got {X.shape}")
    if 0 in X.shape:
        raise ValueError(f"{name} has an empty axis: {X.shape}")
    X = X.astype(np.float32, copy=False)
    if not np.isfinite(X).all():
        raise ValueError(f"{name} contains NaN or infinite values")
    if X.min() < 0.0 or X.max() > 1.0:
        raise ValueError(f"{name} values must lie in [0, 1], got range [{X.min():.3g}, {X.max():.3g}]")
    if patch_size is not None:
        H, W = X.shape[2:4]
        if H % patch_size or W % patch_size:
            raise ValueError(f"frame size {H}x{W} is not divisible by patch size {patch_size}")
    return X


def check_label_matrix(y, n_samples=None, n_classes=None, name="y") -> np.ndarray:
    """Validate a 0/1 label matrix ``(n, N)`` and return it as int64."""
    y = np.asarray(y)
    if y.ndim == 1:
        y = y[:, None]
    if y.ndim != 2:
        raise ValueError(f"{name} must have shape (n, N), got {y.shape}")
    if not np.isin(y, (0, 1)).all():
        raise ValueError(f"{name} must contain only 0 and 1")
    if n_samples is not None and y.shape[0] != n_samples:
        raise ValueError(f"{name} has {y.shape[0]} rows but X has {n_samples} clips")
    if n_classes is not None and y.shape[1] != n_classes:
        raise ValueError(f"{name} has {y.shape[1]} classes, expected {n_classes}")
    return y.astype(np.int64)


def check_mask_array(masks, X_shape, n_classes, name="masks") -> np.ndarray:
    """Validate ground-truth masks ``(n, D, H, W, N)`` against the clip batch shape."""
    masks = np.asarray(masks)
    expected = tuple(X_shape[:4]) + (n_classes,)
    if masks.shape != expected:
        raise ValueError(f"{name} must have shape {expected}, got {masks.shape}")
    return masks.astype(bool)


def check_fraction(value, name, low_open=True, high_open=False) -> float:
    """Check that ``value`` is a number inside (0, 1] (bounds configurable)."""
    value = float(value)
    low_ok = value > 0 if low_open else value >= 0
    high_ok = value < 1 if high_open else value <= 1
    if not (low_ok and high_ok):
        lo = "(" if low_open else "["
        hi = ")" if high_open else "]"
        raise ValueError(f"{name} must lie in {lo}0, 1{hi}, got {value}")
    return value
