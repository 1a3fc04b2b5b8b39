"""Input checks shared by the estimator and the CLI."""

from __future__ import annotations

import numpy as np


def check_images(X, multiple: int = 32) -> np.ndarray:
    """Coerce to a float32 ``(n, H, W)`` stack of square, finite images."""
    X = np.asarray(X)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3:
        raise ValueError(f"expected images of shape (n, H, W), got {X.shape}")
    if X.shape[0] == 0:
        raise ValueError("no images given")
    if X.shape[1] != X.shape[2]:
        raise ValueError(f"images must be square, got {X.shape[1]}x{X.shape[2]}")
    if X.shape[1] % multiple:
        raise ValueError(f"image size {X.shape[1]} must be a multiple of {multiple}")
    if not np.issubdtype(X.dtype, np.number):
        raise TypeError(f"images must be numeric, got dtype {X.dtype}")
    X = X.astype(np.float32, copy=False)
    if not np.all(np.isfinite(X)):
        raise ValueError("images contain non-finite values")
    return X


def check_labels(y, n: int, n_classes: int) -> list:
    """Coerce to one ``(k, 5)`` float array (``class cx cy w h``) per image."""
    if y is None:
        raise ValueError("labels are required")
    y = list(y)
    if len(y) != n:
        raise ValueError(f"{n} images but {len(y)} label sets")
    out = []
    for i, rows in enumerate(y):
        a = np.asarray(rows, dtype=np.float64).reshape(-1, 5)
        if len(a):
            cls = a[:, 0]
            if np.any(cls != np.round(cls)) or cls.min() < 0 or cls.max() >= n_classes:
                raise ValueError(f"labels of image {i}: class ids must be integers in [0, {n_classes})")
            if np.any(a[:, 3:] < 0) or not np.all(np.isfinite(a)):
                raise ValueError(f"labels of image {i}: widths and heights must be finite and non-negative")
        out.append(a)
    return out


def check_fraction(name: str, value: float, lo_open: bool = True) -> float:
    value = float(value)
    if not (0 < value < 1 if lo_open else 0 <= value < 1):
        raise ValueError(f"{name} must lie in (0, 1), got {value}")
    return value
