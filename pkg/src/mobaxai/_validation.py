"""Small input-validation helpers shared by the estimators."""

import numpy as np


def check_windows(X, d_in=None):
    """Coerce to a float64 (n, l, D) array and optionally check the width."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 3:
        raise ValueError(f"expected windows shaped (n, l, D), got {X.shape}")
    if d_in is not None and X.shape[2] != d_in:
        raise ValueError(f"window width {X.shape[2]} does not match schema D_in {d_in}")
    return X


def check_labels(y, n_classes=None):
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError(f"expected a 1-D label array, got shape {y.shape}")
    if y.size and (np.any(y != np.round(y)) or y.min() < 0):
        raise ValueError("labels must be non-negative integers")
    y = y.astype(np.int64)
    if n_classes is not None and y.size and y.max() >= n_classes:
        raise ValueError(f"label {int(y.max())} >= class count {n_classes}")
    return y
