"""Input checks shared by the estimators and evaluation code."""

import numpy as np

from .exceptions import ConfigurationError


def check_windows(X, window_len=None, name="X"):
    """Return ``X`` as a C-contiguous float32 matrix ``(n_samples, window_len)``."""
    X = np.asarray(X)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise ConfigurationError(f"{name} must be 2-D (n_samples, window_len), got {X.shape}")
    if X.shape[0] == 0:
        raise ConfigurationError(f"{name} has no samples")
    if window_len is not None and X.shape[1] != window_len:
        raise ConfigurationError(f"{name} windows have length {X.shape[1]}, expected {window_len}")
    X = np.ascontiguousarray(X, dtype=np.float32)
    if not np.all(np.isfinite(X)):
        raise ConfigurationError(f"{name} contains non-finite values")
    return X


def check_labels(y, n_outputs=None, n_samples=None, name="y"):
    """Return ``y`` as a uint8 multi-hot matrix ``(n_samples, n_outputs)``."""
    y = np.asarray(y)
    if y.ndim == 1:
        y = y[:, None]
    if y.ndim != 2:
        raise ConfigurationError(f"{name} must be 2-D (n_samples, n_devices), got {y.shape}")
    if n_samples is not None and y.shape[0] != n_samples:
        raise ConfigurationError(f"{name} has {y.shape[0]} rows, expected {n_samples}")
    if n_outputs is not None and y.shape[1] != n_outputs:
        raise ConfigurationError(f"{name} has {y.shape[1]} devices, expected {n_outputs}")
    if not np.isin(y, (0, 1)).all():
        raise ConfigurationError(f"{name} must be binary")
    return np.ascontiguousarray(y, dtype=np.uint8)


def check_same_shape(a, b, names=("preds", "labels")):
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ConfigurationError(f"{names[0]} shape {a.shape} != {names[1]} shape {b.shape}")
    if a.ndim != 2:
        raise ConfigurationError(f"{names[0]} must be 2-D (n_samples, n_devices)")
    return a, b
