"""Input validation helpers used by the estimator-facing APIs."""
from __future__ import annotations

import numpy as np


def check_random_state(seed) -> np.random.Generator:
    """Coerce ``seed`` (None, int, SeedSequence or Generator) to a Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def check_pixel_stack(X, name: str = "X") -> np.ndarray:
    """Validate a stack of tile pixel blocks, shape (n, h, w, c), finite float32."""
    X = np.asarray(X, dtype=np.float32)
    if X.ndim == 3:  # single-channel stacks may arrive as (n, h, w)
        X = X[..., None]
    if X.ndim != 4:
        raise ValueError(f"{name} must have shape (n, h, w, c), got {X.shape}")
    if X.shape[0] and not np.isfinite(X).all():
        raise ValueError(f"{name} contains non-finite pixel values")
    return X


def check_binary_labels(y, n: int | None = None, name: str = "y") -> np.ndarray:
    """Validate 0/1 labels, optionally checking the sample count."""
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {y.shape}")
    if n is not None and y.shape[0] != n:
        raise ValueError(f"{name} has {y.shape[0]} entries, expected {n}")
    vals = np.unique(y)
    if not np.isin(vals, (0, 1)).all():
        raise ValueError(f"{name} must contain only 0/1 labels, got values {vals}")
    return y.astype(np.int8)


def check_weights(weights, n: int, name: str = "weights", tol: float = 1e-9) -> np.ndarray:
    """Validate nonnegative weights of length ``n`` summing to 1."""
    w = np.asarray(weights, dtype=float)
    if w.shape != (n,):
        raise ValueError(f"{name} must have length {n}, got shape {w.shape}")
    if (w < 0).any():
        raise ValueError(f"{name} must be nonnegative")
    if abs(w.sum() - 1.0) > tol:
        raise ValueError(f"{name} must sum to 1, got {w.sum()!r}")
    return w
