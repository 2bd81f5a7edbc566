"""Input validation helpers for the estimator-facing API."""

from __future__ import annotations

import numpy as np

from lora_advsec.errors import ConfigError

# One record is 32 complex baseband samples stored as an I row over a Q row.
SAMPLE_SHAPE = (2, 32)


def check_iq_array(X, *, allow_single: bool = False) -> np.ndarray:
    """Coerce to a float64 batch of (2, 32) records and validate the shape."""
    X = np.asarray(X, dtype=np.float64)
    if allow_single and X.shape == SAMPLE_SHAPE:
        return X
    if X.ndim != 3 or X.shape[1:] != SAMPLE_SHAPE:
        raise ConfigError(
            f"expected I/Q records of shape (n, {SAMPLE_SHAPE[0]}, {SAMPLE_SHAPE[1]}), got {X.shape}"
        )
    if X.shape[0] == 0:
        raise ConfigError("empty I/Q batch")
    return X


def check_label_array(y, n: int) -> np.ndarray:
    """Coerce to an int64 vector of binary class labels of length n."""
    y = np.asarray(y)
    if y.ndim != 1 or len(y) != n:
        raise ConfigError(f"expected {n} labels, got shape {y.shape}")
    y = y.astype(np.int64)
    if not np.isin(y, (0, 1)).all():
        raise ConfigError("labels must be 0 or 1")
    return y
