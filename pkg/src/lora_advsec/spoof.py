"""Density-based signal spoofing and distribution fidelity scoring.

The spoofing generator is a product-Gaussian kernel density estimate

    f(x) = (1/n) * sum_i prod_d N(x_d; x_id, h^2)

fitted on observed records flattened to vectors. Sampling is exact: pick a
stored record uniformly and add N(0, h^2) noise per dimension. Fidelity
between two record populations is the Jensen-Shannon divergence (base-2 log,
so it lives in [0, 1]) of their pooled (I, Q) constellation histograms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from lora_advsec.errors import ConfigError


class GaussianKde(BaseEstimator):
    """Kernel density estimate with one bandwidth shared by all dimensions.

    Parameters
    ----------
    bandwidth : float
        Kernel standard deviation h. The synthesis fidelity improves as h
        shrinks toward the measurement noise floor.
    """

    def __init__(self, bandwidth: float = 1e-3):
        self.bandwidth = bandwidth

    def fit(self, X, y=None):
        if self.bandwidth <= 0:
            raise ConfigError("bandwidth must be positive")
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or X.shape[0] == 0:
            raise ConfigError("fit expects a non-empty (n, d) matrix")
        self.points_ = X.copy()
        self.n_features_in_ = X.shape[1]
        return self

    def _prepare(self, X):
        check_is_fitted(self, "points_")
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None] if self.n_features_in_ == 1 else X[None, :]
        if X.shape[1] != self.n_features_in_:
            raise ConfigError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return X

    def score_samples(self, X) -> np.ndarray:
        """Log-density of each row, computed via a log-sum-exp over kernels."""
        X = self._prepare(X)
        h = self.bandwidth
        n, d = self.points_.shape
        # squared distances query x stored, scaled into the kernel exponent
        sq = ((X[:, None, :] - self.points_[None, :, :]) ** 2).sum(axis=2)
        expo = -sq / (2.0 * h * h)
        peak = expo.max(axis=1, keepdims=True)
        lse = peak[:, 0] + np.log(np.exp(expo - peak).sum(axis=1))
        return lse - math.log(n) - d * (math.log(h) + 0.5 * math.log(2.0 * math.pi))

    def pdf(self, X) -> np.ndarray:
        return np.exp(self.score_samples(X))

    def sample(self, n_samples: int, rng: np.random.Generator) -> np.ndarray:
        """Draw (n_samples, d): uniform choice of stored point plus kernel noise."""
        if n_samples < 1:
            raise ConfigError("n_samples must be >= 1")
        check_is_fitted(self, "points_")
        idx = rng.integers(0, len(self.points_), size=n_samples)
        noise = rng.normal(0.0, self.bandwidth, size=(n_samples, self.n_features_in_))
        return self.points_[idx] + noise


@dataclass(frozen=True)
class RogueTransform:
    """Deviation of a rogue transmitter from the device it imitates: a gain
    offset plus a static phase rotation drawn uniformly in +-phase_max_rad."""

    gain_offset_db: float = 0.0
    phase_max_rad: float = 0.0

    def __post_init__(self):
        if self.phase_max_rad < 0:
            raise ConfigError("phase_max_rad must be >= 0")


def rogue_transform(iq: np.ndarray, transform: RogueTransform, rng) -> np.ndarray:
    """Apply the rogue deviation to one (2, n) record."""
    iq = np.asarray(iq, dtype=np.float64)
    if iq.ndim != 2 or iq.shape[0] != 2:
        raise ConfigError(f"expected a (2, n) record, got {iq.shape}")
    theta = rng.uniform(-transform.phase_max_rad, transform.phase_max_rad)
    gain = 10.0 ** (transform.gain_offset_db / 20.0)
    i, q = iq
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    return gain * np.stack([i * cos_t - q * sin_t, i * sin_t + q * cos_t])


@dataclass(frozen=True)
class HistogramConfig:
    """Binning used by the constellation divergence estimate."""

    bins: tuple[int, int] = (64, 64)
    value_range: tuple | None = None  # ((i_min, i_max), (q_min, q_max)); None = joint data range
    epsilon: float = 1e-12

    def __post_init__(self):
        if min(self.bins) < 1:
            raise ConfigError("histogram bins must be >= 1")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")


def constellation_points(samples: np.ndarray) -> np.ndarray:
    """Pool (n, 2, t) records into (n*t, 2) points of (I, Q) pairs."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim == 2:
        samples = samples[None, ...]
    if samples.ndim != 3 or samples.shape[1] != 2:
        raise ConfigError(f"expected (n, 2, t) records, got {samples.shape}")
    return samples.transpose(0, 2, 1).reshape(-1, 2)


def _histogram(points, edges_i, edges_q, epsilon):
    counts, _, _ = np.histogram2d(points[:, 0], points[:, 1], bins=(edges_i, edges_q))
    smoothed = counts + epsilon
    return smoothed / smoothed.sum()


def jsd(p_samples, q_samples, config: HistogramConfig = HistogramConfig()) -> float:
    """Jensen-Shannon divergence between two constellations, base-2 log.

    Both populations are binned over the same grid spanning their joint value
    range, with epsilon smoothing, so identical populations score exactly 0
    and disjoint ones score 1 up to smoothing error.
    """
    p = constellation_points(p_samples)
    q = constellation_points(q_samples)
    if len(p) == 0 or len(q) == 0:
        raise ConfigError("cannot compare empty constellations")
    if config.value_range is not None:
        (i_lo, i_hi), (q_lo, q_hi) = config.value_range
    else:
        both = np.concatenate([p, q])
        i_lo, q_lo = both.min(axis=0)
        i_hi, q_hi = both.max(axis=0)
    if not (i_hi > i_lo and q_hi > q_lo):
        i_hi, q_hi = i_lo + 1.0, q_lo + 1.0
    edges_i = np.linspace(i_lo, i_hi, config.bins[0] + 1)
    edges_q = np.linspace(q_lo, q_hi, config.bins[1] + 1)
    hp = _histogram(p, edges_i, edges_q, config.epsilon)
    hq = _histogram(q, edges_i, edges_q, config.epsilon)
    mid = 0.5 * (hp + hq)

    def kl(a, b):
        return float((a * np.log2(a / b)).sum())

    return 0.5 * kl(hp, mid) + 0.5 * kl(hq, mid)
