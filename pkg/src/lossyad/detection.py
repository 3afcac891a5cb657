"""Sliding-window anomaly scoring.

Single-window (1-shot) path: channel-scaled absolute reconstruction error,
per-time maximum over channels, means over consecutive 10-sample subsets,
strict thresholding. Streaming (multi-shot) path: per-time votes from
stride-1 overlapping windows accumulate into a confidence score normalized
by the number of windows that can have covered each instant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError, DomainError

SUBSET_SIZE = 10
DEFAULT_DELTA = 1.0
DEFAULT_CS_LIMIT = 0.85


@dataclass(frozen=True)
class ThresholdConfig:
    delta: float = DEFAULT_DELTA
    cs_limit: float = DEFAULT_CS_LIMIT

    def __post_init__(self):
        if not (np.isfinite(self.delta) and self.delta > 0):
            raise ContractError("delta must be finite and positive")
        if not (0.0 < self.cs_limit <= 1.0):
            raise ContractError("confidence limit must be in (0, 1]")


def scaled_abs_error(x, x_hat, omega):
    """Per-element omega_c * |x - x_hat|, shape (C, T)."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    omega = np.asarray(omega, dtype=np.float64)
    if x.shape != x_hat.shape or x.ndim != 2:
        raise DimensionError(f"shapes disagree: {x.shape} vs {x_hat.shape}")
    if omega.shape != (x.shape[0],):
        raise DimensionError(f"omega has shape {omega.shape}, expected ({x.shape[0]},)")
    if np.any(omega <= 0):
        raise ContractError("omega must be positive")
    return omega[:, None] * np.abs(x - x_hat)


def max_abs_error(scaled_err):
    """Column-wise max over the channel axis, shape (T,)."""
    scaled_err = np.asarray(scaled_err, dtype=np.float64)
    if scaled_err.ndim != 2 or scaled_err.shape[0] < 1:
        raise DomainError("need at least one channel")
    return scaled_err.max(axis=0)


def subset_means(max_err, subset_size=SUBSET_SIZE):
    """Means over consecutive half-open blocks [k*s, (k+1)*s)."""
    max_err = np.asarray(max_err, dtype=np.float64)
    t_len = max_err.shape[0]
    if t_len % subset_size != 0:
        raise ContractError(
            f"window length {t_len} not divisible by subset size {subset_size}")
    return max_err.reshape(t_len // subset_size, subset_size).mean(axis=1)


def one_shot(means, delta):
    """Strict threshold per subset: 1 iff mean > delta."""
    if delta <= 0:
        raise ContractError("delta must be positive")
    return (np.asarray(means, dtype=np.float64) > delta).astype(np.int64)


def expand_votes(votes, subset_size=SUBSET_SIZE):
    """Per-subset decisions expanded to per-time votes (block-constant)."""
    return np.repeat(np.asarray(votes, dtype=np.int64), subset_size)


@dataclass
class DetectionSeries:
    """All per-window scores for one signal window."""

    scaled_err: np.ndarray   # (C, T)
    max_err: np.ndarray      # (T,)
    means: np.ndarray        # (T // subset_size,)
    votes: np.ndarray        # (T // subset_size,) binary
    per_time_votes: np.ndarray  # (T,) binary


def score_window(x, x_hat, omega, delta, subset_size=SUBSET_SIZE):
    """Run the full single-window pipeline."""
    ae = scaled_abs_error(x, x_hat, omega)
    mae = max_abs_error(ae)
    means = subset_means(mae, subset_size)
    votes = one_shot(means, delta)
    return DetectionSeries(scaled_err=ae, max_err=mae, means=means, votes=votes,
                           per_time_votes=expand_votes(votes, subset_size))


class ConfidenceStream:
    """Accumulates per-time votes from stride-1 overlapping windows.

    Window k (0-indexed) covers times k .. k+T-1. The confidence at time t
    is the vote sum over all windows covering t, scaled by 1/min(t+1, T):
    the number of windows that can ever cover that instant.
    """

    def __init__(self, window_length=200, limit=DEFAULT_CS_LIMIT):
        if window_length < 1:
            raise ContractError("window length must be positive")
        self.window_length = int(window_length)
        self.limit = float(limit)
        self._sums = np.zeros(0, dtype=np.int64)
        self.n_windows = 0

    def push(self, per_time_votes):
        votes = np.asarray(per_time_votes, dtype=np.int64)
        if votes.shape != (self.window_length,):
            raise DimensionError(
                f"votes have shape {votes.shape}, expected ({self.window_length},)")
        end = self.n_windows + self.window_length
        if end > self._sums.shape[0]:
            grown = np.zeros(max(end, 2 * self._sums.shape[0]), dtype=np.int64)
            grown[: self._sums.shape[0]] = self._sums
            self._sums = grown
        self._sums[self.n_windows: end] += votes
        self.n_windows += 1

    @property
    def n_times(self):
        if self.n_windows == 0:
            return 0
        return self.n_windows + self.window_length - 1

    def vote_count(self, t):
        """Number of pushed windows covering 0-indexed time t."""
        if not 0 <= t < self.n_times:
            raise ContractError(f"time {t} outside covered range")
        lo = max(0, t - self.window_length + 1)
        hi = min(t, self.n_windows - 1)
        return hi - lo + 1

    def confidence(self):
        """CS_t for every covered time, in [0, 1]."""
        n = self.n_times
        kappa = 1.0 / np.minimum(np.arange(1, n + 1), self.window_length)
        return kappa * self._sums[:n]

    def alarms(self):
        return multi_shot(self.confidence(), self.limit)


def multi_shot(confidence, limit=DEFAULT_CS_LIMIT):
    """Strict threshold on the confidence score: 1 iff CS > limit."""
    if not 0.0 < limit <= 1.0:
        raise ContractError("confidence limit must be in (0, 1]")
    return (np.asarray(confidence, dtype=np.float64) > limit).astype(np.int64)


@dataclass(frozen=True)
class F1Result:
    f1: float
    tp: int
    fp: int
    fn: int


def f1_score(predictions, labels):
    """Per-sample F1 = 2TP / (2TP + FP + FN); undefined counts are an error."""
    p = np.asarray(predictions, dtype=np.int64)
    l = np.asarray(labels, dtype=np.int64)
    if p.shape != l.shape:
        raise DimensionError(f"length mismatch: {p.shape} vs {l.shape}")
    tp = int(np.sum((p == 1) & (l == 1)))
    fp = int(np.sum((p == 1) & (l == 0)))
    fn = int(np.sum((p == 0) & (l == 1)))
    denom = 2 * tp + fp + fn
    if denom == 0:
        raise DomainError("F1 undefined: no positives in predictions or labels")
    return F1Result(f1=2.0 * tp / denom, tp=tp, fp=fp, fn=fn)


def default_delta_grid(start=0.2, stop=3.0, step=0.05):
    n = int(round((stop - start) / step)) + 1
    return start + step * np.arange(n)


def sweep_one_shot(window_means, window_labels, grid=None,
                   subset_size=SUBSET_SIZE):
    """Best single-window F1 over a threshold grid.

    window_means: list of per-window subset-mean vectors; window_labels:
    matching per-time label vectors. Predictions are expanded per time and
    counted per sample. Returns (best F1Result, best delta, curve) where
    curve maps each grid delta to its F1.
    """
    if grid is None:
        grid = default_delta_grid()
    means = np.concatenate([np.asarray(m, dtype=np.float64) for m in window_means])
    labels = np.concatenate([np.asarray(l, dtype=np.int64) for l in window_labels])
    if labels.shape[0] != means.shape[0] * subset_size:
        raise DimensionError("labels do not match the expanded prediction length")
    if labels.sum() == 0:
        raise ContractError("threshold sweep needs at least one labeled anomaly")
    best = None
    best_delta = None
    curve = []
    for delta in grid:
        preds = expand_votes(one_shot(means, float(delta)), subset_size)
        result = f1_score(preds, labels)
        curve.append((float(delta), result.f1))
        if best is None or result.f1 > best.f1:
            best, best_delta = result, float(delta)
    return best, best_delta, curve
