"""Evaluation harness: single-window threshold sweeps and streaming scoring."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .detection import (
    ConfidenceStream, default_delta_grid, f1_score, max_abs_error, multi_shot,
    one_shot, scaled_abs_error, score_window, subset_means, sweep_one_shot,
)
from .data import window, window_labels


def window_scores(model, series, stride=None):
    """Reconstruct every window of a labeled series and score it.

    Returns (means_list, labels_list, rows): per-window subset-mean vectors,
    aligned per-time labels, and flat per-subset rows
    (set_id, window_offset, subset_index, mean, n_anomalous_samples) with
    enough information to recount the per-sample F1 offline.
    """
    t_len = model.config.window_length
    stride = t_len if stride is None else stride
    batch = window(series, t_len, stride)
    labels = window_labels(series, batch, t_len)
    means_list, labels_list, rows = [], [], []
    for w, o, lab in zip(batch.windows, batch.offsets, labels):
        x_hat = model.forward_eval(w).data
        mae = max_abs_error(scaled_abs_error(w, x_hat, model.omega))
        means = subset_means(mae)
        means_list.append(means)
        labels_list.append(lab)
        sub_counts = lab.reshape(means.shape[0], -1).sum(axis=1)
        for k, (m, cnt) in enumerate(zip(means, sub_counts)):
            rows.append((series.set_id, o, k, float(m), int(cnt)))
    return means_list, labels_list, rows


@dataclass
class EvalReport:
    best_f1: float
    best_delta: float
    tp: int
    fp: int
    fn: int
    per_set: dict = field(default_factory=dict)
    curve: list = field(default_factory=list)

    def to_dict(self):
        return {
            "best_f1": self.best_f1,
            "best_delta": self.best_delta,
            "tp": self.tp, "fp": self.fp, "fn": self.fn,
            "per_set": self.per_set,
            "curve": [[d, f] for d, f in self.curve],
        }


def evaluate_one_shot(model, validation_sets, grid=None, stride=None):
    """Best single-window F1 over the threshold grid, pooled across sets."""
    if not validation_sets:
        raise ContractError("no validation sets")
    if any(s.labels.sum() == 0 for s in validation_sets):
        raise ContractError("every validation set must carry anomaly labels")
    grid = default_delta_grid() if grid is None else grid
    all_means, all_labels, all_rows = [], [], []
    per_set_scores = {}
    for s in validation_sets:
        means, labels, rows = window_scores(model, s, stride=stride)
        all_means.extend(means)
        all_labels.extend(labels)
        all_rows.extend(rows)
        per_set_scores[s.set_id] = (means, labels)
    best, best_delta, curve = sweep_one_shot(all_means, all_labels, grid)
    per_set = {}
    for sid, (means, labels) in per_set_scores.items():
        try:
            r, d, _ = sweep_one_shot(means, labels, grid)
            per_set[sid] = {"best_f1": r.f1, "best_delta": d}
        except ContractError:
            per_set[sid] = {"best_f1": None, "best_delta": None}
    report = EvalReport(best_f1=best.f1, best_delta=best_delta, tp=best.tp,
                        fp=best.fp, fn=best.fn, per_set=per_set, curve=curve)
    return report, all_rows


@dataclass
class StreamResult:
    confidence: np.ndarray    # CS per covered time
    alarms: np.ndarray        # multi-shot decision per covered time
    latest_max_err: np.ndarray  # per-time max error from the newest covering window
    labels: np.ndarray
    multi_shot_f1: float
    one_shot_f1: float


def stream_series(model, series, delta, cs_limit=0.85):
    """Stride-1 sliding-window scoring of one labeled series.

    Every window votes per time instant; votes accumulate into the
    confidence score, thresholded at cs_limit. Also reports the plain
    1-shot F1 of disjoint windows at the same delta, for comparison.
    """
    t_len = model.config.window_length
    if series.length < t_len:
        raise ContractError(
            f"series length {series.length} is shorter than the window {t_len}")
    stream = ConfidenceStream(window_length=t_len, limit=cs_limit)
    latest = np.zeros(series.length)
    for o in range(series.length - t_len + 1):
        w = series.channels[:, o: o + t_len]
        x_hat = model.forward_eval(w).data
        det = score_window(w, x_hat, model.omega, delta)
        stream.push(det.per_time_votes)
        latest[o: o + t_len] = det.max_err
    cs = stream.confidence()
    alarms = multi_shot(cs, cs_limit)
    labels = series.labels[: stream.n_times]
    ms = f1_score(alarms, labels)

    disjoint_votes = np.zeros(series.length, dtype=np.int64)
    for o in range(0, series.length - t_len + 1, t_len):
        w = series.channels[:, o: o + t_len]
        x_hat = model.forward_eval(w).data
        det = score_window(w, x_hat, model.omega, delta)
        disjoint_votes[o: o + t_len] = det.per_time_votes
    os_result = f1_score(disjoint_votes[: stream.n_times], labels)

    return StreamResult(confidence=cs, alarms=alarms, latest_max_err=latest,
                        labels=labels, multi_shot_f1=ms.f1,
                        one_shot_f1=os_result.f1)
