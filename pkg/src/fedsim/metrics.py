"""Evaluation metrics and the per-round report row."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .nn import Batch, ModelArch, forward

_EVAL_CHUNK = 512  # fixed so chunking never affects results


@dataclass
class RoundReport:
    """One metrics row per federated round."""

    round_index: int
    main_accuracy: float
    backdoor_accuracy: float
    backdoor_cummean: float
    adversary_count: int
    benign_norm_p50: float
    benign_norm_p90: float
    attacker_norm: float | None   # None when no adversary participated


def _predictions(params: np.ndarray, arch: ModelArch, data: Batch) -> np.ndarray:
    preds = []
    for start in range(0, len(data), _EVAL_CHUNK):
        logits = forward(params, arch, data.subset(slice(start, start + _EVAL_CHUNK)))
        # argmax breaks ties toward the lowest class index
        preds.append(logits.argmax(axis=1))
    return np.concatenate(preds)


def evaluate_main(params: np.ndarray, arch: ModelArch, holdout: Batch) -> float:
    """Fraction of holdout examples classified correctly."""
    if len(holdout) == 0:
        raise ValueError("holdout is empty")
    return float(np.mean(_predictions(params, arch, holdout) == holdout.labels))


def evaluate_backdoor(params: np.ndarray, arch: ModelArch, mal_eval: Batch) -> float:
    """Fraction of backdoor-eval inputs predicted as the adversary's target label.

    mal_eval already carries the target label on every example, so this is
    plain accuracy on the mislabeled set.
    """
    if len(mal_eval) == 0:
        raise ValueError("backdoor eval set is empty")
    return float(np.mean(_predictions(params, arch, mal_eval) == mal_eval.labels))


def cumulative_mean(series) -> np.ndarray:
    """out[i] = mean(series[0..i])."""
    arr = np.asarray(series, dtype=np.float64)
    if arr.size == 0:
        return arr
    return np.cumsum(arr) / np.arange(1, arr.size + 1)


def norm_percentiles(norms: list[float]) -> tuple[float, float]:
    """(p50, p90) of benign update norms; NaNs when no benign updates."""
    if not norms:
        return math.nan, math.nan
    arr = np.asarray(norms)
    return float(np.percentile(arr, 50)), float(np.percentile(arr, 90))
