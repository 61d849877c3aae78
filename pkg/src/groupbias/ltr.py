"""Linear LambdaRank scorer for the general (feature-based) regime."""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import kernels
from .dataset import GroupedDataset
from .metrics import (
    dtr_ratio,
    eel_distance,
    group_restricted_ndcg,
    ndcg_at_k,
    sort_by_score,
    target_exposure,
)


@dataclass
class Scorer:
    weights: np.ndarray
    bias: float = 0.0

    def score(self, x) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) @ self.weights + self.bias

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for w in self.weights:
                f.write(f"{float(w)!r}\n")
            f.write(f"{float(self.bias)!r}\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Scorer":
        with open(path, encoding="utf-8") as f:
            values = [float(line) for line in f if line.strip()]
        if not values:
            raise ValueError(f"{path}: empty scorer file")
        return cls(np.array(values[:-1]), values[-1])


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 30
    ndcg_cutoff_for_deltas: int = 10
    seed: int = 0
    label_source: str = "true"
    batch_size: int = 16
    calibrate: bool = True

    def __post_init__(self):
        if self.learning_rate <= 0 or self.epochs < 0 or self.ndcg_cutoff_for_deltas < 1:
            raise ValueError(f"invalid training config {self}")
        if self.label_source not in ("true", "biased", "corrected"):
            raise ValueError(f"unknown label source {self.label_source!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")


def lambdarank_gradients(scores, labels, cutoff: int = 10, weighted: bool = True) -> np.ndarray:
    """Per-item LambdaRank ascent direction for one query.

    Every pair with ``label_i > label_j`` adds ``rho_ij * |dNDCG_ij|`` to
    item ``i`` and subtracts it from ``j``, where
    ``rho_ij = 1 / (1 + exp(s_i - s_j))``.  With ``weighted=False`` this is
    minus the gradient of the pairwise logistic loss.
    """
    scores = np.ascontiguousarray(scores, dtype=np.float64)
    labels = np.ascontiguousarray(labels, dtype=np.float64)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels must be aligned")
    qptr = np.array([0, len(scores)], dtype=np.int64)
    return kernels.lambda_gradients(scores, labels, qptr, int(cutoff), bool(weighted))


def _stack(dataset: GroupedDataset, labels: Sequence[np.ndarray]):
    if any(q.features is None for q in dataset):
        raise ValueError("training needs feature vectors")
    x = np.vstack([q.features for q in dataset])
    y = np.concatenate([np.asarray(lab, dtype=np.float64) for lab in labels])
    if len(y) != len(x):
        raise ValueError("labels do not match the number of items")
    sizes = np.array([len(q) for q in dataset], dtype=np.int64)
    return x, y, sizes


def mean_ndcg(scorer: Scorer, dataset: GroupedDataset, labels, k: int = 10) -> float:
    return float(
        np.mean([
            ndcg_at_k(sort_by_score(scorer.score(q.features), q.item_ids), lab, k)
            for q, lab in zip(dataset, labels)
        ])
    )


class TrainResult(NamedTuple):
    scorer: Scorer
    trace: list[float]


def train(dataset: GroupedDataset, labels: Sequence[np.ndarray], config: TrainConfig = TrainConfig()) -> TrainResult:
    """Mini-batch gradient ascent on LambdaRank from zero weights.

    Each epoch visits the queries in a seeded shuffled order; one update
    per batch of ``batch_size`` queries, averaged over the batch.  With
    ``calibrate`` the final scores are mapped onto the labels by a
    positive affine least-squares fit, which leaves rankings unchanged.
    """
    labels = list(labels)
    if len(labels) != len(dataset):
        raise ValueError("one label array per query is required")
    x, y, sizes = _stack(dataset, labels)
    dim = x.shape[1]
    starts = np.concatenate([[0], np.cumsum(sizes)])
    scorer = Scorer(np.zeros(dim), 0.0)
    rng = np.random.default_rng(config.seed)
    trace = []
    cutoff = config.ndcg_cutoff_for_deltas
    for _ in range(config.epochs):
        order = rng.permutation(len(dataset))
        for b in range(0, len(order), config.batch_size):
            batch = order[b : b + config.batch_size]
            idx = np.concatenate([np.arange(starts[i], starts[i + 1]) for i in batch])
            qptr = np.concatenate([[0], np.cumsum(sizes[batch])]).astype(np.int64)
            xb = x[idx]
            lam = kernels.lambda_gradients(
                np.ascontiguousarray(xb @ scorer.weights), np.ascontiguousarray(y[idx]), qptr, cutoff, True
            )
            scorer.weights += config.learning_rate * (xb.T @ lam) / len(batch)
        trace.append(mean_ndcg(scorer, dataset, labels, cutoff))

    if config.calibrate and config.epochs > 0:
        s = x @ scorer.weights
        if np.ptp(s) > 0:
            slope, intercept = np.polyfit(s, y, 1)
            if slope > 0:
                scorer = Scorer(scorer.weights * slope, float(intercept))
    return TrainResult(scorer, trace)


@dataclass
class EvalReport:
    ndcg: float
    ndcg_affected: float
    ndcg_nonaffected: float
    rho_dtr: float
    delta_eel: float
    per_query: dict[str, np.ndarray] = field(repr=False, default_factory=dict)


def evaluate(scorer: Scorer, test: GroupedDataset, true_labels=None, k: int = 10) -> EvalReport:
    """NDCG@k overall and per group, and fairness of the scorer's target.

    Scorer outputs, clipped to [0, 1], are the utilities of the predicted
    target exposure; it is compared with the target of the true labels.
    """
    if true_labels is None:
        true_labels = [q.relevance for q in test]
    cols = {name: [] for name in ("ndcg", "ndcg_affected", "ndcg_nonaffected", "rho_dtr", "delta_eel")}
    for q, truth in zip(test, true_labels):
        s = scorer.score(q.features)
        ranking = sort_by_score(s, q.item_ids)
        cols["ndcg"].append(ndcg_at_k(ranking, truth, k))
        cols["ndcg_affected"].append(group_restricted_ndcg(ranking, truth, q.affected, True, k))
        cols["ndcg_nonaffected"].append(group_restricted_ndcg(ranking, truth, q.affected, False, k))
        t_true = target_exposure(truth, q.affected)
        t_pred = target_exposure(np.clip(s, 0.0, 1.0), q.affected)
        try:
            cols["rho_dtr"].append(dtr_ratio(t_true, t_pred))
        except ValueError:
            cols["rho_dtr"].append(np.nan)
        cols["delta_eel"].append(eel_distance(t_true, t_pred).l2)
    per_query = {k_: np.array(v) for k_, v in cols.items()}
    means = {k_: float(np.nanmean(v)) if np.any(~np.isnan(v)) else float("nan") for k_, v in per_query.items()}
    return EvalReport(**means, per_query=per_query)
