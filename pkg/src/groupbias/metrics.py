"""Ranking quality and merit-based fairness of exposure.

Rankings are integer index arrays (best first) into per-item arrays.
Exposure follows the position-based model with ``1 / log2(1 + rank)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

DEFAULT_A_STAR = 0.5


def sort_by_score(scores, item_ids: Sequence[str] | None = None) -> np.ndarray:
    """Indices by descending score; ties go to the smaller item id."""
    scores = np.asarray(scores, dtype=np.float64)
    if item_ids is None:
        keys = np.arange(len(scores))
    else:
        if len(item_ids) != len(scores):
            raise ValueError("one score per item is required")
        keys = np.asarray(item_ids, dtype=str)
    if np.any(np.isnan(scores)):
        raise ValueError("missing (NaN) score")
    return np.lexsort((keys, -scores))


def discounts(n: int, cutoff: int | None = None) -> np.ndarray:
    d = 1.0 / np.log2(1.0 + np.arange(1, n + 1))
    if cutoff is not None and cutoff < n:
        d[cutoff:] = 0.0
    return d


def dcg_at_k(ranking, gains, k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    g = np.asarray(gains, dtype=np.float64)[np.asarray(ranking)][:k]
    return float(np.dot(g, discounts(len(g))))


def ndcg_at_k(ranking, gains, k: int) -> float:
    """DCG over ideal DCG; 1.0 when every gain is zero."""
    gains = np.asarray(gains, dtype=np.float64)
    ideal = dcg_at_k(np.argsort(-gains, kind="stable"), gains, k)
    if ideal == 0.0:
        return 1.0
    return dcg_at_k(ranking, gains, k) / ideal


def group_restricted_ndcg(ranking, gains, affected, target_affected: bool, k: int) -> float:
    """NDCG counting only the gains of one group."""
    mask = np.asarray(affected, dtype=bool) == bool(target_affected)
    return ndcg_at_k(ranking, np.where(mask, gains, 0.0), k)


# ---------------------------------------------------------------------------
# Exposure targets


@dataclass(frozen=True)
class ExposureModel:
    kind: str = "pbm_log"
    cutoff: int | None = None

    def __post_init__(self):
        if self.kind != "pbm_log":
            raise ValueError(f"unsupported exposure model {self.kind!r}")
        if self.cutoff is not None and self.cutoff < 1:
            raise ValueError("cutoff must be positive")

    def weights(self, n: int) -> np.ndarray:
        return discounts(n, self.cutoff)


@dataclass(frozen=True, eq=False)
class TargetExposure:
    """Ideal expected exposure implied by a utility labeling.

    ``per_group`` sums the exposure of all items of each group;
    ``per_group_merit`` weights each item's exposure by its utility, which
    for binary utilities is the exposure of the group's relevant items.
    Both tuples are ordered (affected, nonaffected).
    """

    per_item: np.ndarray
    per_group: tuple[float, float]
    per_group_merit: tuple[float, float]
    utilities: np.ndarray


def discretize(utilities, a_star: float = DEFAULT_A_STAR) -> np.ndarray:
    """Binary utilities: 1 where ``utility >= a_star``."""
    if not 0.0 < a_star < 1.0:
        raise ValueError("a_star must lie strictly inside (0, 1)")
    return (np.asarray(utilities, dtype=np.float64) >= a_star).astype(np.float64)


def target_exposure(
    utilities,
    affected=None,
    model: ExposureModel = ExposureModel(),
    a_star: float | None = DEFAULT_A_STAR,
) -> TargetExposure:
    """Expected exposure when items are shuffled within equal-utility classes.

    With ``a_star`` set, utilities are first discretized, so the ``m``
    relevant items share the mean exposure of ranks ``1..m`` and the rest
    share ranks ``m+1..n``.  ``a_star=None`` keeps graded utilities and
    treats each distinct value as a class.
    """
    u = np.asarray(utilities, dtype=np.float64)
    if a_star is not None:
        u = discretize(u, a_star)
    n = len(u)
    w = model.weights(n)
    order = np.argsort(-u, kind="stable")
    sorted_u = u[order]
    per_item_sorted = np.empty(n)
    start = 0
    # one block per run of equal utilities
    for end in np.append(np.flatnonzero(np.diff(sorted_u)) + 1, n):
        per_item_sorted[start:end] = w[start:end].mean()
        start = end
    per_item = np.empty(n)
    per_item[order] = per_item_sorted

    if affected is None:
        per_group = (float("nan"), float("nan"))
        merit = (float("nan"), float("nan"))
    else:
        aff = np.asarray(affected, dtype=bool)
        per_group = (float(per_item[aff].sum()), float(per_item[~aff].sum()))
        merit = (float((per_item * u)[aff].sum()), float((per_item * u)[~aff].sum()))
    return TargetExposure(per_item, per_group, merit, u)


class EELDistance(NamedTuple):
    l2: float
    group_level: float


def eel_distance(target_true: TargetExposure, target_observed: TargetExposure) -> EELDistance:
    """Per-item l2 distance and ``2 * |dE_nonaffected|`` between two targets."""
    a, b = target_true.per_item, target_observed.per_item
    if a.shape != b.shape:
        raise ValueError("targets are over different item sets")
    l2 = float(np.linalg.norm(a - b))
    group = 2.0 * abs(target_true.per_group[1] - target_observed.per_group[1])
    return EELDistance(l2, group)


def dtr(group_exposures: tuple[float, float], group_utilities: tuple[float, float]) -> float:
    """Disparate treatment ratio ``(E_a / U_a) / (E_n / U_n)``."""
    e_a, e_n = group_exposures
    u_a, u_n = group_utilities
    if u_a <= 0 or u_n <= 0:
        raise ValueError("DTR undefined: a group has zero utility")
    if e_n == 0:
        raise ValueError("DTR undefined: non-affected group has zero exposure")
    return (e_a / u_a) / (e_n / u_n)


def dtr_ratio(target_true: TargetExposure, target_observed: TargetExposure) -> float:
    """Observed over true ratio of utility-weighted group exposures."""
    e_a, e_n = target_true.per_group_merit
    o_a, o_n = target_observed.per_group_merit
    if e_a == 0 or o_n == 0 or e_n == 0:
        raise ValueError("rho(DTR) undefined: zero group exposure")
    return (o_a / o_n) * (e_n / e_a)


class MetricRecord(NamedTuple):
    query_id: str
    metric: str
    value: float
    group_scope: str  # all, affected or nonaffected


def write_metric_report(records, stream) -> None:
    """CSV rows ``query_id,metric,value,group_scope``."""
    stream.write("query_id,metric,value,group_scope\n")
    for r in records:
        stream.write(f"{r.query_id},{r.metric},{float(r.value)!r},{r.group_scope}\n")
