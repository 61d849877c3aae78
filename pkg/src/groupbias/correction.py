"""Inverse-propensity correction of affected-group attractiveness."""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .biassim import AttractivenessTable
from .dataset import GroupedDataset
from .estimator import PropensityEstimate


@dataclass(frozen=True, eq=False)
class CorrectedLabels:
    query_ids: tuple[str, ...]
    item_ids: tuple[tuple[str, ...], ...]
    values: tuple[np.ndarray, ...]
    beta_used: np.ndarray
    clamped_count: int
    diagnostics: tuple[str, ...] = ()

    def __iter__(self):
        return iter(self.values)

    def __len__(self) -> int:
        return len(self.values)

    def as_dataset(self, grouped: GroupedDataset) -> GroupedDataset:
        return grouped.with_queries(q.with_relevance(v) for q, v in zip(grouped, self.values))

    def to_csv(self, path_or_stream, betas=None) -> None:
        """AttractivenessTable layout plus a ``beta_used`` column."""
        own = isinstance(path_or_stream, (str, os.PathLike))
        f = open(path_or_stream, "w", newline="", encoding="utf-8") if own else path_or_stream
        if betas is None:
            betas = np.full(len(self.values), np.nan)
        try:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["query_id", "item_id", "attractiveness", "beta_q", "beta_used"])
            for qid, ids, vals, bq, bu in zip(self.query_ids, self.item_ids, self.values, betas, self.beta_used):
                for item_id, v in zip(ids, vals):
                    w.writerow([qid, item_id, repr(float(v)), repr(float(bq)), repr(float(bu))])
        finally:
            if own:
                f.close()


def _beta(e) -> float:
    return float(e.beta_hat if isinstance(e, PropensityEstimate) else e)


def correct_scores(
    attractiveness: AttractivenessTable,
    grouped: GroupedDataset,
    estimates: Mapping[str, PropensityEstimate | float],
    clustering: Mapping[str, str],
    fallback: PropensityEstimate | float | None = None,
) -> CorrectedLabels:
    """Divide affected scores by their cluster's estimate and clamp at 1.

    Queries whose cluster has no estimate use ``fallback`` (normally the
    global pooled estimate) and are listed in ``diagnostics``; without a
    fallback they raise.
    """
    values, used, notes, missing = [], [], [], []
    clamped = 0
    for q, a in zip(grouped, attractiveness):
        cid = clustering.get(q.query_id)
        est = estimates.get(cid) if cid is not None else None
        if est is None:
            if fallback is None:
                missing.append(q.query_id)
                continue
            est = fallback
            notes.append(f"query {q.query_id}: cluster {cid!r} has no estimate, used fallback")
        beta = _beta(est)
        if beta <= 0:
            raise ValueError(f"non-positive propensity {beta} for query {q.query_id}")
        raw = np.where(q.affected, a / beta, a)
        clamped += int(np.count_nonzero(raw > 1.0))
        values.append(np.minimum(raw, 1.0))
        used.append(beta)
    if missing:
        raise KeyError(f"no estimate or fallback for queries: {', '.join(missing)}")
    return CorrectedLabels(
        query_ids=tuple(q.query_id for q in grouped),
        item_ids=tuple(q.item_ids for q in grouped),
        values=tuple(values),
        beta_used=np.array(used),
        clamped_count=clamped,
        diagnostics=tuple(notes),
    )


def overcorrection_report(corrected, grouped_truth: GroupedDataset) -> dict[str, float]:
    """Mean of ``corrected - true relevance`` per group.

    A positive affected-group mean means the propensity was under-estimated.
    """
    diffs_a, diffs_n = [], []
    for q, c in zip(grouped_truth, corrected):
        d = np.asarray(c) - q.relevance
        diffs_a.append(d[q.affected])
        diffs_n.append(d[~q.affected])
    da, dn = np.concatenate(diffs_a), np.concatenate(diffs_n)
    return {
        "affected": float(da.mean()) if len(da) else float("nan"),
        "nonaffected": float(dn.mean()) if len(dn) else float("nan"),
    }
