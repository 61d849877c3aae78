"""Multiplicative group-bias simulation.

Affected items are observed with attractiveness ``beta_q * relevance``,
non-affected items with their relevance.  ``beta_q`` is drawn once per
query from a (mixture of) normal distribution(s) and clamped.
"""
from __future__ import annotations

import csv
import os
import zlib
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .dataset import GroupedDataset

# stream ids keep the random sources of different components independent
STREAM_PROPENSITY = 1
STREAM_TIEBREAK = 2


def query_key(query_id) -> int:
    return zlib.crc32(str(query_id).encode("utf-8"))


def keyed_rng(seed: int, query_id, stream: int) -> np.random.Generator:
    """Generator that depends only on (seed, query_id, stream)."""
    return np.random.default_rng([int(seed), query_key(query_id), stream])


@dataclass(frozen=True)
class PropensityMode:
    mean: float
    weight: float = 1.0


@dataclass(frozen=True)
class BiasConfig:
    modes: tuple[PropensityMode, ...] = (PropensityMode(0.8),)
    sigma_beta: float = 0.1
    clamp: tuple[float, float] = (0.05, 1.0)
    tiebreak_epsilon: float = 0.0
    seed: int = 0
    beta_nonaffected: float = 1.0

    def __post_init__(self):
        modes = tuple(m if isinstance(m, PropensityMode) else PropensityMode(*m) for m in self.modes)
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "clamp", tuple(float(c) for c in self.clamp))
        if not modes:
            raise ValueError("at least one propensity mode is required")
        if not np.isclose(sum(m.weight for m in modes), 1.0):
            raise ValueError("mode weights must sum to 1")
        for m in modes:
            if not 0.0 < m.mean <= 1.0:
                raise ValueError(f"mode mean {m.mean} outside (0, 1]")
            if m.weight < 0:
                raise ValueError("mode weights must be non-negative")
        lo, hi = self.clamp
        if not 0.0 < lo <= hi <= 1.0:
            raise ValueError(f"clamp {self.clamp} must satisfy 0 < lo <= hi <= 1")
        if self.sigma_beta < 0 or self.tiebreak_epsilon < 0:
            raise ValueError("sigma_beta and tiebreak_epsilon must be non-negative")
        if self.beta_nonaffected != 1.0:
            raise ValueError("the non-affected propensity is fixed at 1")

    @classmethod
    def single(cls, beta: float, sigma_beta: float = 0.0, **kw) -> "BiasConfig":
        return cls(modes=(PropensityMode(beta, 1.0),), sigma_beta=sigma_beta, **kw)

    @classmethod
    def mixture(cls, means: Sequence[float], sigma_beta: float = 0.0, **kw) -> "BiasConfig":
        w = 1.0 / len(means)
        return cls(modes=tuple(PropensityMode(m, w) for m in means), sigma_beta=sigma_beta, **kw)

    @property
    def mean_beta(self) -> float:
        return float(sum(m.mean * m.weight for m in self.modes))

    @property
    def label(self) -> str:
        return "+".join(f"{m.mean:g}" for m in self.modes)


def draw_query_propensity(config: BiasConfig, query_id) -> float:
    rng = keyed_rng(config.seed, query_id, STREAM_PROPENSITY)
    modes = config.modes
    if len(modes) == 1:
        mode = modes[0]
    else:
        cum = np.cumsum([m.weight for m in modes])
        idx = min(int(np.searchsorted(cum, rng.random() * cum[-1], side="right")), len(modes) - 1)
        mode = modes[idx]
    beta = rng.normal(mode.mean, config.sigma_beta) if config.sigma_beta > 0 else mode.mean
    lo, hi = config.clamp
    return float(min(max(beta, lo), hi))


@dataclass(frozen=True, eq=False)
class AttractivenessTable:
    """Observed attractiveness per item, aligned with a dataset's queries."""

    query_ids: tuple[str, ...]
    item_ids: tuple[tuple[str, ...], ...]
    affected: tuple[np.ndarray, ...]
    values: tuple[np.ndarray, ...]
    betas: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return len(self.query_ids)

    def __iter__(self) -> Iterator[np.ndarray]:
        return iter(self.values)

    def __getitem__(self, query_id: str) -> np.ndarray:
        return self.values[self.query_ids.index(query_id)]

    def beta(self, query_id: str) -> float:
        return float(self.betas[self.query_ids.index(query_id)])

    def with_values(self, values) -> "AttractivenessTable":
        return AttractivenessTable(self.query_ids, self.item_ids, self.affected, tuple(values), self.betas)

    def as_dataset(self, grouped: GroupedDataset) -> GroupedDataset:
        """``grouped`` with relevance replaced by attractiveness."""
        return grouped.with_queries(q.with_relevance(v) for q, v in zip(grouped, self.values))

    def to_csv(self, path_or_stream) -> None:
        own = isinstance(path_or_stream, (str, os.PathLike))
        f = open(path_or_stream, "w", newline="", encoding="utf-8") if own else path_or_stream
        try:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["query_id", "item_id", "attractiveness", "beta_q"])
            for qid, ids, vals, beta in zip(self.query_ids, self.item_ids, self.values, self.betas):
                for item_id, v in zip(ids, vals):
                    w.writerow([qid, item_id, repr(float(v)), repr(float(beta))])
        finally:
            if own:
                f.close()


def simulate_attractiveness(grouped: GroupedDataset, config: BiasConfig) -> AttractivenessTable:
    if not grouped.grouped:
        raise ValueError("dataset has no group labels")
    betas, values = [], []
    for q in grouped:
        beta = draw_query_propensity(config, q.query_id)
        betas.append(beta)
        values.append(q.relevance * np.where(q.affected, beta, config.beta_nonaffected))
    table = AttractivenessTable(
        query_ids=tuple(q.query_id for q in grouped),
        item_ids=tuple(q.item_ids for q in grouped),
        affected=tuple(q.affected for q in grouped),
        values=tuple(values),
        betas=np.array(betas),
    )
    if config.tiebreak_epsilon > 0:
        table = add_tiebreak_noise(table, config.tiebreak_epsilon, seed=config.seed)
    return table


def _min_positive_gap(values: np.ndarray) -> float:
    u = np.unique(values)
    if len(u) < 2:
        return np.inf
    return float(np.diff(u).min())


def add_tiebreak_noise(table: AttractivenessTable, epsilon: float, seed: int = 0) -> AttractivenessTable:
    """Add Uniform(-e, e) noise per item and clamp to [0, 1].

    ``e`` is ``epsilon`` capped at half the smallest positive gap between
    distinct values of the same group within a query, so the order of
    distinct values inside a group never changes.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    if epsilon == 0:
        return table
    out = []
    for qid, vals, aff in zip(table.query_ids, table.values, table.affected):
        gap = min(_min_positive_gap(vals[aff]), _min_positive_gap(vals[~aff]))
        eps = min(epsilon, gap / 2)
        rng = keyed_rng(seed, qid, STREAM_TIEBREAK)
        out.append(np.clip(vals + rng.uniform(-eps, eps, size=len(vals)), 0.0, 1.0))
    return table.with_values(out)
