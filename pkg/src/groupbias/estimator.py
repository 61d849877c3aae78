"""Group propensity estimation by KS-distance grid search.

The estimate is the grid point ``beta`` that makes the affected scores
divided by ``beta`` look most like the non-affected scores, as measured by
the two-sample Kolmogorov-Smirnov statistic.  Scores of several queries
can be pooled (amortized estimation) to fight sparsity.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Mapping, NamedTuple

import numpy as np

from . import kernels
from .biassim import AttractivenessTable
from .dataset import GroupedDataset

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Grid:
    lo: float = 0.05
    hi: float = 1.0
    step: float = 0.005

    def __post_init__(self):
        if not 0.0 < self.lo <= self.hi or self.step <= 0:
            raise ValueError(f"invalid grid {self}")

    def points(self) -> np.ndarray:
        k = int(round((self.hi - self.lo) / self.step)) + 1
        # rounding makes grid points equal to their decimal literals (0.8, not 0.8000000000000002)
        return np.round(self.lo + self.step * np.arange(k), 12)


def _sorted(x) -> np.ndarray:
    return np.ascontiguousarray(np.sort(np.asarray(x, dtype=np.float64)))


def ks_statistic(sample_a, sample_b) -> float:
    """Exact two-sample KS statistic ``sup_t |F_a(t) - F_b(t)|``."""
    a, b = _sorted(sample_a), _sorted(sample_b)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("KS statistic needs two non-empty samples")
    return kernels.ks_gap(a, b) / (len(a) * len(b))


@dataclass(frozen=True, eq=False)
class ScorePool:
    affected: np.ndarray
    nonaffected: np.ndarray
    source_queries: tuple[str, ...] = ()
    cluster_id: str | None = None

    @property
    def valid(self) -> bool:
        return len(self.affected) > 0 and len(self.nonaffected) > 0


@dataclass(frozen=True)
class PropensityEstimate:
    beta_hat: float
    ks_at_min: float
    grid: tuple[float, float, float]
    pool_sizes: tuple[int, int]
    cluster_id: str | None = None


def ks_profile(pool: ScorePool, grid: Grid = Grid()) -> tuple[np.ndarray, np.ndarray]:
    """KS distance between ``affected / beta`` and ``nonaffected`` per grid point.

    Computed as ``KS(affected, beta * nonaffected)``: multiplying both
    samples by ``beta`` is strictly increasing, so the statistic is the
    same, and ``beta * x`` stays sorted when ``x`` is.
    """
    if not pool.valid:
        raise ValueError(f"pool {pool.cluster_id!r} lacks one of the groups")
    a, b = _sorted(pool.affected), _sorted(pool.nonaffected)
    betas = grid.points()
    gaps = kernels.ks_gap_grid(a, b, np.ascontiguousarray(betas))
    return betas, gaps / (len(a) * len(b))


def estimate_beta(pool: ScorePool, grid: Grid = Grid()) -> PropensityEstimate:
    """Grid minimizer of the KS distance; ties go to the largest ``beta``."""
    if not pool.valid:
        raise ValueError(f"pool {pool.cluster_id!r} lacks one of the groups")
    a, b = _sorted(pool.affected), _sorted(pool.nonaffected)
    betas = grid.points()
    gaps = kernels.ks_gap_grid(a, b, np.ascontiguousarray(betas))
    # integer gaps make tie detection exact
    best = int(np.flatnonzero(gaps == gaps.min())[-1])
    return PropensityEstimate(
        beta_hat=float(betas[best]),
        ks_at_min=int(gaps[best]) / (len(a) * len(b)),
        grid=(grid.lo, grid.hi, grid.step),
        pool_sizes=(len(a), len(b)),
        cluster_id=pool.cluster_id,
    )


class PoolSet(NamedTuple):
    pools: list[ScorePool]
    skipped: dict[str, str]


def build_pools(
    grouped: GroupedDataset,
    attractiveness: AttractivenessTable | Iterable[np.ndarray],
    clustering: Mapping[str, str],
) -> PoolSet:
    """One pool per cluster with the attractiveness of all its items.

    Clusters keep the order in which they first appear among the queries.
    Clusters missing a group are skipped and reported in ``skipped``.
    """
    members: dict[str, list[int]] = {}
    for i, q in enumerate(grouped):
        try:
            cid = clustering[q.query_id]
        except KeyError:
            raise KeyError(f"query {q.query_id!r} has no cluster") from None
        members.setdefault(str(cid), []).append(i)

    values = list(attractiveness)
    pools, skipped = [], {}
    for cid, idx in members.items():
        aff = np.concatenate([values[i][grouped[i].affected] for i in idx])
        non = np.concatenate([values[i][~grouped[i].affected] for i in idx])
        pool = ScorePool(aff, non, tuple(grouped[i].query_id for i in idx), cid)
        if pool.valid:
            pools.append(pool)
        else:
            skipped[cid] = "cluster lacks one of the groups"
            logger.info("skipping cluster %s: a group is absent", cid)
    return PoolSet(pools, skipped)


class EstimateSet(NamedTuple):
    estimates: dict[str, PropensityEstimate]
    diagnostics: dict[str, str]


def estimate_all(pools: Iterable[ScorePool], grid: Grid = Grid(), jobs: int = 1) -> EstimateSet:
    """Independent estimate per pool; a failing pool does not stop the others."""
    pools = list(pools)
    if not pools:
        raise ValueError("no pools to estimate")

    def one(pool):
        try:
            return estimate_beta(pool, grid), None
        except ValueError as e:
            return None, str(e)

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as ex:
            results = list(ex.map(one, pools))
    else:
        results = [one(p) for p in pools]

    estimates, diagnostics = {}, {}
    for pool, (est, err) in zip(pools, results):
        key = pool.cluster_id
        if est is None:
            diagnostics[key] = err
        else:
            estimates[key] = est
    return EstimateSet(estimates, diagnostics)


def global_pool(grouped: GroupedDataset, attractiveness) -> ScorePool:
    pools = build_pools(grouped, attractiveness, {q.query_id: "__global__" for q in grouped})
    if not pools.pools:
        raise ValueError("dataset lacks one of the groups entirely")
    return pools.pools[0]


def write_estimates(estimates: Mapping[str, PropensityEstimate], stream) -> None:
    stream.write("cluster_id,beta_hat,ks_at_min,n_affected,n_nonaffected\n")
    for cid, e in estimates.items():
        stream.write(f"{cid},{e.beta_hat!r},{e.ks_at_min!r},{e.pool_sizes[0]},{e.pool_sizes[1]}\n")
