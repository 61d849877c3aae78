"""Closed-form predictions for binary relevance and uniform scores.

``nu`` is the fraction of affected relevant items whose biased
attractiveness still beats the threshold ``a*``; DCG, the EEL target
shift and rho(DTR) are all expressed through it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .biassim import AttractivenessTable
from .dataset import GroupedDataset
from .metrics import discounts


@dataclass(frozen=True)
class GroupCounts:
    n_a: int
    n_n: int
    n_plus_a: int
    n_plus_n: int

    def __post_init__(self):
        if min(self.n_a, self.n_n, self.n_plus_a, self.n_plus_n) < 0:
            raise ValueError("counts must be non-negative")
        if self.n_plus_a > self.n_a or self.n_plus_n > self.n_n:
            raise ValueError("more relevant items than items in a group")
        if self.n < 1:
            raise ValueError("need at least one item")

    @property
    def n(self) -> int:
        return self.n_a + self.n_n


def expected_nu(beta: float) -> float:
    """``E[nu] = max(2 - 1/beta, 0)`` for uniform scores."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    return max(2.0 - 1.0 / beta, 0.0)


class NuResult(NamedTuple):
    per_query: np.ndarray  # NaN where undefined
    mean: float
    excluded: int


PER_QUERY_MIN = "per_query_min"


def empirical_nu(
    attractiveness: AttractivenessTable,
    grouped: GroupedDataset,
    a_star: float | str | None = None,
    relevance_threshold: float = 0.5,
) -> NuResult:
    """Fraction of affected relevant items with attractiveness above ``a*``.

    Items are relevant when ``relevance >= relevance_threshold``.  By
    default ``a*`` is that same threshold, so an unbiased table gives
    ``nu = 1``.  ``a_star=PER_QUERY_MIN`` uses the minimum attractiveness
    of each query's non-affected relevant items instead, and a float is
    used as is for every query.  Queries without affected relevant items
    (or, for the per-query threshold, without non-affected relevant
    items) are excluded.
    """
    if a_star is None:
        a_star = relevance_threshold
    elif isinstance(a_star, str) and a_star != PER_QUERY_MIN:
        raise ValueError(f"unknown a_star rule {a_star!r}")
    out = np.full(len(grouped), np.nan)
    for i, (q, a) in enumerate(zip(grouped, attractiveness)):
        rel = q.relevance >= relevance_threshold
        aff_rel = rel & q.affected
        if not aff_rel.any():
            continue
        if a_star == PER_QUERY_MIN:
            non_rel = rel & ~q.affected
            if not non_rel.any():
                continue
            threshold = a[non_rel].min()
        else:
            threshold = a_star
        # an item exactly at the threshold still counts as relevant
        out[i] = np.count_nonzero(a[aff_rel] >= threshold) / np.count_nonzero(aff_rel)
    defined = ~np.isnan(out)
    mean = float(out[defined].mean()) if defined.any() else float("nan")
    return NuResult(out, mean, int((~defined).sum()))


def xi_uniform(nu: float, counts: GroupCounts) -> float:
    num = (1.0 - nu) * counts.n_plus_a
    den = counts.n_n - counts.n_plus_n + num
    if den <= 0:
        return 0.0
    return num / den


def expected_dcg(nu: float, counts: GroupCounts) -> float:
    """Expected DCG of the attractiveness-sorted list.

    The top ``t = n+_n + nu * n+_a`` ranks hold relevant items; ranks
    ``t+1..n_n + n+_a`` hold the misplaced affected relevant items spread
    uniformly with density ``xi``.  A fractional ``t`` makes rank
    ``floor(t) + 1`` partly relevant, which keeps the total relevant mass
    equal to ``n+_n + n+_a``.
    """
    if not 0.0 <= nu <= 1.0:
        raise ValueError("nu must lie in [0, 1]")
    t = counts.n_plus_n + nu * counts.n_plus_a
    k2 = counts.n_n + counts.n_plus_a
    xi = xi_uniform(nu, counts)
    w = discounts(k2)
    head = int(math.floor(t + 1e-12))
    frac = t - head
    gain = np.full(k2, xi)
    gain[:head] = 1.0
    if head < k2:
        gain[head] = frac + (1.0 - frac) * xi
    return float(np.dot(gain, w))


class LinearFit(NamedTuple):
    slope: float
    intercept: float
    max_rel_error: float


def fit_dcg_linear(counts: GroupCounts, nus=None) -> LinearFit:
    """Least-squares line through ``expected_dcg`` over a grid of ``nu``."""
    if nus is None:
        nus = np.linspace(0.0, 1.0, 11)
    nus = np.asarray(nus, dtype=np.float64)
    y = np.array([expected_dcg(v, counts) for v in nus])
    slope, intercept = np.polyfit(nus, y, 1)
    rel = np.abs(slope * nus + intercept - y) / y
    return LinearFit(float(slope), float(intercept), float(rel.max()))


@dataclass(frozen=True)
class ExposureFit:
    """Coefficients of ``mean exposure ~ alpha * log(m) + c``.

    ``alpha, c`` fit the mean exposure of ranks ``1..m``; ``alpha_prime,
    c_prime`` fit ranks ``m+1..n``.  ``log_base`` is the base of ``log(m)``.
    """

    n: int
    alpha: float
    c: float
    alpha_prime: float
    c_prime: float
    max_rel_error: float
    log_base: float = 2.0

    def log(self, x):
        return np.log(x) / math.log(self.log_base)

    def head_mean(self, m):
        return self.alpha * self.log(m) + self.c

    def tail_mean(self, m):
        return self.alpha_prime * self.log(m) + self.c_prime


def exposure_means(n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``m``, mean exposure of ranks ``1..m`` and of ranks ``m+1..n``."""
    w = discounts(n)
    m = np.arange(1, n)
    cum = np.cumsum(w)
    head = cum[:-1] / m
    tail = (cum[-1] - cum[:-1]) / (n - m)
    return m, head, tail


def fit_exposure_coefficients(n: int, log_base: float = 2.0) -> ExposureFit:
    if n < 3:
        raise ValueError("n must be at least 3")
    m, head, tail = exposure_means(n)
    x = np.log(m) / math.log(log_base)
    alpha, c = np.polyfit(x, head, 1)
    alpha_p, c_p = np.polyfit(x, tail, 1)
    err = max(
        np.max(np.abs(alpha * x + c - head) / head),
        np.max(np.abs(alpha_p * x + c_p - tail) / tail),
    )
    return ExposureFit(n, float(alpha), float(c), float(alpha_p), float(c_p), float(err), log_base)


def eel_approx(nu: float, counts: GroupCounts, fit: ExposureFit) -> float:
    """Approximate ``2 * |change of non-affected target exposure|``.

    ``-2 (alpha n+_n + alpha' (n_n - n+_n)) log(true / perceived)``; the
    coefficients are negative, so the value is non-negative.
    """
    true = counts.n_plus_n + counts.n_plus_a
    perceived = counts.n_plus_n + nu * counts.n_plus_a
    if perceived <= 0:
        raise ValueError("no perceived relevant items")
    coef = fit.alpha * counts.n_plus_n + fit.alpha_prime * (counts.n_n - counts.n_plus_n)
    return float(-2.0 * coef * fit.log(true / perceived))


def dtr_theory(nu: float) -> float:
    if not 0.0 <= nu <= 1.0:
        raise ValueError("nu must lie in [0, 1]")
    return float(nu)


def biased_objective(lambda_weights, relevances, affected, betas) -> float:
    """``sum_g beta_g sum_{d in g} lambda_d r_d``.

    ``betas`` is ``(beta_affected, beta_nonaffected)``.
    """
    lam = np.asarray(lambda_weights, dtype=np.float64)
    r = np.asarray(relevances, dtype=np.float64)
    aff = np.asarray(affected, dtype=bool)
    if not lam.shape == r.shape == aff.shape:
        raise ValueError("one lambda, relevance and group per item")
    beta_a, beta_n = betas
    return float(beta_a * np.dot(lam[aff], r[aff]) + beta_n * np.dot(lam[~aff], r[~aff]))


class Comparison(NamedTuple):
    quantity: str
    theory: float
    empirical: float

    @property
    def rel_error(self) -> float:
        if self.theory == 0:
            return 0.0 if self.empirical == 0 else math.inf
        return abs(self.empirical - self.theory) / abs(self.theory)


def write_comparison(rows, stream) -> None:
    """CSV rows ``quantity,theory,empirical,rel_error``."""
    stream.write("quantity,theory,empirical,rel_error\n")
    for r in rows:
        stream.write(f"{r.quantity},{r.theory!r},{r.empirical!r},{r.rel_error!r}\n")
