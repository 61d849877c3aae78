"""Ranking datasets with binary group membership.

Queries are stored column-wise: one array of relevance values, one dense
feature matrix and one boolean ``affected`` mask per query.  Feature ids
index the matrix columns directly, so a 1-based SVMlight file leaves
column 0 as zeros.
"""
from __future__ import annotations

import csv
import enum
import io
import os
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

MAX_GRADE = 4


class Group(enum.IntEnum):
    NONAFFECTED = 0
    AFFECTED = 1

    @property
    def label(self) -> str:
        return self.name.lower()


class ThresholdRule(str, enum.Enum):
    MEAN = "mean"
    MEAN_MINUS_STD = "mean_minus_std"
    EXPLICIT = "explicit"


class SvmlightParseError(ValueError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


@dataclass(frozen=True)
class Item:
    item_id: str
    relevance: float
    features: np.ndarray | None = None
    group: Group | None = None


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Query:
    query_id: str
    item_ids: tuple[str, ...]
    relevance: np.ndarray
    features: np.ndarray | None = None
    affected: np.ndarray | None = None
    cluster_id: str | None = None

    def __post_init__(self):
        n = len(self.item_ids)
        if n == 0:
            raise ValueError(f"query {self.query_id!r} has no items")
        object.__setattr__(self, "item_ids", tuple(str(i) for i in self.item_ids))
        object.__setattr__(self, "relevance", _frozen(self.relevance, np.float64))
        if self.relevance.shape != (n,):
            raise ValueError(f"query {self.query_id!r}: relevance length mismatch")
        if np.any(self.relevance < 0) or np.any(self.relevance > 1):
            raise ValueError(f"query {self.query_id!r}: relevance outside [0, 1]")
        if self.features is not None:
            object.__setattr__(self, "features", _frozen(self.features, np.float64))
            if self.features.ndim != 2 or self.features.shape[0] != n:
                raise ValueError(f"query {self.query_id!r}: feature matrix shape mismatch")
        if self.affected is not None:
            object.__setattr__(self, "affected", _frozen(self.affected, bool))
            if self.affected.shape != (n,):
                raise ValueError(f"query {self.query_id!r}: group mask length mismatch")

    def __len__(self) -> int:
        return len(self.item_ids)

    @property
    def grouped(self) -> bool:
        return self.affected is not None

    @property
    def n_affected(self) -> int:
        return int(self.affected.sum())

    @property
    def n_nonaffected(self) -> int:
        return len(self) - self.n_affected

    def items(self) -> Iterator[Item]:
        for i, item_id in enumerate(self.item_ids):
            yield Item(
                item_id=item_id,
                relevance=float(self.relevance[i]),
                features=None if self.features is None else self.features[i],
                group=None if self.affected is None else Group(int(self.affected[i])),
            )

    def with_relevance(self, relevance) -> "Query":
        return replace(self, relevance=relevance)


@dataclass(frozen=True, eq=False)
class GroupedDataset:
    queries: tuple[Query, ...]
    group_feature: int | None = None
    threshold_rule: ThresholdRule | None = None
    threshold: float | None = None
    warnings: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "queries", tuple(self.queries))

    def __len__(self) -> int:
        return len(self.queries)

    def __iter__(self) -> Iterator[Query]:
        return iter(self.queries)

    def __getitem__(self, i) -> Query:
        return self.queries[i]

    @property
    def query_ids(self) -> list[str]:
        return [q.query_id for q in self.queries]

    @property
    def n_items(self) -> int:
        return sum(len(q) for q in self.queries)

    @property
    def num_features(self) -> int:
        widths = {q.features.shape[1] for q in self.queries if q.features is not None}
        return max(widths, default=0)

    @property
    def grouped(self) -> bool:
        return all(q.grouped for q in self.queries)

    def by_id(self) -> dict[str, Query]:
        return {q.query_id: q for q in self.queries}

    def with_queries(self, queries: Iterable[Query], **changes) -> "GroupedDataset":
        return replace(self, queries=tuple(queries), **changes)


# ---------------------------------------------------------------------------
# SVMlight / LETOR


def grade_to_relevance(token: str) -> float:
    """Map an integer grade 0..4 to ``g / 4``; pass reals in [0, 1] through."""
    try:
        g = int(token)
    except ValueError:
        value = float(token)
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"real label {token!r} outside [0, 1]")
        return value
    if not 0 <= g <= MAX_GRADE:
        raise ValueError(f"grade {g} outside 0..{MAX_GRADE}")
    return g / MAX_GRADE


def relevance_to_label(relevance: float) -> str:
    g = relevance * MAX_GRADE
    if float(g).is_integer():
        return str(int(g))
    return repr(float(relevance))


def _item_id(i: int) -> str:
    return f"d{i:05d}"


def _query_id(i: int) -> str:
    return f"q{i:06d}"


def parse_svmlight(stream) -> GroupedDataset:
    """Parse ``label qid:<id> <fid>:<val> ... [# comment]`` lines.

    ``stream`` may be bytes, str, or a binary/text file object.  Queries
    keep the order of first appearance.  Feature ids must be strictly
    increasing within a line; absent features are zero.
    """
    if isinstance(stream, bytes):
        text = io.StringIO(stream.decode("utf-8"))
    elif isinstance(stream, str):
        text = io.StringIO(stream)
    else:
        text = stream

    rows: dict[str, list[tuple[float, dict[int, float]]]] = {}
    max_fid = -1
    for lineno, raw in enumerate(text, start=1):
        line = raw.decode("utf-8") if isinstance(raw, bytes) else raw
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if len(tokens) < 2 or not tokens[1].startswith("qid:"):
            raise SvmlightParseError(lineno, "expected '<label> qid:<id> ...'")
        try:
            relevance = grade_to_relevance(tokens[0])
        except ValueError as e:
            raise SvmlightParseError(lineno, f"bad label: {e}") from None
        qid = tokens[1][4:]
        if not qid:
            raise SvmlightParseError(lineno, "empty qid")
        feats: dict[int, float] = {}
        prev = -1
        for tok in tokens[2:]:
            fid_s, sep, val_s = tok.partition(":")
            try:
                if not sep:
                    raise ValueError
                fid, val = int(fid_s), float(val_s)
            except ValueError:
                raise SvmlightParseError(lineno, f"malformed feature {tok!r}") from None
            if fid < 0:
                raise SvmlightParseError(lineno, f"negative feature id {fid}")
            if fid <= prev:
                raise SvmlightParseError(lineno, f"feature id {fid} not increasing")
            prev = fid
            feats[fid] = val
        max_fid = max(max_fid, prev)
        rows.setdefault(qid, []).append((relevance, feats))

    if not rows:
        raise ValueError("empty SVMlight stream")

    width = max_fid + 1
    queries = []
    for qid, items in rows.items():
        x = np.zeros((len(items), width))
        for i, (_, feats) in enumerate(items):
            for fid, val in feats.items():
                x[i, fid] = val
        queries.append(
            Query(
                query_id=qid,
                item_ids=tuple(_item_id(i) for i in range(len(items))),
                relevance=[r for r, _ in items],
                features=x,
            )
        )
    return GroupedDataset(queries=tuple(queries))


def load_svmlight(path: str | os.PathLike) -> GroupedDataset:
    with open(path, "rb") as f:
        return parse_svmlight(f.read())


def write_svmlight(dataset: GroupedDataset, stream) -> None:
    """Inverse of :func:`parse_svmlight`.

    Zero features are omitted, except the last column, which is always
    written so the feature width survives a round trip.
    """
    for q in dataset:
        for i in range(len(q)):
            parts = [relevance_to_label(q.relevance[i]), f"qid:{q.query_id}"]
            if q.features is not None:
                row = q.features[i]
                fids = np.flatnonzero(row)
                if len(row) and (len(fids) == 0 or fids[-1] != len(row) - 1):
                    fids = np.append(fids, len(row) - 1)
                parts += [f"{fid}:{float(row[fid])!r}" for fid in fids]
            stream.write(" ".join(parts) + "\n")


# ---------------------------------------------------------------------------
# Tabular score file

TABULAR_HEADER = ("query_id", "item_id", "relevance", "group", "cluster_id")


def write_tabular(dataset: GroupedDataset, path_or_stream, scores=None) -> None:
    """Write ``query_id,item_id,relevance,group,cluster_id`` rows.

    ``scores`` optionally replaces the relevance column (one array per query).
    """
    own = isinstance(path_or_stream, (str, os.PathLike))
    f = open(path_or_stream, "w", newline="", encoding="utf-8") if own else path_or_stream
    try:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(TABULAR_HEADER)
        for qi, q in enumerate(dataset):
            values = q.relevance if scores is None else scores[qi]
            for i, item_id in enumerate(q.item_ids):
                group = "" if q.affected is None else Group(int(q.affected[i])).label
                w.writerow([q.query_id, item_id, repr(float(values[i])), group, q.cluster_id or ""])
    finally:
        if own:
            f.close()


def read_tabular(path_or_stream) -> GroupedDataset:
    own = isinstance(path_or_stream, (str, os.PathLike))
    f = open(path_or_stream, newline="", encoding="utf-8") if own else path_or_stream
    try:
        reader = csv.DictReader(f)
        missing = set(TABULAR_HEADER[:4]) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"tabular file lacks columns {sorted(missing)}")
        rows: dict[str, list[dict]] = {}
        for row in reader:
            rows.setdefault(row["query_id"], []).append(row)
    finally:
        if own:
            f.close()
    if not rows:
        raise ValueError("empty tabular file")

    queries = []
    for qid, items in rows.items():
        groups = [r["group"].strip().lower() for r in items]
        if all(groups):
            for g in groups:
                if g not in ("affected", "nonaffected"):
                    raise ValueError(f"query {qid}: unknown group {g!r}")
            affected = [g == "affected" for g in groups]
        else:
            affected = None
        clusters = {(r.get("cluster_id") or "").strip() for r in items}
        if len(clusters) > 1:
            raise ValueError(f"query {qid}: items disagree on cluster_id")
        queries.append(
            Query(
                query_id=qid,
                item_ids=tuple(r["item_id"] for r in items),
                relevance=[float(r["relevance"]) for r in items],
                affected=affected,
                cluster_id=clusters.pop() or None,
            )
        )
    return GroupedDataset(queries=tuple(queries))


# ---------------------------------------------------------------------------
# Grouping and filtering


def assign_groups(
    dataset: GroupedDataset,
    feature_id: int,
    rule: ThresholdRule | str = ThresholdRule.MEAN_MINUS_STD,
    threshold: float | None = None,
) -> GroupedDataset:
    """Split items into Affected (feature below threshold) and NonAffected.

    The threshold is computed over all items of the dataset, not per
    query.  Population standard deviation is used for ``mean_minus_std``;
    with zero variance the rule falls back to the mean and a warning is
    recorded on the result.
    """
    rule = ThresholdRule(rule)
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    for q in dataset:
        if q.features is None or feature_id >= q.features.shape[1] or feature_id < 0:
            raise ValueError(
                f"feature {feature_id} missing on item {q.item_ids[0]!r} of query {q.query_id!r}"
            )
    values = np.concatenate([q.features[:, feature_id] for q in dataset])
    warnings = list(dataset.warnings)

    if rule is ThresholdRule.EXPLICIT:
        if threshold is None:
            raise ValueError("explicit rule needs a threshold")
        t = float(threshold)
    elif rule is ThresholdRule.MEAN:
        t = float(values.mean())
    else:
        std = float(values.std())
        if std == 0.0:
            warnings.append(f"feature {feature_id}: zero variance, fell back to mean threshold")
            rule = ThresholdRule.MEAN
            t = float(values.mean())
        else:
            t = float(values.mean()) - std

    queries = [replace(q, affected=q.features[:, feature_id] < t) for q in dataset]
    n_aff = sum(q.n_affected for q in queries)
    if n_aff == 0 or n_aff == len(values):
        which = "NonAffected" if n_aff == 0 else "Affected"
        warnings.append(f"feature {feature_id}: degenerate split, all items {which}")
    return dataset.with_queries(
        queries,
        group_feature=feature_id,
        threshold_rule=rule,
        threshold=t,
        warnings=tuple(warnings),
    )


@dataclass(frozen=True)
class FilterResult:
    dataset: GroupedDataset
    fraction: float
    passes: bool


def has_both_groups(q: Query) -> bool:
    return 0 < q.n_affected < len(q)


def score_split_predicate(threshold: float = 0.5) -> Callable[[Query], bool]:
    """Keep queries with one relevance above and one below ``threshold``."""

    def pred(q: Query) -> bool:
        return bool(np.any(q.relevance > threshold) and np.any(q.relevance < threshold))

    return pred


def filter_queries(
    grouped: GroupedDataset,
    min_fraction: float = 0.95,
    predicate: Callable[[Query], bool] | None = None,
) -> FilterResult:
    """Drop queries lacking either group (and failing ``predicate``).

    ``passes`` is True when strictly more than ``min_fraction`` of the
    queries were retained.
    """
    if not grouped.grouped:
        raise ValueError("dataset has no group labels; call assign_groups first")
    kept = [q for q in grouped if has_both_groups(q) and (predicate is None or predicate(q))]
    if not kept:
        raise ValueError("filter removed every query")
    fraction = len(kept) / len(grouped)
    return FilterResult(grouped.with_queries(kept), fraction, fraction > min_fraction)


def select_sensitive_features(
    dataset: GroupedDataset,
    candidates: Iterable[int] | None = None,
    rule: ThresholdRule | str = ThresholdRule.MEAN_MINUS_STD,
    min_fraction: float = 0.95,
) -> list[int]:
    """Feature ids whose grouping keeps more than ``min_fraction`` of queries."""
    if candidates is None:
        candidates = range(dataset.num_features)
    selected = []
    for fid in candidates:
        grouped = assign_groups(dataset, fid, rule)
        kept = sum(has_both_groups(q) for q in grouped)
        if kept / len(grouped) > min_fraction:
            selected.append(fid)
    return selected


# ---------------------------------------------------------------------------
# Synthetic data


@dataclass(frozen=True)
class RelevanceDistribution:
    kind: str = "uniform"
    p: float | None = None
    probabilities: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind == "bernoulli":
            if self.p is None or not 0.0 <= self.p <= 1.0:
                raise ValueError("bernoulli needs p in [0, 1]")
        elif self.kind == "graded":
            probs = self.probabilities
            if probs is None or len(probs) != MAX_GRADE + 1:
                raise ValueError("graded needs 5 grade probabilities")
            if any(p < 0 for p in probs) or not np.isclose(sum(probs), 1.0):
                raise ValueError("grade probabilities must be non-negative and sum to 1")
            object.__setattr__(self, "probabilities", tuple(float(p) for p in probs))
        elif self.kind != "uniform":
            raise ValueError(f"unknown relevance distribution {self.kind!r}")

    @classmethod
    def uniform(cls) -> "RelevanceDistribution":
        return cls("uniform")

    @classmethod
    def bernoulli(cls, p: float) -> "RelevanceDistribution":
        return cls("bernoulli", p=p)

    @classmethod
    def graded(cls, probabilities: Sequence[float]) -> "RelevanceDistribution":
        return cls("graded", probabilities=tuple(probabilities))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.kind == "uniform":
            return rng.random(size)
        if self.kind == "bernoulli":
            return (rng.random(size) < self.p).astype(np.float64)
        grades = rng.choice(MAX_GRADE + 1, size=size, p=self.probabilities)
        return grades / MAX_GRADE


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of a synthetic grouped dataset.

    With ``num_features > 0`` each item gets a feature vector whose column
    0 is the sensitive attribute (0 for affected, 1 for non-affected) and
    whose columns ``1..num_features`` are relevance plus Gaussian noise.
    """

    num_queries: int
    items_per_query: int
    affected_fraction: float = 0.5
    relevance_distribution: RelevanceDistribution = field(default_factory=RelevanceDistribution)
    seed: int = 0
    num_features: int = 0
    feature_noise: float = 1.0

    def __post_init__(self):
        if self.num_queries < 1 or self.items_per_query < 1:
            raise ValueError("num_queries and items_per_query must be positive")
        if not 0.0 < self.affected_fraction < 1.0:
            raise ValueError("affected_fraction must lie in (0, 1)")
        if self.n_affected < 1:
            raise ValueError("affected_fraction * items_per_query must be >= 1")
        if self.num_features < 0 or self.feature_noise < 0:
            raise ValueError("num_features and feature_noise must be non-negative")

    @property
    def n_affected(self) -> int:
        return int(round(self.affected_fraction * self.items_per_query))


SENSITIVE_FEATURE = 0


def synthesize_dataset(spec: SyntheticSpec) -> GroupedDataset:
    """Draw a dataset where both groups share one relevance distribution."""
    rng = np.random.default_rng(spec.seed)
    n = spec.items_per_query
    item_ids = tuple(_item_id(i) for i in range(n))
    queries = []
    for qi in range(spec.num_queries):
        relevance = spec.relevance_distribution.sample(rng, n)
        affected = np.zeros(n, dtype=bool)
        affected[rng.permutation(n)[: spec.n_affected]] = True
        features = None
        if spec.num_features:
            noise = rng.normal(0.0, spec.feature_noise, size=(n, spec.num_features))
            features = np.column_stack([(~affected).astype(np.float64), relevance[:, None] + noise])
        queries.append(
            Query(_query_id(qi), item_ids, relevance, features=features, affected=affected)
        )
    group_feature = SENSITIVE_FEATURE if spec.num_features else None
    return GroupedDataset(
        queries=tuple(queries),
        group_feature=group_feature,
        threshold_rule=ThresholdRule.MEAN if spec.num_features else None,
    )
