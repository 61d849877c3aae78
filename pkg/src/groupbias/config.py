"""Experiment configuration, loaded from a YAML key-value tree.

Example::

    dataset:
      source: synthetic            # or: file
      synthetic:
        num_queries: 1000
        items_per_query: 20
        affected_fraction: 0.5
        relevance: {kind: uniform}   # bernoulli {p}, graded {probabilities}
      # file: {path: train.txt, format: svmlight}   # or tabular
      sensitive_feature: 0
      threshold_rule: mean_minus_std
      min_fraction: 0.95
    bias:
      - {modes: [[0.8, 1.0]], sigma_beta: 0.1}
      - {modes: [[0.6, 1.0]], sigma_beta: 0.1}
    tiebreak_epsilon: 0.0
    clamp: [0.05, 1.0]
    clustering: {kind: global}       # singleton | uniform_random {size} | oracle {path}
    cluster_sizes: [1, 3, 10, 30, 100]
    correction: amortized            # per_query | none
    metrics_cutoff: 10
    seeds: [0, 1, 2]
"""
from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Any

import yaml

from .biassim import BiasConfig, PropensityMode
from .dataset import RelevanceDistribution, SyntheticSpec, ThresholdRule
from .estimator import Grid
from .ltr import TrainConfig

SEED_OFFSET_ENV = "GBL_SEED_OFFSET"

CLUSTERINGS = ("global", "singleton", "uniform_random", "oracle")
CORRECTIONS = ("none", "per_query", "amortized")


@dataclass(frozen=True)
class ClusteringSpec:
    kind: str = "global"
    size: int | None = None
    path: str | None = None

    def __post_init__(self):
        if self.kind not in CLUSTERINGS:
            raise ValueError(f"unknown clustering {self.kind!r}")
        if self.kind == "uniform_random" and (self.size is None or self.size < 1):
            raise ValueError("uniform_random clustering needs a positive size")
        if self.kind == "oracle" and not self.path:
            raise ValueError("oracle clustering needs a cluster map path")


@dataclass(frozen=True)
class LtrSpec:
    train: TrainConfig = field(default_factory=TrainConfig)
    test_fraction: float = 0.2
    label_transform: str = "raw"

    def __post_init__(self):
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError("test_fraction must lie in (0, 1)")
        if self.label_transform not in ("raw", "discretized"):
            raise ValueError("label_transform is raw or discretized")


@dataclass(frozen=True)
class ExperimentConfig:
    synthetic: SyntheticSpec | None = None
    file_path: str | None = None
    file_format: str = "svmlight"
    sensitive_feature: int | None = None
    threshold_rule: ThresholdRule = ThresholdRule.MEAN_MINUS_STD
    threshold: float | None = None
    min_fraction: float = 0.95
    score_split: float | None = None
    bias: tuple[BiasConfig, ...] = (BiasConfig(),)
    clustering: ClusteringSpec = field(default_factory=ClusteringSpec)
    cluster_sizes: tuple[int, ...] = (1, 3, 10, 30, 100)
    correction: str = "amortized"
    metrics_cutoff: int = 10
    a_star: float = 0.5
    seeds: tuple[int, ...] = (0,)
    grid: Grid = field(default_factory=Grid)
    ltr: LtrSpec | None = None
    raw: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if (self.synthetic is None) == (self.file_path is None):
            raise ValueError("exactly one of synthetic spec or file path is required")
        if self.file_format not in ("svmlight", "tabular"):
            raise ValueError(f"unknown file format {self.file_format!r}")
        if not self.bias:
            raise ValueError("at least one bias config is required")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.correction not in CORRECTIONS:
            raise ValueError(f"unknown correction {self.correction!r}")
        if self.metrics_cutoff < 1:
            raise ValueError("metrics_cutoff must be positive")

    def effective_seeds(self) -> tuple[int, ...]:
        offset = int(os.environ.get(SEED_OFFSET_ENV, "0") or 0)
        if offset < 0:
            raise ValueError(f"{SEED_OFFSET_ENV} must be non-negative")
        return tuple(s + offset for s in self.seeds)

    def config_hash(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def relevance_from_dict(d: dict | None) -> RelevanceDistribution:
    d = dict(d or {"kind": "uniform"})
    kind = d.pop("kind", "uniform")
    if kind == "graded" and "probabilities" in d:
        d["probabilities"] = tuple(d["probabilities"])
    return RelevanceDistribution(kind, **d)


def bias_from_dict(d: dict, defaults: dict) -> BiasConfig:
    d = {**defaults, **d}
    modes = d.pop("modes", None)
    if modes is None:
        modes = [[d.pop("beta", 0.8), 1.0]]
    d.pop("beta", None)
    return BiasConfig(
        modes=tuple(PropensityMode(float(m[0]), float(m[1]) if len(m) > 1 else 1.0) for m in modes),
        sigma_beta=float(d.get("sigma_beta", 0.1)),
        clamp=tuple(d.get("clamp", (0.05, 1.0))),
        tiebreak_epsilon=float(d.get("tiebreak_epsilon", 0.0)),
    )


def config_from_dict(tree: dict[str, Any], base_dir: str | os.PathLike = ".") -> ExperimentConfig:
    tree = copy.deepcopy(tree)
    raw = copy.deepcopy(tree)
    ds = tree.get("dataset", {})
    source = ds.get("source", "synthetic")
    synthetic = file_path = None
    file_format = "svmlight"
    if source == "synthetic":
        s = dict(ds.get("synthetic", {}))
        s["relevance_distribution"] = relevance_from_dict(s.pop("relevance", None))
        s.setdefault("num_queries", 1000)
        s.setdefault("items_per_query", 20)
        synthetic = SyntheticSpec(**s)
    elif source == "file":
        f = ds.get("file", {})
        file_path = os.path.join(base_dir, f["path"])
        file_format = f.get("format", "svmlight")
    else:
        raise ValueError(f"unknown dataset source {source!r}")

    defaults = {k: tree[k] for k in ("clamp", "tiebreak_epsilon") if k in tree}
    bias = tuple(bias_from_dict(b, defaults) for b in tree.get("bias", [{}]))

    cl = dict(tree.get("clustering", {"kind": "global"}))
    if cl.get("path"):
        cl["path"] = os.path.join(base_dir, cl["path"])
    ltr = None
    if tree.get("ltr"):
        t = dict(tree["ltr"])
        ltr = LtrSpec(
            test_fraction=float(t.pop("test_fraction", 0.2)),
            label_transform=t.pop("label_transform", "raw"),
            train=TrainConfig(**t),
        )
    grid = Grid(**tree.get("grid", {}))
    return ExperimentConfig(
        synthetic=synthetic,
        file_path=file_path,
        file_format=file_format,
        sensitive_feature=ds.get("sensitive_feature"),
        threshold_rule=ThresholdRule(ds.get("threshold_rule", "mean_minus_std")),
        threshold=ds.get("threshold"),
        min_fraction=float(ds.get("min_fraction", 0.95)),
        score_split=ds.get("score_split"),
        bias=bias,
        clustering=ClusteringSpec(**cl),
        cluster_sizes=tuple(int(s) for s in tree.get("cluster_sizes", (1, 3, 10, 30, 100))),
        correction=tree.get("correction", "amortized"),
        metrics_cutoff=int(tree.get("metrics_cutoff", 10)),
        a_star=float(tree.get("a_star", 0.5)),
        seeds=tuple(int(s) for s in tree.get("seeds", [0])),
        grid=grid,
        ltr=ltr,
        raw=raw,
    )


def load_config(path: str | os.PathLike) -> ExperimentConfig:
    with open(path, encoding="utf-8") as f:
        tree = yaml.safe_load(f) or {}
    return config_from_dict(tree, base_dir=os.path.dirname(os.path.abspath(path)))
