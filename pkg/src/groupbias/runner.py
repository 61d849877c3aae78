"""Experiment grids and reproducible reports.

Every cell of a grid is a pure function of ``(config, bias index, seed)``;
cells may run in worker processes and are merged in grid order, so the
report does not depend on ``jobs``.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Mapping

import numpy as np
from scipy import stats

from . import __version__
from .biassim import AttractivenessTable, BiasConfig, simulate_attractiveness
from .config import ClusteringSpec, ExperimentConfig
from .correction import CorrectedLabels, correct_scores
from .dataset import (
    GroupedDataset,
    assign_groups,
    filter_queries,
    load_svmlight,
    read_tabular,
    score_split_predicate,
    synthesize_dataset,
)
from .estimator import build_pools, estimate_all, estimate_beta, global_pool
from .ltr import evaluate, train
from .metrics import (
    discretize,
    dtr_ratio,
    eel_distance,
    group_restricted_ndcg,
    ndcg_at_k,
    sort_by_score,
    target_exposure,
)
from .theory import Comparison, GroupCounts, eel_approx, expected_nu, fit_exposure_coefficients

EXPERIMENTS = ("impact", "correction", "cluster-ablation", "clustering-accuracy", "theory")

# per-component seed streams
SEED_DATASET = 1
SEED_BIAS = 2
SEED_CLUSTERING = 3
SEED_TRAINING = 4

SIGNIFICANCE_TEST = (
    "paired two-sided Wilcoxon signed-rank over queries; "
    "exact for n <= 25 non-zero differences, normal approximation above"
)

CELL_FIELDS = ("setting", "sigma_beta", "cluster_size", "condition")


def component_seed(seed: int, component: int) -> int:
    return int(np.random.SeedSequence([int(seed), component]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# Reports


@dataclass(frozen=True)
class ReportRow:
    setting: str
    sigma_beta: float
    cluster_size: str
    condition: str
    metric: str
    mean: float
    std: float
    n: int


@dataclass(frozen=True)
class RawRow:
    setting: str
    sigma_beta: float
    cluster_size: str
    condition: str
    metric: str
    seed: int
    value: float


@dataclass
class Report:
    experiment: str
    rows: list[ReportRow] = field(default_factory=list)
    raw: list[RawRow] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)
    diagnostics: list[str] = field(default_factory=list)

    def value(self, metric: str, condition: str, **cell) -> float:
        """Mean of the single row matching ``metric``, ``condition`` and ``cell``."""
        hits = [
            r for r in self.rows
            if r.metric == metric and r.condition == condition
            and all(getattr(r, k) == v for k, v in cell.items())
        ]
        if len(hits) != 1:
            raise KeyError(f"{len(hits)} rows match {metric}/{condition}/{cell}")
        return hits[0].mean

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "provenance": self.provenance,
            "rows": [_jsonable(asdict(r)) for r in self.rows],
            "raw": [_jsonable(asdict(r)) for r in self.raw],
            "diagnostics": list(self.diagnostics),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Report":
        def rows(kind, items):
            return [kind(**{k: (float("nan") if v is None else v) for k, v in it.items()}) for it in items]

        return cls(
            experiment=d["experiment"],
            rows=rows(ReportRow, d.get("rows", [])),
            raw=rows(RawRow, d.get("raw", [])),
            provenance=d.get("provenance", {}),
            diagnostics=list(d.get("diagnostics", [])),
        )


def _jsonable(d: dict) -> dict:
    # JSON has no NaN
    return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in d.items()}


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def render_csv(report: Report) -> str:
    out = io.StringIO()
    for key, value in report.provenance.items():
        out.write(f"# {key}: {json.dumps(value, sort_keys=True)}\n")
    for note in report.diagnostics:
        out.write(f"# diagnostic: {note}\n")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(CELL_FIELDS + ("metric", "mean", "std", "n"))
    for r in report.rows:
        w.writerow([_fmt(v) for v in (r.setting, r.sigma_beta, r.cluster_size, r.condition, r.metric, r.mean, r.std, r.n)])
    return out.getvalue()


def render_json(report: Report) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=False) + "\n"


def emit_report(report: Report, path: str | os.PathLike, format: str = "csv") -> None:
    if format == "csv":
        text = render_csv(report)
    elif format == "json":
        text = render_json(report)
    else:
        raise ValueError(f"unknown report format {format!r}")
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(text)


def read_json_report(path: str | os.PathLike) -> Report:
    with open(path, encoding="utf-8") as f:
        return Report.from_dict(json.load(f))


# ---------------------------------------------------------------------------
# Pipeline pieces


@dataclass(frozen=True)
class PreparedData:
    grouped: GroupedDataset
    kept_fraction: float
    passes_filter: bool


def prepare_dataset(config: ExperimentConfig, seed: int) -> PreparedData:
    """Load or synthesize, assign groups, and drop queries lacking a group."""
    if config.synthetic is not None:
        spec = config.synthetic
        ds = synthesize_dataset(replace(spec, seed=component_seed(seed + spec.seed, SEED_DATASET)))
    elif config.file_format == "svmlight":
        ds = load_svmlight(config.file_path)
    else:
        ds = read_tabular(config.file_path)
    if config.sensitive_feature is not None:
        ds = assign_groups(ds, config.sensitive_feature, config.threshold_rule, config.threshold)
    pred = score_split_predicate(config.score_split) if config.score_split is not None else None
    res = filter_queries(ds, config.min_fraction, pred)
    return PreparedData(res.dataset, res.fraction, res.passes)


def read_cluster_map(path: str | os.PathLike) -> dict[str, str]:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or not {"query_id", "cluster_id"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: expected columns query_id,cluster_id")
        return {row["query_id"]: row["cluster_id"] for row in reader}


def cluster_queries(grouped: GroupedDataset, spec: ClusteringSpec, seed: int = 0) -> dict[str, str]:
    """Map every query id to a cluster id."""
    qids = grouped.query_ids
    if spec.kind == "global":
        return {q: "all" for q in qids}
    if spec.kind == "singleton":
        return {q: q for q in qids}
    if spec.kind == "uniform_random":
        order = np.random.default_rng(seed).permutation(len(qids))
        return {qids[i]: f"c{pos // spec.size:06d}" for pos, i in enumerate(order)}
    mapping = read_cluster_map(spec.path)
    missing = [q for q in qids if q not in mapping]
    if missing:
        raise KeyError(f"cluster map {spec.path} lacks queries: {', '.join(missing)}")
    return {q: mapping[q] for q in qids}


def simulate(grouped: GroupedDataset, bias: BiasConfig, seed: int) -> AttractivenessTable:
    return simulate_attractiveness(grouped, replace(bias, seed=component_seed(seed, SEED_BIAS)))


def apply_correction(
    grouped: GroupedDataset, table: AttractivenessTable, clustering: Mapping[str, str], config: ExperimentConfig
) -> tuple[CorrectedLabels, dict]:
    pools = build_pools(grouped, table, clustering)
    est = estimate_all(pools.pools, config.grid) if pools.pools else None
    estimates = est.estimates if est else {}
    fallback = estimate_beta(global_pool(grouped, table), config.grid)
    corrected = correct_scores(table, grouped, estimates, clustering, fallback=fallback)
    return corrected, estimates


def query_metrics(grouped: GroupedDataset, scores, k: int, a_star: float) -> dict[str, np.ndarray]:
    """Per-query ranking and fairness metrics of ``scores`` against true relevance."""
    names = (f"ndcg@{k}", f"ndcg@{k}_affected", f"ndcg@{k}_nonaffected", "rho_dtr", "delta_eel", "delta_eel_group")
    cols = {n: np.empty(len(grouped)) for n in names}
    for i, (q, s) in enumerate(zip(grouped, scores)):
        ranking = sort_by_score(s, q.item_ids)
        rel = q.relevance
        cols[names[0]][i] = ndcg_at_k(ranking, rel, k)
        cols[names[1]][i] = group_restricted_ndcg(ranking, rel, q.affected, True, k)
        cols[names[2]][i] = group_restricted_ndcg(ranking, rel, q.affected, False, k)
        t_true = target_exposure(rel, q.affected, a_star=a_star)
        t_obs = target_exposure(s, q.affected, a_star=a_star)
        try:
            cols["rho_dtr"][i] = dtr_ratio(t_true, t_obs)
        except ValueError:
            cols["rho_dtr"][i] = np.nan
        d = eel_distance(t_true, t_obs)
        cols["delta_eel"][i] = d.l2
        cols["delta_eel_group"][i] = d.group_level
    return cols


def paired_p_value(x, y) -> float:
    """Two-sided Wilcoxon signed-rank p-value; NaN pairs are dropped."""
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    ok = ~(np.isnan(x) | np.isnan(y))
    d = x[ok] - y[ok]
    d = d[d != 0]
    if len(d) == 0:
        return 1.0
    method = "exact" if len(d) <= 25 else "approx"
    return float(stats.wilcoxon(d, alternative="two-sided", method=method).pvalue)


def _mean(v) -> float:
    v = np.asarray(v, dtype=np.float64)
    return float(np.nanmean(v)) if np.any(~np.isnan(v)) else float("nan")


# A cell returns (cluster_size, condition, metric, value) records.
Record = tuple[str, str, str, float]


def _label_records(condition: str, grouped: GroupedDataset, labels) -> list[Record]:
    """Mean absolute and signed error of affected-item labels against the truth."""
    diffs = np.concatenate([np.asarray(v)[q.affected] - q.relevance[q.affected] for q, v in zip(grouped, labels)])
    return [
        ("", condition, "label_error_affected", float(np.abs(diffs).mean())),
        ("", condition, "label_bias_affected", float(diffs.mean())),
    ]


def _records(cluster_size: str, condition: str, cols: Mapping[str, np.ndarray]) -> list[Record]:
    return [(cluster_size, condition, m, _mean(v)) for m, v in cols.items()]


def _ltr_records(config: ExperimentConfig, grouped: GroupedDataset, bias: BiasConfig, seed: int, with_corrected: bool) -> list[Record]:
    spec = config.ltr
    n_test = max(1, int(round(spec.test_fraction * len(grouped))))
    train_set = grouped.with_queries(grouped.queries[:-n_test])
    test_set = grouped.with_queries(grouped.queries[-n_test:])
    table = simulate(train_set, bias, seed)
    sources = {"ltr_true": [q.relevance for q in train_set], "ltr_biased": list(table)}
    if with_corrected:
        clustering = _clustering_for(config, train_set, seed)
        corrected, _ = apply_correction(train_set, table, clustering, config)
        sources["ltr_corrected"] = list(corrected)
    tc = replace(spec.train, seed=component_seed(seed, SEED_TRAINING))
    out = []
    for cond, labels in sources.items():
        if spec.label_transform == "discretized":
            labels = [discretize(v, config.a_star) for v in labels]
        scorer = train(train_set, labels, tc).scorer
        ev = evaluate(scorer, test_set, k=config.metrics_cutoff)
        k = config.metrics_cutoff
        for name, v in ((f"ndcg@{k}", ev.ndcg), (f"ndcg@{k}_affected", ev.ndcg_affected),
                        (f"ndcg@{k}_nonaffected", ev.ndcg_nonaffected), ("rho_dtr", ev.rho_dtr),
                        ("delta_eel", ev.delta_eel)):
            out.append(("", cond, name, float(v)))
    return out


def _clustering_for(config: ExperimentConfig, grouped: GroupedDataset, seed: int) -> dict[str, str]:
    if config.correction == "per_query":
        spec = ClusteringSpec("singleton")
    else:
        spec = config.clustering
    return cluster_queries(grouped, spec, component_seed(seed, SEED_CLUSTERING))


# ---------------------------------------------------------------------------
# Cells


def _impact_cell(config: ExperimentConfig, bias: BiasConfig, seed: int) -> list[Record]:
    data = prepare_dataset(config, seed)
    g = data.grouped
    k, a_star = config.metrics_cutoff, config.a_star
    table = simulate(g, bias, seed)
    recs = _records("", "true", query_metrics(g, [q.relevance for q in g], k, a_star))
    recs += _records("", "biased", query_metrics(g, list(table), k, a_star))
    if config.ltr is not None:
        recs += _ltr_records(config, g, bias, seed, with_corrected=False)
    return recs


def _correction_cell(config: ExperimentConfig, bias: BiasConfig, seed: int) -> list[Record]:
    if config.correction == "none":
        raise ValueError("correction experiment needs correction per_query or amortized")
    data = prepare_dataset(config, seed)
    g = data.grouped
    k, a_star = config.metrics_cutoff, config.a_star
    table = simulate(g, bias, seed)
    clustering = _clustering_for(config, g, seed)
    corrected, estimates = apply_correction(g, table, clustering, config)
    biased = query_metrics(g, list(table), k, a_star)
    fixed = query_metrics(g, list(corrected), k, a_star)
    recs = _records("", "biased", biased) + _records("", "corrected", fixed)
    for cond, labels in (("biased", list(table)), ("corrected", list(corrected))):
        recs += _label_records(cond, g, labels)
    betas = np.array([e.beta_hat for e in estimates.values()])
    recs.append(("", "corrected", "beta_hat", float(betas.mean()) if len(betas) else float("nan")))
    recs.append(("", "corrected", "clamped_fraction", corrected.clamped_count / g.n_items))
    for m in biased:
        recs.append(("", "corrected_vs_biased", f"p_{m}", paired_p_value(fixed[m], biased[m])))
    if config.ltr is not None:
        recs += _ltr_records(config, g, bias, seed, with_corrected=True)
    return recs


def _sweep_cell(config: ExperimentConfig, bias: BiasConfig, seed: int, full: bool) -> list[Record]:
    data = prepare_dataset(config, seed)
    g = data.grouped
    k, a_star = config.metrics_cutoff, config.a_star
    table = simulate(g, bias, seed)
    keep = (lambda m: True) if full else (lambda m: m == f"ndcg@{k}")
    biased = query_metrics(g, list(table), k, a_star)
    recs = [r for r in _records("", "biased", biased) if keep(r[2])]
    cseed = component_seed(seed, SEED_CLUSTERING)
    specs = [(str(s), ClusteringSpec("uniform_random", size=s)) for s in config.cluster_sizes]
    specs.append(("global", ClusteringSpec("global")))
    for label, spec in specs:
        corrected, estimates = apply_correction(g, table, cluster_queries(g, spec, cseed), config)
        cols = query_metrics(g, list(corrected), k, a_star)
        recs += [r for r in _records(label, "corrected", cols) if keep(r[2])]
        betas = np.array([e.beta_hat for e in estimates.values()])
        recs.append((label, "corrected", "beta_hat_mean", float(betas.mean())))
        recs.append((label, "corrected", "beta_hat_std", float(betas.std())))
    return recs


def _ablation_cell(config, bias, seed):
    return _sweep_cell(config, bias, seed, full=True)


def _accuracy_cell(config, bias, seed):
    return _sweep_cell(config, bias, seed, full=False)


def _theory_cell(config: ExperimentConfig, bias: BiasConfig, seed: int) -> list[Record]:
    """Closed-form predictions next to their empirical counterparts."""
    data = prepare_dataset(config, seed)
    g = data.grouped
    a_star = config.a_star
    table = simulate(g, bias, seed)
    nu_theory = expected_nu(bias.mean_beta)
    fits: dict[int, object] = {}
    nu_emp, rho_emp, eel_emp, eel_th = [], [], [], []
    for q, a in zip(g, table):
        rel = q.relevance >= a_star
        aff_rel = rel & q.affected
        if not aff_rel.any() or not (rel & ~q.affected).any():
            continue
        nu_emp.append(np.count_nonzero(a[aff_rel] >= a_star) / np.count_nonzero(aff_rel))
        t_true = target_exposure(q.relevance, q.affected, a_star=a_star)
        t_obs = target_exposure(a, q.affected, a_star=a_star)
        rho_emp.append(dtr_ratio(t_true, t_obs))
        eel_emp.append(eel_distance(t_true, t_obs).group_level)
        counts = GroupCounts(q.n_affected, q.n_nonaffected, int(aff_rel.sum()), int((rel & ~q.affected).sum()))
        if len(q) not in fits:
            fits[len(q)] = fit_exposure_coefficients(len(q))
        eel_th.append(eel_approx(nu_theory, counts, fits[len(q)]) if nu_theory > 0 else float("nan"))
    return [
        ("", "theory", "nu", nu_theory),
        ("", "empirical", "nu", _mean(nu_emp)),
        ("", "theory", "rho_dtr", nu_theory),
        ("", "empirical", "rho_dtr", _mean(rho_emp)),
        ("", "theory", "delta_eel_group", _mean(eel_th)),
        ("", "empirical", "delta_eel_group", _mean(eel_emp)),
    ]


CELLS: dict[str, Callable] = {
    "impact": _impact_cell,
    "correction": _correction_cell,
    "cluster-ablation": _ablation_cell,
    "clustering-accuracy": _accuracy_cell,
    "theory": _theory_cell,
}


def _run_cell(args):
    name, config, bias_index, seed = args
    try:
        return CELLS[name](config, config.bias[bias_index], seed), None
    except (ValueError, KeyError, OSError) as e:
        return [], f"{config.bias[bias_index].label} seed {seed}: {type(e).__name__}: {e}"


def run_experiment(name: str, config: ExperimentConfig, jobs: int = 1) -> Report:
    if name not in CELLS:
        raise ValueError(f"unknown experiment {name!r}; choose from {', '.join(EXPERIMENTS)}")
    seeds = config.effective_seeds()
    tasks = [(name, config, b, s) for b in range(len(config.bias)) for s in seeds]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(min(jobs, len(tasks))) as ex:
            results = list(ex.map(_run_cell, tasks))
    else:
        results = [_run_cell(t) for t in tasks]

    report = Report(experiment=name, provenance=_provenance(name, config, seeds))
    grouped: dict[tuple, list[float]] = {}
    for (_, _, b, seed), (records, error) in zip(tasks, results):
        bias = config.bias[b]
        if error is not None:
            report.diagnostics.append(error)
            report.raw.append(RawRow(bias.label, bias.sigma_beta, "", "error", "error", seed, float("nan")))
            continue
        for size, cond, metric, value in records:
            key = (bias.label, bias.sigma_beta, size, cond, metric)
            grouped.setdefault(key, []).append(value)
            report.raw.append(RawRow(bias.label, bias.sigma_beta, size, cond, metric, seed, float(value)))
    for key, values in grouped.items():
        v = np.asarray(values, dtype=np.float64)
        ok = v[~np.isnan(v)]
        mean = float(ok.mean()) if len(ok) else float("nan")
        std = float(ok.std()) if len(ok) else float("nan")
        report.rows.append(ReportRow(*key, mean=mean, std=std, n=len(ok)))
    failed = {(r.setting, r.sigma_beta) for r in report.raw if r.condition == "error"}
    for setting, sigma in sorted(failed):
        if not any((r.setting, r.sigma_beta) == (setting, sigma) for r in report.rows):
            report.rows.append(ReportRow(setting, sigma, "", "error", "error", float("nan"), float("nan"), 0))
    return report


def _provenance(name: str, config: ExperimentConfig, seeds) -> dict:
    bias = config.bias[0]
    prov = {
        "experiment": name,
        "config_hash": config.config_hash(),
        "seeds": list(seeds),
        "version": __version__,
        "metrics_cutoff": config.metrics_cutoff,
        "a_star": config.a_star,
        "clamp": list(bias.clamp),
        "tiebreak_epsilon": bias.tiebreak_epsilon,
        "grid": [config.grid.lo, config.grid.hi, config.grid.step],
        "correction": config.correction,
        "clustering": config.clustering.kind,
        "query_filter": f"both groups present, min kept fraction {config.min_fraction}, computed on the given split",
        "std": "population std over seeds",
    }
    if name == "correction":
        prov["significance_test"] = SIGNIFICANCE_TEST
        prov["significance_pairing"] = "per query within each seed"
    if config.ltr is not None:
        prov["ltr_label_transform"] = config.ltr.label_transform
    return prov


def theory_comparison(report: Report) -> list[Comparison]:
    """Pair the theory and empirical rows of a theory report."""
    theory = {(r.setting, r.sigma_beta, r.metric): r.mean for r in report.rows if r.condition == "theory"}
    out = []
    for r in report.rows:
        key = (r.setting, r.sigma_beta, r.metric)
        if r.condition == "empirical" and key in theory:
            out.append(Comparison(f"{r.metric}[beta={r.setting};sigma={r.sigma_beta!r}]", theory[key], r.mean))
    return out


def run_impact(config: ExperimentConfig, jobs: int = 1) -> Report:
    return run_experiment("impact", config, jobs)


def run_correction(config: ExperimentConfig, jobs: int = 1) -> Report:
    return run_experiment("correction", config, jobs)


def run_cluster_ablation(config: ExperimentConfig, jobs: int = 1) -> Report:
    return run_experiment("cluster-ablation", config, jobs)


def run_clustering_accuracy(config: ExperimentConfig, jobs: int = 1) -> Report:
    return run_experiment("clustering-accuracy", config, jobs)


def run_theory(config: ExperimentConfig, jobs: int = 1) -> Report:
    return run_experiment("theory", config, jobs)
