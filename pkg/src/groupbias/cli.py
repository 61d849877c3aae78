"""Command line entry point: ``groupbias {run,synth,estimate}``."""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace

import numpy as np
import yaml

from .biassim import AttractivenessTable, simulate_attractiveness
from .config import bias_from_dict, relevance_from_dict, load_config
from .correction import correct_scores
from .dataset import SyntheticSpec, read_tabular, synthesize_dataset, write_svmlight, write_tabular
from .estimator import Grid, build_pools, estimate_all, estimate_beta, global_pool, write_estimates
from .runner import EXPERIMENTS, emit_report, read_cluster_map, run_experiment, theory_comparison
from .theory import write_comparison

logger = logging.getLogger("groupbias")


def _cmd_run(args) -> int:
    config = load_config(args.config)
    report = run_experiment(args.experiment, config, jobs=args.jobs)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, f"{args.experiment}.{args.format}")
    emit_report(report, path, args.format)
    if args.experiment == "theory":
        with open(os.path.join(args.out, "theory_comparison.csv"), "w", encoding="utf-8") as f:
            write_comparison(theory_comparison(report), f)
    for note in report.diagnostics:
        logger.warning("%s", note)
    print(path)
    return 1 if report.diagnostics else 0


def _cmd_synth(args) -> int:
    with open(args.spec, encoding="utf-8") as f:
        tree = yaml.safe_load(f) or {}
    bias_tree = tree.pop("bias", None)
    tree["relevance_distribution"] = relevance_from_dict(tree.pop("relevance", None))
    spec = SyntheticSpec(**tree)
    ds = synthesize_dataset(spec)
    fmt = args.format or ("tabular" if str(args.out).endswith(".csv") else "svmlight")
    scores = None
    if bias_tree is not None:
        bias = replace(bias_from_dict(dict(bias_tree), {}), seed=int(bias_tree.get("seed", spec.seed)))
        scores = list(simulate_attractiveness(ds, bias))
        if args.truth:
            write_tabular(ds, args.truth)
    if fmt == "tabular":
        write_tabular(ds, args.out, scores=scores)
    else:
        if scores is not None:
            ds = ds.with_queries(q.with_relevance(s) for q, s in zip(ds, scores))
        with open(args.out, "w", encoding="utf-8") as f:
            write_svmlight(ds, f)
    return 0


def _cmd_estimate(args) -> int:
    data = read_tabular(args.data)
    if not data.grouped:
        raise ValueError(f"{args.data}: every item needs a group label")
    scores = [q.relevance for q in data]
    if args.clusters:
        mapping = read_cluster_map(args.clusters)
        missing = [q for q in data.query_ids if q not in mapping]
        if missing:
            raise KeyError(f"cluster map lacks queries: {', '.join(missing)}")
    elif all(q.cluster_id for q in data):
        mapping = {q.query_id: q.cluster_id for q in data}
    else:
        mapping = {q.query_id: "all" for q in data}
    grid = Grid(*args.grid) if args.grid else Grid()
    pools = build_pools(data, scores, mapping)
    for cid, why in pools.skipped.items():
        logger.warning("cluster %s skipped: %s", cid, why)
    result = estimate_all(pools.pools, grid, jobs=args.jobs)
    for cid, why in result.diagnostics.items():
        logger.warning("cluster %s: %s", cid, why)
    with open(args.out, "w", encoding="utf-8", newline="") as f:
        write_estimates(result.estimates, f)
    if args.corrected:
        fallback = estimate_beta(global_pool(data, scores), grid)
        table = AttractivenessTable(
            tuple(data.query_ids), tuple(q.item_ids for q in data), tuple(q.affected for q in data),
            tuple(scores), np.full(len(data), np.nan),
        )
        corrected = correct_scores(table, data, result.estimates, mapping, fallback=fallback)
        for note in corrected.diagnostics:
            logger.warning("%s", note)
        corrected.to_csv(args.corrected)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="groupbias", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment grid and write a report")
    r.add_argument("--config", required=True)
    r.add_argument("--experiment", required=True, choices=EXPERIMENTS)
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--format", choices=("csv", "json"), default="csv")
    r.add_argument("--jobs", type=int, default=1)
    r.set_defaults(func=_cmd_run)

    s = sub.add_parser("synth", help="write a synthetic dataset")
    s.add_argument("--spec", required=True, help="YAML synthetic spec, optionally with a bias section")
    s.add_argument("--out", required=True)
    s.add_argument("--format", choices=("svmlight", "tabular"), default=None,
                   help="defaults to tabular for .csv paths, svmlight otherwise")
    s.add_argument("--truth", default=None, help="with a bias section, also write true relevance here")
    s.set_defaults(func=_cmd_synth)

    e = sub.add_parser("estimate", help="estimate per-cluster propensities from a score file")
    e.add_argument("--data", required=True, help="tabular CSV; the relevance column holds observed scores")
    e.add_argument("--clusters", default=None, help="query_id,cluster_id CSV")
    e.add_argument("--out", required=True)
    e.add_argument("--corrected", default=None, help="also write corrected scores here")
    e.add_argument("--grid", type=float, nargs=3, metavar=("LO", "HI", "STEP"))
    e.add_argument("--jobs", type=int, default=1)
    e.set_defaults(func=_cmd_estimate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
