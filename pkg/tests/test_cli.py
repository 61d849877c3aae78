import csv
import subprocess
import sys
from pathlib import Path

import pytest
import yaml

from groupbias.cli import main
from groupbias.config import load_config
from groupbias.dataset import load_svmlight, read_tabular
from groupbias.runner import read_json_report

CONFIG = {
    "dataset": {"source": "synthetic", "synthetic": {"num_queries": 40, "items_per_query": 10}},
    "bias": [{"beta": 0.8, "sigma_beta": 0.05}],
    "seeds": [0, 1],
}


def _write_yaml(path, tree):
    path.write_text(yaml.safe_dump(tree))
    return str(path)


def _rows(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


@pytest.mark.parametrize("experiment", ["impact", "correction", "cluster-ablation", "clustering-accuracy"])
def test_run_writes_report(tmp_path, experiment):
    cfg = _write_yaml(tmp_path / "c.yaml", {**CONFIG, "cluster_sizes": [10]})
    out = tmp_path / "out"
    assert main(["run", "--config", cfg, "--experiment", experiment, "--out", str(out)]) == 0
    text = (out / f"{experiment}.csv").read_text()
    assert f'# experiment: "{experiment}"' in text
    assert "setting,sigma_beta,cluster_size,condition,metric,mean,std,n" in text


def test_run_json_and_jobs_agree(tmp_path):
    cfg = _write_yaml(tmp_path / "c.yaml", CONFIG)
    main(["run", "--config", cfg, "--experiment", "correction", "--out", str(tmp_path / "a"), "--format", "json"])
    main(["run", "--config", cfg, "--experiment", "correction", "--out", str(tmp_path / "b"), "--format", "json",
          "--jobs", "2"])
    a = (tmp_path / "a" / "correction.json").read_text()
    assert a == (tmp_path / "b" / "correction.json").read_text()
    assert read_json_report(tmp_path / "a" / "correction.json").experiment == "correction"


def test_run_theory_writes_comparison(tmp_path):
    cfg = _write_yaml(tmp_path / "c.yaml", CONFIG)
    assert main(["run", "--config", cfg, "--experiment", "theory", "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "theory_comparison.csv")
    assert [r["quantity"].split("[")[0] for r in rows] == ["nu", "rho_dtr", "delta_eel_group"]


def test_run_reports_failures(tmp_path):
    cfg = _write_yaml(tmp_path / "c.yaml", {**CONFIG, "correction": "none"})
    assert main(["run", "--config", cfg, "--experiment", "correction", "--out", str(tmp_path)]) == 1
    assert "# diagnostic:" in (tmp_path / "correction.csv").read_text()


def test_bad_config_exits_2(tmp_path, capsys):
    cfg = _write_yaml(tmp_path / "c.yaml", {**CONFIG, "correction": "magic"})
    assert main(["run", "--config", cfg, "--experiment", "impact", "--out", str(tmp_path)]) == 2
    assert "magic" in capsys.readouterr().err
    assert main(["run", "--config", str(tmp_path / "missing.yaml"), "--experiment", "impact", "--out", str(tmp_path)]) == 2


def test_synth_svmlight(tmp_path):
    spec = _write_yaml(tmp_path / "s.yaml", {"num_queries": 5, "items_per_query": 6, "num_features": 3, "seed": 2})
    out = tmp_path / "d.svm"
    assert main(["synth", "--spec", spec, "--out", str(out)]) == 0
    ds = load_svmlight(str(out))
    assert len(ds) == 5 and ds.num_features == 4


def test_synth_then_estimate_recovers_beta(tmp_path):
    spec = _write_yaml(tmp_path / "s.yaml", {
        "num_queries": 300, "items_per_query": 20, "seed": 1, "bias": {"beta": 0.7, "sigma_beta": 0.0},
    })
    scores, truth = tmp_path / "scores.csv", tmp_path / "truth.csv"
    assert main(["synth", "--spec", spec, "--out", str(scores), "--truth", str(truth)]) == 0
    assert len(read_tabular(str(truth))) == 300

    est, corr = tmp_path / "est.csv", tmp_path / "corr.csv"
    assert main(["estimate", "--data", str(scores), "--out", str(est), "--corrected", str(corr)]) == 0
    (row,) = _rows(est)
    assert row["cluster_id"] == "all"
    assert abs(float(row["beta_hat"]) - 0.7) <= 0.03
    assert len(_rows(corr)) == 300 * 20


def test_estimate_with_cluster_map(tmp_path):
    spec = _write_yaml(tmp_path / "s.yaml", {"num_queries": 20, "items_per_query": 10, "bias": {"beta": 0.8}})
    scores = tmp_path / "scores.csv"
    main(["synth", "--spec", spec, "--out", str(scores)])
    qids = read_tabular(str(scores)).query_ids
    cmap = tmp_path / "map.csv"
    cmap.write_text("query_id,cluster_id\n" + "".join(f"{q},{'a' if i % 2 else 'b'}\n" for i, q in enumerate(qids)))
    est = tmp_path / "est.csv"
    assert main(["estimate", "--data", str(scores), "--clusters", str(cmap), "--out", str(est),
                 "--grid", "0.5", "1.0", "0.01"]) == 0
    assert sorted(r["cluster_id"] for r in _rows(est)) == ["a", "b"]
    cmap.write_text("query_id,cluster_id\n" + f"{qids[0]},a\n")
    assert main(["estimate", "--data", str(scores), "--clusters", str(cmap), "--out", str(est)]) == 2


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "groupbias", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "estimate" in res.stdout


def test_shipped_configs_load():
    root = Path(__file__).resolve().parents[1] / "configs"
    names = sorted(p.name for p in root.glob("*.yaml") if p.name != "synth.yaml")
    assert names == ["cluster_sizes.yaml", "correction.yaml", "impact.yaml", "ltr.yaml"]
    for name in names:
        assert load_config(root / name).seeds
