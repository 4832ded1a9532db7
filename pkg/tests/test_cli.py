import json
import subprocess
import sys

import numpy as np
import pytest

from conftest import write_jsonl
from weaver.cli import main
from weaver.datastore import load_dataset, split_dev

ACC = [0.55, 0.65, 0.75, 0.85, 0.95]


@pytest.fixture
def data(tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"n": 200, "K": 16, "m": 5, "prior": 0.2, "tpr": ACC, "tnr": ACC}))
    assert main(["synth", "--spec", str(spec), "--out", str(tmp_path / "d" / "data.jsonl"), "--seed", "1"]) == 0
    return tmp_path / "d" / "data.jsonl"


def _json(path):
    return json.loads(path.read_text())


def test_synth_outputs(data):
    assert (data.parent / "data.manifest.json").exists()
    truth = _json(data.parent / "truth.json")
    assert truth["tpr"] == ACC and truth["spec"]["seed"] == 1
    assert truth["dataset_hash"] == load_dataset(data).content_hash


def test_ingest_ok_and_ragged(tmp_path, data, capsys):
    assert main(["ingest", str(data), "--out", str(tmp_path / "r.json")]) == 0
    rep = _json(tmp_path / "r.json")
    assert (rep["n"], rep["K"], rep["m"]) == (200, 16, 5)
    recs = [{"query_id": "a", "response_index": j, "scores": {"v": 0.1}} for j in range(3)]
    recs += [{"query_id": "b", "response_index": j, "scores": {"v": 0.1}} for j in range(2)]
    bad = write_jsonl(tmp_path / "bad.jsonl", recs)
    capsys.readouterr()
    assert main(["ingest", str(bad)]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "DatasetError" and "ragged K" in err["message"]


def test_missing_file_exit_code(tmp_path, capsys):
    assert main(["ingest", str(tmp_path / "nope.jsonl")]) == 2
    assert "cannot read" in json.loads(capsys.readouterr().err)["message"]


def test_fit_artifact(tmp_path, data):
    out = tmp_path / "fit.json"
    assert main(["fit", str(data), "--seed", "3", "--out", str(out)]) == 0
    doc = _json(out)
    assert doc["converged"] is True
    assert {"prior", "verifiers", "config", "dataset_hash", "config_hash", "final_loss"} <= set(doc)
    assert doc["config"]["weaver"]["fit"]["seed"] == 3
    assert doc["dataset_hash"] == load_dataset(data).content_hash
    assert len(doc["dev_queries"]) == 10


def test_config_file_and_flag_precedence(tmp_path, data):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"dev_fraction": 0.2, "seed": 5,
                               "weaver": {"binarization": {"strategy": "dev_adaptive"}}}))
    main(["fit", str(data), "--config", str(cfg), "--out", str(tmp_path / "a.json")])
    main(["fit", str(data), "--config", str(cfg), "--seed", "6", "--out", str(tmp_path / "b.json")])
    a, b = _json(tmp_path / "a.json"), _json(tmp_path / "b.json")
    assert a["config"]["seed"] == 5 and b["config"]["seed"] == 6
    assert len(a["dev_queries"]) == 40
    assert a["config"]["weaver"]["binarization"]["strategy"] == "dev_adaptive"
    assert a["config_hash"] != b["config_hash"]
    cfg.write_text(json.dumps({"bogus": 1}))
    assert main(["fit", str(data), "--config", str(cfg)]) == 2


def test_single_cluster_equals_global(tmp_path, data):
    main(["fit", str(data), "--out", str(tmp_path / "g.json")])
    main(["fit", str(data), "--clusters", "1", "--out", str(tmp_path / "c.json")])
    g, c = _json(tmp_path / "g.json"), _json(tmp_path / "c.json")
    assert g["verifiers"] == c["verifiers"] and "clustering" not in c


def test_clustered_fit_and_select(tmp_path, data):
    fit = tmp_path / "fit.json"
    assert main(["fit", str(data), "--clusters", "2", "--threshold-mode", "per_model",
                 "--dev-fraction", "0.3", "--out", str(fit)]) == 0
    doc = _json(fit)
    assert len(doc["clustering"]["clusters"]) == 2
    assert doc["clustering"]["threshold_mode"] == "per_model"
    assert main(["select", str(data), "--fit", str(fit), "--out", str(tmp_path / "s.json")]) == 0
    assert _json(tmp_path / "s.json")["strategy"] == "weaver_clustered"


def test_select_then_score(tmp_path, data):
    main(["fit", str(data), "--out", str(tmp_path / "fit.json")])
    assert main(["select", str(data), "--fit", str(tmp_path / "fit.json"), "--with-scores",
                 "--out", str(tmp_path / "sel.json")]) == 0
    sel = _json(tmp_path / "sel.json")
    b = load_dataset(data)
    picks = {r["query_id"]: r["response_index"] for r in sel["selections"]}
    assert len(picks) == b.n
    assert all(len(r["posteriors"]) == b.K for r in sel["selections"])
    rate = np.mean([b.y[i, picks[q]] for i, q in enumerate(b.query_ids)])
    main(["eval", str(data), "--strategies", "weaver", "--k", "16", "--fit", str(tmp_path / "fit.json"),
          "--out", str(tmp_path / "m.json")])
    assert _json(tmp_path / "m.json")["success_rate"]["weaver"]["16"] == pytest.approx(rate)


def test_eval_report(tmp_path, data):
    out, csv = tmp_path / "m.json", tmp_path / "m.csv"
    assert main(["eval", str(data), "--strategies", "weaver,majority,naive,first", "--k", "1,4,16",
                 "--trials", "5", "--out", str(out), "--csv", str(csv)]) == 0
    m = _json(out)
    b = load_dataset(data)
    assert m["success_rate"]["first"]["16"] == pytest.approx(b.y[:, 0].mean())
    assert m["pass_at_k"]["16"] == pytest.approx(b.y.any(axis=1).mean())
    for s in ("weaver", "majority", "naive", "first"):
        assert m["success_rate"][s]["16"] <= m["pass_at_k"]["16"] + 1e-12
    assert m["success_rate"]["weaver"]["16"] >= m["success_rate"]["naive"]["16"]
    assert len(m["per_verifier"]) == 5
    assert csv.read_text().startswith("metric,strategy,k,value\n")
    assert main(["eval", str(data), "--k", "17"]) == 2
    assert main(["eval", str(data), "--strategies", "psychic"]) == 2


def test_eval_exclude_dev(tmp_path, data):
    main(["eval", str(data), "--strategies", "first", "--k", "16", "--exclude-dev",
          "--out", str(tmp_path / "m.json")])
    m = _json(tmp_path / "m.json")
    b = load_dataset(data)
    dev = split_dev(b, 0.05, 0).dev_mask
    assert m["evaluated_queries"] == 190
    assert m["success_rate"]["first"]["16"] == pytest.approx(b.y[~dev, 0].mean())


def test_export_distill(tmp_path, data):
    main(["fit", str(data), "--out", str(tmp_path / "fit.json")])
    assert main(["export-distill", str(data), "--fit", str(tmp_path / "fit.json"),
                 "--out", str(tmp_path / "pl.jsonl")]) == 0
    lines = (tmp_path / "pl.jsonl").read_text().splitlines()
    assert len(lines) == 200 * 16
    recs = [json.loads(x) for x in lines]
    assert all(0.0 <= r["posterior"] <= 1.0 for r in recs)
    meta = _json(tmp_path / "pl.jsonl.meta.json")
    assert meta["records"] == 3200 and meta["dataset_hash"].startswith("sha256:")


def test_scaling_fit_cli(tmp_path):
    csv = tmp_path / "c.csv"
    csv.write_text("k,value\n1,0.3\n2,0.4\n4,0.5\n8,0.58\n16,0.62\n32,0.64\n64,0.65\n")
    assert main(["scaling-fit", "--input", str(csv), "--form", "selection", "--holdout", "0.9",
                 "--out", str(tmp_path / "s.json")]) == 0
    doc = _json(tmp_path / "s.json")
    assert doc["form"] == "selection_full" and doc["r2"] > 0.99
    assert doc["holdout"]["test_points"] == 1
    assert main(["scaling-fit", "--input", str(csv), "--form", "coverage"]) == 0
    csv.write_text("k,value\n1,0.3\n")
    assert main(["scaling-fit", "--input", str(csv)]) == 1


def _run_all(tmp_path, data, tag):
    d = tmp_path / tag
    d.mkdir()
    cmds = [
        ["ingest", str(data), "--out", str(d / "ingest.json")],
        ["fit", str(data), "--seed", "4", "--out", str(d / "fit.json")],
        ["fit", str(data), "--seed", "4", "--clusters", "2", "--threshold-mode", "per_cluster",
         "--dev-fraction", "0.3", "--out", str(d / "fitc.json")],
        ["select", str(data), "--fit", str(d / "fit.json"), "--out", str(d / "sel.json")],
        ["eval", str(data), "--seed", "4", "--k", "1,8,16", "--trials", "3",
         "--out", str(d / "m.json"), "--csv", str(d / "m.csv")],
        ["export-distill", str(data), "--fit", str(d / "fit.json"), "--out", str(d / "pl.jsonl")],
        ["synth", "--spec", str(data.parent.parent / "spec.json"), "--seed", "2",
         "--out", str(d / "syn" / "data.jsonl")],
    ]
    for c in cmds:
        assert main(c) == 0, c
    csv = tmp_path / "curve.csv"
    csv.write_text("k,value\n1,0.3\n2,0.4\n4,0.5\n8,0.58\n16,0.62\n32,0.64\n64,0.65\n")
    assert main(["scaling-fit", "--input", str(csv), "--seed", "4", "--out", str(d / "scale.json")]) == 0
    return {p.relative_to(d): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def test_every_command_is_byte_deterministic(tmp_path, data):
    first = _run_all(tmp_path, data, "a")
    second = _run_all(tmp_path, data, "b")
    assert first.keys() == second.keys() and len(first) >= 12
    for name in first:
        assert first[name] == second[name], name


def test_inputs_not_mutated(tmp_path, data):
    before = data.read_bytes()
    main(["fit", str(data), "--out", str(tmp_path / "fit.json")])
    main(["eval", str(data), "--k", "1"])
    assert data.read_bytes() == before


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "weaver", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.startswith("weaver ")
