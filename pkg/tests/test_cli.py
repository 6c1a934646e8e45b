from __future__ import annotations

import argparse
import json
import shutil
from pathlib import Path

import pytest

from samcheck.cli import build_parser, main, resolve_settings
from samcheck.errors import SamcheckError
from samcheck.gateway import LlmRequest, ResponseCache
from samcheck.prompt import CONSTRAINT_HEADINGS, build_slsdetector_prompt
from helpers import ROOT, SYNTHETIC

CONSUMER = ROOT / "tests" / "fixtures" / "templates" / "s3_consumer_condition.yaml"
PLANTED = ROOT / "datasets" / "planted"
CONDITION = "Resources.BucketEventConsumer.Properties.Events.CreateMetaEvent.Condition"


@pytest.fixture(autouse=True)
def _isolated(monkeypatch, tmp_path):
    monkeypatch.chdir(tmp_path)
    for var in ("SAMCHECK_CONFIG", "SAMCHECK_ALPHA", "SAMCHECK_MODEL", "SAMCHECK_CACHE", "SAMCHECK_CACHE_MODE"):
        monkeypatch.delenv(var, raising=False)


def test_prompt_dump_variants(capsys):
    assert main(["prompt-dump", str(CONSUMER)]) == 0
    sls = capsys.readouterr().out
    assert all(h in sls for h in CONSTRAINT_HEADINGS)
    assert main(["prompt-dump", str(CONSUMER), "--variant", "basic"]) == 0
    basic = capsys.readouterr().out
    assert not any(h in basic for h in CONSTRAINT_HEADINGS) and "<START>" in basic


def test_missing_template_fails(capsys):
    assert main(["prompt-dump", "nope.yaml"]) == 1
    assert "error:" in capsys.readouterr().err


def test_detect_sls_from_replay_cache(tmp_path, capsys):
    cache = tmp_path / "cache.jsonl"
    prompt = build_slsdetector_prompt(CONSUMER.read_text(encoding="utf-8"))
    ResponseCache(cache, "record").append(
        LlmRequest(prompt, "gpt-4o", 0.0),
        "<START>\nConfiguration Entry Errors:\n- `Condition`: not a property of an S3 event.\n<END>")
    assert main(["detect", str(CONSUMER), "--cache", str(cache), "--out", "r.json"]) == 0
    out = capsys.readouterr().out
    assert "Configuration Entry Errors (1):" in out and CONDITION in out
    report = json.loads((tmp_path / "r.json").read_text())
    assert report["findings"][0]["path"] == CONDITION
    prov = report["provenance"]
    assert prov["settings"]["cache_mode"] == "replay" and prov["model_name"] == "gpt-4o"


def test_detect_cache_miss_fails(tmp_path, capsys):
    assert main(["detect", str(CONSUMER), "--cache", str(tmp_path / "empty.jsonl")]) == 1
    assert "no cached response" in capsys.readouterr().err


def test_detect_passthrough_without_key(monkeypatch, capsys):
    monkeypatch.delenv("SAMCHECK_TEST_NO_KEY", raising=False)
    code = main(["detect", str(CONSUMER), "--cache-mode", "passthrough", "--api-key-env", "SAMCHECK_TEST_NO_KEY"])
    assert code == 1 and "SAMCHECK_TEST_NO_KEY" in capsys.readouterr().err


def test_detect_dd_clean_file(tmp_path, capsys):
    corpus = tmp_path / "corpus"
    shutil.copytree(PLANTED / "corpus", corpus)
    assert main(["mine", str(corpus), "--alpha", "0.5", "--out", "rb.json"]) == 0
    target = corpus / "svc05.yaml"
    assert main(["detect", str(target), "--detector", "dd", "--rulebase", "rb.json", "--out", "d.json"]) == 0
    assert json.loads((tmp_path / "d.json").read_text())["findings"] == []
    assert "0 finding(s)" in capsys.readouterr().out


def test_mine_small_planted_corpus(tmp_path, capsys):
    corpus = tmp_path / "three"
    corpus.mkdir()
    for name in ("svc00.yaml", "svc01.yaml", "svc02.yaml"):
        shutil.copy(PLANTED / "corpus" / name, corpus / name)
    assert main(["mine", str(corpus), "--alpha", "0.5", "--min-confidence", "1.0", "--out", "rb.json"]) == 0
    data = json.loads((tmp_path / "rb.json").read_text())
    items = [it for it, _ in data["items"]]
    planted = [r for r in data["rules"]
               if [items[i] for i in r["left"]] == ["E:AWS::Serverless::Api/Properties/TracingEnabled"]
               and [items[i] for i in r["right"]] == ["E:AWS::Serverless::Api/Properties/StageName"]]
    assert len(planted) == 1 and planted[0]["confidence"] == 1.0
    assert data["provenance"]["alpha"] == 0.5
    assert "transactions: 3" in capsys.readouterr().out


def test_mine_full_support_on_mixed_corpus(tmp_path, capsys):
    corpus = tmp_path / "mixed"
    corpus.mkdir()
    (corpus / "a.yaml").write_text("Description: a\n")
    (corpus / "b.yaml").write_text("Transform: AWS::Serverless-2016-10-31\n")
    assert main(["mine", str(corpus), "--alpha", "1.0", "--out", "rb.json"]) == 0
    out = capsys.readouterr().out
    assert "rules: 0" in out and "warning: no rules" in out


def test_mine_rejects_zero_alpha(tmp_path, capsys):
    assert main(["mine", str(PLANTED / "corpus"), "--alpha", "0"]) == 1
    assert "alpha" in capsys.readouterr().err


def test_inject_is_reproducible(tmp_path, capsys):
    assert main(["inject", str(CONSUMER), "--subcategory", "Enum", "--seed", "7", "--out", "a"]) == 0
    assert main(["inject", str(CONSUMER), "--subcategory", "Enum", "--seed", "7", "--out", "b"]) == 0
    a, b = sorted((tmp_path / "a").iterdir()), sorted((tmp_path / "b").iterdir())
    assert len(a) == 2 and [p.name for p in a] == [p.name for p in b]
    assert all(x.read_bytes() == y.read_bytes() for x, y in zip(a, b))


def test_inject_without_numeric_site_fails(capsys):
    assert main(["inject", str(CONSUMER), "--subcategory", "BasicNumeric"]) == 1
    assert "no eligible site" in capsys.readouterr().err


def test_eval_synthetic_matches_oracle(tmp_path, capsys):
    code = main(["eval", str(SYNTHETIC / "manifest.json"), "--model", "scripted-model",
                 "--cache", str(SYNTHETIC / "replay_cache.jsonl"), "--out", "eval.json"])
    assert code == 0
    report = json.loads((tmp_path / "eval.json").read_text())
    expected = json.loads((SYNTHETIC / "expected_report.json").read_text())
    assert report["mean"] == expected["mean"]
    assert [r["totals"] for r in report["runs"]] == [r["totals"] for r in expected["runs"]]
    assert (tmp_path / "eval.txt").read_text().startswith("Detector: SlsDetector")
    assert "Mean" in capsys.readouterr().out


def test_eval_alpha_sweep_writes_one_report_per_alpha(tmp_path):
    code = main(["eval", str(SYNTHETIC / "manifest.json"), "--detector", "dd", "--corpus",
                 str(PLANTED / "corpus"), "--alpha-sweep", "1,3,5,10", "--repetitions", "1", "--out", "dd.json"])
    assert code == 0
    names = sorted(p.name for p in tmp_path.glob("dd-*.json"))
    assert names == ["dd-a1.json", "dd-a10.json", "dd-a3.json", "dd-a5.json"]
    alphas = sorted(json.loads((tmp_path / n).read_text())["provenance"]["alpha"] for n in names)
    assert alphas == [0.01, 0.03, 0.05, 0.1]


def test_alpha_sweep_needs_dd(capsys):
    assert main(["eval", str(SYNTHETIC / "manifest.json"), "--alpha-sweep", "5", "--cache", "x.jsonl"]) == 1


def test_eval_missing_truth_file(tmp_path, capsys):
    shutil.copytree(SYNTHETIC, tmp_path / "ds")
    (tmp_path / "ds" / "truth" / "clean_logs.json").unlink()
    assert main(["eval", str(tmp_path / "ds" / "manifest.json"), "--cache", "c.jsonl"]) == 1
    assert "missing file" in capsys.readouterr().err


def _args(argv):
    return build_parser().parse_args(argv)


def test_settings_precedence(tmp_path):
    config = tmp_path / "cfg.yaml"
    config.write_text("alpha: 0.2\nmodel: from-file\nrepetitions: 3\nmin-confidence: 0.5\n")
    env = {"SAMCHECK_CONFIG": str(config), "SAMCHECK_MODEL": "from-env", "SAMCHECK_REPETITIONS": "4"}
    cfg = resolve_settings(_args(["--model", "from-flag", "mine", "x"]), env)
    assert cfg["model"] == "from-flag"
    assert cfg["repetitions"] == 4
    assert cfg["alpha"] == 0.2 and cfg["min_confidence"] == 0.5
    assert cfg["seed"] == 0
    cfg = resolve_settings(_args(["mine", "x", "--alpha", "0.3"]), env)
    assert cfg["alpha"] == 0.3 and cfg["model"] == "from-env"


def test_settings_errors(tmp_path):
    with pytest.raises(SamcheckError):
        resolve_settings(_args(["mine", "x", "--alpha", "lots"]), {})
    with pytest.raises(SamcheckError):
        resolve_settings(_args(["mine", "x", "--cache-mode", "sometimes"]), {})
    bad = tmp_path / "bad.yaml"
    bad.write_text("- a list\n")
    with pytest.raises(SamcheckError):
        resolve_settings(argparse.Namespace(config=str(bad)), {})
