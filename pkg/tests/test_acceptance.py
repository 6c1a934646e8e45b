"""Acceptance criteria, one test each.

The conftest prints a PASS/FAIL line per criterion at the end of the run.
"""

from __future__ import annotations

import json
import time
from pathlib import Path

import pytest

import samcheck.evaluate as evaluate
from samcheck.dataset import Cohort, DatasetManifest, ManifestEntry
from samcheck.detectors import LlmDetector
from samcheck.evaluate import ConfusionCounts, compute_metrics, f1_score, run_eval
from samcheck.findings import MISSING_DELIMITERS, extract_delimited
from samcheck.gateway import CacheMode, Gateway, LlmRequest, ProviderConfig, ResponseCache
from samcheck.inject import Subcategory, inject, stray_changes, write_outcome
from samcheck.miner import DataDrivenDetector, RuleBase, detect_dd, load_corpus, mine_frequent, transactions_from
from samcheck.prompt import CATEGORY_HEADINGS, CONSTRAINT_HEADINGS, build_basic_prompt, build_slsdetector_prompt
from samcheck.template import ParameterPath, load_template, parse_template, serialize
from helpers import ROOT, SYNTHETIC
from oracles import ALPHAS, brute_force_frequent, changed_paths, random_corpora, within
from tables import DELIMITER_TABLE

TESTS = ROOT / "tests"
PLANTED = ROOT / "datasets" / "planted"
TEMPLATES = TESTS / "fixtures" / "templates"
INJECT_FIXTURES = sorted((TESTS / "fixtures" / "inject").glob("*.yaml"))
CONDITION = "Resources.BucketEventConsumer.Properties.Events.CreateMetaEvent.Condition"

criterion = pytest.mark.criterion


def _within_pp(value: float, target_pct: float) -> bool:
    return abs(value * 100 - target_pct) <= 0.01


def _fastest(fn, repeat: int = 200) -> float:
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


@criterion("Metric arithmetic")
def test_metric_arithmetic():
    counts = ConfusionCounts(tp=218, fp=926, tn=3182, fn=90)
    m = compute_metrics(counts)
    assert _within_pp(m.precision, 19.06)
    assert _within_pp(m.recall, 70.78)
    assert _within_pp(m.f1, 30.03)
    assert _fastest(lambda: compute_metrics(counts)) < 1e-3


@criterion("F1 consistency")
def test_f1_consistency():
    assert _within_pp(f1_score(0.7183, 0.9188), 80.63)
    assert _fastest(lambda: f1_score(0.7183, 0.9188)) < 1e-3


@pytest.fixture(scope="module")
def corpora():
    return random_corpora(200)


@criterion("Miner oracle equivalence")
def test_miner_oracle_equivalence(corpora):
    start = time.perf_counter()
    assert len(corpora) == 200
    assert all(len(set().union(*c)) <= 12 and len(c) <= 50 for c in corpora)
    discrepancies = [
        (i, alpha)
        for i, corpus in enumerate(corpora)
        for alpha in ALPHAS
        if dict(mine_frequent(corpus, alpha)) != brute_force_frequent(corpus, alpha)
    ]
    assert discrepancies == []
    assert time.perf_counter() - start < 30


@criterion("Miner monotonicity and downward closure")
def test_miner_monotone_and_closed(corpora):
    for corpus in corpora:
        previous = None
        for alpha in sorted(ALPHAS, reverse=True):
            frequent = dict(mine_frequent(corpus, alpha))
            if previous is not None:
                assert set(previous) <= set(frequent)
            for itemset, count in frequent.items():
                for item in itemset:
                    sub = itemset - {item}
                    assert not sub or (sub in frequent and frequent[sub] >= count)
            previous = frequent


@criterion("Planted-rule end-to-end")
def test_planted_rule():
    docs, warnings = load_corpus(PLANTED / "corpus")
    assert len(docs) == 20 and warnings == []
    rb = RuleBase.build(transactions_from(docs), 0.10, 0.95)
    planted = [r for r in rb.rules
               if r.left == {"E:AWS::Serverless::Api/Properties/TracingEnabled"}
               and r.right == {"E:AWS::Serverless::Api/Properties/StageName"}]
    assert len(planted) == 1 and planted[0].confidence == 1.0 and planted[0].support == 1.0
    held = parse_template((PLANTED / "held_out.yaml").read_text(encoding="utf-8"), origin="held_out.yaml")
    report = detect_dd(held, rb)
    assert [(f.mention_text, f.aligned_path) for f in report.findings] == [
        ("E:AWS::Serverless::Api/Properties/StageName", ParameterPath.parse("Resources.MyApi.Properties"))]
    expected = json.loads((PLANTED / "expected_detection.json").read_text(encoding="utf-8"))
    assert report.to_dict() == expected


@criterion("Prompt golden tests")
def test_prompt_goldens():
    text = (TEMPLATES / "s3_consumer.yaml").read_text(encoding="utf-8")
    sls, basic = build_slsdetector_prompt(text), build_basic_prompt(text)
    role = "You are an expert at writing AWS SAM configurations for serverless applications"
    task = "Are there any misconfigurations in the above configuration file?"
    for h in CONSTRAINT_HEADINGS + CATEGORY_HEADINGS:
        assert h in sls
    assert role in sls and task in sls and "<START>" in sls and "<END>" in sls
    assert [ln.split(":")[0] for ln in sls.splitlines() if ln.startswith("Step ")] == ["Step 1", "Step 2", "Step 3"]
    assert role in basic and task in basic and "<START>" in basic and "<END>" in basic
    assert not any(h in basic for h in CONSTRAINT_HEADINGS)
    assert sls == (TESTS / "golden" / "sls_s3_consumer.txt").read_text(encoding="utf-8")
    assert basic == (TESTS / "golden" / "basic_s3_consumer.txt").read_text(encoding="utf-8")


@criterion("Delimiter extraction")
def test_delimiter_table():
    assert len(DELIMITER_TABLE) == 30
    failures = []
    for raw, expected, warned in DELIMITER_TABLE:
        warnings: list[str] = []
        got = extract_delimited(raw, warnings)
        if got != expected or warnings != ([MISSING_DELIMITERS] if warned else []):
            failures.append(raw)
    assert failures == []


@criterion("Injection round-trip")
def test_injection_round_trip(tmp_path):
    start = time.perf_counter()
    assert len(INJECT_FIXTURES) == 10
    cases = 0
    for path in INJECT_FIXTURES:
        doc = load_template(path)
        for sub in Subcategory:
            for seed in (0, 1, 2):
                out = inject(doc, sub, seed)
                text = serialize(out.mutated)
                reparsed = parse_template(text)
                assert out.ground_truth.paths <= reparsed.parameter_set
                assert stray_changes(doc, out) == []
                prefixes = [p.segments for p in out.ground_truth.paths] + [p.segments for p in out.removed]
                assert all(within(p, prefixes) for p in changed_paths(doc.source_text, text))
                first = write_outcome(out, tmp_path / "a")
                second = write_outcome(inject(doc, sub, seed), tmp_path / "b")
                assert all(x.read_bytes() == y.read_bytes() for x, y in zip(first, second))
                cases += 1
    assert cases == 180
    assert time.perf_counter() - start < 10


def _replay_detector(cache: Path) -> LlmDetector:
    gateway = Gateway(ProviderConfig(model_name="scripted-model"), ResponseCache(cache, CacheMode.REPLAY))
    return LlmDetector(gateway)


@criterion("Mock end-to-end evaluation")
def test_mock_end_to_end():
    start = time.perf_counter()
    manifest = DatasetManifest.load(SYNTHETIC / "manifest.json")
    cohorts = [e.cohort for e in manifest.entries]
    assert (cohorts.count(Cohort.ERROR_FREE), cohorts.count(Cohort.INJECTED), cohorts.count(Cohort.REAL_WORLD)) == (3, 4, 3)
    report = run_eval(manifest, _replay_detector(SYNTHETIC / "replay_cache.jsonl"), repetitions=5).to_dict()
    expected = json.loads((SYNTHETIC / "expected_report.json").read_text(encoding="utf-8"))
    assert report["failures"] == []
    assert len(report["runs"]) == expected["repetitions"] == 5
    for got, want in zip(report["runs"], expected["runs"]):
        assert got["per_file"] == want["per_file"]
        assert got["per_cohort"] == want["per_cohort"]
        assert got["totals"] == want["totals"]
        assert {k: got["metrics"][k] for k in ("precision", "recall", "f1")} == want["metrics"]
    assert report["mean"] == expected["mean"]
    assert time.perf_counter() - start < 5


@criterion("S3 consumer fixture scoring")
def test_consumer_scoring(tmp_path):
    template = TEMPLATES / "s3_consumer_condition.yaml"
    manifest = DatasetManifest([ManifestEntry(template, TEMPLATES / "s3_consumer_condition.truth.json", Cohort.REAL_WORLD)])
    cache = tmp_path / "consumer.jsonl"
    request = LlmRequest(build_slsdetector_prompt(template.read_text(encoding="utf-8")), "scripted-model", 0.0)
    recorder = ResponseCache(cache, CacheMode.RECORD)
    recorder.append(request, "<START>\nConfiguration Entry Errors:\n"
                             "- The `Condition` entry of the CreateMetaEvent event is not supported for S3 events.\n<END>")
    recorder.append(request, "<START>\nNo misconfigurations found.\n<END>")
    report = run_eval(manifest, _replay_detector(cache), repetitions=2)
    flagged, empty = (r.per_file["s3_consumer_condition.yaml"] for r in report.runs)
    assert (flagged.tp, flagged.fp, flagged.fn) == (1, 0, 0)
    assert (empty.tp, empty.fp, empty.fn) == (0, 0, 1)
    assert report.runs[0].per_category_tp["ConfigurationEntryError"] == 1


@criterion("Accounting conservation")
def test_conservation_on_every_evaluation(monkeypatch):
    calls = []
    original = evaluate.classify

    def checked(detected, truth, all_params, unmatched=0):
        counts = original(detected, truth, all_params, unmatched)
        calls.append(counts.total == len(set(all_params)) + unmatched + len(set(detected) - set(all_params)))
        return counts

    monkeypatch.setattr(evaluate, "classify", checked)
    manifest = DatasetManifest.load(SYNTHETIC / "manifest.json")
    run_eval(manifest, _replay_detector(SYNTHETIC / "replay_cache.jsonl"), repetitions=5)
    docs, _ = load_corpus(PLANTED / "corpus")
    run_eval(manifest, DataDrivenDetector(RuleBase.build(transactions_from(docs), 0.10, 0.95)), repetitions=2)
    assert len(calls) == 70 and all(calls)
