"""Parameter-level scoring of detectors against labeled datasets."""

from __future__ import annotations

import logging
import statistics
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Protocol

from samcheck.dataset import Cohort, DatasetManifest, GroundTruth
from samcheck.errors import EmptyDataset, TruthPathMissing
from samcheck.findings import DetectionReport, FindingCategory
from samcheck.template import ConfigDocument, ParameterPath, load_template

log = logging.getLogger(__name__)


class Detector(Protocol):
    name: str

    def detect(self, doc: ConfigDocument, repetition: int = 0) -> DetectionReport: ...


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError(f"negative confusion count: {self}")

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}


def total_counts(items: Iterable[ConfusionCounts]) -> ConfusionCounts:
    out = ConfusionCounts()
    for c in items:
        out = out + c
    return out


@dataclass(frozen=True)
class Metrics:
    precision: float
    recall: float
    f1: float
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1, "degenerate": self.degenerate}


def f1_score(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def compute_metrics(counts: ConfusionCounts) -> Metrics:
    """Precision, recall and F1; any undefined ratio is reported as 0."""
    degenerate = False
    if counts.tp + counts.fp:
        precision = counts.tp / (counts.tp + counts.fp)
    else:
        precision, degenerate = 0.0, True
    if counts.tp + counts.fn:
        recall = counts.tp / (counts.tp + counts.fn)
    else:
        recall, degenerate = 0.0, True
    if precision + recall == 0:
        degenerate = True
    return Metrics(precision, recall, f1_score(precision, recall), degenerate)


def classify(
    detected: Iterable[ParameterPath],
    truth: GroundTruth | Iterable[ParameterPath],
    all_params: Iterable[ParameterPath],
    unmatched: int = 0,
) -> ConfusionCounts:
    """Confusion counts for one file.

    Each unmatched finding is one extra false positive with no parameter
    behind it, so ``tp + fp + tn + fn == len(all_params) + unmatched``.

    Raises:
        TruthPathMissing: a truth path is not a parameter of the document.
    """
    params = set(all_params)
    truth_set = set(truth.paths) if isinstance(truth, GroundTruth) else set(truth)
    missing = truth_set - params
    if missing:
        raise TruthPathMissing(f"ground truth names absent parameters: {sorted(p.dotted() for p in missing)}")
    flagged = set(detected)
    stray = flagged - params
    if stray:
        # a path outside the document cannot be a real parameter; treat it like an unmatched finding
        unmatched += len(stray)
        flagged -= stray
    tp = len(flagged & truth_set)
    fn = len(truth_set - flagged)
    wrong = len(flagged - truth_set)
    counts = ConfusionCounts(tp=tp, fp=wrong + unmatched, tn=len(params) - len(truth_set) - wrong, fn=fn)
    if counts.total != len(params) + unmatched:
        raise AssertionError(f"accounting conservation violated: {counts} over {len(params)} parameters")
    return counts


def category_tp(report: DetectionReport, truth: GroundTruth) -> Counter:
    """True positives whose reported category matches the labeled one."""
    tally: Counter = Counter()
    for path in sorted(report.detected_paths & truth.paths, key=ParameterPath.dotted):
        expected = truth.category_of(path)
        if any(f.aligned_path == path and f.category is expected for f in report.findings):
            tally[expected.value] += 1
    return tally


@dataclass
class FileResult:
    origin: str
    cohort: Cohort
    counts: ConfusionCounts
    per_category_tp: Counter
    report: DetectionReport


@dataclass
class RunReport:
    repetition: int
    per_file: dict[str, ConfusionCounts]
    totals: ConfusionCounts
    metrics: Metrics
    per_cohort: dict[str, ConfusionCounts]
    per_category_tp: dict[str, int]
    failures: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "repetition": self.repetition,
            "per_file": {k: v.to_dict() for k, v in self.per_file.items()},
            "totals": self.totals.to_dict(),
            "metrics": self.metrics.to_dict(),
            "per_cohort": {k: v.to_dict() for k, v in self.per_cohort.items()},
            "per_category_tp": dict(sorted(self.per_category_tp.items())),
            "failures": self.failures,
        }


@dataclass
class EvalReport:
    detector: str
    runs: list[RunReport]
    mean: Metrics
    provenance: dict = field(default_factory=dict)

    @property
    def failures(self) -> list[dict]:
        return [f for r in self.runs for f in r.failures]

    @property
    def totals(self) -> ConfusionCounts:
        return self.runs[0].totals

    def to_dict(self) -> dict:
        return {
            "detector": self.detector,
            "repetitions": len(self.runs),
            "runs": [r.to_dict() for r in self.runs],
            "mean": {k: v for k, v in self.mean.to_dict().items() if k != "degenerate"},
            "failures": self.failures,
            "provenance": self.provenance,
        }


def mean_metrics(runs: list[RunReport]) -> Metrics:
    """Arithmetic mean of the per-run metrics (not metrics of pooled counts)."""
    return Metrics(
        statistics.fmean(r.metrics.precision for r in runs),
        statistics.fmean(r.metrics.recall for r in runs),
        statistics.fmean(r.metrics.f1 for r in runs),
        any(r.metrics.degenerate for r in runs),
    )


def _score(entry, doc: ConfigDocument, truth: GroundTruth, detector: Detector, repetition: int) -> FileResult:
    report = detector.detect(doc, repetition=repetition)
    counts = classify(report.detected_paths, truth, doc.parameters, report.unmatched_count)
    return FileResult(entry.origin, entry.cohort, counts, category_tp(report, truth), report)


def run_eval(
    manifest: DatasetManifest,
    detector: Detector,
    repetitions: int = 5,
    seed: int = 0,
    workers: int = 1,
    provenance: dict | None = None,
) -> EvalReport:
    """Score ``detector`` on every manifest file, ``repetitions`` times.

    Failures of single files are recorded in the run and excluded from its
    totals.  Results are merged in manifest order whatever the completion
    order of parallel workers.

    Raises:
        EmptyDataset: the manifest lists no files.
    """
    if not manifest.entries:
        raise EmptyDataset("manifest lists no files")
    if repetitions < 1:
        raise ValueError("repetitions must be at least 1")
    loaded: dict[str, tuple[ConfigDocument, GroundTruth] | Exception] = {}
    for e in manifest.entries:
        try:
            doc = load_template(e.template)
            truth = GroundTruth.load(e.truth)
            truth.validate(doc)
            loaded[e.origin] = (doc, truth)
        except Exception as exc:  # recorded per file, never aborts the campaign
            loaded[e.origin] = exc

    runs = []
    for rep in range(repetitions):
        def job(entry, rep=rep):
            item = loaded[entry.origin]
            if isinstance(item, Exception):
                return item
            try:
                return _score(entry, item[0], item[1], detector, rep)
            except Exception as exc:
                return exc

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(job, manifest.entries))
        else:
            results = [job(e) for e in manifest.entries]

        per_file: dict[str, ConfusionCounts] = {}
        per_cohort = {c.value: ConfusionCounts() for c in Cohort}
        cat_tp: Counter = Counter()
        failures = []
        for entry, res in zip(manifest.entries, results):
            if isinstance(res, Exception):
                log.warning("%s failed in repetition %d: %s", entry.origin, rep, res)
                failures.append({"origin": entry.origin, "repetition": rep, "error": f"{type(res).__name__}: {res}"})
                continue
            per_file[res.origin] = res.counts
            per_cohort[res.cohort.value] = per_cohort[res.cohort.value] + res.counts
            cat_tp.update(res.per_category_tp)
        totals = total_counts(per_file.values())
        runs.append(RunReport(rep, per_file, totals, compute_metrics(totals), per_cohort,
                              {c.value: cat_tp.get(c.value, 0) for c in FindingCategory}, failures))
    prov = {"detector": detector.name, "repetitions": repetitions, "seed": seed, "files": len(manifest.entries)}
    prov.update(provenance or {})
    return EvalReport(detector.name, runs, mean_metrics(runs), prov)


def _pct(x: float) -> str:
    return f"{100 * x:6.2f}%"


def render_table(report: EvalReport) -> str:
    """Plain-text summary: counts and metrics per repetition plus the mean."""
    lines = [
        f"Detector: {report.detector}",
        f"{'Run':<6}{'TP':>6}{'FP':>6}{'TN':>7}{'FN':>6}  {'Precision':>9}  {'Recall':>7}  {'F1':>7}",
    ]
    for r in report.runs:
        t, m = r.totals, r.metrics
        lines.append(f"{r.repetition + 1:<6}{t.tp:>6}{t.fp:>6}{t.tn:>7}{t.fn:>6}  {_pct(m.precision):>9}  "
                     f"{_pct(m.recall):>7}  {_pct(m.f1):>7}")
    m = report.mean
    lines.append(f"{'Mean':<31}  {_pct(m.precision):>9}  {_pct(m.recall):>7}  {_pct(m.f1):>7}")
    first = report.runs[0]
    lines.append("")
    lines.append("Per cohort (run 1): " + ", ".join(
        f"{k} tp={v.tp} fp={v.fp} tn={v.tn} fn={v.fn}" for k, v in first.per_cohort.items()))
    if report.failures:
        lines.append(f"Failures: {len(report.failures)}")
        lines.extend(f"  {f['origin']} (run {f['repetition'] + 1}): {f['error']}" for f in report.failures)
    return "\n".join(lines)
