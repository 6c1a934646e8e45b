"""Independent expected-value oracle for the synthetic dataset.

Computes the evaluation numbers for datasets/synthetic straight from the
intended detections in script.yaml, the truth files and a standalone
parameter count.  Nothing from the samcheck package is imported, so the
resulting datasets/synthetic/expected_report.json is a check on the parser,
aligner and scorer rather than a replay of them.

Parameter count: every mapping key is one parameter, every leaf value is one
parameter, and a node carrying a local ``!`` tag is a single leaf.
"""

from __future__ import annotations

import json
from pathlib import Path

import yaml

ROOT = Path(__file__).resolve().parents[1]
DATA = ROOT / "datasets" / "synthetic"
COHORTS = ("ErrorFree", "RealWorld", "Injected")


def count_parameters(text: str) -> int:
    def walk(node) -> int:
        if node.tag.startswith("!") and not node.tag.startswith("!!"):
            return 1
        if isinstance(node, yaml.MappingNode):
            return sum(1 + walk(v) for _, v in node.value)
        if isinstance(node, yaml.SequenceNode):
            return sum(walk(v) for v in node.value)
        return 1

    return walk(yaml.compose(text))


def counts_for(n: int, truth: set[str], hits: set[str], unmatched: int) -> dict:
    tp = len(hits & truth)
    wrong = len(hits - truth)
    return {"tp": tp, "fp": wrong + unmatched, "tn": n - len(truth) - wrong, "fn": len(truth - hits)}


def metrics(c: dict) -> dict:
    p = c["tp"] / (c["tp"] + c["fp"]) if c["tp"] + c["fp"] else 0.0
    r = c["tp"] / (c["tp"] + c["fn"]) if c["tp"] + c["fn"] else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return {"precision": p, "recall": r, "f1": f}


def add(a: dict, b: dict) -> dict:
    return {k: a[k] + b[k] for k in ("tp", "fp", "tn", "fn")}


def main() -> dict:
    manifest = json.loads((DATA / "manifest.json").read_text(encoding="utf-8"))
    script = yaml.safe_load((DATA / "script.yaml").read_text(encoding="utf-8"))["files"]
    files = []
    for e in manifest["entries"]:
        name = Path(e["template"]).name
        truth = json.loads((DATA / e["truth"]).read_text(encoding="utf-8"))
        files.append((name, e["cohort"], count_parameters((DATA / e["template"]).read_text(encoding="utf-8")),
                      {m["path"] for m in truth["misconfigured"]}, script[name]["runs"]))
    repetitions = len(files[0][4])
    runs = []
    for rep in range(repetitions):
        per_file, per_cohort = {}, {c: {"tp": 0, "fp": 0, "tn": 0, "fn": 0} for c in COHORTS}
        totals = {"tp": 0, "fp": 0, "tn": 0, "fn": 0}
        for name, cohort, n, truth, script_runs in files:
            run = script_runs[rep]
            c = counts_for(n, truth, set(run["detected"]), run.get("unmatched", 0))
            per_file[name] = c
            per_cohort[cohort] = add(per_cohort[cohort], c)
            totals = add(totals, c)
        runs.append({"per_file": per_file, "per_cohort": per_cohort, "totals": totals, "metrics": metrics(totals)})
    mean = {k: sum(r["metrics"][k] for r in runs) / repetitions for k in ("precision", "recall", "f1")}
    expected = {"parameters": {name: n for name, _, n, _, _ in files}, "repetitions": repetitions,
                "runs": runs, "mean": mean}
    (DATA / "expected_report.json").write_text(json.dumps(expected, indent=2) + "\n", encoding="utf-8")
    return expected


if __name__ == "__main__":
    out = main()
    print(json.dumps(out["mean"]), [r["totals"] for r in out["runs"]])
