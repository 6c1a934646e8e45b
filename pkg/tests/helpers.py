"""Small test doubles."""

from __future__ import annotations

import shutil
from pathlib import Path

from samcheck.findings import DetectionReport, Finding, FindingCategory
from samcheck.template import ConfigDocument, ParameterPath

ROOT = Path(__file__).resolve().parents[1]
SYNTHETIC = ROOT / "datasets" / "synthetic"


class ScriptedDetector:
    """Returns fixed detections per (origin, repetition)."""

    name = "Scripted"

    def __init__(self, script: dict[str, list[tuple[list[str], int]]]):
        self.script = script

    def detect(self, doc: ConfigDocument, repetition: int = 0) -> DetectionReport:
        runs = self.script.get(doc.origin.rsplit("/", 1)[-1], [([], 0)])
        paths, unmatched = runs[min(repetition, len(runs) - 1)]
        findings = [Finding(FindingCategory.ENTRY, p, "", ParameterPath.parse(p)) for p in paths]
        findings += [Finding(FindingCategory.UNCATEGORIZED, f"vague {i}") for i in range(unmatched)]
        return DetectionReport(doc.origin, self.name, findings)


def copy_synthetic(dst: Path) -> Path:
    shutil.copytree(SYNTHETIC, dst)
    return dst / "manifest.json"
