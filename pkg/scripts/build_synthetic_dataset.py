"""Rebuild the bundled synthetic dataset under datasets/synthetic.

Steps:
  1. generate the injected templates from clean bases with fixed seeds,
  2. write ground-truth files (hand labels for the real-world style files),
  3. write manifest.json,
  4. turn the scripted responses in script.yaml into replay_cache.jsonl.

Run from the repository root: ``python3 scripts/build_synthetic_dataset.py``.
"""

from __future__ import annotations

import json
from pathlib import Path

import yaml

from samcheck.dataset import Cohort, DatasetManifest, GroundTruth, Label, ManifestEntry
from samcheck.findings import FindingCategory
from samcheck.gateway import CacheMode, LlmRequest, ResponseCache
from samcheck.inject import inject
from samcheck.prompt import build_slsdetector_prompt
from samcheck.template import ParameterPath, load_template, serialize

ROOT = Path(__file__).resolve().parents[1]
DATA = ROOT / "datasets" / "synthetic"
BASES = ROOT / "tests" / "fixtures" / "inject"
MODEL = "scripted-model"

INJECTIONS = [
    ("t01_s3_thumbnail.yaml", "Enum", 3, "inj_thumbnail.yaml"),
    ("t05_httpapi.yaml", "ValueRelationship", 1, "inj_orders_api.yaml"),
    ("t07_stream.yaml", "EntryRelationship", 2, "inj_stream.yaml"),
    ("t10_pipeline.yaml", "ResourceType", 4, "inj_pipeline.yaml"),
]

ERROR_FREE = ["clean_sqs_worker.yaml", "clean_rest_api.yaml", "clean_logs.yaml"]

HAND_LABELS = {
    "rw_s3_events.yaml": [
        ("Resources.BucketEventConsumer.Properties.Events.CreateMetaEvent.Condition", FindingCategory.ENTRY,
         "Condition is not a property of an S3 event source"),
    ],
    "rw_job_runner.yaml": [
        ("Resources.RunnerFunction.Properties.CodeURI", FindingCategory.ENTRY, "entry name is CodeUri"),
        ("Resources.RunnerFunction.Properties.Events.Jobs.Properties.Queue@value", FindingCategory.VALUE_DEPENDENCY,
         "JobQueue is not declared; the queue is JobsQueue"),
    ],
    "rw_image_api.yaml": [
        ("Resources.ImageFunction.Type@type", FindingCategory.RESOURCE_TYPE, "type names are case sensitive"),
        ("Resources.ImageFunction.Properties.MemorySize@value", FindingCategory.VALUE, "minimum memory is 128 MB"),
    ],
}


def build_templates() -> DatasetManifest:
    tdir, gdir = DATA / "templates", DATA / "truth"
    gdir.mkdir(parents=True, exist_ok=True)
    entries = []
    for name in ERROR_FREE:
        truth = GroundTruth(name)
        (gdir / f"{Path(name).stem}.json").write_text(truth.dumps(), encoding="utf-8")
        entries.append(ManifestEntry(tdir / name, gdir / f"{Path(name).stem}.json", Cohort.ERROR_FREE))
    for base, sub, seed, name in INJECTIONS:
        outcome = inject(load_template(BASES / base), sub, seed, origin=name)
        (tdir / name).write_text(serialize(outcome.mutated), encoding="utf-8")
        (gdir / f"{Path(name).stem}.json").write_text(outcome.ground_truth.dumps(), encoding="utf-8")
        entries.append(ManifestEntry(tdir / name, gdir / f"{Path(name).stem}.json", Cohort.INJECTED))
        print(f"{name}: {outcome.describe()}")
    for name, labels in HAND_LABELS.items():
        truth = GroundTruth(name, tuple(Label(ParameterPath.parse(p), c, n) for p, c, n in labels))
        truth.validate(load_template(tdir / name))
        (gdir / f"{Path(name).stem}.json").write_text(truth.dumps(), encoding="utf-8")
        entries.append(ManifestEntry(tdir / name, gdir / f"{Path(name).stem}.json", Cohort.REAL_WORLD))
    manifest = DatasetManifest(entries, DATA)
    manifest.dump(DATA / "manifest.json")
    return manifest


def build_cache() -> None:
    script = yaml.safe_load((DATA / "script.yaml").read_text(encoding="utf-8"))
    cache_path = DATA / "replay_cache.jsonl"
    cache_path.unlink(missing_ok=True)
    cache = ResponseCache(cache_path, CacheMode.RECORD)
    for name, spec in script["files"].items():
        prompt = build_slsdetector_prompt((DATA / "templates" / name).read_text(encoding="utf-8"))
        request = LlmRequest(prompt, MODEL, 0.0)
        for run in spec["runs"]:
            cache.append(request, run["response"], {"model": MODEL})
    print(f"{len(cache)} responses written to {cache_path}")


if __name__ == "__main__":
    build_templates()
    if (DATA / "script.yaml").exists():
        build_cache()
