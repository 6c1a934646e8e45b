"""Ground-truth labels and dataset manifests."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path

from samcheck.errors import ManifestError, SamcheckError, TruthPathMissing
from samcheck.findings import FindingCategory
from samcheck.template import ConfigDocument, ParameterPath, load_template


class Cohort(str, enum.Enum):
    ERROR_FREE = "ErrorFree"
    REAL_WORLD = "RealWorld"
    INJECTED = "Injected"


@dataclass(frozen=True)
class Label:
    path: ParameterPath
    category: FindingCategory
    note: str = ""

    def to_dict(self) -> dict:
        return {"path": self.path.dotted(), "category": self.category.value, "note": self.note}


@dataclass(frozen=True)
class GroundTruth:
    origin: str
    misconfigured: tuple[Label, ...] = ()
    note: str = ""

    @property
    def paths(self) -> frozenset[ParameterPath]:
        return frozenset(label.path for label in self.misconfigured)

    def category_of(self, path: ParameterPath) -> FindingCategory | None:
        for label in self.misconfigured:
            if label.path == path:
                return label.category
        return None

    def validate(self, doc: ConfigDocument) -> None:
        missing = [p.dotted() for p in self.paths if p not in doc.parameter_set]
        if missing:
            raise TruthPathMissing(f"{self.origin}: ground truth names absent parameters: {', '.join(sorted(missing))}")

    def to_dict(self) -> dict:
        out = {"origin": self.origin, "misconfigured": [label.to_dict() for label in self.misconfigured]}
        if self.note:
            out["note"] = self.note
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "GroundTruth":
        labels = tuple(
            Label(ParameterPath.parse(m["path"]), FindingCategory(m["category"]), m.get("note", ""))
            for m in data.get("misconfigured", [])
        )
        return cls(data["origin"], labels, data.get("note", ""))

    @classmethod
    def load(cls, path: str | Path) -> "GroundTruth":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
            raise ManifestError(f"cannot read ground truth {path}: {exc}") from exc


@dataclass(frozen=True)
class ManifestEntry:
    template: Path
    truth: Path
    cohort: Cohort

    @property
    def origin(self) -> str:
        return self.template.name


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    root: Path = field(default_factory=Path)

    @classmethod
    def load(cls, path: str | Path, validate: bool = True) -> "DatasetManifest":
        """Read a manifest; file paths inside it are relative to its directory.

        Raises:
            ManifestError: unreadable manifest, missing files, bad cohort tag,
                or an unparseable template.
        """
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
        root = path.parent
        entries = []
        for i, raw in enumerate(data.get("entries", [])):
            try:
                entry = ManifestEntry(root / raw["template"], root / raw["truth"], Cohort(raw["cohort"]))
            except (KeyError, TypeError, ValueError) as exc:
                raise ManifestError(f"manifest entry {i} is malformed: {exc}") from exc
            entries.append(entry)
        manifest = cls(entries, root)
        if validate:
            manifest.validate()
        return manifest

    def validate(self) -> None:
        for e in self.entries:
            for p in (e.template, e.truth):
                if not p.is_file():
                    raise ManifestError(f"missing file {p}")
            try:
                load_template(e.template)
            except SamcheckError as exc:
                raise ManifestError(f"{e.template}: {exc}") from exc
            GroundTruth.load(e.truth)

    def dump(self, path: str | Path) -> None:
        path = Path(path)
        rel = [
            {
                "template": str(e.template.relative_to(path.parent)),
                "truth": str(e.truth.relative_to(path.parent)),
                "cohort": e.cohort.value,
            }
            for e in self.entries
        ]
        path.write_text(json.dumps({"entries": rel}, indent=2) + "\n", encoding="utf-8")
