"""Turn raw model output into findings aligned to template parameters."""

from __future__ import annotations

import enum
import logging
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

from samcheck.template import (
    ConfigDocument,
    NodeKind,
    ParameterPath,
    ParamKind,
    leaf_text,
    list_resources,
)

log = logging.getLogger(__name__)

START, END = "<START>", "<END>"
MISSING_DELIMITERS = "MissingDelimiters"


class FindingCategory(str, enum.Enum):
    RESOURCE_TYPE = "ResourceTypeError"
    ENTRY = "ConfigurationEntryError"
    VALUE = "ConfigurationEntryValueError"
    ENTRY_DEPENDENCY = "EntryDependencyError"
    VALUE_DEPENDENCY = "ValueDependencyError"
    UNCATEGORIZED = "Uncategorized"

    @property
    def heading(self) -> str:
        return _HEADINGS.get(self, "Uncategorized")


_HEADINGS = {
    FindingCategory.RESOURCE_TYPE: "Resource Type Errors",
    FindingCategory.ENTRY: "Configuration Entry Errors",
    FindingCategory.VALUE: "Configuration Entry Value Errors",
    FindingCategory.ENTRY_DEPENDENCY: "Entry Dependency Errors",
    FindingCategory.VALUE_DEPENDENCY: "Value Dependency Errors",
}

_VALUE_CATEGORIES = {FindingCategory.VALUE, FindingCategory.VALUE_DEPENDENCY}


@dataclass(frozen=True)
class Finding:
    category: FindingCategory
    mention_text: str
    explanation: str = ""
    aligned_path: ParameterPath | None = None

    def __post_init__(self):
        if not self.mention_text.strip():
            raise ValueError("a finding needs a non-empty mention")

    @property
    def matched(self) -> bool:
        return self.aligned_path is not None

    @property
    def text(self) -> str:
        return f"{self.mention_text} {self.explanation}".strip()

    def to_dict(self) -> dict:
        return {
            "category": self.category.value,
            "mention": self.mention_text,
            "explanation": self.explanation,
            "path": self.aligned_path.dotted() if self.aligned_path else None,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Finding":
        path = data.get("path")
        return cls(
            FindingCategory(data["category"]),
            data["mention"],
            data.get("explanation", ""),
            ParameterPath.parse(path) if path else None,
        )


@dataclass
class DetectionReport:
    origin: str
    detector: str
    findings: list[Finding] = field(default_factory=list)
    raw_response: str | None = None
    warnings: list[str] = field(default_factory=list)

    @property
    def detected_paths(self) -> set[ParameterPath]:
        return {f.aligned_path for f in self.findings if f.aligned_path is not None}

    @property
    def unmatched_count(self) -> int:
        return sum(1 for f in self.findings if f.aligned_path is None)

    def to_dict(self) -> dict:
        return {
            "origin": self.origin,
            "detector": self.detector,
            "findings": [f.to_dict() for f in self.findings],
            "warnings": list(self.warnings),
            "raw_response": self.raw_response,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DetectionReport":
        return cls(
            data["origin"],
            data["detector"],
            [Finding.from_dict(f) for f in data.get("findings", [])],
            data.get("raw_response"),
            list(data.get("warnings", [])),
        )


# -- delimiters ------------------------------------------------------------------


def extract_delimited(raw: str, warnings: list[str] | None = None) -> str:
    """Text between the first ``<START>`` and the first ``<END>`` after it.

    Without a complete marker pair the raw text comes back unchanged and a
    ``MissingDelimiters`` warning is appended to ``warnings``.
    """
    start = raw.find(START)
    if start >= 0:
        end = raw.find(END, start + len(START))
        if end >= 0:
            return raw[start + len(START) : end]
    if warnings is not None:
        warnings.append(MISSING_DELIMITERS)
    return raw


# -- section parsing -------------------------------------------------------------

_HEADING_RE = re.compile(
    r"(?<![A-Za-z])(?P<name>resource\s+type|configuration\s+entry\s+value|configuration\s+entry"
    r"|entry\s+dependency|value\s+dependency)\s+errors?(?![A-Za-z])"
    r"[ \t]*(?:\*\*|__)?[ \t]*(?::(?:[ \t]*(?:\*\*|__))?|[ \t]*$)",
    re.IGNORECASE | re.MULTILINE,
)

_CATEGORY_BY_NAME = {
    "resource type": FindingCategory.RESOURCE_TYPE,
    "configuration entry value": FindingCategory.VALUE,
    "configuration entry": FindingCategory.ENTRY,
    "entry dependency": FindingCategory.ENTRY_DEPENDENCY,
    "value dependency": FindingCategory.VALUE_DEPENDENCY,
}

_BULLET_RE = re.compile(r"^\s*(?:[-*+•]|\d+[.)])\s+")
_NOTHING_RE = re.compile(
    r"^\W*(?:none|n/?a|nil|nothing(?:\s+\w+){0,4}"
    r"|no(?:\s+\w+){0,4}?\s+(?:errors?|misconfigurations?|issues?|problems?)(?:\s+\w+){0,4})\W*$",
    re.IGNORECASE,
)
_MARKUP_LINE_RE = re.compile(r"^\W*$")
_CONCRETE_RE = re.compile(r"`[^`\n]+`|\"[^\"\n]+\"|'[A-Za-z][^'\n]*'|\b[A-Za-z]\w*(?:\.[A-Za-z]\w*)+\b")


def _category_for(name: str) -> FindingCategory:
    return _CATEGORY_BY_NAME[" ".join(name.lower().split())]


def _items(section: str) -> list[str]:
    """Split a section body into one text per bullet (or line)."""
    lines = [ln.rstrip() for ln in section.splitlines()]
    has_bullets = any(_BULLET_RE.match(ln) for ln in lines)
    items: list[str] = []
    for ln in lines:
        if not ln.strip() or _MARKUP_LINE_RE.match(ln):
            continue
        if _BULLET_RE.match(ln):
            items.append(_BULLET_RE.sub("", ln, count=1).strip())
        elif has_bullets and items and ln[:1].isspace():
            items[-1] += " " + ln.strip()
        else:
            items.append(ln.strip())
    return [it for it in items if it and not _NOTHING_RE.match(it)]


_LEAD_RE = re.compile(r"^(?:\*\*(?P<bold>[^*]+)\*\*|`(?P<code>[^`]+)`)\s*[:.\-–]?\s*")


def split_mention(item: str) -> tuple[str, str]:
    """Separate the reported subject of a bullet from its explanation."""
    item = item.strip()
    m = _LEAD_RE.match(item)
    if m:
        mention = (m.group("bold") or m.group("code")).strip().rstrip(":")
        rest = item[m.end() :].strip()
        if mention:
            return mention, rest
    head, sep, tail = item.partition(": ")
    if sep and 0 < len(head) <= 80:
        return head.strip(), tail.strip()
    m = re.search(r"(?<=[.!?])\s+(?=[A-Z`\"'*])", item)
    if m:
        return item[: m.start()].strip(), item[m.end() :].strip()
    return item, ""


def _make(category: FindingCategory, item: str) -> Finding:
    mention, explanation = split_mention(item)
    if not mention.strip():
        mention, explanation = item, ""
    return Finding(category, mention, explanation)


def parse_findings(inner: str) -> list[Finding]:
    """One finding per bullet under each recognised category heading.

    Text ahead of the first heading only produces (uncategorised) findings
    when it names something concrete: a quoted or backticked identifier, or
    a dotted path.
    """
    heads = list(_HEADING_RE.finditer(inner))
    findings: list[Finding] = []
    preamble = inner[: heads[0].start()] if heads else inner
    for item in _items(preamble):
        if _CONCRETE_RE.search(item):
            findings.append(_make(FindingCategory.UNCATEGORIZED, item))
    for i, m in enumerate(heads):
        end = heads[i + 1].start() if i + 1 < len(heads) else len(inner)
        body = inner[m.end() : end]
        category = _category_for(m.group("name"))
        findings.extend(_make(category, item) for item in _items(body))
    return findings


# -- alignment --------------------------------------------------------------------

_PATHLIKE_RE = re.compile(r"[A-Za-z0-9_:\-\\\[\]@~]+(?:\.[A-Za-z0-9_:\-\\\[\]@~]+)+")
_QUOTED_RE = re.compile(r"`([^`\n]+)`|\"([^\"\n]+)\"|'([^'\n]+)'|“([^”\n]+)”")


def _quoted(text: str) -> list[str]:
    return [next(g for g in m.groups() if g is not None) for m in _QUOTED_RE.finditer(text)]


def _word_in(word: str, text: str) -> bool:
    return re.search(rf"(?<![A-Za-z0-9_]){re.escape(word)}(?![A-Za-z0-9_])", text) is not None


class _Index:
    """Per-document lookup tables for alignment."""

    def __init__(self, doc: ConfigDocument):
        self.doc = doc
        self.params = doc.parameters
        self.param_set = doc.parameter_set
        self.entries = [p for p in self.params if p.kind is ParamKind.ENTRY_KEY]
        self.key_counts = Counter(p.segments[-1] for p in self.entries)
        self.order = {p: i for i, p in enumerate(self.params)}
        self.resources = list_resources(doc)
        values: dict[str, list[ParameterPath]] = {}
        for p in self.params:
            if p.is_value:
                node = doc.node_at(p.segments)
                if node is not None:
                    values.setdefault(leaf_text(node), []).append(p)
        self.values = values

    def value_param(self, entry: ParameterPath) -> ParameterPath | None:
        node = self.doc.node_at(entry.segments)
        if node is None or not node.is_leaf:
            return None
        vp = entry.as_value()
        return vp if vp in self.param_set else None

    def type_param(self, logical_name: str) -> ParameterPath | None:
        p = ParameterPath(("Resources", logical_name, "Type"), ParamKind.RESOURCE_TYPE)
        return p if p in self.param_set else None


def _by_dotted_path(text: str, idx: _Index) -> ParameterPath | None:
    names = {r.logical_name for r in idx.resources}
    for token in _PATHLIKE_RE.findall(text):
        token = token.rstrip(".:")
        candidates = [token]
        if token.split(".", 1)[0] in names:
            candidates.append("Resources." + token)
        for candidate in candidates:
            try:
                path = ParameterPath.parse(candidate)
            except (ValueError, IndexError):
                continue
            if path in idx.param_set:
                return path
    return None


def _mentioned_ancestors(path: ParameterPath, text: str) -> int:
    return sum(1 for seg in path.segments[:-1] if isinstance(seg, str) and _word_in(seg, text))


def _by_key_name(text: str, idx: _Index) -> ParameterPath | None:
    named = [p for p in idx.entries if _word_in(str(p.segments[-1]), text)]
    if not named:
        return None
    # a named entry that merely contains another named entry is context, not the target
    deepest = [p for p in named if not any(q is not p and q.segments[: len(p.segments)] == p.segments for q in named)]
    unique = [p for p in deepest if idx.key_counts[p.segments[-1]] == 1]
    if len(unique) == 1:
        return unique[0]
    pool = unique or deepest
    best = max(_mentioned_ancestors(p, text) for p in pool)
    for p in pool:
        if _mentioned_ancestors(p, text) == best:
            return p
    return None


def _by_value(texts: Iterable[str], idx: _Index) -> ParameterPath | None:
    for q in texts:
        hits = idx.values.get(q.strip())
        if hits and len(hits) == 1:
            return hits[0]
    return None


def _resource_type_target(text: str, idx: _Index) -> ParameterPath | None:
    typed = sorted((r for r in idx.resources if r.resource_type), key=lambda r: -len(r.resource_type))
    for r in typed:
        if r.resource_type in text:
            p = idx.type_param(r.logical_name)
            if p:
                return p
    for r in idx.resources:
        if _word_in(r.logical_name, text):
            p = idx.type_param(r.logical_name)
            if p:
                return p
    return None


def _adjust(path: ParameterPath, category: FindingCategory, idx: _Index) -> ParameterPath:
    if category in _VALUE_CATEGORIES and path.kind is ParamKind.ENTRY_KEY:
        return idx.value_param(path) or path
    if category is FindingCategory.RESOURCE_TYPE and path.segments[-1:] == ("Type",) and len(path.segments) == 3:
        return idx.value_param(path) or path
    if category in (FindingCategory.ENTRY, FindingCategory.ENTRY_DEPENDENCY) and path.is_value:
        entry = path.as_entry()
        if entry in idx.param_set and isinstance(entry.segments[-1], str):
            return entry
    return path


def _align_one(finding: Finding, idx: _Index) -> ParameterPath | None:
    full = finding.text
    if finding.category is FindingCategory.RESOURCE_TYPE:
        hit = _resource_type_target(finding.mention_text, idx) or _resource_type_target(full, idx)
        if hit:
            return hit
    for text in (finding.mention_text, full):
        hit = _by_dotted_path(text, idx)
        if hit:
            return _adjust(hit, finding.category, idx)
    quoted = _quoted(full)
    for text in (" ".join(_quoted(finding.mention_text)), finding.mention_text, full):
        hit = _by_key_name(text, idx) if text else None
        if hit:
            return _adjust(hit, finding.category, idx)
    hit = _by_value(quoted, idx)
    return _adjust(hit, finding.category, idx) if hit else None


def align_findings(findings: Sequence[Finding], doc: ConfigDocument) -> list[Finding]:
    """Attach a parameter path to each finding, or leave it unmatched.

    Cascade, first hit wins: an explicit dotted path; an entry key named in
    the text (a key unique in the document wins outright, otherwise the
    occurrence with the most of its ancestors also named, first in document
    order); a quoted value occurring exactly once.  Value categories land on
    the value parameter of the matched entry, resource type findings on the
    resource's ``Type`` value.
    """
    idx = _Index(doc)
    out = []
    for f in findings:
        path = _align_one(f, idx)
        if path is not None and path not in idx.param_set:
            log.debug("discarding alignment outside the document: %s", path)
            path = None
        out.append(replace(f, aligned_path=path))
    return out


def parse_response(raw: str, doc: ConfigDocument, detector: str) -> DetectionReport:
    warnings: list[str] = []
    inner = extract_delimited(raw, warnings)
    findings = align_findings(parse_findings(inner), doc)
    for f in findings:
        if f.aligned_path is None:
            warnings.append(f"unmatched finding: {f.mention_text[:80]}")
    return DetectionReport(doc.origin, detector, findings, raw, warnings)


def group_by_category(findings: Iterable[Finding]) -> dict[FindingCategory, list[Finding]]:
    groups: dict[FindingCategory, list[Finding]] = {}
    for f in findings:
        groups.setdefault(f.category, []).append(f)
    return groups

