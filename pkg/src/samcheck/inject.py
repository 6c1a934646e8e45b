"""Seeded fault injection: one labeled misconfiguration per call."""

from __future__ import annotations

import difflib
import enum
import json
import random
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Sequence

from samcheck.dataset import GroundTruth, Label
from samcheck.errors import NoEligibleParameter
from samcheck.findings import FindingCategory
from samcheck.normalize import locate
from samcheck.template import (
    ConfigDocument,
    Node,
    NodeKind,
    ParameterPath,
    ParamKind,
    ScalarKind,
    delete_entry,
    insert_entry,
    leaf_text,
    list_resources,
    replace_node,
    resource_types,
    serialize,
)


class Subcategory(str, enum.Enum):
    RESOURCE_TYPE = "ResourceType"
    ENTRY = "Entry"
    BASIC_NUMERIC = "BasicNumeric"
    ENUM = "Enum"
    ENTRY_RELATIONSHIP = "EntryRelationship"
    VALUE_RELATIONSHIP = "ValueRelationship"


RANDOM = "Random"

CATEGORY_OF = {
    Subcategory.RESOURCE_TYPE: "Syntax",
    Subcategory.ENTRY: "Syntax",
    Subcategory.BASIC_NUMERIC: "Range",
    Subcategory.ENUM: "Range",
    Subcategory.ENTRY_RELATIONSHIP: "Dependency",
    Subcategory.VALUE_RELATIONSHIP: "Dependency",
}

FINDING_OF = {
    Subcategory.RESOURCE_TYPE: FindingCategory.RESOURCE_TYPE,
    Subcategory.ENTRY: FindingCategory.ENTRY,
    Subcategory.BASIC_NUMERIC: FindingCategory.VALUE,
    Subcategory.ENUM: FindingCategory.VALUE,
    Subcategory.ENTRY_RELATIONSHIP: FindingCategory.ENTRY_DEPENDENCY,
    Subcategory.VALUE_RELATIONSHIP: FindingCategory.VALUE_DEPENDENCY,
}

OPERATORS = (">", ">=", "=", "!=", "<", "<=", "occurrence")
ENUM_SUFFIXES = ("-bogus", "-invalid", "-xx")


@dataclass(frozen=True)
class RelationshipSpec:
    scope: str
    parent: str
    p1: str
    p2: str
    op: str = "occurrence"
    form: str = "entry"

    def __post_init__(self):
        if self.op not in OPERATORS:
            raise ValueError(f"unknown relationship operator {self.op!r}")
        if self.form not in ("entry", "value"):
            raise ValueError(f"unknown relationship form {self.form!r}")


@dataclass(frozen=True)
class InjectionRule:
    category: str
    subcategory: Subcategory
    spec: str

    def __post_init__(self):
        if CATEGORY_OF[self.subcategory] != self.category:
            raise ValueError(f"{self.subcategory.value} belongs to {CATEGORY_OF[self.subcategory]}")


@dataclass(frozen=True)
class InjectionOutcome:
    mutated: ConfigDocument
    ground_truth: GroundTruth
    applied_rule: InjectionRule
    seed: int
    site: ParameterPath
    original_value: str
    new_value: str
    removed: tuple[ParameterPath, ...] = ()

    def describe(self) -> str:
        return f"{self.applied_rule.subcategory.value} at {self.site.dotted()}: {self.original_value!r} -> {self.new_value!r}"


class SpecData:
    """Value sets, ranges and relationships the injector draws on."""

    def __init__(self, data: dict):
        self.version = data.get("version", "")
        self.resource_types = frozenset(data["resource_types"])
        self.resource_type_deny = tuple(data.get("resource_type_deny", ()))
        self.entries = {k: frozenset(v) for k, v in data.get("entries", {}).items()}
        self.entry_variants = {k: tuple(v) for k, v in data.get("entry_variants", {}).items()}
        self.enums = list(data.get("enums", []))
        self.numeric = list(data.get("numeric", []))
        self.relationships = [RelationshipSpec(**r) for r in data.get("relationships", [])]
        for e in self.enums:
            overlap = set(e["allowed"]) & set(e["deny"])
            if overlap:
                raise ValueError(f"deny list overlaps allowed values for {e['path']}: {sorted(overlap)}")

    @classmethod
    def load(cls, path: str | Path | None = None) -> "SpecData":
        if path is None:
            return default_spec()
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))


@lru_cache(maxsize=1)
def default_spec() -> SpecData:
    text = resources.files("samcheck").joinpath("data", "sam_spec.json").read_text(encoding="utf-8")
    return SpecData(json.loads(text))


def _matches(scope_pat: str, path_pat: str, where: tuple[str, tuple[str, ...]] | None) -> bool:
    if where is None:
        return False
    scope, rel = where
    return (scope_pat == "*" or scope_pat == scope) and tuple(path_pat.split("/")) == rel


def _rule_for(table: list[dict], segments, types) -> dict | None:
    where = locate(segments, types)
    for rule in table:
        if _matches(rule["scope"], rule["path"], where):
            return rule
    return None


# -- candidate sites -------------------------------------------------------------------


def _declared_names(doc: ConfigDocument) -> set[str]:
    names = {r.logical_name for r in list_resources(doc)}
    params = doc.root.get("Parameters")
    if params is not None and params.kind is NodeKind.MAPPING:
        names.update(params.keys())
    return names


def _reference_target(node: Node, names: set[str]) -> str | None:
    if node.kind is not NodeKind.TAGGED or node.tag not in ("Ref", "GetAtt"):
        return None
    payload = node.payload
    if node.tag == "Ref" and payload.kind is NodeKind.SCALAR:
        target = payload.value or ""
    elif node.tag == "GetAtt" and payload.kind is NodeKind.SCALAR:
        target = (payload.value or "").split(".", 1)[0]
    elif node.tag == "GetAtt" and payload.kind is NodeKind.SEQUENCE and payload.elements:
        first = payload.elements[0]
        target = first.value or "" if first.kind is NodeKind.SCALAR else ""
    else:
        return None
    return target if target in names else None


def _entry_variants(key: str, spec: SpecData) -> list[str]:
    out = [key[:1].lower() + key[1:], key[:-1] if key.endswith("s") else key + "s"]
    out.extend(spec.entry_variants.get(key, ()))
    return list(dict.fromkeys(v for v in out if v and v != key))


def _entry_choices(doc: ConfigDocument, path: ParameterPath, spec: SpecData, types: dict[str, str]) -> list[str]:
    segs = path.segments
    if len(segs) != 4 or segs[0] != "Resources" or segs[2] != "Properties":
        return []
    valid = spec.entries.get(types.get(segs[1], ""))
    if valid is None:
        return []
    value = doc.node_at(segs)
    props = doc.node_at(segs[:3])
    if value is None or not value.is_leaf or props is None:
        return []
    present = set(props.keys())
    return [v for v in _entry_variants(str(segs[3]), spec) if v not in valid and v not in present]


def _type_choices(original: str, spec: SpecData) -> list[str]:
    parts = original.split("::")
    last = parts[-1]
    out = []
    if last:
        out.append("::".join(parts[:-1] + [last[:1].lower() + last[1:]]))
        out.append("::".join(parts[:-1] + [last + "s"]))
        if len(last) > 2:
            mid = len(last) // 2
            out.append("::".join(parts[:-1] + [last[:mid] + last[mid + 1 :]]))
    namespace = "::".join(parts[:-1]) + "::"
    out.extend(t for t in spec.resource_type_deny if t.startswith(namespace))
    return list(dict.fromkeys(t for t in out if t != original and t not in spec.resource_types))


def _relationship_for(doc: ConfigDocument, path: ParameterPath, spec: SpecData, types) -> RelationshipSpec | None:
    parent = path.segments[:-1]
    if not parent:
        return None
    where = locate(parent, types)
    parent_node = doc.node_at(parent)
    if parent_node is None or parent_node.kind is not NodeKind.MAPPING:
        return None
    for rel in spec.relationships:
        if rel.form != "entry" or rel.p1 != path.segments[-1]:
            continue
        if _matches(rel.scope, rel.parent, where) and parent_node.get(rel.p2) is not None:
            return rel
    return None


def eligible_sites(doc: ConfigDocument, subcategory: Subcategory | str, spec: SpecData | None = None) -> list[ParameterPath]:
    """Parameters where ``subcategory`` can be applied, in document order."""
    sub = Subcategory(subcategory)
    spec = spec or default_spec()
    types = resource_types(doc)
    names = _declared_names(doc) if sub is Subcategory.VALUE_RELATIONSHIP else set()
    sites = []
    for p in doc.parameters:
        node = doc.node_at(p.segments)
        if sub is Subcategory.RESOURCE_TYPE:
            ok = p.kind is ParamKind.RESOURCE_TYPE and node.kind is NodeKind.SCALAR and bool(node.value)
        elif sub is Subcategory.ENTRY:
            ok = p.kind is ParamKind.ENTRY_KEY and bool(_entry_choices(doc, p, spec, types))
        elif sub is Subcategory.BASIC_NUMERIC:
            ok = (p.kind is ParamKind.SCALAR_VALUE and node.kind is NodeKind.SCALAR
                  and node.scalar_kind is ScalarKind.INT and _rule_for(spec.numeric, p.segments, types) is not None)
        elif sub is Subcategory.ENUM:
            ok = (p.kind is ParamKind.SCALAR_VALUE and node.kind is NodeKind.SCALAR
                  and node.scalar_kind is ScalarKind.STRING and _rule_for(spec.enums, p.segments, types) is not None)
        elif sub is Subcategory.ENTRY_RELATIONSHIP:
            ok = p.kind is ParamKind.ENTRY_KEY and _relationship_for(doc, p, spec, types) is not None
        else:
            ok = p.kind is ParamKind.SCALAR_VALUE and _reference_target(node, names) is not None
        if ok:
            sites.append(p)
    return sites


# -- mutations ----------------------------------------------------------------------------


def _camel_tail(name: str) -> str:
    words = re.findall(r"[A-Z][a-z0-9]*", name)
    return words[-1] if words else name[:1].upper() + name[1:]


def _retarget(node: Node, new_name: str) -> Node:
    payload = node.payload
    if payload.kind is NodeKind.SCALAR:
        rest = (payload.value or "").split(".", 1)
        value = new_name if len(rest) == 1 else f"{new_name}.{rest[1]}"
        return Node.tagged(node.tag, Node.scalar(value, payload.scalar_kind or ScalarKind.STRING))
    first, *others = payload.elements
    return Node.tagged(node.tag, Node.sequence((Node.scalar(new_name),) + tuple(others), flow=payload.flow))


def _mutate(doc: ConfigDocument, sub: Subcategory, site: ParameterPath, rng: random.Random, spec: SpecData):
    """Returns (new_root, truth_path, old_text, new_text, removed_paths, rule_text)."""
    root, segs = doc.root, site.segments
    node = doc.node_at(segs)
    types = resource_types(doc)
    if sub is Subcategory.RESOURCE_TYPE:
        token = rng.choice(_type_choices(node.value, spec))
        return (replace_node(root, segs, Node.scalar(token)), site, node.value, token, (),
                "type outside the supported resource type set")
    if sub is Subcategory.ENTRY:
        key = rng.choice(_entry_choices(doc, site, spec, types))
        new_root = insert_entry(root, segs[:3], key, doc.node_at(segs), after=str(segs[3]))
        return (new_root, ParameterPath(segs[:3] + (key,)), str(segs[3]), key, (),
                f"entry not defined for {types.get(segs[1])}")
    if sub is Subcategory.BASIC_NUMERIC:
        rule = _rule_for(spec.numeric, segs, types)
        value = rule["max"] + 1 if rng.random() < 0.5 else rule["min"] - 1
        return (replace_node(root, segs, Node.scalar(str(value), ScalarKind.INT)), site, node.value, str(value), (),
                f"valid range [{rule['min']}, {rule['max']}]")
    if sub is Subcategory.ENUM:
        rule = _rule_for(spec.enums, segs, types)
        token = rng.choice(rule["deny"]) + rng.choice(ENUM_SUFFIXES)
        return (replace_node(root, segs, Node.scalar(token)), site, node.value, token, (),
                f"value outside {{{', '.join(rule['allowed'])}}}")
    if sub is Subcategory.ENTRY_RELATIONSHIP:
        rel = _relationship_for(doc, site, spec, types)
        gone = ParameterPath(segs[:-1] + (rel.p2,))
        removed = tuple(p for p in doc.parameters if p.segments[: len(gone.segments)] == gone.segments)
        return (delete_entry(root, gone.segments), site, rel.p2, "", removed,
                f"({rel.p1}, V, {rel.op}) -> {rel.p2}")
    names = _declared_names(doc)
    target = _reference_target(node, names)
    base = "NoSuch" + _camel_tail(target)
    new_name, n = base, 1
    while new_name in names:
        n += 1
        new_name = f"{base}{n}"
    new_node = _retarget(node, new_name)
    return (replace_node(root, segs, new_node), site, leaf_text(node), leaf_text(new_node), (),
            "reference to an undeclared logical name")


def inject(
    doc: ConfigDocument,
    subcategory: Subcategory | str = RANDOM,
    seed: int = 0,
    spec: SpecData | None = None,
    origin: str | None = None,
) -> InjectionOutcome:
    """Apply one misconfiguration rule to ``doc``.

    ``subcategory`` may be ``"Random"``, in which case a seeded choice is made
    among the subcategories that have at least one eligible site.

    Raises:
        NoEligibleParameter: the document has no site for the subcategory.
    """
    spec = spec or default_spec()
    rng = random.Random(seed)
    if subcategory == RANDOM:
        options = [s for s in Subcategory if eligible_sites(doc, s, spec)]
        if not options:
            raise NoEligibleParameter(f"{doc.origin}: no subcategory has an eligible site")
        sub = rng.choice(options)
    else:
        sub = Subcategory(subcategory)
    sites = eligible_sites(doc, sub, spec)
    if not sites:
        raise NoEligibleParameter(f"{doc.origin}: no eligible site for {sub.value}")
    site = rng.choice(sites)
    new_root, truth_path, old, new, removed, rule_text = _mutate(doc, sub, site, rng, spec)
    name = origin or f"{Path(doc.origin).stem}.{sub.value.lower()}-{seed}.yaml"
    mutated = doc.with_root(new_root, origin=name)
    label = Label(truth_path, FINDING_OF[sub], f"{sub.value}: {old!r} -> {new!r}" if new else f"{sub.value}: removed {old}")
    truth = GroundTruth(name, (label,))
    truth.validate(mutated)
    rule = InjectionRule(CATEGORY_OF[sub], sub, rule_text)
    return InjectionOutcome(mutated, truth, rule, seed, site, old, new, removed)


# -- checks -------------------------------------------------------------------------------


def _covered(doc: ConfigDocument, paths: Sequence[ParameterPath]) -> set[int]:
    lines: set[int] = set()
    for p in paths:
        lines.update(doc.lines_of(p))
        if p.kind is ParamKind.ENTRY_KEY:
            node = doc.node_at(p.segments)
            if node is not None and node.is_leaf and node.line is not None:
                lines.update(range(node.line, (node.end_line or node.line) + 1))
    return lines


def stray_changes(original: ConfigDocument, outcome: InjectionOutcome) -> list[str]:
    """Changed serialized lines not attributable to the labeled parameters.

    Both sides are compared in serialized form.  Lines removed on the
    original side may belong to a ground-truth parameter or to an entry the
    rule deleted; lines added on the mutated side must belong to a
    ground-truth parameter.  An empty list means the mutation is minimal.
    """
    before = original.with_root(original.root)
    after = outcome.mutated
    a, b = serialize(before).splitlines(), serialize(after).splitlines()
    truth = [label.path for label in outcome.ground_truth.misconfigured]
    allowed_a = _covered(before, [p for p in truth if p in before.parameter_set] + list(outcome.removed))
    allowed_b = _covered(after, truth)
    stray = []
    for tag, i1, i2, j1, j2 in difflib.SequenceMatcher(a=a, b=b, autojunk=False).get_opcodes():
        if tag == "equal":
            continue
        stray += [f"-{n}: {a[n - 1]}" for n in range(i1 + 1, i2 + 1) if n not in allowed_a]
        stray += [f"+{n}: {b[n - 1]}" for n in range(j1 + 1, j2 + 1) if n not in allowed_b]
    return stray


def write_outcome(outcome: InjectionOutcome, out_dir: str | Path) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    template = out / outcome.mutated.origin
    truth = template.with_suffix(".truth.json")
    template.write_text(serialize(outcome.mutated), encoding="utf-8")
    truth.write_text(outcome.ground_truth.dumps(), encoding="utf-8")
    return template, truth
