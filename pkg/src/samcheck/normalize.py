"""Uniform item representation of a template for pattern mining.

Each document becomes a set of items:

* ``RT:<type>`` for each resource type in use,
* ``E:<scope>/<relative path>`` for each entry key,
* ``V:<scope>/<relative path>=<value>`` for each scalar or tagged value.

``scope`` is the owning resource type for anything under ``Resources`` and
the section name otherwise.  Logical names never leak into items: they are
replaced by ``PH<resource type>`` (``PHParameter`` / ``PHCondition`` for
parameters and conditions).  Sequence positions and the user-chosen names
of events and named section members collapse to ``*``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence

from samcheck.template import (
    ConfigDocument,
    Node,
    NodeKind,
    ParameterPath,
    ParamKind,
    Segment,
    list_resources,
)

WILDCARD = "*"
UNTYPED = "UNTYPED"
NAMED_SECTIONS = ("Parameters", "Conditions", "Outputs", "Mappings")


@dataclass(frozen=True)
class NormalizedItem:
    item_text: str
    origin_path: ParameterPath

    @property
    def prefix(self) -> str:
        return self.item_text.split(":", 1)[0]


def placeholders(doc: ConfigDocument) -> dict[str, str]:
    """Logical name to placeholder, for every name declared in ``doc``."""
    names: dict[str, str] = {}
    for section, label in (("Parameters", "PHParameter"), ("Conditions", "PHCondition")):
        node = doc.root.get(section)
        if node is not None and node.kind is NodeKind.MAPPING:
            names.update({k: label for k in node.keys()})
    for res in list_resources(doc):
        names[res.logical_name] = "PH" + (res.resource_type or UNTYPED)
    return names


class _Substituter:
    def __init__(self, names: dict[str, str]):
        self.names = names
        if names:
            alts = "|".join(re.escape(n) for n in sorted(names, key=len, reverse=True) if n)
            self.pattern = re.compile(rf"(?<![A-Za-z0-9:])(?:{alts})(?![A-Za-z0-9])") if alts else None
        else:
            self.pattern = None

    def __call__(self, text: str) -> str:
        if self.pattern is None or not text:
            return text
        return self.pattern.sub(lambda m: self.names[m.group(0)], text)


def locate(segments: Sequence[Segment], types: dict[str, str]) -> tuple[str, tuple[str, ...]] | None:
    """Scope and wildcarded relative path for a parameter's segments.

    Returns None for the logical-name key of a resource itself, which the
    ``RT`` item already represents.
    """
    head = segments[0]
    if head == "Resources" and len(segments) >= 2:
        if len(segments) == 2:
            return None
        scope, raw_rel = types.get(segments[1], "") or UNTYPED, list(segments[2:])
    elif head in NAMED_SECTIONS and len(segments) >= 2:
        scope, raw_rel = head, [WILDCARD] + list(segments[2:])
    else:
        scope, raw_rel = str(head), list(segments[1:])
    rel: list[str] = []
    for i, seg in enumerate(raw_rel):
        if isinstance(seg, int):
            rel.append(WILDCARD)
        elif i > 0 and raw_rel[i - 1] == "Events" and rel[-1] == "Events":
            rel.append(WILDCARD)
        else:
            rel.append(seg)
    return scope, tuple(rel)


def item_path(scope: str, rel: Sequence[str]) -> str:
    return "/".join((scope, *rel))


def _value_text(node: Node, sub: _Substituter) -> str:
    if node.kind is NodeKind.SCALAR:
        return sub(node.value or "")
    if node.kind is NodeKind.TAGGED:
        if node.tag == "Ref" and node.payload.kind is NodeKind.SCALAR:
            return sub(node.payload.value or "")
        return f"!{node.tag} {_flow(node.payload, sub)}"
    return _flow(node, sub)


def _flow(node: Node, sub: _Substituter) -> str:
    if node.kind is NodeKind.SEQUENCE:
        return "[" + ", ".join(_flow(e, sub) for e in node.elements) + "]"
    if node.kind is NodeKind.MAPPING:
        return "{" + ", ".join(f"{sub(k)}: {_flow(v, sub)}" for k, v in node.entries) + "}"
    return _value_text(node, sub)


def normalize_for_mining(doc: ConfigDocument) -> list[NormalizedItem]:
    """Items of ``doc`` in document order of first occurrence, deduplicated."""
    types = {r.logical_name: r.resource_type for r in list_resources(doc)}
    sub = _Substituter(placeholders(doc))
    seen: dict[str, NormalizedItem] = {}

    def add(text: str, origin: ParameterPath):
        if text not in seen:
            seen[text] = NormalizedItem(text, origin)

    for path in doc.parameters:
        where = locate(path.segments, types)
        if where is None:
            continue
        scope, rel = where
        rel = tuple(sub(seg) for seg in rel)
        if path.kind is ParamKind.ENTRY_KEY:
            add("E:" + item_path(scope, rel), path)
            continue
        node = doc.node_at(path.segments)
        if path.kind is ParamKind.RESOURCE_TYPE:
            if node.kind is NodeKind.SCALAR and node.value:
                add("RT:" + node.value, path)
        else:
            add(f"V:{item_path(scope, rel)}={_value_text(node, sub)}", path)
    return list(seen.values())


def item_location(item_text: str) -> tuple[str, ...]:
    """Path segments of an item (scope first), without prefix or value."""
    body = item_text.split(":", 1)[1] if ":" in item_text else item_text
    if item_text.startswith("RT:"):
        return (body,)
    if item_text.startswith("V:"):
        body = body.split("=", 1)[0]
    # resource types contain "::" but never "/"
    return tuple(body.split("/"))
