"""Typed tree model for AWS SAM templates.

Templates are composed with PyYAML (no construction, so short-form
intrinsic tags such as ``!Ref`` survive as tags) and converted into an
immutable :class:`Node` tree.  The unit of evaluation is a *parameter*:
every mapping key is one ``EntryKey`` parameter and every scalar or tagged
leaf that is the value of a key or a sequence element is one
``ScalarValue`` parameter.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterator, Sequence, Union

import yaml
from yaml.nodes import MappingNode, ScalarNode, SequenceNode

from samcheck.errors import EmptyTemplate, TemplateSyntaxError

SECTION_NAMES = (
    "AWSTemplateFormatVersion",
    "Transform",
    "Description",
    "Metadata",
    "Parameters",
    "Mappings",
    "Conditions",
    "Globals",
    "Resources",
    "Outputs",
)

_YAML_NS = "tag:yaml.org,2002:"
_STR, _INT, _FLOAT, _BOOL, _NULL = (_YAML_NS + t for t in ("str", "int", "float", "bool", "null"))


class NodeKind(str, enum.Enum):
    MAPPING = "Mapping"
    SEQUENCE = "Sequence"
    SCALAR = "Scalar"
    TAGGED = "Tagged"


class ScalarKind(str, enum.Enum):
    STRING = "string"
    INT = "int"
    FLOAT = "float"
    BOOL = "bool"
    NULL = "null"


_KIND_BY_TAG = {
    _INT: ScalarKind.INT,
    _FLOAT: ScalarKind.FLOAT,
    _BOOL: ScalarKind.BOOL,
    _NULL: ScalarKind.NULL,
}
_TAG_BY_KIND = {kind: tag for tag, kind in _KIND_BY_TAG.items()}


@dataclass(frozen=True)
class Node:
    """One node of a template tree.

    Only ``kind``, ``entries``, ``elements``, ``value``, ``scalar_kind``,
    ``tag`` and ``payload`` take part in equality; presentation details
    (quoting style, flow style, source lines) are carried along for
    faithful re-emission but ignored when comparing trees.
    """

    kind: NodeKind
    entries: tuple[tuple[str, "Node"], ...] = ()
    elements: tuple["Node", ...] = ()
    value: str | None = None
    scalar_kind: ScalarKind | None = None
    tag: str | None = None
    payload: "Node | None" = None
    style: str | None = field(default=None, compare=False)
    flow: bool = field(default=False, compare=False)
    line: int | None = field(default=None, compare=False)
    end_line: int | None = field(default=None, compare=False)
    key_lines: tuple[tuple[str, int], ...] = field(default=(), compare=False, repr=False)

    @classmethod
    def mapping(cls, entries: Sequence[tuple[str, "Node"]] = (), **kw) -> "Node":
        return cls(NodeKind.MAPPING, entries=tuple(entries), **kw)

    @classmethod
    def sequence(cls, elements: Sequence["Node"] = (), **kw) -> "Node":
        return cls(NodeKind.SEQUENCE, elements=tuple(elements), **kw)

    @classmethod
    def scalar(cls, value: str, scalar_kind: ScalarKind = ScalarKind.STRING, **kw) -> "Node":
        return cls(NodeKind.SCALAR, value=value, scalar_kind=scalar_kind, **kw)

    @classmethod
    def tagged(cls, tag: str, payload: "Node", **kw) -> "Node":
        return cls(NodeKind.TAGGED, tag=tag, payload=payload, **kw)

    @property
    def is_leaf(self) -> bool:
        return self.kind in (NodeKind.SCALAR, NodeKind.TAGGED)

    def get(self, key: str) -> "Node | None":
        for k, v in self.entries:
            if k == key:
                return v
        return None

    def keys(self) -> list[str]:
        return [k for k, _ in self.entries]


class ParamKind(str, enum.Enum):
    ENTRY_KEY = "EntryKey"
    SCALAR_VALUE = "ScalarValue"
    RESOURCE_TYPE = "ResourceTypeDecl"


_SUFFIX = {ParamKind.SCALAR_VALUE: "@value", ParamKind.RESOURCE_TYPE: "@type"}
_KIND_BY_SUFFIX = {v[1:]: k for k, v in _SUFFIX.items()}
_SPECIAL = set("\\.[]@")

Segment = Union[str, int]


@dataclass(frozen=True)
class ParameterPath:
    """Address of one parameter.

    Dotted rendering: keys joined with ``.``, sequence indices as ``[i]``,
    value parameters suffixed with ``@value`` (``@type`` for resource type
    declarations).  Characters ``\\ . [ ] @`` inside keys are escaped with a
    backslash and the empty key renders as ``\\~``.
    """

    segments: tuple[Segment, ...]
    kind: ParamKind = ParamKind.ENTRY_KEY

    def __post_init__(self):
        if not self.segments:
            raise ValueError("ParameterPath needs at least one segment")

    def __str__(self) -> str:
        return self.dotted()

    def dotted(self) -> str:
        out: list[str] = []
        for seg in self.segments:
            if isinstance(seg, int):
                out.append(f"[{seg}]")
                continue
            text = "".join("\\" + c if c in _SPECIAL else c for c in seg) if seg else "\\~"
            out.append(("." if out else "") + text)
        return "".join(out) + _SUFFIX.get(self.kind, "")

    @classmethod
    def parse(cls, text: str) -> "ParameterPath":
        segments: list[Segment] = []
        buf: list[str] = []
        have_key = False
        kind = ParamKind.ENTRY_KEY
        i, n = 0, len(text)

        def flush():
            nonlocal buf, have_key
            if have_key:
                segments.append("".join(buf))
            buf, have_key = [], False

        while i < n:
            c = text[i]
            if c == "\\":
                if i + 1 >= n:
                    raise ValueError(f"dangling escape in {text!r}")
                nxt = text[i + 1]
                if nxt != "~":
                    buf.append(nxt)
                have_key = True
                i += 2
            elif c == ".":
                flush()
                i += 1
            elif c == "[":
                flush()
                j = text.index("]", i)
                segments.append(int(text[i + 1 : j]))
                i = j + 1
            elif c == "@":
                flush()
                suffix = text[i + 1 :]
                if suffix not in _KIND_BY_SUFFIX:
                    raise ValueError(f"unknown parameter suffix {suffix!r}")
                kind = _KIND_BY_SUFFIX[suffix]
                i = n
            else:
                buf.append(c)
                have_key = True
                i += 1
        flush()
        return cls(tuple(segments), kind)

    @property
    def is_value(self) -> bool:
        return self.kind is not ParamKind.ENTRY_KEY

    @property
    def leaf_key(self) -> str | None:
        for seg in reversed(self.segments):
            if isinstance(seg, str):
                return seg
        return None

    def as_value(self) -> "ParameterPath":
        if self.is_value:
            return self
        kind = ParamKind.RESOURCE_TYPE if _is_type_decl(self.segments) else ParamKind.SCALAR_VALUE
        return ParameterPath(self.segments, kind)

    def as_entry(self) -> "ParameterPath":
        return ParameterPath(self.segments, ParamKind.ENTRY_KEY)

    def is_within(self, prefix: Sequence[Segment]) -> bool:
        return self.segments[: len(prefix)] == tuple(prefix)


def _is_type_decl(segments: Sequence[Segment]) -> bool:
    return len(segments) == 3 and segments[0] == "Resources" and segments[2] == "Type"


@dataclass(frozen=True)
class ResourceDecl:
    logical_name: str
    resource_type: str
    properties_path: ParameterPath
    flagged: bool = False


@dataclass(frozen=True)
class ConfigDocument:
    source_text: str
    root: Node
    origin: str = "<memory>"

    @cached_property
    def parameters(self) -> tuple[ParameterPath, ...]:
        return tuple(_walk_parameters(self.root))

    @cached_property
    def parameter_set(self) -> frozenset[ParameterPath]:
        return frozenset(self.parameters)

    @property
    def sections(self) -> list[str]:
        return self.root.keys()

    def node_at(self, segments: Sequence[Segment]) -> Node | None:
        node: Node | None = self.root
        for seg in segments:
            if node is None:
                return None
            if isinstance(seg, int):
                if node.kind is not NodeKind.SEQUENCE or seg >= len(node.elements):
                    return None
                node = node.elements[seg]
            else:
                if node.kind is not NodeKind.MAPPING:
                    return None
                node = node.get(seg)
        return node

    def lines_of(self, path: ParameterPath) -> range:
        """1-based source lines occupied by ``path`` (empty if unknown)."""
        if path.is_value:
            node = self.node_at(path.segments)
            if node is None or node.line is None:
                return range(0)
            return range(node.line, (node.end_line or node.line) + 1)
        parent = self.node_at(path.segments[:-1])
        key_line = _key_lines(parent).get(path.segments[-1]) if parent else None
        return range(key_line, key_line + 1) if key_line else range(0)

    def with_root(self, root: Node, origin: str | None = None) -> "ConfigDocument":
        """A new document for ``root``, re-serialized so lines are accurate."""
        return parse_template(serialize_node(root), origin=origin or self.origin)


def _key_lines(node: Node) -> dict[str, int]:
    return dict(node.key_lines)


# -- parsing -----------------------------------------------------------------

_resolver = yaml.SafeLoader("")


def _infer_kind(value: str, style: str | None) -> ScalarKind:
    if style:
        return ScalarKind.STRING
    tag = _resolver.resolve(ScalarNode, value, (True, False))
    return _KIND_BY_TAG.get(tag, ScalarKind.STRING)


def _lineinfo(ynode) -> dict:
    start = ynode.start_mark.line + 1
    end_mark = ynode.end_mark
    end = end_mark.line + 1
    # block collections end at column 0 of the following line
    if end_mark.column == 0 and end > start:
        end -= 1
    return {"line": start, "end_line": end}


def _convert(ynode, local_tag_ok: bool = True) -> Node:
    tag = ynode.tag or ""
    if local_tag_ok and tag and not tag.startswith(_YAML_NS):
        name = tag[1:] if tag.startswith("!") else tag
        payload = _convert(ynode, local_tag_ok=False)
        return Node.tagged(name, payload, **_lineinfo(ynode))
    info = _lineinfo(ynode)
    if isinstance(ynode, ScalarNode):
        if local_tag_ok:
            # compose has already resolved plain scalars to their implicit tag
            kind = _KIND_BY_TAG.get(tag, ScalarKind.STRING)
        else:
            kind = _infer_kind(ynode.value, ynode.style)
        return Node.scalar(ynode.value, kind, style=ynode.style, **info)
    if isinstance(ynode, SequenceNode):
        return Node.sequence([_convert(e) for e in ynode.value], flow=bool(ynode.flow_style), **info)
    if isinstance(ynode, MappingNode):
        entries: list[tuple[str, Node]] = []
        seen: dict[str, int] = {}
        key_lines: list[tuple[str, int]] = []
        for knode, vnode in ynode.value:
            if not isinstance(knode, ScalarNode):
                raise TemplateSyntaxError(
                    "complex mapping keys are not supported",
                    knode.start_mark.line + 1,
                    knode.start_mark.column + 1,
                )
            key = knode.value
            if key in seen:
                raise TemplateSyntaxError(
                    f"duplicate key {key!r} (first defined on line {seen[key]})",
                    knode.start_mark.line + 1,
                    knode.start_mark.column + 1,
                )
            seen[key] = knode.start_mark.line + 1
            key_lines.append((key, knode.start_mark.line + 1))
            entries.append((key, _convert(vnode)))
        return Node.mapping(entries, flow=bool(ynode.flow_style), key_lines=tuple(key_lines), **info)
    raise TemplateSyntaxError(f"unsupported YAML node {type(ynode).__name__}")


def parse_template(text: str, origin: str = "<memory>") -> ConfigDocument:
    """Parse template text into a :class:`ConfigDocument`.

    Raises:
        TemplateSyntaxError: malformed YAML or duplicate mapping keys.
        EmptyTemplate: the text holds no top-level mapping.
    """
    if not text or not text.strip():
        raise EmptyTemplate("template text is empty")
    try:
        ynode = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        line = mark.line + 1 if mark else None
        col = mark.column + 1 if mark else None
        raise TemplateSyntaxError(exc.problem or str(exc), line, col) from exc
    except yaml.YAMLError as exc:
        raise TemplateSyntaxError(str(exc)) from exc
    if ynode is None or not isinstance(ynode, MappingNode) or ynode.tag != _YAML_NS + "map":
        raise EmptyTemplate("template has no top-level mapping")
    return ConfigDocument(source_text=text, root=_convert(ynode), origin=origin)


def load_template(path) -> ConfigDocument:
    from pathlib import Path

    p = Path(path)
    return parse_template(p.read_text(encoding="utf-8"), origin=str(p))


# -- parameters ----------------------------------------------------------------


def _walk_parameters(root: Node) -> Iterator[ParameterPath]:
    def visit_mapping(node: Node, prefix: tuple[Segment, ...]):
        for key, child in node.entries:
            here = prefix + (key,)
            yield ParameterPath(here, ParamKind.ENTRY_KEY)
            yield from visit_value(child, here)

    def visit_value(node: Node, here: tuple[Segment, ...]):
        if node.is_leaf:
            kind = ParamKind.RESOURCE_TYPE if _is_type_decl(here) else ParamKind.SCALAR_VALUE
            yield ParameterPath(here, kind)
        elif node.kind is NodeKind.MAPPING:
            yield from visit_mapping(node, here)
        else:
            for i, el in enumerate(node.elements):
                yield from visit_value(el, here + (i,))

    yield from visit_mapping(root, ())


def enumerate_parameters(doc: ConfigDocument) -> list[ParameterPath]:
    """Every parameter of ``doc`` in document order."""
    return list(doc.parameters)


def list_resources(doc: ConfigDocument) -> list[ResourceDecl]:
    resources = doc.root.get("Resources")
    if resources is None or resources.kind is not NodeKind.MAPPING:
        return []
    out = []
    for name, body in resources.entries:
        props = ParameterPath(("Resources", name, "Properties"))
        type_node = body.get("Type") if body.kind is NodeKind.MAPPING else None
        if type_node is not None and type_node.kind is NodeKind.SCALAR and type_node.scalar_kind is not ScalarKind.NULL:
            out.append(ResourceDecl(name, type_node.value or "", props, flagged=not type_node.value))
        else:
            out.append(ResourceDecl(name, "", props, flagged=True))
    return out


def resource_types(doc: ConfigDocument) -> dict[str, str]:
    """Logical name to resource type for typed resources."""
    return {r.logical_name: r.resource_type for r in list_resources(doc) if r.resource_type}


def leaf_text(node: Node) -> str:
    """Flat text of a leaf, e.g. ``!Ref SomeBucket`` or ``python3.6``."""
    if node.kind is NodeKind.SCALAR:
        return node.value or ""
    if node.kind is NodeKind.TAGGED:
        return f"!{node.tag} {flow_text(node.payload)}"
    return flow_text(node)


def flow_text(node: Node | None) -> str:
    if node is None:
        return ""
    if node.kind is NodeKind.SCALAR:
        return node.value or ""
    if node.kind is NodeKind.TAGGED:
        return leaf_text(node)
    if node.kind is NodeKind.SEQUENCE:
        return "[" + ", ".join(flow_text(e) for e in node.elements) + "]"
    return "{" + ", ".join(f"{k}: {flow_text(v)}" for k, v in node.entries) + "}"


# -- serialization ------------------------------------------------------------


class _Dumper(yaml.SafeDumper):
    def increase_indent(self, flow=False, indentless=False):
        return super().increase_indent(flow, False)

    def choose_scalar_style(self):
        # local tags like !Ref keep their payload plain when YAML allows it
        ev = self.event
        tag = ev.tag or ""
        if not ev.style and tag.startswith("!") and not tag.startswith("!!"):
            if self.analysis is None:
                self.analysis = self.analyze_scalar(ev.value)
            a = self.analysis
            if not (self.simple_key_context and (a.empty or a.multiline)) and (
                (self.flow_level and a.allow_flow_plain)
                or (not self.flow_level and a.allow_block_plain)
            ):
                return ""
        return super().choose_scalar_style()


def _scalar_tag(node: Node) -> str:
    if node.scalar_kind in _TAG_BY_KIND:
        return _TAG_BY_KIND[node.scalar_kind]
    if node.style:
        return _STR
    resolved = _resolver.resolve(ScalarNode, node.value or "", (True, False))
    # keep implicit tags such as timestamps so those scalars stay plain; the
    # "yaml" tag (lone !, & or *) can never be written plain
    return _STR if resolved in _KIND_BY_TAG or resolved == _YAML_NS + "yaml" else resolved


def _to_yaml(node: Node, tag: str | None = None):
    if node.kind is NodeKind.TAGGED:
        return _to_yaml(node.payload, tag="!" + node.tag)
    if node.kind is NodeKind.SCALAR:
        return ScalarNode(tag or _scalar_tag(node), node.value or "", style=node.style)
    if node.kind is NodeKind.SEQUENCE:
        return SequenceNode(
            tag or _YAML_NS + "seq",
            [_to_yaml(e) for e in node.elements],
            flow_style=node.flow or None,
        )
    return MappingNode(
        tag or _YAML_NS + "map",
        [(ScalarNode(_STR, k), _to_yaml(v)) for k, v in node.entries],
        flow_style=node.flow or None,
    )


def serialize_node(root: Node) -> str:
    return yaml.serialize(
        _to_yaml(root),
        Dumper=_Dumper,
        width=4096,
        allow_unicode=True,
    )


def serialize(doc: ConfigDocument) -> str:
    """Emit ``doc`` as YAML, keeping key order, quoting and short-form tags."""
    return serialize_node(doc.root)


# -- immutable edits ----------------------------------------------------------


def _rebuild(node: Node, segments: Sequence[Segment], fn) -> Node:
    if not segments:
        return fn(node)
    head, rest = segments[0], segments[1:]
    if isinstance(head, int):
        if node.kind is not NodeKind.SEQUENCE:
            raise KeyError(head)
        elements = list(node.elements)
        elements[head] = _rebuild(elements[head], rest, fn)
        return replace(node, elements=tuple(elements))
    if node.kind is not NodeKind.MAPPING or node.get(head) is None:
        raise KeyError(head)
    entries = tuple((k, _rebuild(v, rest, fn) if k == head else v) for k, v in node.entries)
    return replace(node, entries=entries)


def replace_node(root: Node, segments: Sequence[Segment], new: Node) -> Node:
    return _rebuild(root, segments, lambda _old: new)


def delete_entry(root: Node, segments: Sequence[Segment]) -> Node:
    *parent, key = segments

    def drop(node: Node) -> Node:
        return replace(node, entries=tuple((k, v) for k, v in node.entries if k != key))

    return _rebuild(root, parent, drop)


def insert_entry(root: Node, parent: Sequence[Segment], key: str, value: Node, after: str | None = None) -> Node:
    def add(node: Node) -> Node:
        if node.kind is not NodeKind.MAPPING:
            raise KeyError(key)
        if node.get(key) is not None:
            raise KeyError(f"{key} already present")
        entries = list(node.entries)
        pos = len(entries)
        if after is not None:
            pos = next(i + 1 for i, (k, _) in enumerate(entries) if k == after)
        entries.insert(pos, (key, value))
        return replace(node, entries=tuple(entries))

    return _rebuild(root, parent, add)
