"""Pattern mining baseline: FP-Growth itemsets, association rules, violations."""

from __future__ import annotations

import itertools
import json
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

from samcheck.errors import EmptyCorpus, InvalidAlpha, RuleBaseError, SamcheckError
from samcheck.findings import DetectionReport, Finding, FindingCategory
from samcheck.normalize import NormalizedItem, item_location, normalize_for_mining
from samcheck.template import ConfigDocument, load_template

log = logging.getLogger(__name__)

Itemset = frozenset
TEMPLATE_SUFFIXES = (".yaml", ".yml", ".template")
RULEBASE_FORMAT = 1


@dataclass(frozen=True)
class Transaction:
    origin: str
    items: frozenset[str]


def transactions_from(docs: Iterable[ConfigDocument]) -> list[Transaction]:
    return [Transaction(d.origin, frozenset(i.item_text for i in normalize_for_mining(d))) for d in docs]


def _exact(x: float) -> Fraction:
    # repr gives the shortest decimal that round-trips, so 0.07 stays 7/100
    return Fraction(repr(x)) if isinstance(x, float) else Fraction(x)


def support_threshold(alpha: float, n: int) -> int:
    """Absolute support ``ceil(alpha * n)``, computed without float error."""
    if not (0 < alpha <= 1):
        raise InvalidAlpha(f"alpha must lie in (0, 1], got {alpha!r}")
    return max(1, math.ceil(_exact(alpha) * n))


# -- FP-Growth ----------------------------------------------------------------------


class _FPNode:
    __slots__ = ("item", "count", "parent", "children")

    def __init__(self, item: str | None, parent: "_FPNode | None"):
        self.item = item
        self.count = 0
        self.parent = parent
        self.children: dict[str, _FPNode] = {}


class _FPTree:
    def __init__(self, weighted: Iterable[tuple[Sequence[str], int]], minsup: int):
        weighted = list(weighted)
        freq: Counter[str] = Counter()
        for items, w in weighted:
            for it in items:
                freq[it] += w
        self.freq = {it: c for it, c in freq.items() if c >= minsup}
        # global order: descending frequency, ties by item text
        self.rank = {it: r for r, it in enumerate(sorted(self.freq, key=lambda i: (-self.freq[i], i)))}
        self.root = _FPNode(None, None)
        self.header: dict[str, list[_FPNode]] = defaultdict(list)
        for items, w in weighted:
            kept = sorted((it for it in set(items) if it in self.rank), key=self.rank.__getitem__)
            self._insert(kept, w)

    def _insert(self, items: Sequence[str], weight: int) -> None:
        node = self.root
        for it in items:
            child = node.children.get(it)
            if child is None:
                child = node.children[it] = _FPNode(it, node)
                self.header[it].append(child)
            child.count += weight
            node = child

    def single_path(self) -> list[tuple[str, int]] | None:
        path = []
        node = self.root
        while node.children:
            if len(node.children) > 1:
                return None
            node = next(iter(node.children.values()))
            path.append((node.item, node.count))
        return path


def _grow(tree: _FPTree, suffix: tuple[str, ...], minsup: int, out: dict, max_size: int | None) -> None:
    path = tree.single_path()
    if path is not None:
        room = len(path) if max_size is None else max(0, max_size - len(suffix))
        for k in range(1, min(room, len(path)) + 1):
            for combo in itertools.combinations(path, k):
                out[frozenset(suffix + tuple(it for it, _ in combo))] = min(c for _, c in combo)
        return
    # least frequent first, so conditional bases stay small
    for item in sorted(tree.header, key=lambda i: -tree.rank[i]):
        nodes = tree.header[item]
        found = suffix + (item,)
        out[frozenset(found)] = sum(n.count for n in nodes)
        if max_size is not None and len(found) >= max_size:
            continue
        base = []
        for n in nodes:
            prefix = []
            p = n.parent
            while p is not None and p.item is not None:
                prefix.append(p.item)
                p = p.parent
            if prefix:
                base.append((prefix, n.count))
        if base:
            cond = _FPTree(base, minsup)
            if cond.freq:
                _grow(cond, found, minsup, out, max_size)


def _canonical(itemset: frozenset[str]) -> tuple[int, tuple[str, ...]]:
    return len(itemset), tuple(sorted(itemset))


def mine_frequent(
    transactions: Sequence[Transaction | Iterable[str]],
    alpha: float,
    max_size: int | None = None,
) -> list[tuple[frozenset[str], int]]:
    """All itemsets with absolute support at least ``ceil(alpha * len)``.

    Args:
        transactions: ``Transaction`` objects or plain item collections.
        alpha: support fraction in (0, 1].
        max_size: optional cap on itemset size (no cap by default).

    Returns:
        ``(itemset, count)`` pairs ordered by size, then lexicographically.

    Raises:
        InvalidAlpha: alpha outside (0, 1].
        EmptyCorpus: no transactions.
    """
    if not transactions:
        raise EmptyCorpus("cannot mine an empty set of transactions")
    minsup = support_threshold(alpha, len(transactions))
    sets = [t.items if isinstance(t, Transaction) else frozenset(t) for t in transactions]
    tree = _FPTree(((list(s), 1) for s in sets), minsup)
    out: dict[frozenset[str], int] = {}
    if tree.freq:
        _grow(tree, (), minsup, out, max_size)
    return sorted(out.items(), key=lambda kv: _canonical(kv[0]))


# -- rules ----------------------------------------------------------------------------


@dataclass(frozen=True)
class AssociationRule:
    left: frozenset[str]
    right: frozenset[str]
    support: float
    confidence: float
    count: int = 0

    def __post_init__(self):
        if not self.left or not self.right:
            raise ValueError("rule sides must be non-empty")
        if self.left & self.right:
            raise ValueError("rule sides must be disjoint")
        if not (0 < self.support <= 1 and 0 < self.confidence <= 1):
            raise ValueError("support and confidence must lie in (0, 1]")

    def __str__(self) -> str:
        return f"{{{', '.join(sorted(self.left))}}} -> {{{', '.join(sorted(self.right))}}}"


def derive_rules(
    frequent: Sequence[tuple[frozenset[str], int]],
    n: int,
    min_confidence: float,
    max_itemset_size: int | None = 4,
    single_consequent: bool = False,
) -> list[AssociationRule]:
    """Split every frequent itemset (size 2 up to the cap) into left/right.

    Confidence is ``count(left | right) / count(left)``; rules below
    ``min_confidence`` are dropped.  With ``single_consequent`` only splits
    whose right side is a single item are produced.
    """
    counts = {s: c for s, c in frequent}
    threshold = _exact(min_confidence)
    rules = []
    for itemset, count in frequent:
        size = len(itemset)
        if size < 2 or (max_itemset_size is not None and size > max_itemset_size):
            continue
        ordered = sorted(itemset)
        for k in range(size - 1, 0, -1):
            if single_consequent and k != size - 1:
                break
            for left in itertools.combinations(ordered, k):
                left_set = frozenset(left)
                left_count = counts.get(left_set)
                if left_count is None:
                    raise RuleBaseError(f"frequent family is not downward closed at {sorted(left_set)}")
                if Fraction(count, left_count) < threshold:
                    continue
                rules.append(AssociationRule(left_set, itemset - left_set, count / n, count / left_count, count))
    return rules


@dataclass(frozen=True)
class ItemsetCatalog:
    counts: dict[str, int]
    corpus_size: int

    def __contains__(self, item: str) -> bool:
        return item in self.counts


@dataclass
class RuleBase:
    alpha: float
    min_confidence: float
    rules: list[AssociationRule]
    catalog: ItemsetCatalog
    provenance: dict = field(default_factory=dict)
    max_itemset_size: int = 4

    @classmethod
    def build(
        cls,
        transactions: Sequence[Transaction],
        alpha: float = 0.05,
        min_confidence: float = 0.95,
        max_itemset_size: int = 4,
        provenance: dict | None = None,
    ) -> "RuleBase":
        if not transactions:
            raise EmptyCorpus("no transactions to learn from")
        n = len(transactions)
        counts: Counter[str] = Counter()
        for t in transactions:
            counts.update(t.items)
        # rule sides larger than the cap are never derived, so deeper mining is wasted work
        frequent = mine_frequent(transactions, alpha, max_size=max_itemset_size)
        rules = derive_rules(frequent, n, min_confidence, max_itemset_size, single_consequent=True)
        prov = {
            "corpus_size": n,
            "alpha": alpha,
            "support_threshold": support_threshold(alpha, n),
            "min_confidence": min_confidence,
            "max_itemset_size": max_itemset_size,
            "frequent_itemsets": len(frequent),
            "rules": len(rules),
            **(provenance or {}),
        }
        return cls(alpha, min_confidence, rules, ItemsetCatalog(dict(counts), n), prov, max_itemset_size)

    def to_json(self) -> dict:
        items = sorted(self.catalog.counts)
        index = {it: i for i, it in enumerate(items)}
        return {
            "format": RULEBASE_FORMAT,
            "alpha": self.alpha,
            "min_confidence": self.min_confidence,
            "max_itemset_size": self.max_itemset_size,
            "corpus_size": self.catalog.corpus_size,
            "provenance": self.provenance,
            "items": [[it, self.catalog.counts[it]] for it in items],
            "rules": [
                {
                    "left": sorted(index[i] for i in r.left),
                    "right": sorted(index[i] for i in r.right),
                    "count": r.count,
                    "support": r.support,
                    "confidence": r.confidence,
                }
                for r in self.rules
            ],
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def from_json(cls, data: dict) -> "RuleBase":
        try:
            if data.get("format") != RULEBASE_FORMAT:
                raise RuleBaseError(f"unsupported rulebase format {data.get('format')!r}")
            items = [it for it, _ in data["items"]]
            catalog = ItemsetCatalog({it: c for it, c in data["items"]}, data["corpus_size"])
            rules = [
                AssociationRule(
                    frozenset(items[i] for i in r["left"]),
                    frozenset(items[i] for i in r["right"]),
                    r["support"],
                    r["confidence"],
                    r.get("count", 0),
                )
                for r in data["rules"]
            ]
            return cls(data["alpha"], data["min_confidence"], rules, catalog, data.get("provenance", {}),
                       data.get("max_itemset_size", 4))
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise RuleBaseError(f"malformed rulebase: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> "RuleBase":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise RuleBaseError(f"cannot read rulebase {path}: {exc}") from exc
        return cls.from_json(data)


def load_corpus(directory: str | Path) -> tuple[list[ConfigDocument], list[str]]:
    """Parse every template under ``directory``; unparseable files become warnings."""
    root = Path(directory)
    if not root.is_dir():
        raise EmptyCorpus(f"corpus directory {directory} does not exist")
    docs, warnings = [], []
    for path in sorted(p for p in root.rglob("*") if p.suffix in TEMPLATE_SUFFIXES and p.is_file()):
        try:
            docs.append(load_template(path))
        except SamcheckError as exc:
            warnings.append(f"{path}: {exc}")
    if not docs:
        raise EmptyCorpus(f"no parseable templates under {directory}")
    return docs, warnings


# -- detection ------------------------------------------------------------------------

UNKNOWN_CATEGORY = {
    "RT": FindingCategory.RESOURCE_TYPE,
    "E": FindingCategory.ENTRY,
    "V": FindingCategory.VALUE,
}
RULE_CATEGORY = {
    "RT": FindingCategory.ENTRY_DEPENDENCY,
    "E": FindingCategory.ENTRY_DEPENDENCY,
    "V": FindingCategory.VALUE_DEPENDENCY,
}


def _prefix(item: str) -> str:
    return item.split(":", 1)[0]


def _shared(a: tuple[str, ...], b: tuple[str, ...]) -> int:
    n = 0
    for x, y in zip(a, b):
        if x != y:
            break
        n += 1
    return n


def _anchor(missing: str, lefts: Iterable[str], by_text: dict[str, NormalizedItem], order: dict[str, int],
            strategy: str) -> NormalizedItem:
    cands = sorted(set(lefts), key=order.__getitem__)
    if strategy == "first":
        return by_text[cands[0]]
    target = item_location(missing)
    best = min(
        cands,
        key=lambda it: (-_shared(item_location(it), target), len(item_location(it)), order[it]),
    )
    return by_text[best]


def detect_dd(
    doc: ConfigDocument,
    rulebase: RuleBase,
    unknown_prefixes: Sequence[str] = ("RT", "E", "V"),
    anchor: str = "related",
) -> DetectionReport:
    """Flag items never seen in the corpus and violated association rules.

    Args:
        doc: template under test.
        rulebase: mined patterns.
        unknown_prefixes: item kinds checked against the catalog.
        anchor: where a missing rule item is reported.  ``"related"`` picks,
            among the left-hand items of the violated rules, the one sharing
            the longest path with the missing item; ``"first"`` takes the
            earliest in document order.
    """
    items = normalize_for_mining(doc)
    by_text = {i.item_text: i for i in items}
    order = {t: k for k, t in enumerate(by_text)}
    present = frozenset(by_text)
    findings: list[Finding] = []

    unknown_types = {i.item_text[3:] for i in items if i.prefix == "RT" and i.item_text not in rulebase.catalog}
    for it in items:
        if it.prefix not in unknown_prefixes or it.item_text in rulebase.catalog:
            continue
        if it.prefix != "RT" and item_location(it.item_text)[0] in unknown_types:
            # everything scoped by an unknown type is a consequence of that one error
            continue
        findings.append(
            Finding(UNKNOWN_CATEGORY[it.prefix], it.item_text, "never observed in the learning corpus", it.origin_path)
        )

    lefts_by_missing: dict[str, set[str]] = defaultdict(set)
    conf_by_missing: dict[str, float] = {}
    for rule in rulebase.rules:
        if rule.left <= present and not rule.right <= present:
            for missing in rule.right - present:
                lefts_by_missing[missing] |= rule.left
                conf_by_missing[missing] = max(conf_by_missing.get(missing, 0.0), rule.confidence)
    for missing in sorted(lefts_by_missing):
        at = _anchor(missing, lefts_by_missing[missing], by_text, order, anchor)
        findings.append(
            Finding(
                RULE_CATEGORY[_prefix(missing)],
                missing,
                f"expected alongside {at.item_text} (confidence {conf_by_missing[missing]:.2f})",
                at.origin_path,
            )
        )
    return DetectionReport(doc.origin, "DataDriven", findings)


class DataDrivenDetector:
    name = "DataDriven"

    def __init__(self, rulebase: RuleBase, unknown_prefixes: Sequence[str] = ("RT", "E", "V"), anchor: str = "related"):
        self.rulebase = rulebase
        self.unknown_prefixes = tuple(unknown_prefixes)
        self.anchor = anchor

    def detect(self, doc: ConfigDocument, repetition: int = 0) -> DetectionReport:
        return detect_dd(doc, self.rulebase, self.unknown_prefixes, self.anchor)

    def provenance(self) -> dict:
        return {"detector": self.name, "unknown_prefixes": list(self.unknown_prefixes), "anchor": self.anchor,
                **self.rulebase.provenance}
