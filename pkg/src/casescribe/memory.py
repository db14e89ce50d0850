"""Discrete semantic memory: quantized records, consensus assertions, cards.

The memory bank is the only representation of prototypes the rest of the
pipeline ever sees: a prototype is reduced to a ProtoCard (consensus visual
assertions plus quantized tabular bins) and a query to a CaseCard of the same
shape. All downstream set algebra operates on these discrete cards.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .errors import (
    ConfigError,
    InvalidSupport,
    MissingField,
    NonFinite,
    OutOfRange,
    UnknownField,
)

POLARITIES = ("present", "absent")

BANK_SCHEMA_VERSION = "bank/1"


# ---------------------------------------------------------------------------
# Value types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Assertion:
    """One discrete visual finding: a taxonomy concept with a polarity.

    Identity for all set operations is (concept_id, polarity, qualifier);
    `key()` is the canonical string form used as an evidence ID.
    """

    concept_id: str
    polarity: str
    qualifier: str | None = None

    def __post_init__(self):
        if self.polarity not in POLARITIES:
            raise ConfigError(f"polarity must be one of {POLARITIES}, got {self.polarity!r}")

    def key(self) -> str:
        if self.qualifier:
            return f"{self.concept_id}:{self.polarity}:{self.qualifier}"
        return f"{self.concept_id}:{self.polarity}"

    @staticmethod
    def from_key(key: str) -> "Assertion":
        parts = key.split(":")
        if len(parts) == 2:
            return Assertion(parts[0], parts[1])
        if len(parts) == 3:
            return Assertion(parts[0], parts[1], parts[2])
        raise ConfigError(f"malformed assertion key {key!r}")

    def to_dict(self) -> dict:
        d = {"concept_id": self.concept_id, "polarity": self.polarity}
        if self.qualifier is not None:
            d["qualifier"] = self.qualifier
        return d

    @staticmethod
    def from_dict(d: dict) -> "Assertion":
        return Assertion(d["concept_id"], d["polarity"], d.get("qualifier"))


@dataclass(frozen=True)
class QuantizedRecord:
    """Tabular record projected onto configured bins, in schema field order."""

    bins: dict[str, str]

    def to_dict(self) -> dict:
        return dict(self.bins)


@dataclass(frozen=True)
class Provenance:
    """How a card's consensus set was formed."""

    views: int
    min_support: int


@dataclass(frozen=True)
class ProtoCard:
    prototype_id: int
    class_label: str
    assertions: tuple[Assertion, ...]
    record: QuantizedRecord
    summary: str
    provenance: Provenance

    def assertion_keys(self) -> tuple[str, ...]:
        return tuple(a.key() for a in self.assertions)

    def to_dict(self) -> dict:
        return {
            "schema_version": BANK_SCHEMA_VERSION,
            "prototype_id": self.prototype_id,
            "class_label": self.class_label,
            "assertions": [a.to_dict() for a in self.assertions],
            "record": self.record.to_dict(),
            "summary": self.summary,
            "provenance": {"views": self.provenance.views, "min_support": self.provenance.min_support},
        }

    @staticmethod
    def from_dict(d: dict) -> "ProtoCard":
        return ProtoCard(
            prototype_id=int(d["prototype_id"]),
            class_label=d["class_label"],
            assertions=tuple(Assertion.from_dict(a) for a in d["assertions"]),
            record=QuantizedRecord(dict(d["record"])),
            summary=d["summary"],
            provenance=Provenance(int(d["provenance"]["views"]), int(d["provenance"]["min_support"])),
        )


@dataclass(frozen=True)
class CaseCard:
    case_id: str
    assertions: tuple[Assertion, ...]
    record: QuantizedRecord

    def assertion_keys(self) -> tuple[str, ...]:
        return tuple(a.key() for a in self.assertions)

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "assertions": [a.to_dict() for a in self.assertions],
            "record": self.record.to_dict(),
        }

    @staticmethod
    def from_dict(d: dict) -> "CaseCard":
        return CaseCard(
            case_id=d["case_id"],
            assertions=tuple(Assertion.from_dict(a) for a in d["assertions"]),
            record=QuantizedRecord(dict(d["record"])),
        )


# ---------------------------------------------------------------------------
# Tabular schema and quantization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FieldSpec:
    """Either a binned numeric field (edges) or a categorical field."""

    name: str
    edges: tuple[float, ...] = ()
    categories: tuple[str, ...] = ()

    def __post_init__(self):
        if bool(self.edges) == bool(self.categories):
            raise ConfigError(f"field {self.name!r}: exactly one of edges/categories required")
        if self.edges:
            if len(self.edges) < 2:
                raise ConfigError(f"field {self.name!r}: need at least two edges")
            if any(b <= a for a, b in zip(self.edges, self.edges[1:])):
                raise ConfigError(f"field {self.name!r}: edges must be strictly increasing")

    @property
    def numeric(self) -> bool:
        return bool(self.edges)

    def bin_labels(self) -> tuple[str, ...]:
        if self.numeric:
            return tuple(
                format_bin(lo, hi) for lo, hi in zip(self.edges, self.edges[1:])
            )
        return self.categories


def format_bin(lo: float, hi: float) -> str:
    return f"{lo:g}-{hi:g}"


@dataclass(frozen=True)
class TabularSchema:
    """Ordered collection of field specs; order defines record key order."""

    fields: tuple[FieldSpec, ...]

    def __post_init__(self):
        names = [f.name for f in self.fields]
        if len(names) != len(set(names)):
            raise ConfigError("duplicate field names in tabular schema")

    def field_names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.fields)

    def spec(self, name: str) -> FieldSpec:
        for f in self.fields:
            if f.name == name:
                return f
        raise UnknownField(f"field {name!r} not in tabular schema")

    def to_dict(self) -> dict:
        out = {}
        for f in self.fields:
            out[f.name] = {"edges": list(f.edges)} if f.numeric else {"categories": list(f.categories)}
        return out

    @staticmethod
    def from_dict(d: dict) -> "TabularSchema":
        specs = []
        for name, spec in d.items():
            if "edges" in spec:
                specs.append(FieldSpec(name=name, edges=tuple(float(e) for e in spec["edges"])))
            elif "categories" in spec:
                specs.append(FieldSpec(name=name, categories=tuple(str(c) for c in spec["categories"])))
            else:
                raise ConfigError(f"field {name!r}: need 'edges' or 'categories'")
        return TabularSchema(fields=tuple(specs))


def quantize(record: dict, schema: TabularSchema) -> QuantizedRecord:
    """Project raw field values onto bin labels.

    Numeric values map to the half-open bin [lo, hi) containing them; the last
    bin is closed on the right so the top edge is representable. Categorical
    values pass through when they appear in the configured category list.
    """
    extra = set(record) - set(schema.field_names())
    if extra:
        raise UnknownField(f"record fields not in schema: {sorted(extra)}")
    bins: dict[str, str] = {}
    for spec in schema.fields:
        if spec.name not in record:
            raise MissingField(f"record lacks schema field {spec.name!r}")
        value = record[spec.name]
        if spec.numeric:
            try:
                x = float(value)
            except (TypeError, ValueError):
                raise OutOfRange(f"field {spec.name!r}: non-numeric value {value!r}") from None
            if not math.isfinite(x):
                raise NonFinite(f"field {spec.name!r}: value {x!r} is not finite")
            bins[spec.name] = _numeric_bin(spec, x)
        else:
            label = str(value)
            if label not in spec.categories:
                raise OutOfRange(f"field {spec.name!r}: {label!r} not in category list")
            bins[spec.name] = label
    return QuantizedRecord(bins=bins)


def _numeric_bin(spec: FieldSpec, x: float) -> str:
    edges = spec.edges
    if x < edges[0] or x > edges[-1]:
        raise OutOfRange(
            f"field {spec.name!r}: value {x:g} outside [{edges[0]:g}, {edges[-1]:g}]"
        )
    if x == edges[-1]:
        return format_bin(edges[-2], edges[-1])
    for lo, hi in zip(edges, edges[1:]):
        if lo <= x < hi:
            return format_bin(lo, hi)
    raise OutOfRange(f"field {spec.name!r}: no bin for {x:g}")  # unreachable for finite x


# ---------------------------------------------------------------------------
# Consensus over perception views
# ---------------------------------------------------------------------------

def default_min_support(n_views: int) -> int:
    """Strict majority: the conservative default support threshold."""
    return max(1, math.ceil(n_views / 2))


def consensus_assertions(views: list[Iterable[Assertion]], min_support: int) -> tuple[Assertion, ...]:
    """Fuse per-view assertion sets into one conservative consensus set.

    A concept that appears with both polarities anywhere across the views is
    contradicted and dropped entirely (both sides). Among the survivors, a
    (concept, polarity) pair is kept when at least `min_support` views contain
    it; its qualifier is the majority qualifier among those views, falling back
    to no qualifier on ties. Output is sorted, so equal inputs give equal
    output bytes.
    """
    n_views = len(views)
    if n_views < 1:
        raise InvalidSupport("need at least one view")
    if not 1 <= min_support <= n_views:
        raise InvalidSupport(f"min_support {min_support} outside 1..{n_views}")

    view_sets = [set(v) for v in views]
    polarity_seen: dict[str, set[str]] = {}
    for vs in view_sets:
        for a in vs:
            polarity_seen.setdefault(a.concept_id, set()).add(a.polarity)
    contradicted = {cid for cid, pols in polarity_seen.items() if len(pols) > 1}

    support: Counter = Counter()
    qualifier_votes: dict[tuple[str, str], Counter] = {}
    for vs in view_sets:
        pairs_in_view = {}
        for a in vs:
            if a.concept_id in contradicted:
                continue
            pairs_in_view.setdefault((a.concept_id, a.polarity), []).append(a.qualifier)
        for pair, quals in pairs_in_view.items():
            support[pair] += 1
            votes = qualifier_votes.setdefault(pair, Counter())
            for q in quals:
                votes[q] += 1

    out = []
    for (concept_id, polarity), count in support.items():
        if count < min_support:
            continue
        out.append(Assertion(concept_id, polarity, _majority_qualifier(qualifier_votes[(concept_id, polarity)])))
    return tuple(sorted(out, key=lambda a: a.key()))


def _majority_qualifier(votes: Counter) -> str | None:
    best = votes.most_common()
    if not best:
        return None
    top_count = best[0][1]
    winners = [q for q, c in best if c == top_count]
    if len(winners) > 1:
        return None
    return winners[0]


# ---------------------------------------------------------------------------
# Card assembly
# ---------------------------------------------------------------------------

def render_summary(class_label: str | None, assertions: tuple[Assertion, ...], record: QuantizedRecord) -> str:
    """Deterministic template summary; no generative backend involved."""
    parts = []
    if class_label is not None:
        parts.append(class_label)
    if assertions:
        parts.append("findings " + ", ".join(a.key() for a in assertions))
    else:
        parts.append("no consensus findings")
    parts.append("record " + ", ".join(f"{k}={v}" for k, v in record.bins.items()))
    return "; ".join(parts)


def build_protocard(
    prototype_id: int,
    class_label: str,
    views: list[Iterable[Assertion]],
    raw_record: dict,
    schema: TabularSchema,
    min_support: int,
) -> ProtoCard:
    assertions = consensus_assertions(views, min_support)
    record = quantize(raw_record, schema)
    return ProtoCard(
        prototype_id=prototype_id,
        class_label=class_label,
        assertions=assertions,
        record=record,
        summary=render_summary(class_label, assertions, record),
        provenance=Provenance(views=len(views), min_support=min_support),
    )


def build_casecard(
    case_id: str,
    views: list[Iterable[Assertion]],
    raw_record: dict,
    schema: TabularSchema,
    min_support: int,
) -> CaseCard:
    return CaseCard(
        case_id=case_id,
        assertions=consensus_assertions(views, min_support),
        record=quantize(raw_record, schema),
    )


# ---------------------------------------------------------------------------
# Memory bank persistence (one card per line, stable key order)
# ---------------------------------------------------------------------------

def dumps_canonical(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def write_bank(cards: Iterable[ProtoCard], path: str | Path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for card in cards:
            fh.write(dumps_canonical(card.to_dict()) + "\n")
            n += 1
    return n


def read_bank(path: str | Path) -> Iterator[ProtoCard]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield ProtoCard.from_dict(json.loads(line))


def load_bank(path: str | Path) -> dict[int, ProtoCard]:
    bank: dict[int, ProtoCard] = {}
    for card in read_bank(path):
        if card.prototype_id in bank:
            raise ConfigError(f"duplicate prototype_id {card.prototype_id} in bank")
        bank[card.prototype_id] = card
    return bank
