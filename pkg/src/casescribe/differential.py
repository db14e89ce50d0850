"""Exact case-prototype differentials and the grounded evidence state.

Everything a report is allowed to say about a prototype comes from the
Differential computed here: the intersection and the two relative complements
of the assertion sets, plus the field-wise bin mismatches. The GroundedState
bundles those differentials for the visible neighborhood and is the only
payload ever serialized into a scribe prompt.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .backbone import BackboneOutput
from .errors import InvariantViolation, NoVisibleCards, SchemaMismatch
from .gate import GatedCard
from .memory import CaseCard, ProtoCard, dumps_canonical

GROUNDED_STATE_VERSION = "grounded-state/1"

PARTITIONS = ("shared", "query_only", "proto_only")
TABULAR = "tabular"


@dataclass(frozen=True)
class Differential:
    """Four-part set-theoretic comparison between a case and one prototype."""

    prototype_id: int
    shared: frozenset[str]
    query_only: frozenset[str]
    proto_only: frozenset[str]
    tabular_mismatch: tuple[tuple[str, str, str], ...]

    def partition(self, name: str) -> frozenset[str]:
        if name == "shared":
            return self.shared
        if name == "query_only":
            return self.query_only
        if name == "proto_only":
            return self.proto_only
        raise KeyError(name)

    def mismatch_fields(self) -> frozenset[str]:
        return frozenset(f for f, _, _ in self.tabular_mismatch)

    def blank_assertions(self) -> "Differential":
        """Visual deferral: drop assertion partitions, keep tabular mismatches."""
        return Differential(
            prototype_id=self.prototype_id,
            shared=frozenset(),
            query_only=frozenset(),
            proto_only=frozenset(),
            tabular_mismatch=self.tabular_mismatch,
        )

    def to_dict(self) -> dict:
        return {
            "prototype_id": self.prototype_id,
            "shared": sorted(self.shared),
            "query_only": sorted(self.query_only),
            "proto_only": sorted(self.proto_only),
            "tabular_mismatch": [list(t) for t in self.tabular_mismatch],
        }

    @staticmethod
    def from_dict(d: dict) -> "Differential":
        return Differential(
            prototype_id=int(d["prototype_id"]),
            shared=frozenset(d["shared"]),
            query_only=frozenset(d["query_only"]),
            proto_only=frozenset(d["proto_only"]),
            tabular_mismatch=tuple(tuple(t) for t in d["tabular_mismatch"]),
        )


def _require_same_fields(case: CaseCard, card: ProtoCard) -> None:
    # key order may differ between freshly built and deserialized cards
    if set(case.record.bins) != set(card.record.bins):
        raise SchemaMismatch(
            f"case {case.case_id!r} and prototype {card.prototype_id} have different tabular fields"
        )


def differential(case: CaseCard, card: ProtoCard) -> Differential:
    """Exact set algebra over assertion identity plus field-wise bin diff."""
    _require_same_fields(case, card)
    a_case = frozenset(case.assertion_keys())
    a_proto = frozenset(card.assertion_keys())
    mismatches = tuple(
        (f, case.record.bins[f], card.record.bins[f])
        for f in case.record.bins
        if case.record.bins[f] != card.record.bins[f]
    )
    return Differential(
        prototype_id=card.prototype_id,
        shared=a_case & a_proto,
        query_only=a_case - a_proto,
        proto_only=a_proto - a_case,
        tabular_mismatch=mismatches,
    )


def discordance(case: CaseCard, card: ProtoCard) -> float:
    """Jaccard distance over assertion IDs; two empty sets are concordant."""
    _require_same_fields(case, card)
    a = frozenset(case.assertion_keys())
    b = frozenset(card.assertion_keys())
    union = a | b
    if not union:
        return 0.0
    return 1.0 - len(a & b) / len(union)


# ---------------------------------------------------------------------------
# Grounded state
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VisibleEvidence:
    card: ProtoCard
    weight: float
    similarity: float
    diff: Differential


@dataclass(frozen=True)
class GroundedState:
    case: CaseCard
    visible: tuple[VisibleEvidence, ...]
    redacted_count: int
    deferral: Optional[str]
    backbone: BackboneOutput

    def admissible_triples(self) -> frozenset[tuple[str, int, str]]:
        """Every (partition, prototype_id, evidence_id) a report may cite."""
        triples = set()
        for ev in self.visible:
            for name in PARTITIONS:
                for key in ev.diff.partition(name):
                    triples.add((name, ev.diff.prototype_id, key))
            for f, _, _ in ev.diff.tabular_mismatch:
                triples.add((TABULAR, ev.diff.prototype_id, f))
        return frozenset(triples)

    def document(self) -> dict:
        """Canonical, versioned prompt document. Redacted cards appear only
        as a count; their assertions, bins and summaries are never present."""
        return {
            "version": GROUNDED_STATE_VERSION,
            "case": self.case.to_dict(),
            "backbone": {
                "predicted_class": self.backbone.predicted_class,
                "severity_scalar": self.backbone.severity_scalar,
                "modality_gate": self.backbone.modality_gate,
                "neighborhood": [
                    {"prototype_id": e.prototype_id, "weight": e.weight, "similarity": e.similarity}
                    for e in self.backbone.neighborhood
                ],
            },
            "visible": [
                {
                    "prototype_id": ev.card.prototype_id,
                    "class_label": ev.card.class_label,
                    "assertions": list(ev.card.assertion_keys()),
                    "record": ev.card.record.to_dict(),
                    "summary": ev.card.summary,
                    "weight": ev.weight,
                    "similarity": ev.similarity,
                    "differential": ev.diff.to_dict(),
                }
                for ev in self.visible
            ],
            "redacted_count": self.redacted_count,
            "deferral": None if self.deferral is None else {"reason": self.deferral},
        }

    def serialized(self) -> str:
        return dumps_canonical(self.document())


def weighted_mean_discordance(pairs: list[tuple[float, float]]) -> float:
    """pairs of (similarity, discordance); falls back to the plain mean when
    every similarity is zero."""
    total = sum(s for s, _ in pairs)
    if total <= 0:
        return sum(d for _, d in pairs) / len(pairs)
    return sum(s * d for s, d in pairs) / total


def supervise(
    case: CaseCard,
    gated: list[GatedCard],
    backbone: BackboneOutput,
    tau: float,
) -> GroundedState:
    """Assemble the grounded state, deciding visual deferral.

    Discordance is aggregated as the similarity-weighted mean over visible
    cards; strictly exceeding tau suppresses the assertion partitions of every
    differential (tabular mismatches survive). Raises NoVisibleCards when the
    whole neighborhood was redacted, which mandates tabular-only reporting.
    """
    known = {e.prototype_id for e in backbone.neighborhood}
    for g in gated:
        if g.prototype_id not in known:
            raise InvariantViolation(0, "neighborhood", f"prototype {g.prototype_id} not retrieved")
    visible_cards = [g.card for g in gated if g.card is not None]
    redacted_count = sum(1 for g in gated if not g.visible)
    if not visible_cards:
        raise NoVisibleCards(f"case {case.case_id!r}: every retrieved card was redacted")

    entries = []
    pairs = []
    for card in visible_cards:
        sim = backbone.similarity_of(card.prototype_id)
        weight = next(
            e.weight for e in backbone.neighborhood if e.prototype_id == card.prototype_id
        )
        diff = differential(case, card)
        entries.append((card, weight, sim, diff))
        pairs.append((sim, discordance(case, card)))

    mean_disc = weighted_mean_discordance(pairs)
    deferral = None
    if mean_disc > tau:
        deferral = f"weighted mean discordance {mean_disc:.6f} exceeds threshold {tau:g}"
        entries = [(card, w, s, diff.blank_assertions()) for card, w, s, diff in entries]

    return GroundedState(
        case=case,
        visible=tuple(VisibleEvidence(card=c, weight=w, similarity=s, diff=d) for c, w, s, d in entries),
        redacted_count=redacted_count,
        deferral=deferral,
        backbone=backbone,
    )


def tabular_only_state(case: CaseCard, gated: list[GatedCard], backbone: BackboneOutput) -> GroundedState:
    """Fallback state when nothing is visible: no comparisons are admissible."""
    return GroundedState(
        case=case,
        visible=(),
        redacted_count=sum(1 for g in gated if not g.visible),
        deferral=None,
        backbone=backbone,
    )
