"""Structured report and claim types plus the structural validation rules.

The wire format is versioned ("report/1") and published as a JSON Schema in
docs/report_schema_v1.json; `structural_violations` is the executable twin of
that document and must stay in lockstep with it. Constructors are deliberately
permissive: backends may produce invalid reports, and invalidity is the
critic's business, not a constructor crash.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Optional

from .errors import SchemaViolation, UnparseableResponse

REPORT_SCHEMA_VERSION = "report/1"

CLAIM_PARTITIONS = ("shared", "query_only", "proto_only", "tabular")
CONFIDENCE_BANDS = ("low", "medium", "high")


@dataclass(frozen=True)
class Claim:
    claim_id: Any
    partition: Any
    evidence_ids: tuple
    prototype_id: Any
    typed_value: Optional[Any]
    sentence: Any

    def to_dict(self) -> dict:
        return {
            "claim_id": self.claim_id,
            "partition": self.partition,
            "evidence_ids": list(self.evidence_ids),
            "prototype_id": self.prototype_id,
            "typed_value": list(self.typed_value) if isinstance(self.typed_value, (list, tuple)) else self.typed_value,
            "sentence": self.sentence,
        }

    @staticmethod
    def from_dict(d: dict) -> "Claim":
        if not isinstance(d, dict):
            raise UnparseableResponse("claim is not an object")
        evidence = d.get("evidence_ids")
        evidence_t = tuple(evidence) if isinstance(evidence, list) else ()
        typed = d.get("typed_value")
        if isinstance(typed, list):
            typed = tuple(typed)
        return Claim(
            claim_id=d.get("claim_id"),
            partition=d.get("partition"),
            evidence_ids=evidence_t,
            prototype_id=d.get("prototype_id"),
            typed_value=typed,
            sentence=d.get("sentence"),
        )


@dataclass(frozen=True)
class Report:
    case_id: Any
    predicted_class: Any
    confidence_band: Any
    impression: Any
    claims: tuple = field(default_factory=tuple)

    def to_dict(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "case_id": self.case_id,
            "predicted_class": self.predicted_class,
            "confidence_band": self.confidence_band,
            "impression": self.impression,
            "claims": [c.to_dict() for c in self.claims],
        }


def report_from_dict(d: Any) -> Report:
    """Decode a backend response. Raises UnparseableResponse only when the
    payload cannot be shaped into a Report at all; structural invalidity is
    left for the critic to itemize."""
    if not isinstance(d, dict):
        raise UnparseableResponse("response is not a JSON object")
    claims_raw = d.get("claims", [])
    if not isinstance(claims_raw, list):
        raise UnparseableResponse("claims is not a list")
    return Report(
        case_id=d.get("case_id"),
        predicted_class=d.get("predicted_class"),
        confidence_band=d.get("confidence_band"),
        impression=d.get("impression"),
        claims=tuple(Claim.from_dict(c) for c in claims_raw),
    )


# ---------------------------------------------------------------------------
# Structural validation (mirror of docs/report_schema_v1.json)
# ---------------------------------------------------------------------------

def _nonempty_str(x: Any) -> bool:
    return isinstance(x, str) and bool(x)


def structural_violations(report: Report) -> list[tuple[Optional[str], str]]:
    """Itemized schema findings as (claim_id or None, message) pairs."""
    out: list[tuple[Optional[str], str]] = []
    if not _nonempty_str(report.case_id):
        out.append((None, "case_id must be a nonempty string"))
    if not _nonempty_str(report.predicted_class):
        out.append((None, "predicted_class must be a nonempty string"))
    if report.confidence_band not in CONFIDENCE_BANDS:
        out.append((None, f"confidence_band must be one of {list(CONFIDENCE_BANDS)}"))
    if not isinstance(report.impression, str):
        out.append((None, "impression must be a string"))
    for c in report.claims:
        cid = c.claim_id if _nonempty_str(c.claim_id) else None
        if cid is None:
            out.append((None, "claim_id must be a nonempty string"))
        if c.partition not in CLAIM_PARTITIONS:
            out.append((cid, f"partition must be one of {list(CLAIM_PARTITIONS)}"))
        if not c.evidence_ids or not all(_nonempty_str(e) for e in c.evidence_ids):
            out.append((cid, "evidence_ids must be a nonempty list of nonempty strings"))
        if not isinstance(c.prototype_id, int) or isinstance(c.prototype_id, bool):
            out.append((cid, "prototype_id must be an integer"))
        if c.typed_value is not None:
            tv = c.typed_value
            if not (isinstance(tv, tuple) and len(tv) == 2 and all(_nonempty_str(x) for x in tv)):
                out.append((cid, "typed_value must be null or a [field, bin] pair of strings"))
        if not isinstance(c.sentence, str):
            out.append((cid, "sentence must be a string"))
    return out


def extract_claims(report: Report) -> frozenset[tuple[str, int, str]]:
    """Atomic (partition, prototype_id, evidence_id) triples of a valid report."""
    problems = structural_violations(report)
    if problems:
        raise SchemaViolation(f"report is structurally invalid: {problems[0][1]}")
    triples = set()
    for c in report.claims:
        for eid in c.evidence_ids:
            triples.add((c.partition, c.prototype_id, eid))
    return frozenset(triples)
