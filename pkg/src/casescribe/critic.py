"""Deterministic barrier critic.

Four constraint families are itemized independently: structural validity of
the report document, citation grounding against the differentials, typed-value
consistency with the quantized case record (including the visual-deferral
rule), and polarity entailment of the narrative sentences. Energy is binary:
zero when every list is empty, infinite otherwise. The critique is one line
per violation with a concrete repair instruction, which is what gets fed back
to the scribe.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

from .differential import PARTITIONS, TABULAR, GroundedState
from .memory import Assertion
from .report import CLAIM_PARTITIONS, Claim, Report, structural_violations
from .taxonomy import Taxonomy

ENERGY_ZERO = "zero"
ENERGY_INFINITE = "infinite"


@dataclass(frozen=True)
class Violation:
    claim_id: Optional[str]
    message: str
    repair: str


@dataclass(frozen=True)
class CriticVerdict:
    schema_violations: tuple[Violation, ...]
    cite_violations: tuple[Violation, ...]
    type_violations: tuple[Violation, ...]
    nli_violations: tuple[Violation, ...]
    energy: str
    critique: str

    @property
    def zero(self) -> bool:
        return self.energy == ENERGY_ZERO

    def violation_count(self) -> int:
        return (
            len(self.schema_violations)
            + len(self.cite_violations)
            + len(self.type_violations)
            + len(self.nli_violations)
        )

    def to_dict(self) -> dict:
        def block(violations):
            return [
                {"claim_id": v.claim_id, "message": v.message, "repair": v.repair}
                for v in violations
            ]

        return {
            "schema_violations": block(self.schema_violations),
            "cite_violations": block(self.cite_violations),
            "type_violations": block(self.type_violations),
            "nli_violations": block(self.nli_violations),
            "energy": self.energy,
            "critique": self.critique,
        }


NliCheck = Callable[[Claim, GroundedState], list[Violation]]


class BarrierCritic:
    """Accept/reject evaluator over a grounded state.

    The entailment check is pluggable; the default is the deterministic
    polarity checker below. A remote model can be slotted in through
    `nli_check` without touching the other three constraint families.
    """

    def __init__(self, taxonomy: Taxonomy, nli_check: Optional[NliCheck] = None):
        self.taxonomy = taxonomy
        self.nli_check = nli_check or self._polarity_check

    def evaluate(self, report: Report, state: GroundedState) -> CriticVerdict:
        schema = tuple(
            Violation(cid, msg, "emit a document matching the report schema")
            for cid, msg in structural_violations(report)
        )
        cite: list[Violation] = []
        typed: list[Violation] = []
        nli: list[Violation] = []
        diffs = {ev.diff.prototype_id: ev.diff for ev in state.visible}
        for claim in report.claims:
            if claim.partition not in CLAIM_PARTITIONS or not isinstance(claim.prototype_id, int):
                continue  # already itemized as a schema violation
            cite.extend(self._check_citations(claim, diffs))
            typed.extend(self._check_typed(claim, state))
            if claim.partition in PARTITIONS and isinstance(claim.sentence, str):
                nli.extend(self.nli_check(claim, state))
        verdict_lists = (schema, tuple(cite), tuple(typed), tuple(nli))
        zero = all(not v for v in verdict_lists)
        return CriticVerdict(
            schema_violations=verdict_lists[0],
            cite_violations=verdict_lists[1],
            type_violations=verdict_lists[2],
            nli_violations=verdict_lists[3],
            energy=ENERGY_ZERO if zero else ENERGY_INFINITE,
            critique=render_critique(verdict_lists),
        )

    def _check_citations(self, claim: Claim, diffs: dict) -> list[Violation]:
        out = []
        cid = claim.claim_id if isinstance(claim.claim_id, str) else None
        diff = diffs.get(claim.prototype_id)
        if diff is None:
            for eid in claim.evidence_ids:
                out.append(
                    Violation(
                        cid,
                        f"cites {eid!r} on prototype {claim.prototype_id}, which is not in the visible evidence",
                        "cite only visible prototypes listed in the grounded document",
                    )
                )
            return out
        if claim.partition == TABULAR:
            allowed = diff.mismatch_fields()
        else:
            allowed = diff.partition(claim.partition)
        for eid in claim.evidence_ids:
            if eid not in allowed:
                alternatives = ", ".join(sorted(allowed)[:3]) or "none"
                out.append(
                    Violation(
                        cid,
                        f"cites {eid!r}, absent from the {claim.partition} partition of prototype {claim.prototype_id}",
                        f"admissible {claim.partition} evidence: {alternatives}",
                    )
                )
        return out

    def _check_typed(self, claim: Claim, state: GroundedState) -> list[Violation]:
        out = []
        cid = claim.claim_id if isinstance(claim.claim_id, str) else None
        if state.deferral is not None and claim.partition in PARTITIONS:
            out.append(
                Violation(
                    cid,
                    f"{claim.partition} claim while visual comparison is deferred",
                    "restrict claims to the tabular partition for this case",
                )
            )
        tv = claim.typed_value
        if isinstance(tv, tuple) and len(tv) == 2 and all(isinstance(x, str) for x in tv):
            field_name, bin_label = tv
            bins = state.case.record.bins
            if field_name not in bins:
                out.append(
                    Violation(
                        cid,
                        f"typed value names unknown field {field_name!r}",
                        f"known fields: {', '.join(bins)}",
                    )
                )
            elif bins[field_name] != bin_label:
                out.append(
                    Violation(
                        cid,
                        f"typed value {field_name}={bin_label!r} does not match the case bin {bins[field_name]!r}",
                        f"use {field_name}={bins[field_name]!r}",
                    )
                )
        return out

    def _polarity_check(self, claim: Claim, state: GroundedState) -> list[Violation]:
        """Default entailment check: the sentence must mention each cited
        concept's display name and carry 'absent' wording exactly when the
        cited polarity is absent."""
        del state
        out = []
        cid = claim.claim_id if isinstance(claim.claim_id, str) else None
        sentence = claim.sentence.lower()
        for eid in claim.evidence_ids:
            if not isinstance(eid, str):
                continue
            try:
                a = Assertion.from_key(eid)
            except Exception:
                continue  # unparseable citation; the cite check owns it
            if a.concept_id not in self.taxonomy:
                continue
            display = self.taxonomy.concepts[a.concept_id].lower()
            if display not in sentence:
                out.append(
                    Violation(
                        cid,
                        f"sentence does not mention {display!r}",
                        f"state the finding using its display name {display!r}",
                    )
                )
            if ("absent" in sentence) != (a.polarity == "absent"):
                out.append(
                    Violation(
                        cid,
                        f"sentence polarity wording contradicts cited polarity {a.polarity!r}",
                        f"describe the finding as {a.polarity}",
                    )
                )
        return out


def render_critique(lists: tuple) -> str:
    names = ("schema", "cite", "type", "nli")
    lines = []
    for name, violations in zip(names, lists):
        for v in violations:
            claim = v.claim_id if v.claim_id else "-"
            lines.append(f"[{name}] claim={claim}: {v.message}. Repair: {v.repair}")
    return "\n".join(lines)


def critic_evaluate(report: Report, state: GroundedState, taxonomy: Taxonomy) -> CriticVerdict:
    return BarrierCritic(taxonomy).evaluate(report, state)
