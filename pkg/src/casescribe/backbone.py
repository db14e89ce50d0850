"""Frozen-backbone ingestion contract and the seeded synthetic cohort generator.

The upstream classifier is consumed purely through files: per-case predictions
with a retrieved prototype neighborhood, prototype records with perception
views, and query cases. The generator fabricates all three with an
equivalence-class structure that is known analytically, which is what the
privacy bound and phase-transition tests lean on.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path
from typing import Iterable, Iterator

from .errors import InvalidSpec, InvariantViolation, ParseError
from .memory import Assertion, TabularSchema, dumps_canonical

BACKBONE_SCHEMA_VERSION = "backbone/1"
PROTOTYPES_SCHEMA_VERSION = "prototypes/1"
CASES_SCHEMA_VERSION = "cases/1"
MEMBERSHIP_SCHEMA_VERSION = "membership/1"


# ---------------------------------------------------------------------------
# Ingestion contract
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NeighborEntry:
    prototype_id: int
    weight: float
    similarity: float


@dataclass(frozen=True)
class BackboneOutput:
    case_id: str
    predicted_class: str
    severity_scalar: float
    modality_gate: float
    neighborhood: tuple[NeighborEntry, ...]

    def similarity_of(self, prototype_id: int) -> float:
        for e in self.neighborhood:
            if e.prototype_id == prototype_id:
                return e.similarity
        raise KeyError(prototype_id)

    def to_dict(self) -> dict:
        return {
            "schema_version": BACKBONE_SCHEMA_VERSION,
            "case_id": self.case_id,
            "predicted_class": self.predicted_class,
            "severity_scalar": self.severity_scalar,
            "modality_gate": self.modality_gate,
            "neighborhood": [
                {"prototype_id": e.prototype_id, "weight": e.weight, "similarity": e.similarity}
                for e in self.neighborhood
            ],
        }


def _validate_backbone(d: dict, line: int) -> BackboneOutput:
    for key in ("case_id", "predicted_class", "severity_scalar", "modality_gate", "neighborhood"):
        if key not in d:
            raise ParseError(line, f"missing key {key!r}")
    alpha = float(d["modality_gate"])
    if not 0.0 <= alpha <= 1.0:
        raise InvariantViolation(line, "modality_gate", f"{alpha} outside [0, 1]")
    z = float(d["severity_scalar"])
    if not math.isfinite(z):
        raise InvariantViolation(line, "severity_scalar", "not finite")
    raw = d["neighborhood"]
    if not isinstance(raw, list) or not raw:
        raise InvariantViolation(line, "neighborhood", "must be a nonempty list")
    entries = []
    seen = set()
    for e in raw:
        j = int(e["prototype_id"])
        if j in seen:
            raise InvariantViolation(line, "neighborhood", f"duplicate prototype_id {j}")
        seen.add(j)
        w = float(e["weight"])
        s = float(e["similarity"])
        if w < 0:
            raise InvariantViolation(line, "neighborhood", f"weight {w} < 0")
        if not 0.0 <= s <= 1.0:
            raise InvariantViolation(line, "neighborhood", f"similarity {s} outside [0, 1]")
        entries.append(NeighborEntry(j, w, s))
    return BackboneOutput(
        case_id=str(d["case_id"]),
        predicted_class=str(d["predicted_class"]),
        severity_scalar=z,
        modality_gate=alpha,
        neighborhood=tuple(entries),
    )


def load_backbone_outputs(path: str | Path) -> Iterator[BackboneOutput]:
    """Validated stream; malformed records are reported with line numbers."""
    with open(path, encoding="utf-8") as fh:
        for n, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                d = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(n, f"invalid JSON: {exc}") from None
            yield _validate_backbone(d, n)


def write_backbone_outputs(outputs: Iterable[BackboneOutput], path: str | Path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for out in outputs:
            fh.write(dumps_canonical(out.to_dict()) + "\n")
            n += 1
    return n


# ---------------------------------------------------------------------------
# Synthetic cohort records
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PrototypeRecord:
    """Raw prototype as exported upstream: tabular values plus perception views.

    `similarity` is the prototype's typical retrieval similarity, used to
    weight the release surface when sweeping the gate.
    """

    prototype_id: int
    class_label: str
    record: dict
    views: tuple[tuple[Assertion, ...], ...]
    similarity: float

    def to_dict(self) -> dict:
        return {
            "schema_version": PROTOTYPES_SCHEMA_VERSION,
            "prototype_id": self.prototype_id,
            "class_label": self.class_label,
            "record": dict(self.record),
            "views": [[a.to_dict() for a in view] for view in self.views],
            "similarity": self.similarity,
        }

    @staticmethod
    def from_dict(d: dict) -> "PrototypeRecord":
        return PrototypeRecord(
            prototype_id=int(d["prototype_id"]),
            class_label=str(d["class_label"]),
            record=dict(d["record"]),
            views=tuple(tuple(Assertion.from_dict(a) for a in view) for view in d["views"]),
            similarity=float(d["similarity"]),
        )


@dataclass(frozen=True)
class QueryCase:
    case_id: str
    record: dict
    views: tuple[tuple[Assertion, ...], ...]

    def to_dict(self) -> dict:
        return {
            "schema_version": CASES_SCHEMA_VERSION,
            "case_id": self.case_id,
            "record": dict(self.record),
            "views": [[a.to_dict() for a in view] for view in self.views],
        }

    @staticmethod
    def from_dict(d: dict) -> "QueryCase":
        return QueryCase(
            case_id=str(d["case_id"]),
            record=dict(d["record"]),
            views=tuple(tuple(Assertion.from_dict(a) for a in view) for view in d["views"]),
        )


@dataclass(frozen=True)
class MembershipLabel:
    case_id: str
    member: bool
    source_prototype_id: int | None

    def to_dict(self) -> dict:
        return {
            "schema_version": MEMBERSHIP_SCHEMA_VERSION,
            "case_id": self.case_id,
            "member": self.member,
            "source_prototype_id": self.source_prototype_id,
        }

    @staticmethod
    def from_dict(d: dict) -> "MembershipLabel":
        src = d.get("source_prototype_id")
        return MembershipLabel(str(d["case_id"]), bool(d["member"]), None if src is None else int(src))


# ---------------------------------------------------------------------------
# Cohort specification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticCohortSpec:
    """Analytic control over the generated population.

    ec_spec lists one (size, distinct_sensitive_values) pair per equivalence
    class; the population size is their size sum. Classes smaller than
    isolation_threshold draw quasi bins and concepts from reserved pools that
    no other record uses, so their content strings are globally unique.
    """

    seed: int = 7
    ec_spec: tuple[tuple[int, int], ...] = ()
    class_priors: dict[str, float] = field(
        default_factory=lambda: {"Normal": 0.4, "Osteopenia": 0.35, "Osteoporosis": 0.25}
    )
    n_queries: int = 0
    nonmember_rate: float = 0.5
    nonmember_overlap: float = 0.15
    assertion_noise: float = 0.1
    neighborhood_k: int = 3
    views_per_record: int = 3
    isolation_threshold: int = 0
    # Probability that a query's neighborhood swaps its last slot for an
    # isolated prototype at a synthetic latent similarity. Retrieval is an
    # upstream latent-space decision, so it may disagree with symbolic overlap.
    isolated_neighbor_rate: float = 0.0

    @property
    def population_size(self) -> int:
        return sum(size for size, _ in self.ec_spec)

    def validate(self, n_class_labels: int) -> None:
        for size, ldiv in self.ec_spec:
            if size < 1:
                raise InvalidSpec(f"equivalence class size {size} < 1")
            if not 1 <= ldiv <= size:
                raise InvalidSpec(f"distinct sensitive values {ldiv} outside 1..{size}")
            if ldiv > n_class_labels:
                raise InvalidSpec(f"distinct sensitive values {ldiv} exceed label alphabet {n_class_labels}")
        if not self.class_priors or any(p < 0 for p in self.class_priors.values()):
            raise InvalidSpec("class_priors must be nonnegative and nonempty")
        if sum(self.class_priors.values()) <= 0:
            raise InvalidSpec("class_priors must have positive mass")
        for name, rate in (
            ("nonmember_rate", self.nonmember_rate),
            ("nonmember_overlap", self.nonmember_overlap),
            ("assertion_noise", self.assertion_noise),
            ("isolated_neighbor_rate", self.isolated_neighbor_rate),
        ):
            if not 0.0 <= rate <= 1.0:
                raise InvalidSpec(f"{name} {rate} outside [0, 1]")
        if self.n_queries < 0:
            raise InvalidSpec("n_queries must be >= 0")
        if self.n_queries > 0 and not self.ec_spec:
            raise InvalidSpec("queries need a nonempty prototype population")
        if self.neighborhood_k < 1:
            raise InvalidSpec("neighborhood_k must be >= 1")
        if self.views_per_record < 1:
            raise InvalidSpec("views_per_record must be >= 1")


@dataclass(frozen=True)
class SyntheticCohort:
    prototypes: tuple[PrototypeRecord, ...]
    cases: tuple[QueryCase, ...]
    backbone: tuple[BackboneOutput, ...]
    membership: tuple[MembershipLabel, ...]

    def backbone_by_case(self) -> dict[str, BackboneOutput]:
        return {b.case_id: b for b in self.backbone}


# ---------------------------------------------------------------------------
# Generator
# ---------------------------------------------------------------------------

# Per quasi field, bin labels split into three pools: regular members, isolated
# classes, and off-support non-member queries. Fields need >= 4 bins when either
# of the last two features is exercised.
_MEMBER, _ISOLATED, _NONMEMBER = "member", "isolated", "nonmember"


def _quasi_pools(labels: tuple[str, ...]) -> dict[str, tuple[str, ...]]:
    if len(labels) >= 4:
        return {
            _MEMBER: labels[:-3],
            _ISOLATED: labels[-3:-1],
            _NONMEMBER: labels[-1:],
        }
    return {_MEMBER: labels, _ISOLATED: labels[-1:], _NONMEMBER: labels[-1:]}


def _draw_labels(rng: random.Random, priors: dict[str, float], n_distinct: int) -> list[str]:
    names = sorted(priors)
    weights = [priors[n] for n in names]
    chosen: list[str] = []
    while len(chosen) < n_distinct:
        pick = rng.choices(names, weights=weights, k=1)[0]
        if pick not in chosen:
            chosen.append(pick)
    return chosen


def _value_in_bin(rng: random.Random, spec, label: str) -> float:
    labels = spec.bin_labels()
    idx = labels.index(label)
    lo, hi = spec.edges[idx], spec.edges[idx + 1]
    x = round(lo + (hi - lo) * rng.random(), 4)
    return x if x < hi else lo


@dataclass(frozen=True)
class _EcPlan:
    size: int
    labels: tuple[str, ...]
    quasi_bins: dict[str, str]
    assertions: tuple[Assertion, ...]
    isolated: bool


def synth_cohort(
    spec: SyntheticCohortSpec,
    schema: TabularSchema,
    quasi_fields: tuple[str, ...],
    concepts: list[str],
    reserved_concepts: list[str] | None = None,
) -> SyntheticCohort:
    """Seed-deterministic cohort with exact equivalence-class structure.

    Every equivalence class gets a unique (quasi bins, concept buckets) pair,
    so the fitted gate reports exactly the class sizes and sensitive-value
    diversities given in the spec. Retrieval similarities decay with assertion
    set distance between case and prototype.
    """
    spec.validate(n_class_labels=sum(1 for p in spec.class_priors.values() if p > 0))
    reserved_concepts = reserved_concepts or []
    if not spec.ec_spec:
        return SyntheticCohort((), (), (), ())

    rng = random.Random(spec.seed)
    pools = {f: _quasi_pools(schema.spec(f).bin_labels()) for f in quasi_fields}
    need_isolation = spec.isolation_threshold > 0 and any(
        size < spec.isolation_threshold for size, _ in spec.ec_spec
    )
    if need_isolation:
        if not reserved_concepts:
            raise InvalidSpec("isolation requires reserved concepts")
        for f in quasi_fields:
            if len(schema.spec(f).bin_labels()) < 4:
                raise InvalidSpec(f"isolation requires >= 4 bins on quasi field {f!r}")

    member_combos = list(product(*(pools[f][_MEMBER] for f in quasi_fields)))
    isolated_combos = list(product(*(pools[f][_ISOLATED] for f in quasi_fields)))
    rng.shuffle(member_combos)
    rng.shuffle(isolated_combos)

    plans: list[_EcPlan] = []
    used_signatures: set = set()
    n_member_ecs = 0
    n_isolated_ecs = 0
    for size, ldiv in spec.ec_spec:
        isolated = spec.isolation_threshold > 0 and size < spec.isolation_threshold
        if isolated:
            combo = isolated_combos[n_isolated_ecs % len(isolated_combos)]
            pool = reserved_concepts
            n_isolated_ecs += 1
        else:
            combo = member_combos[n_member_ecs % len(member_combos)]
            pool = concepts
            n_member_ecs += 1
        quasi_bins = dict(zip(quasi_fields, combo))
        assertions = None
        for _ in range(200):
            k = rng.randint(2, min(4, len(pool))) if len(pool) >= 2 else 1
            picked = sorted(rng.sample(pool, k))
            candidate = tuple(
                Assertion(cid, "present" if rng.random() < 0.85 else "absent") for cid in picked
            )
            buckets = tuple(sorted({c.concept_id.split(".", 1)[0] for c in candidate}))
            sig_key = (combo, buckets)
            if sig_key not in used_signatures:
                used_signatures.add(sig_key)
                assertions = candidate
                break
        if assertions is None:
            raise InvalidSpec(
                "could not allocate a distinct equivalence class; widen the schema or taxonomy"
            )
        plans.append(
            _EcPlan(
                size=size,
                labels=tuple(_draw_labels(rng, spec.class_priors, ldiv)),
                quasi_bins=quasi_bins,
                assertions=assertions,
                isolated=isolated,
            )
        )

    prototypes: list[PrototypeRecord] = []
    proto_plan: list[_EcPlan] = []
    j = 0
    for plan in plans:
        for i in range(plan.size):
            record = _sample_record(rng, schema, quasi_fields, plan.quasi_bins)
            views = tuple(plan.assertions for _ in range(spec.views_per_record))
            prototypes.append(
                PrototypeRecord(
                    prototype_id=j,
                    class_label=plan.labels[i % len(plan.labels)],
                    record=record,
                    views=views,
                    similarity=round(rng.uniform(0.05, 0.95), 6),
                )
            )
            proto_plan.append(plan)
            j += 1

    cases: list[QueryCase] = []
    backbone: list[BackboneOutput] = []
    membership: list[MembershipLabel] = []
    if spec.n_queries:
        eligible = [
            p for p, plan in zip(prototypes, proto_plan) if not plan.isolated
        ]
        if not eligible:
            raise InvalidSpec("no non-isolated prototypes to source queries from")
        plan_of = {p.prototype_id: plan for p, plan in zip(prototypes, proto_plan)}
        proto_keys = {p.prototype_id: frozenset(a.key() for a in p.views[0]) for p in prototypes}
        n_members = spec.n_queries - round(spec.n_queries * spec.nonmember_rate)
        for qi in range(spec.n_queries):
            case_id = f"q{qi:05d}"
            is_member = qi < n_members
            if is_member:
                source = eligible[rng.randrange(len(eligible))]
                plan = plan_of[source.prototype_id]
                record = _sample_record(rng, schema, quasi_fields, plan.quasi_bins)
                assertions = _noisy_assertions(rng, plan.assertions, concepts, spec.assertion_noise)
                membership.append(MembershipLabel(case_id, True, source.prototype_id))
            else:
                if rng.random() < spec.nonmember_overlap:
                    donor = plan_of[eligible[rng.randrange(len(eligible))].prototype_id]
                    quasi_bins = dict(donor.quasi_bins)
                else:
                    quasi_bins = {
                        f: (
                            pools[f][_NONMEMBER][0]
                            if f == quasi_fields[0]
                            else rng.choice(pools[f][_MEMBER])
                        )
                        for f in quasi_fields
                    }
                record = _sample_record(rng, schema, quasi_fields, quasi_bins)
                k = rng.randint(2, min(4, len(concepts)))
                assertions = tuple(
                    Assertion(cid, "present") for cid in sorted(rng.sample(concepts, k))
                )
                membership.append(MembershipLabel(case_id, False, None))
            views = tuple(assertions for _ in range(spec.views_per_record))
            cases.append(QueryCase(case_id=case_id, record=record, views=views))
            backbone.append(
                _backbone_for(rng, spec, case_id, assertions, prototypes, proto_keys, plan_of)
            )
        if spec.isolated_neighbor_rate > 0:
            isolated_ids = [
                p.prototype_id for p, plan in zip(prototypes, proto_plan) if plan.isolated
            ]
            if isolated_ids:
                backbone = [
                    _with_isolated_neighbor(rng, spec, out, isolated_ids) for out in backbone
                ]
    return SyntheticCohort(
        prototypes=tuple(prototypes),
        cases=tuple(cases),
        backbone=tuple(backbone),
        membership=tuple(membership),
    )


def _sample_record(
    rng: random.Random,
    schema: TabularSchema,
    quasi_fields: tuple[str, ...],
    quasi_bins: dict[str, str],
) -> dict:
    record: dict = {}
    for fs in schema.fields:
        if fs.name in quasi_fields:
            label = quasi_bins[fs.name]
            record[fs.name] = _value_in_bin(rng, fs, label) if fs.numeric else label
        else:
            if fs.numeric:
                record[fs.name] = _value_in_bin(rng, fs, rng.choice(fs.bin_labels()))
            else:
                record[fs.name] = rng.choice(fs.categories)
    return record


def _noisy_assertions(
    rng: random.Random,
    base: tuple[Assertion, ...],
    concepts: list[str],
    noise: float,
) -> tuple[Assertion, ...]:
    kept = [a for a in base if rng.random() >= noise]
    if not kept:
        kept = list(base[:1])
    if noise > 0 and rng.random() < noise:
        present = {a.concept_id for a in kept}
        extras = [c for c in concepts if c not in present]
        if extras:
            kept.append(Assertion(rng.choice(sorted(extras)), "present"))
    return tuple(sorted(kept, key=lambda a: a.key()))


def _with_isolated_neighbor(
    rng: random.Random,
    spec: SyntheticCohortSpec,
    out: BackboneOutput,
    isolated_ids: list[int],
) -> BackboneOutput:
    if rng.random() >= spec.isolated_neighbor_rate:
        return out
    pick = isolated_ids[rng.randrange(len(isolated_ids))]
    sim = round(rng.uniform(0.2, 0.5), 6)
    entries = list(out.neighborhood[:-1]) if len(out.neighborhood) > 1 else []
    entries = [e for e in entries if e.prototype_id != pick]
    entries.append(NeighborEntry(prototype_id=pick, weight=sim, similarity=sim))
    return BackboneOutput(
        case_id=out.case_id,
        predicted_class=out.predicted_class,
        severity_scalar=out.severity_scalar,
        modality_gate=out.modality_gate,
        neighborhood=tuple(entries),
    )


def _backbone_for(
    rng: random.Random,
    spec: SyntheticCohortSpec,
    case_id: str,
    assertions: tuple[Assertion, ...],
    prototypes: list[PrototypeRecord],
    proto_keys: dict[int, frozenset],
    plan_of: dict[int, _EcPlan],
) -> BackboneOutput:
    case_keys = frozenset(a.key() for a in assertions)
    scored = []
    for p in prototypes:
        keys = proto_keys[p.prototype_id]
        union = case_keys | keys
        sim = (len(case_keys & keys) / len(union)) if union else 1.0
        scored.append((-sim, p.prototype_id, sim))
    scored.sort()
    top = scored[: spec.neighborhood_k]
    neighborhood = tuple(
        NeighborEntry(prototype_id=j, weight=round(sim, 6), similarity=round(sim, 6))
        for _, j, sim in top
    )
    best_id = top[0][1]
    best_plan = plan_of[best_id]
    predicted = best_plan.labels[0]
    centers = {"Normal": 0.3, "Osteopenia": -1.7, "Osteoporosis": -3.2}
    z = rng.gauss(centers.get(predicted, 0.0), 0.5)
    return BackboneOutput(
        case_id=case_id,
        predicted_class=predicted,
        severity_scalar=round(z, 4),
        modality_gate=round(rng.uniform(0.3, 0.9), 4),
        neighborhood=neighborhood,
    )


# ---------------------------------------------------------------------------
# Cohort file round-trips
# ---------------------------------------------------------------------------

def _write_jsonl(rows: Iterable[dict], path: str | Path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(dumps_canonical(row) + "\n")
            n += 1
    return n


def _read_jsonl(path: str | Path) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for n, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                yield json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(n, f"invalid JSON: {exc}") from None


def write_prototypes(records: Iterable[PrototypeRecord], path: str | Path) -> int:
    return _write_jsonl((r.to_dict() for r in records), path)


def read_prototypes(path: str | Path) -> list[PrototypeRecord]:
    return [PrototypeRecord.from_dict(d) for d in _read_jsonl(path)]


def write_cases(cases: Iterable[QueryCase], path: str | Path) -> int:
    return _write_jsonl((c.to_dict() for c in cases), path)


def read_cases(path: str | Path) -> list[QueryCase]:
    return [QueryCase.from_dict(d) for d in _read_jsonl(path)]


def write_membership(labels: Iterable[MembershipLabel], path: str | Path) -> int:
    return _write_jsonl((m.to_dict() for m in labels), path)


def read_membership(path: str | Path) -> list[MembershipLabel]:
    return [MembershipLabel.from_dict(d) for d in _read_jsonl(path)]
