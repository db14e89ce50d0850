"""Backbone ingestion contract and the synthetic cohort generator."""

import json

import pytest

from casescribe.backbone import (
    BackboneOutput,
    NeighborEntry,
    SyntheticCohortSpec,
    load_backbone_outputs,
    read_cases,
    read_membership,
    read_prototypes,
    synth_cohort,
    write_backbone_outputs,
    write_cases,
    write_membership,
    write_prototypes,
)
from casescribe.errors import InvalidSpec, InvariantViolation, ParseError
from casescribe.gate import fit_gate
from casescribe.memory import dumps_canonical
from casescribe.pipeline import bank_population, distill_bank


def _record(**overrides):
    base = {
        "schema_version": "backbone/1",
        "case_id": "q1",
        "predicted_class": "Normal",
        "severity_scalar": -0.4,
        "modality_gate": 0.6,
        "neighborhood": [
            {"prototype_id": 0, "weight": 0.5, "similarity": 0.9},
            {"prototype_id": 3, "weight": 0.3, "similarity": 0.4},
        ],
    }
    base.update(overrides)
    return base


def _write_lines(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")


def test_load_empty_file_yields_empty_stream(tmp_path):
    path = tmp_path / "bb.jsonl"
    path.write_text("", encoding="utf-8")
    assert list(load_backbone_outputs(path)) == []


def test_load_valid_record(tmp_path):
    path = tmp_path / "bb.jsonl"
    _write_lines(path, [_record()])
    (out,) = load_backbone_outputs(path)
    assert out.case_id == "q1"
    assert out.neighborhood[0] == NeighborEntry(0, 0.5, 0.9)


@pytest.mark.parametrize(
    "overrides,field",
    [
        ({"modality_gate": 1.3}, "modality_gate"),
        ({"severity_scalar": float("nan")}, "severity_scalar"),
        ({"neighborhood": []}, "neighborhood"),
        (
            {
                "neighborhood": [
                    {"prototype_id": 1, "weight": 0.5, "similarity": 0.5},
                    {"prototype_id": 1, "weight": 0.5, "similarity": 0.5},
                ]
            },
            "neighborhood",
        ),
        ({"neighborhood": [{"prototype_id": 1, "weight": -0.1, "similarity": 0.5}]}, "neighborhood"),
        ({"neighborhood": [{"prototype_id": 1, "weight": 0.1, "similarity": 1.5}]}, "neighborhood"),
    ],
)
def test_load_invariant_violations_carry_line_and_field(tmp_path, overrides, field):
    path = tmp_path / "bb.jsonl"
    _write_lines(path, [_record(), _record(**overrides)])
    with pytest.raises(InvariantViolation) as err:
        list(load_backbone_outputs(path))
    assert err.value.line == 2
    assert err.value.field == field


def test_load_parse_error_carries_line(tmp_path):
    path = tmp_path / "bb.jsonl"
    path.write_text('{"ok": 1}\nnot json\n', encoding="utf-8")
    with pytest.raises(ParseError) as err:
        list(load_backbone_outputs(path))
    assert err.value.line == 1 or err.value.line == 2


def test_backbone_round_trip(tmp_path, cfg):
    spec = SyntheticCohortSpec(seed=5, ec_spec=((4, 2),) * 5, n_queries=12)
    cohort = synth_cohort(spec, cfg.schema, cfg.gate.quasi_fields, cfg.common_concepts())
    path = tmp_path / "bb.jsonl"
    write_backbone_outputs(cohort.backbone, path)
    assert tuple(load_backbone_outputs(path)) == cohort.backbone


# ---------------------------------------------------------------------------
# Generator
# ---------------------------------------------------------------------------

def test_empty_spec_yields_empty_cohort(cfg):
    cohort = synth_cohort(SyntheticCohortSpec(seed=1, ec_spec=()), cfg.schema, cfg.gate.quasi_fields, cfg.common_concepts())
    assert cohort.prototypes == () and cohort.cases == ()


def test_same_seed_byte_identical(cfg, tmp_path):
    def render(seed):
        spec = SyntheticCohortSpec(seed=seed, ec_spec=((5, 2),) * 6, n_queries=20)
        cohort = synth_cohort(spec, cfg.schema, cfg.gate.quasi_fields, cfg.common_concepts(), cfg.reserved_concepts())
        return "\n".join(
            [dumps_canonical(p.to_dict()) for p in cohort.prototypes]
            + [dumps_canonical(c.to_dict()) for c in cohort.cases]
            + [dumps_canonical(b.to_dict()) for b in cohort.backbone]
            + [dumps_canonical(m.to_dict()) for m in cohort.membership]
        )

    assert render(9) == render(9)
    assert render(9) != render(10)


def test_equivalence_class_structure_is_exact(cfg):
    # forced (5, 2) classes must fit to count 5, ldiv 2 on every signature
    spec = SyntheticCohortSpec(seed=2, ec_spec=((5, 2),) * 10)
    cohort = synth_cohort(spec, cfg.schema, cfg.gate.quasi_fields, cfg.common_concepts())
    cards = distill_bank(list(cohort.prototypes), cfg)
    index = fit_gate(bank_population(cards, cfg))
    assert len(index) == 10
    assert all(index.count(s) == 5 for s in index.counts)
    assert all(index.ldiv(s) == 2 for s in index.counts)


def test_mixed_class_spec_is_exact(cfg):
    spec = SyntheticCohortSpec(seed=4, ec_spec=((3, 1), (6, 2), (9, 3)))
    cohort = synth_cohort(spec, cfg.schema, cfg.gate.quasi_fields, cfg.common_concepts())
    cards = distill_bank(list(cohort.prototypes), cfg)
    index = fit_gate(bank_population(cards, cfg))
    assert sorted(index.counts.values()) == [3, 6, 9]
    assert sorted(len(v) for v in index.sensitive.values()) == [1, 2, 3]


def test_generated_backbone_outputs_pass_the_ingestion_validator(cfg, tmp_path):
    spec = SyntheticCohortSpec(seed=6, ec_spec=((4, 2),) * 4, n_queries=16, neighborhood_k=3)
    cohort = synth_cohort(spec, cfg.schema, cfg.gate.quasi_fields, cfg.common_concepts())
    path = tmp_path / "bb.jsonl"
    write_backbone_outputs(cohort.backbone, path)
    outputs = list(load_backbone_outputs(path))
    assert len(outputs) == 16
    assert all(len(o.neighborhood) == 3 for o in outputs)


def test_similarity_decays_with_assertion_distance(cfg):
    spec = SyntheticCohortSpec(seed=8, ec_spec=((5, 2),) * 6, n_queries=30, assertion_noise=0.0)
    cohort = synth_cohort(spec, cfg.schema, cfg.gate.quasi_fields, cfg.common_concepts())
    by_case = {m.case_id: m for m in cohort.membership}
    for out in cohort.backbone:
        label = by_case[out.case_id]
        if not label.member:
            continue
        # with zero noise the member's source prototype is a perfect match
        top = max(out.neighborhood, key=lambda e: e.similarity)
        assert top.similarity == 1.0


def test_membership_labels_partition_queries(cfg):
    spec = SyntheticCohortSpec(seed=12, ec_spec=((4, 2),) * 4, n_queries=20, nonmember_rate=0.5)
    cohort = synth_cohort(spec, cfg.schema, cfg.gate.quasi_fields, cfg.common_concepts())
    members = [m for m in cohort.membership if m.member]
    nonmembers = [m for m in cohort.membership if not m.member]
    assert len(members) == len(nonmembers) == 10
    assert all(m.source_prototype_id is not None for m in members)
    assert all(m.source_prototype_id is None for m in nonmembers)


def test_isolated_classes_use_reserved_content(cfg):
    spec = SyntheticCohortSpec(
        seed=3,
        ec_spec=((2, 1),) * 3 + ((8, 2),) * 4,
        n_queries=30,
        isolation_threshold=5,
        isolated_neighbor_rate=1.0,
    )
    cohort = synth_cohort(
        spec, cfg.schema, cfg.gate.quasi_fields, cfg.common_concepts(), cfg.reserved_concepts()
    )
    reserved = set(cfg.reserved_concepts())
    isolated_ids = set()
    for p in cohort.prototypes:
        concepts = {a.concept_id for a in p.views[0]}
        if concepts & reserved:
            assert concepts <= reserved
            isolated_ids.add(p.prototype_id)
    assert len(isolated_ids) == 6
    # every neighborhood carries exactly one isolated prototype at rate 1.0
    for out in cohort.backbone:
        assert sum(1 for e in out.neighborhood if e.prototype_id in isolated_ids) == 1


def test_spec_validation_errors(cfg):
    with pytest.raises(InvalidSpec):
        SyntheticCohortSpec(ec_spec=((0, 1),)).validate(3)
    with pytest.raises(InvalidSpec):
        SyntheticCohortSpec(ec_spec=((3, 4),)).validate(3)
    with pytest.raises(InvalidSpec):
        SyntheticCohortSpec(ec_spec=((3, 2),), nonmember_rate=1.2).validate(3)
    with pytest.raises(InvalidSpec):
        SyntheticCohortSpec(ec_spec=(), n_queries=5).validate(3)
    with pytest.raises(InvalidSpec):
        synth_cohort(
            SyntheticCohortSpec(seed=1, ec_spec=((2, 1),), isolation_threshold=5),
            cfg.schema,
            cfg.gate.quasi_fields,
            cfg.common_concepts(),
            reserved_concepts=[],
        )


def test_cohort_file_round_trips(cfg, tmp_path):
    spec = SyntheticCohortSpec(seed=14, ec_spec=((4, 2),) * 3, n_queries=8)
    cohort = synth_cohort(spec, cfg.schema, cfg.gate.quasi_fields, cfg.common_concepts())
    write_prototypes(cohort.prototypes, tmp_path / "p.jsonl")
    write_cases(cohort.cases, tmp_path / "c.jsonl")
    write_membership(cohort.membership, tmp_path / "m.jsonl")
    assert tuple(read_prototypes(tmp_path / "p.jsonl")) == cohort.prototypes
    assert tuple(read_cases(tmp_path / "c.jsonl")) == cohort.cases
    assert tuple(read_membership(tmp_path / "m.jsonl")) == cohort.membership
