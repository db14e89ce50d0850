"""Differentials, discordance, and grounded-state supervision."""

import random

import pytest

from casescribe.backbone import BackboneOutput, NeighborEntry
from casescribe.differential import (
    differential,
    discordance,
    supervise,
    tabular_only_state,
    weighted_mean_discordance,
)
from casescribe.errors import NoVisibleCards, SchemaMismatch
from casescribe.gate import GatedCard
from casescribe.memory import Assertion, CaseCard, Provenance, ProtoCard, QuantizedRecord


def A(cid, pol="present"):
    return Assertion(cid, pol)


def case_of(assertions, bins=None, case_id="q1"):
    return CaseCard(case_id=case_id, assertions=tuple(assertions), record=QuantizedRecord(bins or {"age": "0-65"}))


def proto_of(j, assertions, bins=None, label="Normal"):
    return ProtoCard(
        prototype_id=j,
        class_label=label,
        assertions=tuple(assertions),
        record=QuantizedRecord(bins or {"age": "0-65"}),
        summary=f"proto {j}",
        provenance=Provenance(3, 2),
    )


def backbone_of(entries, case_id="q1"):
    return BackboneOutput(
        case_id=case_id,
        predicted_class="Normal",
        severity_scalar=0.0,
        modality_gate=0.5,
        neighborhood=tuple(NeighborEntry(j, w, s) for j, w, s in entries),
    )


# ---------------------------------------------------------------------------
# differential
# ---------------------------------------------------------------------------

def test_differential_definitional_example():
    d = differential(case_of([A("a"), A("b")]), proto_of(1, [A("b"), A("c")]))
    assert d.shared == {A("b").key()}
    assert d.query_only == {A("a").key()}
    assert d.proto_only == {A("c").key()}


def test_differential_identity_case():
    c = case_of([A("a"), A("b")], bins={"age": "0-65", "bmi": "18.5-25"})
    p = proto_of(1, [A("a"), A("b")], bins={"age": "0-65", "bmi": "18.5-25"})
    d = differential(c, p)
    assert d.shared == {A("a").key(), A("b").key()}
    assert d.query_only == frozenset() and d.proto_only == frozenset()
    assert d.tabular_mismatch == ()


def test_differential_tabular_mismatch_exact_fields():
    c = case_of([], bins={"age": "0-65", "bmi": "18.5-25"})
    p = proto_of(1, [], bins={"age": "65-80", "bmi": "18.5-25"})
    d = differential(c, p)
    assert d.tabular_mismatch == (("age", "0-65", "65-80"),)


def test_differential_schema_mismatch():
    with pytest.raises(SchemaMismatch):
        differential(case_of([], bins={"age": "0-65"}), proto_of(1, [], bins={"bmi": "18.5-25"}))


def _random_pair(rng, n_concepts=10):
    concepts = [f"c{i}" for i in range(n_concepts)]
    mk = lambda: {A(cid, rng.choice(["present", "absent"])) for cid in rng.sample(concepts, rng.randint(0, 6))}
    bins_c = {"age": rng.choice(["0-65", "65-80"]), "bmi": rng.choice(["18.5-25", "25-60"])}
    bins_p = {"age": rng.choice(["0-65", "65-80"]), "bmi": rng.choice(["18.5-25", "25-60"])}
    return case_of(mk(), bins=bins_c), proto_of(rng.randrange(100), mk(), bins=bins_p)


def _membership_oracle(case, proto):
    """Quadratic membership scan, no set operators."""
    a = list(dict.fromkeys(case.assertion_keys()))
    b = list(dict.fromkeys(proto.assertion_keys()))
    shared = {x for x in a if any(x == y for y in b)}
    query_only = {x for x in a if not any(x == y for y in b)}
    proto_only = {y for y in b if not any(x == y for x in a)}
    mismatch = tuple(
        (f, case.record.bins[f], proto.record.bins[f])
        for f in case.record.bins
        if case.record.bins[f] != proto.record.bins[f]
    )
    return shared, query_only, proto_only, mismatch


def test_differential_matches_membership_oracle():
    rng = random.Random(17)
    for _ in range(300):
        case, proto = _random_pair(rng)
        d = differential(case, proto)
        shared, query_only, proto_only, mismatch = _membership_oracle(case, proto)
        assert d.shared == shared
        assert d.query_only == query_only
        assert d.proto_only == proto_only
        assert d.tabular_mismatch == mismatch


def test_differential_partition_exactness_and_symmetry():
    rng = random.Random(23)
    for _ in range(200):
        case, proto = _random_pair(rng)
        d = differential(case, proto)
        assert d.shared | d.query_only == frozenset(case.assertion_keys())
        assert d.shared | d.proto_only == frozenset(proto.assertion_keys())
        assert not d.shared & d.query_only
        assert not d.shared & d.proto_only
        assert not d.query_only & d.proto_only
        # role swap: build the mirrored pair and compare complements
        mirror_case = case_of(proto.assertions, bins=dict(proto.record.bins))
        mirror_proto = proto_of(d.prototype_id, case.assertions, bins=dict(case.record.bins))
        m = differential(mirror_case, mirror_proto)
        assert d.query_only == m.proto_only
        assert d.proto_only == m.query_only


# ---------------------------------------------------------------------------
# discordance
# ---------------------------------------------------------------------------

def test_discordance_identical_sets_zero():
    assert discordance(case_of([A("a")]), proto_of(1, [A("a")])) == 0.0


def test_discordance_disjoint_sets_one():
    assert discordance(case_of([A("a")]), proto_of(1, [A("b")])) == 1.0


def test_discordance_hand_jaccard():
    c = case_of([A("a"), A("b"), A("c")])
    p = proto_of(1, [A("b"), A("c"), A("d")])
    assert discordance(c, p) == pytest.approx(0.5)


def test_discordance_empty_vs_empty_concordant():
    assert discordance(case_of([]), proto_of(1, [])) == 0.0


# ---------------------------------------------------------------------------
# supervise
# ---------------------------------------------------------------------------

def _gated_pair():
    case = case_of([A("a"), A("b")])
    protos = [proto_of(1, [A("a")]), proto_of(2, [A("c")])]
    gated = [GatedCard(p.prototype_id, p) for p in protos]
    bb = backbone_of([(1, 0.6, 0.6), (2, 0.4, 0.4)])
    return case, gated, bb


def test_supervise_tau_one_never_defers():
    case, gated, bb = _gated_pair()
    state = supervise(case, gated, bb, tau=1.0)
    assert state.deferral is None
    assert len(state.visible) == 2
    assert state.redacted_count == 0


def test_supervise_tau_zero_defers_on_any_discordance():
    case, gated, bb = _gated_pair()
    state = supervise(case, gated, bb, tau=0.0)
    assert state.deferral is not None
    for ev in state.visible:
        assert ev.diff.shared == frozenset()
        assert ev.diff.query_only == frozenset()
        assert ev.diff.proto_only == frozenset()


def test_supervise_deferral_keeps_tabular_mismatch():
    case = case_of([A("a")], bins={"age": "0-65"})
    proto = proto_of(1, [A("b")], bins={"age": "65-80"})
    bb = backbone_of([(1, 1.0, 1.0)])
    state = supervise(case, [GatedCard(1, proto)], bb, tau=0.0)
    assert state.deferral is not None
    assert state.visible[0].diff.tabular_mismatch == (("age", "0-65", "65-80"),)


def test_supervise_counts_redacted():
    case, gated, bb = _gated_pair()
    gated[1] = GatedCard(2, None)
    state = supervise(case, gated, bb, tau=1.0)
    assert state.redacted_count == 1
    assert [ev.card.prototype_id for ev in state.visible] == [1]


def test_supervise_no_visible_cards():
    case, gated, bb = _gated_pair()
    gated = [GatedCard(1, None), GatedCard(2, None)]
    with pytest.raises(NoVisibleCards):
        supervise(case, gated, bb, tau=0.5)
    fallback = tabular_only_state(case, gated, bb)
    assert fallback.visible == ()
    assert fallback.redacted_count == 2
    assert fallback.admissible_triples() == frozenset()


def test_supervise_decision_matches_recomputed_rule():
    rng = random.Random(41)
    for _ in range(100):
        case, _ = _random_pair(rng)
        protos = [_random_pair(rng)[1] for _ in range(3)]
        protos = [
            proto_of(j, p.assertions, bins=dict(case.record.bins)) for j, p in enumerate(protos)
        ]
        sims = [round(rng.uniform(0.05, 1.0), 3) for _ in protos]
        bb = backbone_of([(j, s, s) for j, s in enumerate(sims)], case_id=case.case_id)
        gated = [GatedCard(p.prototype_id, p) for p in protos]
        tau = rng.choice([0.25, 0.5, 0.75])
        state = supervise(case, gated, bb, tau=tau)
        expected = (
            sum(s * discordance(case, p) for s, p in zip(sims, protos)) / sum(sims)
        )
        assert (state.deferral is not None) == (expected > tau)


def test_deferral_monotone_in_tau():
    rng = random.Random(43)
    for _ in range(60):
        case, _ = _random_pair(rng)
        proto = proto_of(1, _random_pair(rng)[1].assertions, bins=dict(case.record.bins))
        bb = backbone_of([(1, 0.8, 0.8)], case_id=case.case_id)
        gated = [GatedCard(1, proto)]
        deferred_at = [
            tau for tau in (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
            if supervise(case, gated, bb, tau).deferral is not None
        ]
        # lowering tau never turns a deferring state non-deferring
        assert deferred_at == sorted(deferred_at)
        if deferred_at:
            top = max(deferred_at)
            assert all(t in deferred_at for t in (0.0, 0.2, 0.4, 0.6, 0.8, 1.0) if t <= top)


def test_weighted_mean_discordance_zero_weights_falls_back():
    assert weighted_mean_discordance([(0.0, 0.4), (0.0, 0.6)]) == pytest.approx(0.5)


def test_grounded_state_serialization_excludes_redacted_content():
    case = case_of([A("a")], bins={"age": "0-65"})
    secret = proto_of(
        9,
        [Assertion("raremorph.secret_finding", "present")],
        bins={"age": "0-65"},
        label="Osteoporosis",
    )
    visible = proto_of(1, [A("a")], bins={"age": "0-65"})
    bb = backbone_of([(1, 0.9, 0.9), (9, 0.5, 0.5)])
    state = supervise(case, [GatedCard(1, visible), GatedCard(9, None)], bb, tau=1.0)
    blob = state.serialized()
    assert "raremorph.secret_finding" not in blob
    assert secret.summary not in blob
    assert '"redacted_count":1' in blob
