"""Hand-built worlds for critic/loop tests: a case, visible prototypes, state."""

from casescribe.backbone import BackboneOutput, NeighborEntry
from casescribe.differential import supervise
from casescribe.gate import GatedCard
from casescribe.memory import Assertion, CaseCard, Provenance, ProtoCard, QuantizedRecord

DEFAULT_BINS = {"age": "60-70", "bmi": "20-25", "tscore": "-2--1", "prior_fracture": "no"}


def assertion(cid, pol="present", qual=None):
    return Assertion(cid, pol, qual)


def case_card(assertions, bins=None, case_id="q1"):
    return CaseCard(
        case_id=case_id,
        assertions=tuple(assertions),
        record=QuantizedRecord(dict(bins or DEFAULT_BINS)),
    )


def proto_card(j, assertions, bins=None, label="Normal"):
    return ProtoCard(
        prototype_id=j,
        class_label=label,
        assertions=tuple(assertions),
        record=QuantizedRecord(dict(bins or DEFAULT_BINS)),
        summary=f"{label}; prototype {j}",
        provenance=Provenance(3, 2),
    )


def make_state(
    case_assertions,
    protos,
    case_bins=None,
    redacted_ids=(),
    tau=1.0,
    sims=None,
    case_id="q1",
):
    """Assemble a grounded state from (id, assertions[, bins]) prototype specs."""
    case = case_card(case_assertions, bins=case_bins, case_id=case_id)
    cards = []
    for spec in protos:
        j, assertions = spec[0], spec[1]
        bins = spec[2] if len(spec) > 2 else case_bins
        cards.append(proto_card(j, assertions, bins=bins))
    sims = sims or {c.prototype_id: 0.8 for c in cards}
    entries = [NeighborEntry(c.prototype_id, sims[c.prototype_id], sims[c.prototype_id]) for c in cards]
    entries += [NeighborEntry(j, 0.3, 0.3) for j in redacted_ids]
    backbone = BackboneOutput(
        case_id=case_id,
        predicted_class="Normal",
        severity_scalar=-0.2,
        modality_gate=0.6,
        neighborhood=tuple(entries),
    )
    gated = [GatedCard(c.prototype_id, c) for c in cards]
    gated += [GatedCard(j, None) for j in redacted_ids]
    return supervise(case, gated, backbone, tau=tau)


# Concepts from the embedded default taxonomy, used so sentences carry real
# display names the polarity checker can find.
SHARED = "density.diffuse_loss"
QUERY_ONLY = "cortex.thinning"
PROTO_ONLY = "trabecula.rarefaction"
EXTRA = "artifact.overlay"


def simple_state(tau=1.0, case_bins=None, proto_bins=None):
    """One visible prototype: one shared, one query-only, one proto-only item,
    plus a tabular mismatch on tscore when bins differ."""
    case_bins = case_bins or DEFAULT_BINS
    proto_bins = proto_bins or {**DEFAULT_BINS, "tscore": "-3--2"}
    return make_state(
        [assertion(SHARED), assertion(QUERY_ONLY)],
        [(3, [assertion(SHARED), assertion(PROTO_ONLY)], proto_bins)],
        case_bins=case_bins,
        tau=tau,
    )
