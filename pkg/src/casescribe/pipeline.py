"""End-to-end composition: distill, gate, ground, generate, attack.

This module glues the per-module operations into the case-level workflow the
CLI exposes. It owns per-case scribe seeding (stable under any worker count)
and the tabular-only fallback for fully redacted neighborhoods.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

from .attacks import (
    AttackResult,
    LinkTrial,
    aia,
    link_top1,
    majority_attacker,
    mia,
    registry_from_cards,
    release_card,
    release_signature,
    signature_overlap_attacker,
)
from .backbone import BackboneOutput, PrototypeRecord, QueryCase
from .config import PipelineConfig
from .critic import BarrierCritic
from .differential import Differential, GroundedState, supervise, tabular_only_state
from .errors import ConfigError, NoVisibleCards
from .gate import GatedCard, GateIndex, apply_gate, fit_gate, sensitive_value, signature
from .loop import OptimizationOutcome, optimize_report
from .memory import CaseCard, ProtoCard, build_casecard, build_protocard
from .scribes import AdversarialScribe, HttpScribe, TemplateScribe


def distill_bank(records: list[PrototypeRecord], cfg: PipelineConfig) -> list[ProtoCard]:
    cards = []
    for r in records:
        for view in r.views:
            for a in view:
                cfg.taxonomy.require(a.concept_id)
        cards.append(
            build_protocard(
                prototype_id=r.prototype_id,
                class_label=r.class_label,
                views=list(r.views),
                raw_record=r.record,
                schema=cfg.schema,
                min_support=cfg.min_support(len(r.views)),
            )
        )
    return cards


def casecard_from_query(query: QueryCase, cfg: PipelineConfig) -> CaseCard:
    return build_casecard(
        case_id=query.case_id,
        views=list(query.views),
        raw_record=query.record,
        schema=cfg.schema,
        min_support=cfg.min_support(len(query.views)),
    )


def bank_population(cards: list[ProtoCard], cfg: PipelineConfig):
    return [
        (signature(c, cfg.gate, cfg.bucket_map), sensitive_value(c, cfg.gate)) for c in cards
    ]


def fit_bank_gate(cards: list[ProtoCard], cfg: PipelineConfig) -> GateIndex:
    return fit_gate(bank_population(cards, cfg))


def gate_neighborhood(
    bank: dict[int, ProtoCard],
    backbone: BackboneOutput,
    index: GateIndex,
    cfg: PipelineConfig,
) -> list[GatedCard]:
    gated = []
    for entry in backbone.neighborhood:
        card = bank.get(entry.prototype_id)
        if card is None:
            raise ConfigError(f"backbone retrieved prototype {entry.prototype_id} missing from bank")
        gated.append(apply_gate(card, index, cfg.gate, cfg.bucket_map))
    return gated


def state_for_case(
    query: QueryCase,
    backbone: BackboneOutput,
    bank: dict[int, ProtoCard],
    index: GateIndex,
    cfg: PipelineConfig,
) -> tuple[GroundedState, bool]:
    """Grounded state plus a flag marking the tabular-only fallback."""
    case = casecard_from_query(query, cfg)
    gated = gate_neighborhood(bank, backbone, index, cfg)
    try:
        return supervise(case, gated, backbone, cfg.deferral_tau), False
    except NoVisibleCards:
        return tabular_only_state(case, gated, backbone), True


def case_seed(seed: int, case_id: str) -> int:
    digest = hashlib.sha256(f"{seed}:{case_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def make_scribe(cfg: PipelineConfig, seed: int, case_id: str):
    backend = cfg.scribe.get("backend", "template")
    if backend == "template":
        return TemplateScribe(cfg.taxonomy)
    if backend == "adversarial":
        return AdversarialScribe(
            taxonomy=cfg.taxonomy,
            fault_rate=float(cfg.scribe.get("fault_rate", 0.5)),
            persistence=float(cfg.scribe.get("persistence", 0.0)),
            seed=case_seed(seed, case_id),
        )
    if backend == "http":
        return HttpScribe(
            endpoint=cfg.scribe.get("endpoint"),
            model=cfg.scribe.get("model", "scribe-1"),
            timeout=float(cfg.scribe.get("timeout", 30.0)),
        )
    raise ConfigError(f"unknown scribe backend {backend!r}")


@dataclass
class CaseResult:
    case_id: str
    outcome: OptimizationOutcome
    state: GroundedState
    transcript: list
    fallback_tabular_only: bool

    def reference(self) -> list[Differential]:
        return [ev.diff for ev in self.state.visible]


def generate_case(
    query: QueryCase,
    backbone: BackboneOutput,
    bank: dict[int, ProtoCard],
    index: GateIndex,
    cfg: PipelineConfig,
    seed: int,
    scribe=None,
) -> CaseResult:
    state, fallback = state_for_case(query, backbone, bank, index, cfg)
    scribe = scribe or make_scribe(cfg, seed, query.case_id)
    critic = BarrierCritic(cfg.taxonomy)
    transcript: list = []
    outcome = optimize_report(
        state,
        scribe,
        critic,
        max_iterations=cfg.max_iterations,
        retry_budget=cfg.retry_budget,
        transcript=transcript,
    )
    return CaseResult(
        case_id=query.case_id,
        outcome=outcome,
        state=state,
        transcript=transcript,
        fallback_tabular_only=fallback,
    )


def run_generate(
    queries: list[QueryCase],
    backbones: dict[str, BackboneOutput],
    bank: dict[int, ProtoCard],
    index: GateIndex,
    cfg: PipelineConfig,
    seed: int,
    workers: int = 1,
) -> list[CaseResult]:
    """Generate for every query; output order follows input order no matter
    how many workers run."""
    missing = [q.case_id for q in queries if q.case_id not in backbones]
    if missing:
        raise ConfigError(f"no backbone output for cases {missing[:5]}")

    def job(query: QueryCase) -> CaseResult:
        return generate_case(query, backbones[query.case_id], bank, index, cfg, seed)

    if workers <= 1:
        return [job(q) for q in queries]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(job, queries))


# ---------------------------------------------------------------------------
# Disclosure attack suite
# ---------------------------------------------------------------------------

def disclosure_suite(
    prototypes: list[PrototypeRecord],
    queries: list[QueryCase],
    membership: list,
    cfg: PipelineConfig,
    gated: bool,
) -> dict[str, AttackResult]:
    """Built-in MIA, AIA and Link@1 over one release condition.

    `gated=False` releases every signature (the no-gate baseline); gated=True
    applies the configured (k, l) rule with fail-closed redaction.
    """
    cards = distill_bank(prototypes, cfg)
    population = bank_population(cards, cfg)
    index = fit_gate(population)

    by_case = {m.case_id: m for m in membership}
    case_artifacts = []
    case_labels = []
    for q in queries:
        label = by_case.get(q.case_id)
        if label is None:
            raise ConfigError(f"no membership label for case {q.case_id!r}")
        sig = signature(casecard_from_query(q, cfg), cfg.gate, cfg.bucket_map)
        case_artifacts.append(release_signature(sig, q.case_id, index, cfg.gate, gated))
        case_labels.append(1 if label.member else 0)
    mia_result = mia(case_artifacts, case_labels, signature_overlap_attacker(index))

    card_artifacts = [release_card(c, index, cfg.gate, cfg.bucket_map, gated) for c in cards]
    sensitive = [sensitive_value(c, cfg.gate) for c in cards]
    aia_result = aia(card_artifacts, sensitive, majority_attacker(population))

    registry = registry_from_cards(cards, cfg.gate, cfg.bucket_map)
    trials = [
        LinkTrial(artifact=a, candidates=tuple(registry), truth_id=a.artifact_id)
        for a in card_artifacts
    ]
    link_result = link_top1(trials)

    return {"MIA": mia_result, "AIA": aia_result, "Link@1": link_result}
