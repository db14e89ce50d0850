"""Semantic release gate: signature indexing and (k, l) enforcement.

A card is released only when its release signature, the quasi-identifier bins
plus the semantic buckets of its assertions, is shared by at least k records
of the fitting population and those records carry at least l distinct
sensitive values. Anything else, including signatures never seen during
fitting, is redacted (fail closed).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Union

from .errors import (
    AllZeroSimilarity,
    ConfigError,
    EmptyPopulation,
    MissingQuasiField,
)
from .memory import CaseCard, ProtoCard, dumps_canonical
from .taxonomy import bucket_for

GATE_INDEX_VERSION = "gate-index/1"
GATED_SCHEMA_VERSION = "gated/1"


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReleaseSignature:
    """Quasi-identifier tuple plus sorted, deduplicated semantic buckets."""

    quasi_values: tuple[str, ...]
    semantic_buckets: tuple[str, ...]

    def as_string(self) -> str:
        return dumps_canonical({"b": list(self.semantic_buckets), "q": list(self.quasi_values)})

    @staticmethod
    def from_string(s: str) -> "ReleaseSignature":
        d = json.loads(s)
        return ReleaseSignature(tuple(d["q"]), tuple(d["b"]))


@dataclass(frozen=True)
class GateConfig:
    k: int = 5
    l: int = 2
    quasi_fields: tuple[str, ...] = ()
    sensitive_field: str = "class_label"

    def __post_init__(self):
        if self.k < 1 or self.l < 1:
            raise ConfigError("gate thresholds k and l must be >= 1")
        if not self.quasi_fields:
            raise ConfigError("quasi_fields must be nonempty")
        if self.sensitive_field in self.quasi_fields:
            raise ConfigError("sensitive_field cannot also be a quasi field")

    def with_thresholds(self, k: int, l: int) -> "GateConfig":
        return replace(self, k=k, l=l)


@dataclass
class GateIndex:
    """Per-signature population counts and distinct sensitive values."""

    counts: dict[ReleaseSignature, int] = field(default_factory=dict)
    sensitive: dict[ReleaseSignature, frozenset] = field(default_factory=dict)

    def count(self, sig: ReleaseSignature) -> int:
        return self.counts.get(sig, 0)

    def ldiv(self, sig: ReleaseSignature) -> int:
        return len(self.sensitive.get(sig, frozenset()))

    def __len__(self) -> int:
        return len(self.counts)


@dataclass(frozen=True)
class GatedCard:
    """Release decision for one prototype: the card itself or only its index."""

    prototype_id: int
    card: ProtoCard | None

    @property
    def visible(self) -> bool:
        return self.card is not None

    def to_dict(self) -> dict:
        if self.card is None:
            return {
                "schema_version": GATED_SCHEMA_VERSION,
                "prototype_id": self.prototype_id,
                "status": "redacted",
            }
        d = self.card.to_dict()
        d["schema_version"] = GATED_SCHEMA_VERSION
        d["status"] = "visible"
        return d


@dataclass(frozen=True)
class FrontierPoint:
    k: int
    l: int
    utility: float
    visible_rate: float
    redaction_rate: float
    linkage: float


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def signature(
    card: Union[ProtoCard, CaseCard],
    config: GateConfig,
    bucket_map: dict[str, str],
) -> ReleaseSignature:
    """Deterministic release signature of a card under the gate config."""
    quasi = []
    for f in config.quasi_fields:
        if f not in card.record.bins:
            raise MissingQuasiField(f"card record lacks quasi field {f!r}")
        quasi.append(card.record.bins[f])
    buckets = sorted({bucket_for(a.concept_id, bucket_map) for a in card.assertions})
    return ReleaseSignature(tuple(quasi), tuple(buckets))


def sensitive_value(card: ProtoCard, config: GateConfig) -> str:
    if config.sensitive_field == "class_label":
        return card.class_label
    if config.sensitive_field not in card.record.bins:
        raise MissingQuasiField(f"card record lacks sensitive field {config.sensitive_field!r}")
    return card.record.bins[config.sensitive_field]


def fit_gate(population: Iterable[tuple[ReleaseSignature, str]]) -> GateIndex:
    """Single pass over (signature, sensitive value) pairs."""
    counts: dict[ReleaseSignature, int] = {}
    sensitive: dict[ReleaseSignature, set] = {}
    n = 0
    for sig, value in population:
        counts[sig] = counts.get(sig, 0) + 1
        sensitive.setdefault(sig, set()).add(value)
        n += 1
    if n == 0:
        raise EmptyPopulation("gate fitting requires a nonempty population")
    return GateIndex(counts=counts, sensitive={s: frozenset(v) for s, v in sensitive.items()})


def passes_gate(index: GateIndex, sig: ReleaseSignature, config: GateConfig) -> bool:
    return index.count(sig) >= config.k and index.ldiv(sig) >= config.l


def apply_gate(
    card: ProtoCard,
    index: GateIndex,
    config: GateConfig,
    bucket_map: dict[str, str],
) -> GatedCard:
    """Total function: unseen signatures count as 0 and therefore redact."""
    sig = signature(card, config, bucket_map)
    if passes_gate(index, sig, config):
        return GatedCard(prototype_id=card.prototype_id, card=card)
    return GatedCard(prototype_id=card.prototype_id, card=None)


def evidence_utility(
    gated: list[GatedCard],
    neighborhood: list[tuple[int, float]],
) -> float:
    """Similarity mass of visible cards over similarity mass of all cards."""
    sims = dict(neighborhood)
    for s in sims.values():
        if s < 0:
            raise ConfigError("similarities must be nonnegative")
    missing = [g.prototype_id for g in gated if g.prototype_id not in sims]
    if missing:
        raise ConfigError(f"no similarity for prototypes {missing}")
    total = sum(sims[g.prototype_id] for g in gated)
    if total <= 0:
        raise AllZeroSimilarity("utility undefined: all similarities are zero")
    visible = sum(sims[g.prototype_id] for g in gated if g.visible)
    return visible / total


def sweep_frontier(
    cards: list[ProtoCard],
    population: list[tuple[ReleaseSignature, str]],
    neighborhood: list[tuple[int, float]],
    k_values: list[int],
    l_values: list[int],
    registry,
    config: GateConfig,
    bucket_map: dict[str, str],
) -> list[FrontierPoint]:
    """One frontier point per (k, l) pair over the candidate card surface.

    The index is fit once (it does not depend on the thresholds); linkage is
    the deterministic top-1 attack over the visible surface against the
    supplied registry, 0 when nothing is visible.
    """
    from .attacks import link_surface  # local import: attacks depends on gate types

    if not k_values or not l_values:
        raise ConfigError("k_values and l_values must be nonempty")
    index = fit_gate(population)
    points = []
    for l in l_values:
        for k in k_values:
            cfg = config.with_thresholds(k, l)
            gated = [apply_gate(c, index, cfg, bucket_map) for c in cards]
            n_visible = sum(1 for g in gated if g.visible)
            visible_rate = n_visible / len(gated) if gated else 0.0
            if n_visible:
                utility = evidence_utility(gated, neighborhood)
                linkage = link_surface(gated, registry, config=cfg, bucket_map=bucket_map)
            else:
                utility = 0.0
                linkage = 0.0
            points.append(
                FrontierPoint(
                    k=k,
                    l=l,
                    utility=utility,
                    visible_rate=visible_rate,
                    redaction_rate=1.0 - visible_rate,
                    linkage=linkage,
                )
            )
    return points


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

FRONTIER_HEADER = "k,l,utility,visible_rate,redaction_rate,linkage"


def frontier_csv(points: list[FrontierPoint]) -> str:
    lines = [FRONTIER_HEADER]
    for p in points:
        lines.append(
            f"{p.k},{p.l},{p.utility:.6f},{p.visible_rate:.6f},{p.redaction_rate:.6f},{p.linkage:.6f}"
        )
    return "\n".join(lines) + "\n"


def write_frontier(points: list[FrontierPoint], path: str | Path) -> None:
    Path(path).write_text(frontier_csv(points), encoding="utf-8")


def write_gate_index(index: GateIndex, path: str | Path) -> None:
    rows = []
    for sig in sorted(index.counts, key=lambda s: s.as_string()):
        rows.append(
            dumps_canonical(
                {
                    "schema_version": GATE_INDEX_VERSION,
                    "signature": sig.as_string(),
                    "count": index.counts[sig],
                    "sensitive": sorted(index.sensitive[sig]),
                }
            )
        )
    Path(path).write_text("\n".join(rows) + ("\n" if rows else ""), encoding="utf-8")


def read_gate_index(path: str | Path) -> GateIndex:
    counts: dict[ReleaseSignature, int] = {}
    sensitive: dict[ReleaseSignature, frozenset] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            sig = ReleaseSignature.from_string(d["signature"])
            counts[sig] = int(d["count"])
            sensitive[sig] = frozenset(d["sensitive"])
    return GateIndex(counts=counts, sensitive=sensitive)


def write_gated_bank(gated: list[GatedCard], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for g in gated:
            fh.write(dumps_canonical(g.to_dict()) + "\n")
