"""Artifact-level disclosure attacks: membership, attribute, and linkage.

The built-in attackers are transparent heuristics over released signatures,
not learned models; every metric accepts any callable implementing the same
scoring interface. Results are plain folds, so identical inputs always give
identical numbers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Optional

from .errors import ConfigError, EmptyCandidateSet, SingleClassPopulation
from .gate import GateConfig, GatedCard, GateIndex, ReleaseSignature, passes_gate, signature
from .memory import ProtoCard


@dataclass(frozen=True)
class ReleasedArtifact:
    """What the world sees for one source item: a signature or nothing."""

    artifact_id: str
    signature: Optional[ReleaseSignature]


@dataclass(frozen=True)
class RegistryRecord:
    record_id: str
    signature: ReleaseSignature


@dataclass(frozen=True)
class LinkTrial:
    artifact: ReleasedArtifact
    candidates: tuple[RegistryRecord, ...]
    truth_id: str


@dataclass(frozen=True)
class AttackResult:
    attack: str
    accuracy: float
    trials: int
    tie_events: int
    successes: float

    def to_dict(self) -> dict:
        return {
            "attack": self.attack,
            "accuracy": self.accuracy,
            "trials": self.trials,
            "tie_events": self.tie_events,
            "successes": self.successes,
        }


# ---------------------------------------------------------------------------
# Built-in attackers
# ---------------------------------------------------------------------------

def signature_overlap_attacker(index: GateIndex, threshold: float = 1.0) -> Callable[[ReleasedArtifact], int]:
    """Membership guess: does the artifact's quantized-field tuple overlap the
    protected corpus index at or above the threshold fraction?"""
    known_quasi = {sig.quasi_values for sig in index.counts}

    def attack(artifact: ReleasedArtifact) -> int:
        if artifact.signature is None:
            return 0
        quasi = artifact.signature.quasi_values
        if threshold >= 1.0:
            return 1 if quasi in known_quasi else 0
        best = 0.0
        for other in known_quasi:
            if len(other) != len(quasi):
                continue
            matches = sum(1 for a, b in zip(quasi, other) if a == b)
            best = max(best, matches / len(quasi))
            if best >= threshold:
                break
        return 1 if best >= threshold else 0

    return attack


def majority_attacker(
    population: Iterable[tuple[ReleaseSignature, str]],
) -> Callable[[ReleasedArtifact], str]:
    """Attribute guess: majority sensitive value of the artifact's equivalence
    class, falling back to the global majority for redacted or unseen
    signatures. Ties break deterministically (count desc, value asc)."""
    per_sig: dict[ReleaseSignature, dict[str, int]] = {}
    global_counts: dict[str, int] = {}
    for sig, value in population:
        bucket = per_sig.setdefault(sig, {})
        bucket[value] = bucket.get(value, 0) + 1
        global_counts[value] = global_counts.get(value, 0) + 1
    if not global_counts:
        raise ConfigError("majority attacker needs a nonempty population")

    def top(counts: dict[str, int]) -> str:
        return min(counts, key=lambda v: (-counts[v], v))

    global_top = top(global_counts)

    def attack(artifact: ReleasedArtifact) -> str:
        if artifact.signature is None or artifact.signature not in per_sig:
            return global_top
        return top(per_sig[artifact.signature])

    return attack


def quasi_bucket_score(artifact_sig: Optional[ReleaseSignature], candidate_sig: ReleaseSignature) -> float:
    """Linkage score: matching quasi fields plus matching semantic buckets."""
    if artifact_sig is None:
        return 0.0
    matches = sum(1 for a, b in zip(artifact_sig.quasi_values, candidate_sig.quasi_values) if a == b)
    buckets = len(set(artifact_sig.semantic_buckets) & set(candidate_sig.semantic_buckets))
    return float(matches + buckets)


# ---------------------------------------------------------------------------
# Attack folds
# ---------------------------------------------------------------------------

def mia(
    artifacts: list[ReleasedArtifact],
    membership: list[int],
    attacker: Callable[[ReleasedArtifact], int],
) -> AttackResult:
    if len(artifacts) != len(membership):
        raise ConfigError("artifacts and membership labels must align")
    if len(set(membership)) < 2:
        raise SingleClassPopulation("membership attack needs both classes represented")
    successes = sum(1 for a, m in zip(artifacts, membership) if attacker(a) == m)
    return AttackResult(
        attack="MIA",
        accuracy=successes / len(artifacts),
        trials=len(artifacts),
        tie_events=0,
        successes=float(successes),
    )


def aia(
    artifacts: list[ReleasedArtifact],
    sensitive: list[str],
    attacker: Callable[[ReleasedArtifact], str],
) -> AttackResult:
    if len(artifacts) != len(sensitive):
        raise ConfigError("artifacts and sensitive labels must align")
    if not artifacts:
        raise ConfigError("attribute attack needs at least one artifact")
    successes = sum(1 for a, s in zip(artifacts, sensitive) if attacker(a) == s)
    return AttackResult(
        attack="AIA",
        accuracy=successes / len(artifacts),
        trials=len(artifacts),
        tie_events=0,
        successes=float(successes),
    )


def link_top1(
    trials: list[LinkTrial],
    scorer: Callable[[Optional[ReleaseSignature], ReleaseSignature], float] = quasi_bucket_score,
    fractional: bool = True,
) -> AttackResult:
    """Top-1 re-identification. A unique correct argmax scores 1; score ties
    award 1/|argmax| when the truth is among them (nothing in strict mode)."""
    if not trials:
        raise ConfigError("linkage attack needs at least one trial")
    successes = 0.0
    tie_events = 0
    for trial in trials:
        if not trial.candidates:
            raise EmptyCandidateSet(f"artifact {trial.artifact.artifact_id!r} has no candidates")
        ids = {c.record_id for c in trial.candidates}
        if trial.truth_id not in ids:
            raise ConfigError(f"candidate set for {trial.artifact.artifact_id!r} lacks its ground truth")
        scores = [(scorer(trial.artifact.signature, c.signature), c.record_id) for c in trial.candidates]
        best = max(s for s, _ in scores)
        argmax = [rid for s, rid in scores if s == best]
        if len(argmax) == 1:
            if argmax[0] == trial.truth_id:
                successes += 1.0
        else:
            tie_events += 1
            if fractional and trial.truth_id in argmax:
                successes += 1.0 / len(argmax)
    return AttackResult(
        attack="Link@1",
        accuracy=successes / len(trials),
        trials=len(trials),
        tie_events=tie_events,
        successes=successes,
    )


# ---------------------------------------------------------------------------
# Release-surface composition
# ---------------------------------------------------------------------------

def release_card(
    card: ProtoCard,
    index: GateIndex,
    config: GateConfig,
    bucket_map: dict[str, str],
    gated: bool,
) -> ReleasedArtifact:
    sig = signature(card, config, bucket_map)
    released = sig if (not gated or passes_gate(index, sig, config)) else None
    return ReleasedArtifact(artifact_id=f"p{card.prototype_id}", signature=released)


def release_signature(
    sig: ReleaseSignature,
    artifact_id: str,
    index: GateIndex,
    config: GateConfig,
    gated: bool,
) -> ReleasedArtifact:
    released = sig if (not gated or passes_gate(index, sig, config)) else None
    return ReleasedArtifact(artifact_id=artifact_id, signature=released)


def registry_from_cards(
    cards: Iterable[ProtoCard],
    config: GateConfig,
    bucket_map: dict[str, str],
) -> list[RegistryRecord]:
    return [
        RegistryRecord(record_id=f"p{c.prototype_id}", signature=signature(c, config, bucket_map))
        for c in cards
    ]


def link_surface(
    gated: list[GatedCard],
    registry: list[RegistryRecord],
    config: GateConfig,
    bucket_map: dict[str, str],
) -> float:
    """Deterministic linkage exposure of a gated card surface: one trial per
    visible card against the whole registry."""
    trials = []
    for g in gated:
        if g.card is None:
            continue
        sig = signature(g.card, config, bucket_map)
        trials.append(
            LinkTrial(
                artifact=ReleasedArtifact(artifact_id=f"p{g.prototype_id}", signature=sig),
                candidates=tuple(registry),
                truth_id=f"p{g.prototype_id}",
            )
        )
    if not trials:
        return 0.0
    return link_top1(trials).accuracy
