"""Concept taxonomy: the controlled vocabulary behind visual assertions.

File format is line-oriented text, one concept per line:

    concept_id<TAB>display name

Concept IDs are hierarchical by convention ("density.diffuse_loss"); the
default semantic bucket of a concept is the segment before the first dot.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, UnbucketedConcept, UnknownConcept


@dataclass(frozen=True)
class Taxonomy:
    """Immutable concept_id -> display name mapping."""

    concepts: dict[str, str] = field(default_factory=dict)

    def __contains__(self, concept_id: str) -> bool:
        return concept_id in self.concepts

    def display_name(self, concept_id: str) -> str:
        try:
            return self.concepts[concept_id]
        except KeyError:
            raise UnknownConcept(f"concept {concept_id!r} not in taxonomy") from None

    def require(self, concept_id: str) -> None:
        if concept_id not in self.concepts:
            raise UnknownConcept(f"concept {concept_id!r} not in taxonomy")


def load_taxonomy(path: str | Path) -> Taxonomy:
    concepts: dict[str, str] = {}
    for n, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "\t" not in line:
            raise ConfigError(f"{path}: line {n}: expected 'concept_id<TAB>display name'")
        concept_id, display = line.split("\t", 1)
        concept_id = concept_id.strip()
        if not concept_id:
            raise ConfigError(f"{path}: line {n}: empty concept_id")
        if concept_id in concepts:
            raise ConfigError(f"{path}: line {n}: duplicate concept {concept_id!r}")
        concepts[concept_id] = display.strip()
    return Taxonomy(concepts=concepts)


def save_taxonomy(taxonomy: Taxonomy, path: str | Path) -> None:
    lines = [f"{cid}\t{name}" for cid, name in sorted(taxonomy.concepts.items())]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def prefix_bucket_map(taxonomy: Taxonomy) -> dict[str, str]:
    """Default bucketing: everything before the first dot of the concept ID."""
    return {cid: cid.split(".", 1)[0] for cid in taxonomy.concepts}


def bucket_for(concept_id: str, bucket_map: dict[str, str]) -> str:
    try:
        return bucket_map[concept_id]
    except KeyError:
        raise UnbucketedConcept(f"concept {concept_id!r} has no semantic bucket") from None
