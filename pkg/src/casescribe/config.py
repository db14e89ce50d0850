"""Pipeline configuration: one JSON file, flag overrides, embedded defaults.

The default taxonomy and tabular schema target the bone-health screening
domain the shipped demo uses; real deployments supply their own files. Only
backend credentials live in environment variables, everything else is in the
config so run manifests stay reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .errors import ConfigError
from .gate import GateConfig
from .memory import TabularSchema, default_min_support
from .taxonomy import Taxonomy, prefix_bucket_map

CONFIG_SCHEMA_VERSION = "config/1"

# Concepts whose bucket prefix starts with this marker are reserved for
# isolated (always-redacted) synthetic equivalence classes.
RESERVED_BUCKET_MARKER = "rare"

DEFAULT_TAXONOMY = {
    "density.diffuse_loss": "diffuse density loss",
    "density.focal_loss": "focal density loss",
    "density.preserved": "preserved density",
    "cortex.thinning": "cortical thinning",
    "trabecula.rarefaction": "trabecular rarefaction",
    "trabecula.accentuation": "trabecular accentuation",
    "vertebra.compression": "vertebral compression deformity",
    "vertebra.endplate_irregularity": "endplate irregularity",
    "alignment.degenerative_change": "degenerative change",
    "alignment.scoliosis": "scoliotic curvature",
    "artifact.overlay": "overlying artifact",
    "coverage.incomplete": "incomplete coverage",
    "rarefocal.sclerotic_focus": "sclerotic focus",
    "rarefocal.lytic_focus": "lytic focus",
    "raredevice.surgical_hardware": "surgical hardware",
    "raredevice.cement_augmentation": "cement augmentation",
    "raremorph.hemangioma_pattern": "hemangioma pattern",
    "raremorph.paget_pattern": "pagetoid pattern",
}

DEFAULT_TABULAR_SCHEMA = {
    "age": {"edges": [0, 40, 50, 60, 70, 80, 90, 120]},
    "bmi": {"edges": [10, 16, 20, 25, 30, 35, 40, 60]},
    "tscore": {"edges": [-6, -4, -3, -2, -1, 0, 1, 4]},
    "prior_fracture": {"categories": ["no", "yes"]},
}


def default_config_dict() -> dict:
    return {
        "schema_version": CONFIG_SCHEMA_VERSION,
        "taxonomy_path": None,
        "tabular_schema": DEFAULT_TABULAR_SCHEMA,
        "quasi_fields": ["age", "bmi", "tscore"],
        "sensitive_field": "class_label",
        "gate": {"k": 5, "l": 2},
        "consensus_min_support": None,
        "deferral_tau": 0.5,
        "max_iterations": 4,
        "retry_budget": 3,
        "neighborhood_k": 3,
        "scribe": {
            "backend": "template",
            "fault_rate": 0.5,
            "persistence": 0.0,
            "model": "scribe-1",
            "timeout": 30.0,
        },
        "bucket_map": None,
    }


@dataclass
class PipelineConfig:
    raw: dict
    taxonomy: Taxonomy
    bucket_map: dict[str, str]
    schema: TabularSchema
    gate: GateConfig
    consensus_min_support: Optional[int]
    deferral_tau: float
    max_iterations: int
    retry_budget: int
    neighborhood_k: int
    scribe: dict

    def min_support(self, n_views: int) -> int:
        if self.consensus_min_support is not None:
            return self.consensus_min_support
        return default_min_support(n_views)

    def common_concepts(self) -> list[str]:
        return sorted(
            cid
            for cid, bucket in self.bucket_map.items()
            if not bucket.startswith(RESERVED_BUCKET_MARKER)
        )

    def reserved_concepts(self) -> list[str]:
        return sorted(
            cid
            for cid, bucket in self.bucket_map.items()
            if bucket.startswith(RESERVED_BUCKET_MARKER)
        )


def _build(raw: dict, base_dir: Optional[Path]) -> PipelineConfig:
    merged = default_config_dict()
    for key, value in raw.items():
        if key == "gate" and isinstance(value, dict):
            merged["gate"] = {**merged["gate"], **value}
        elif key == "scribe" and isinstance(value, dict):
            merged["scribe"] = {**merged["scribe"], **value}
        else:
            merged[key] = value

    taxonomy_path = merged.get("taxonomy_path")
    if taxonomy_path:
        from .taxonomy import load_taxonomy

        path = Path(taxonomy_path)
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        taxonomy = load_taxonomy(path)
    else:
        taxonomy = Taxonomy(concepts=dict(DEFAULT_TAXONOMY))

    bucket_map = merged.get("bucket_map") or prefix_bucket_map(taxonomy)
    unknown = set(bucket_map) - set(taxonomy.concepts)
    if merged.get("bucket_map") and unknown:
        raise ConfigError(f"bucket_map names unknown concepts: {sorted(unknown)}")

    try:
        schema = TabularSchema.from_dict(merged["tabular_schema"])
        gate = GateConfig(
            k=int(merged["gate"]["k"]),
            l=int(merged["gate"]["l"]),
            quasi_fields=tuple(merged["quasi_fields"]),
            sensitive_field=merged["sensitive_field"],
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from None

    for f in gate.quasi_fields:
        schema.spec(f)  # raises UnknownField for unknown quasi fields

    tau = float(merged["deferral_tau"])
    if not 0.0 <= tau <= 1.0:
        raise ConfigError("deferral_tau must be in [0, 1]")
    max_iterations = int(merged["max_iterations"])
    retry_budget = int(merged["retry_budget"])
    neighborhood_k = int(merged["neighborhood_k"])
    if max_iterations < 1 or retry_budget < 1 or neighborhood_k < 1:
        raise ConfigError("max_iterations, retry_budget and neighborhood_k must be >= 1")
    support = merged.get("consensus_min_support")

    return PipelineConfig(
        raw=merged,
        taxonomy=taxonomy,
        bucket_map=bucket_map,
        schema=schema,
        gate=gate,
        consensus_min_support=None if support is None else int(support),
        deferral_tau=tau,
        max_iterations=max_iterations,
        retry_budget=retry_budget,
        neighborhood_k=neighborhood_k,
        scribe=merged["scribe"],
    )


def load_config(path: Optional[str | Path] = None, overrides: Optional[dict] = None) -> PipelineConfig:
    """Read the config file (or defaults) and apply flat key overrides.

    Override keys use dots for nesting, e.g. {"gate.k": 7}.
    """
    if path is None:
        raw: dict = {}
        base_dir = None
    else:
        p = Path(path)
        try:
            raw = json.loads(p.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {p}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {p} is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"config file {p} must hold a JSON object")
        base_dir = p.parent
    for key, value in (overrides or {}).items():
        node = raw
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} conflicts with a scalar config entry")
        node[parts[-1]] = value
    return _build(raw, base_dir)


def write_default_config(path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(default_config_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
