"""Comparison faithfulness metrics over claimed versus reference partitions.

Items are (prototype_id, evidence_id) pairs: assertion IDs carry a three-way
reference label (shared, query_only, proto_only) and mismatched tabular fields
are difference items. Precision and recall are computed over the difference
sets; weighted accuracy summarizes the three-way assignment of assertion
items. Degenerate denominators yield None and are excluded from aggregation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

from .differential import PARTITIONS, TABULAR, Differential
from .errors import UnknownEvidenceItem

_CONFLICT = "__conflict__"


@dataclass(frozen=True)
class CsfResult:
    precision: Optional[float]
    recall: Optional[float]
    f1: Optional[float]
    weighted_accuracy: Optional[float]
    per_class_accuracy: dict[str, Optional[float]]
    class_weights: dict[str, float]

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "weighted_accuracy": self.weighted_accuracy,
            "per_class_accuracy": dict(self.per_class_accuracy),
            "class_weights": dict(self.class_weights),
        }


def reference_items(reference: Iterable[Differential]):
    """Labeled assertion items, difference set, and full evidence universe."""
    labels: dict[tuple[int, str], str] = {}
    diff: set[tuple[int, str]] = set()
    universe: set[tuple[int, str]] = set()
    for d in reference:
        for name in PARTITIONS:
            for key in d.partition(name):
                item = (d.prototype_id, key)
                labels[item] = name
                universe.add(item)
                if name != "shared":
                    diff.add(item)
        for f in d.mismatch_fields():
            item = (d.prototype_id, f)
            universe.add(item)
            diff.add(item)
    return labels, diff, universe


def predicted_items(predicted: Iterable[tuple[str, int, str]], universe: set):
    """Predicted difference set and per-item predicted labels.

    Items claimed under more than one label are marked conflicting and can
    never match a reference label.
    """
    diff: set[tuple[int, str]] = set()
    labels: dict[tuple[int, str], str] = {}
    for partition, prototype_id, evidence_id in predicted:
        item = (prototype_id, evidence_id)
        if item not in universe:
            raise UnknownEvidenceItem(
                f"claimed item {evidence_id!r} on prototype {prototype_id} is outside the reference universe"
            )
        if partition in (("query_only", "proto_only") + (TABULAR,)):
            diff.add(item)
        if item in labels and labels[item] != partition:
            labels[item] = _CONFLICT
        else:
            labels[item] = partition
    return diff, labels


def csf(
    reference: Iterable[Differential],
    predicted: Iterable[tuple[str, int, str]],
    weights: Optional[dict[str, float]] = None,
) -> CsfResult:
    """Precision/recall/F1 over difference items plus weighted label accuracy.

    Default class weights are the reference label frequencies.
    """
    ref_labels, ref_diff, universe = reference_items(reference)
    pred_diff, pred_labels = predicted_items(predicted, universe)

    hits = len(pred_diff & ref_diff)
    precision = hits / len(pred_diff) if pred_diff else None
    recall = hits / len(ref_diff) if ref_diff else None
    if precision is None or recall is None:
        f1 = None
    elif precision + recall == 0:
        f1 = 0.0
    else:
        f1 = 2 * precision * recall / (precision + recall)

    per_class: dict[str, Optional[float]] = {}
    counts: dict[str, int] = {}
    correct: dict[str, int] = {}
    for item, label in ref_labels.items():
        counts[label] = counts.get(label, 0) + 1
        if pred_labels.get(item) == label:
            correct[label] = correct.get(label, 0) + 1
    for name in PARTITIONS:
        n = counts.get(name, 0)
        per_class[name] = (correct.get(name, 0) / n) if n else None

    if weights is None:
        class_weights = {name: float(counts.get(name, 0)) for name in PARTITIONS}
    else:
        class_weights = {name: float(weights.get(name, 0.0)) for name in PARTITIONS}
    num = 0.0
    den = 0.0
    for name in PARTITIONS:
        acc = per_class[name]
        w = class_weights[name]
        if acc is None or w <= 0:
            continue
        num += w * acc
        den += w
    weighted_accuracy = (num / den) if den > 0 else None

    return CsfResult(
        precision=precision,
        recall=recall,
        f1=f1,
        weighted_accuracy=weighted_accuracy,
        per_class_accuracy=per_class,
        class_weights=class_weights,
    )


def triples_from_differentials(reference: Iterable[Differential]) -> frozenset[tuple[str, int, str]]:
    """The faithful claim triples a reference admits; handy for self-evaluation."""
    triples = set()
    for d in reference:
        for name in PARTITIONS:
            for key in d.partition(name):
                triples.add((name, d.prototype_id, key))
        for f in d.mismatch_fields():
            triples.add((TABULAR, d.prototype_id, f))
    return frozenset(triples)
