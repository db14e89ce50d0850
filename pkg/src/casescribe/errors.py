"""Exception hierarchy shared across the pipeline.

Every error raised by this package derives from CaseScribeError so callers can
catch the whole family; the CLI maps subfamilies onto distinct exit codes.
"""

from __future__ import annotations


class CaseScribeError(Exception):
    """Base class for all package errors."""


class ConfigError(CaseScribeError):
    """Invalid or unreadable configuration."""


# ---------------------------------------------------------------------------
# Semantic memory
# ---------------------------------------------------------------------------

class UnknownField(CaseScribeError):
    """Record contains a field the tabular schema does not define."""


class MissingField(CaseScribeError):
    """A schema field is absent from the record."""


class OutOfRange(CaseScribeError):
    """Value falls outside the configured bins or category list."""


class NonFinite(CaseScribeError):
    """Numeric field holds NaN or infinity."""


class InvalidSupport(CaseScribeError):
    """Consensus support threshold outside 1..R."""


class UnknownConcept(CaseScribeError):
    """Assertion concept_id not present in the loaded taxonomy."""


# ---------------------------------------------------------------------------
# Privacy gate
# ---------------------------------------------------------------------------

class MissingQuasiField(CaseScribeError):
    """Card record lacks a configured quasi-identifier field."""


class UnbucketedConcept(CaseScribeError):
    """Assertion concept has no semantic bucket assigned."""


class EmptyPopulation(CaseScribeError):
    """Gate fitting requires at least one record."""


class AllZeroSimilarity(CaseScribeError):
    """Evidence utility is undefined when every similarity is zero."""


# ---------------------------------------------------------------------------
# Differential engine
# ---------------------------------------------------------------------------

class SchemaMismatch(CaseScribeError):
    """Two cards do not share the same tabular fields."""


class NoVisibleCards(CaseScribeError):
    """Every retrieved card was redacted; tabular-only reporting applies.

    This signals a mandatory fallback, not a pipeline failure.
    """


# ---------------------------------------------------------------------------
# Scribe / critic loop
# ---------------------------------------------------------------------------

class BackendUnavailable(CaseScribeError):
    """Scribe backend could not be reached; retryable within the loop budget."""


class UnparseableResponse(CaseScribeError):
    """Scribe backend returned something that does not decode into a report."""


class SchemaViolation(CaseScribeError):
    """Report is structurally invalid where a valid one is required."""


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

class UnknownEvidenceItem(CaseScribeError):
    """Predicted claim cites an item outside the reference evidence universe."""


class SingleClassPopulation(CaseScribeError):
    """Membership attack needs both membership classes represented."""


class EmptyCandidateSet(CaseScribeError):
    """Linkage attack trial has no candidates."""


# ---------------------------------------------------------------------------
# Backbone ingestion
# ---------------------------------------------------------------------------

class ParseError(CaseScribeError):
    """Malformed record in a line-delimited input file."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class InvariantViolation(CaseScribeError):
    """Well-formed record whose values break a documented invariant."""

    def __init__(self, line: int, field: str, message: str):
        super().__init__(f"line {line}: field {field!r}: {message}")
        self.line = line
        self.field = field


class InvalidSpec(CaseScribeError):
    """Synthetic cohort specification is inconsistent."""
