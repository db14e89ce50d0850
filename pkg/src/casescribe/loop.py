"""Zero-gradient repair loop: propose, evaluate, critique, repeat.

The loop accepts the first proposal whose critic energy is zero and defers
after the iteration budget is exhausted. Backend hiccups are retried within an
independent per-proposal budget and surface as a deferral, never an exception.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .critic import BarrierCritic, CriticVerdict
from .differential import GroundedState
from .errors import BackendUnavailable, ConfigError, UnparseableResponse
from .report import Report
from .scribes import ScribeBackend


@dataclass(frozen=True)
class OptimizationOutcome:
    accepted: bool
    report: Optional[Report]
    iterations_used: int
    reason: Optional[str]
    last_verdict: Optional[CriticVerdict]

    def to_dict(self) -> dict:
        return {
            "accepted": self.accepted,
            "report": None if self.report is None else self.report.to_dict(),
            "iterations_used": self.iterations_used,
            "reason": self.reason,
            "last_verdict": None if self.last_verdict is None else self.last_verdict.to_dict(),
        }


def _propose(scribe: ScribeBackend, document: dict, critique: Optional[str], retry_budget: int):
    last = None
    for _ in range(retry_budget):
        try:
            return scribe.propose(document, critique)
        except (BackendUnavailable, UnparseableResponse) as exc:
            last = exc
    return last


def optimize_report(
    state: GroundedState,
    scribe: ScribeBackend,
    critic: BarrierCritic,
    max_iterations: int = 4,
    retry_budget: int = 3,
    transcript: Optional[list] = None,
) -> OptimizationOutcome:
    """Run up to `max_iterations` evaluate-critique-repropose rounds.

    Accepted outcomes always carry a zero-energy final verdict; deferral
    happens either because the barrier never cleared or because the backend
    failed past its retry budget.
    """
    if max_iterations < 1:
        raise ConfigError("max_iterations must be >= 1")
    if retry_budget < 1:
        raise ConfigError("retry_budget must be >= 1")

    document = state.document()
    proposal = _propose(scribe, document, None, retry_budget)
    if not isinstance(proposal, Report):
        return OptimizationOutcome(
            accepted=False,
            report=None,
            iterations_used=0,
            reason=f"backend_failure: {proposal}",
            last_verdict=None,
        )

    verdict: Optional[CriticVerdict] = None
    for t in range(max_iterations):
        verdict = critic.evaluate(proposal, state)
        if transcript is not None:
            transcript.append(
                {
                    "iteration": t,
                    "report": proposal.to_dict(),
                    "energy": verdict.energy,
                    "violations": verdict.violation_count(),
                    "critique": verdict.critique,
                }
            )
        if verdict.zero:
            return OptimizationOutcome(
                accepted=True,
                report=proposal,
                iterations_used=t + 1,
                reason=None,
                last_verdict=verdict,
            )
        if t == max_iterations - 1:
            break
        proposal = _propose(scribe, document, verdict.critique, retry_budget)
        if not isinstance(proposal, Report):
            return OptimizationOutcome(
                accepted=False,
                report=None,
                iterations_used=t + 1,
                reason=f"backend_failure: {proposal}",
                last_verdict=verdict,
            )
    return OptimizationOutcome(
        accepted=False,
        report=None,
        iterations_used=max_iterations,
        reason="constraints_unsatisfied",
        last_verdict=verdict,
    )
