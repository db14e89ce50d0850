"""Repair loop conformance: convergence, deferral, budgets, retries."""

import random

import pytest

from casescribe.critic import BarrierCritic
from casescribe.errors import BackendUnavailable, ConfigError, UnparseableResponse
from casescribe.loop import optimize_report
from casescribe.report import extract_claims
from casescribe.scribes import AdversarialScribe, TemplateScribe

from helpers import simple_state


def test_template_scribe_accepts_in_one_iteration(cfg):
    state = simple_state()
    outcome = optimize_report(state, TemplateScribe(cfg.taxonomy), BarrierCritic(cfg.taxonomy))
    assert outcome.accepted
    assert outcome.iterations_used == 1
    assert outcome.last_verdict.zero
    assert outcome.report is not None


def test_persistent_adversary_defers_after_exactly_t_iterations(cfg):
    state = simple_state()
    scribe = AdversarialScribe(cfg.taxonomy, fault_rate=1.0, persistence=1.0, seed=2)
    outcome = optimize_report(state, scribe, BarrierCritic(cfg.taxonomy), max_iterations=4)
    assert not outcome.accepted
    assert outcome.iterations_used == 4
    assert outcome.reason == "constraints_unsatisfied"
    assert outcome.last_verdict is not None
    assert outcome.last_verdict.violation_count() >= 1


def test_repairing_adversary_accepts_within_two_iterations(cfg):
    state = simple_state()
    scribe = AdversarialScribe(cfg.taxonomy, fault_rate=1.0, persistence=0.0, seed=3)
    outcome = optimize_report(state, scribe, BarrierCritic(cfg.taxonomy), max_iterations=4)
    assert outcome.accepted
    assert outcome.iterations_used <= 2
    assert extract_claims(outcome.report) <= state.admissible_triples()


def test_iterations_never_exceed_budget(cfg):
    rng = random.Random(5)
    state = simple_state()
    critic = BarrierCritic(cfg.taxonomy)
    for _ in range(50):
        scribe = AdversarialScribe(
            cfg.taxonomy,
            fault_rate=rng.random(),
            persistence=rng.random(),
            seed=rng.randrange(10**6),
        )
        t = rng.randint(1, 5)
        outcome = optimize_report(state, scribe, critic, max_iterations=t)
        assert outcome.iterations_used <= t
        if outcome.accepted:
            assert outcome.last_verdict.zero
        else:
            assert outcome.reason is not None


def test_transcript_records_every_evaluated_iteration(cfg):
    state = simple_state()
    scribe = AdversarialScribe(cfg.taxonomy, fault_rate=1.0, persistence=1.0, seed=8)
    transcript = []
    outcome = optimize_report(
        state, scribe, BarrierCritic(cfg.taxonomy), max_iterations=3, transcript=transcript
    )
    assert not outcome.accepted
    assert [t["iteration"] for t in transcript] == [0, 1, 2]
    assert all(t["energy"] == "infinite" for t in transcript)
    assert all(t["critique"] for t in transcript)


class FlakyScribe:
    """Fails n times, then delegates to a faithful template."""

    def __init__(self, taxonomy, failures, exc=BackendUnavailable):
        self.inner = TemplateScribe(taxonomy)
        self.failures = failures
        self.exc = exc
        self.calls = 0

    def propose(self, document, critique=None):
        self.calls += 1
        if self.failures > 0:
            self.failures -= 1
            raise self.exc("synthetic failure")
        return self.inner.propose(document, critique)


def test_retry_budget_recovers_from_transient_failures(cfg):
    state = simple_state()
    scribe = FlakyScribe(cfg.taxonomy, failures=2)
    outcome = optimize_report(state, scribe, BarrierCritic(cfg.taxonomy), retry_budget=3)
    assert outcome.accepted
    assert scribe.calls == 3


def test_exhausted_retry_budget_defers_with_backend_reason(cfg):
    state = simple_state()
    scribe = FlakyScribe(cfg.taxonomy, failures=99)
    outcome = optimize_report(state, scribe, BarrierCritic(cfg.taxonomy), retry_budget=3)
    assert not outcome.accepted
    assert outcome.iterations_used == 0
    assert outcome.reason.startswith("backend_failure")
    assert scribe.calls == 3


def test_unparseable_responses_also_consume_the_retry_budget(cfg):
    state = simple_state()
    scribe = FlakyScribe(cfg.taxonomy, failures=99, exc=UnparseableResponse)
    outcome = optimize_report(state, scribe, BarrierCritic(cfg.taxonomy), retry_budget=2)
    assert not outcome.accepted
    assert outcome.reason.startswith("backend_failure")
    assert scribe.calls == 2


def test_mid_loop_backend_failure_keeps_last_verdict(cfg):
    state = simple_state()

    class FaultyThenDead:
        def __init__(self, taxonomy):
            self.adversary = AdversarialScribe(taxonomy, fault_rate=1.0, persistence=1.0, seed=4)
            self.calls = 0

        def propose(self, document, critique=None):
            self.calls += 1
            if self.calls == 1:
                return self.adversary.propose(document)
            raise BackendUnavailable("gone")

    scribe = FaultyThenDead(cfg.taxonomy)
    outcome = optimize_report(state, scribe, BarrierCritic(cfg.taxonomy), max_iterations=4)
    assert not outcome.accepted
    assert outcome.iterations_used == 1
    assert outcome.reason.startswith("backend_failure")
    assert outcome.last_verdict is not None


def test_loop_parameter_validation(cfg):
    state = simple_state()
    with pytest.raises(ConfigError):
        optimize_report(state, TemplateScribe(cfg.taxonomy), BarrierCritic(cfg.taxonomy), max_iterations=0)
    with pytest.raises(ConfigError):
        optimize_report(state, TemplateScribe(cfg.taxonomy), BarrierCritic(cfg.taxonomy), retry_budget=0)
