"""Scribe backends: template determinism, fault injection, HTTP wire format."""

import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from casescribe.critic import BarrierCritic
from casescribe.errors import BackendUnavailable, ConfigError, UnparseableResponse
from casescribe.report import structural_violations
from casescribe.scribes import AdversarialScribe, HttpScribe, TemplateScribe, _extract_json_object

from helpers import make_state, simple_state


# ---------------------------------------------------------------------------
# Template scribe
# ---------------------------------------------------------------------------

def test_template_empty_differentials_valid_zero_claim_report(cfg):
    state = make_state([], [(1, [])])
    report = TemplateScribe(cfg.taxonomy).propose(state.document())
    assert report.claims == ()
    assert structural_violations(report) == []
    assert "No comparison findings" in report.impression


def test_template_is_deterministic(cfg):
    state = simple_state()
    scribe = TemplateScribe(cfg.taxonomy)
    assert scribe.propose(state.document()) == scribe.propose(state.document())


def test_template_always_clears_the_barrier(cfg):
    state = simple_state(tau=0.0)  # even under deferral
    report = TemplateScribe(cfg.taxonomy).propose(state.document())
    verdict = BarrierCritic(cfg.taxonomy).evaluate(report, state)
    assert verdict.zero


def test_template_claims_cover_every_differential_item(cfg):
    state = simple_state()
    report = TemplateScribe(cfg.taxonomy).propose(state.document())
    cited = {(c.partition, c.prototype_id, e) for c in report.claims for e in c.evidence_ids}
    assert cited == set(state.admissible_triples())


# ---------------------------------------------------------------------------
# Adversarial scribe
# ---------------------------------------------------------------------------

def test_adversarial_full_fault_rate_always_detected(cfg):
    critic = BarrierCritic(cfg.taxonomy)
    for seed in range(30):
        state = simple_state()
        scribe = AdversarialScribe(cfg.taxonomy, fault_rate=1.0, seed=seed)
        verdict = critic.evaluate(scribe.propose(state.document()), state)
        assert verdict.violation_count() >= 1, f"seed {seed} produced a clean report"


def test_adversarial_faults_even_zero_claim_states(cfg):
    state = make_state([], [(1, [])])
    scribe = AdversarialScribe(cfg.taxonomy, fault_rate=1.0, seed=1)
    report = scribe.propose(state.document())
    assert report.claims  # fabricated claim added
    verdict = BarrierCritic(cfg.taxonomy).evaluate(report, state)
    assert verdict.cite_violations


def test_adversarial_zero_rate_is_faithful(cfg):
    state = simple_state()
    scribe = AdversarialScribe(cfg.taxonomy, fault_rate=0.0, seed=1)
    assert scribe.propose(state.document()) == TemplateScribe(cfg.taxonomy).propose(state.document())


def test_adversarial_repairs_on_critique_when_not_persistent(cfg):
    state = simple_state()
    scribe = AdversarialScribe(cfg.taxonomy, fault_rate=1.0, persistence=0.0, seed=9)
    first = scribe.propose(state.document())
    repaired = scribe.propose(state.document(), critique="[cite] claim=c000: fix it")
    assert repaired == TemplateScribe(cfg.taxonomy).propose(state.document())
    assert first != repaired


def test_adversarial_seeded_reproducibility(cfg):
    state = simple_state()
    a = AdversarialScribe(cfg.taxonomy, fault_rate=0.6, seed=123).propose(state.document())
    b = AdversarialScribe(cfg.taxonomy, fault_rate=0.6, seed=123).propose(state.document())
    assert a == b


def test_adversarial_config_validation(cfg):
    with pytest.raises(ConfigError):
        AdversarialScribe(cfg.taxonomy, fault_rate=1.5)
    with pytest.raises(ConfigError):
        AdversarialScribe(cfg.taxonomy, kinds=("nonsense",))


# ---------------------------------------------------------------------------
# HTTP scribe against a local chat-completion stub
# ---------------------------------------------------------------------------

class _StubHandler(BaseHTTPRequestHandler):
    behavior = "echo_report"
    requests: list = []

    def do_POST(self):
        length = int(self.headers["Content-Length"])
        body = json.loads(self.rfile.read(length))
        type(self).requests.append({"body": body, "auth": self.headers.get("Authorization")})
        if type(self).behavior == "http_error":
            self.send_response(500)
            self.end_headers()
            return
        if type(self).behavior == "not_chat":
            payload = {"unexpected": True}
        elif type(self).behavior == "prose":
            report = _report_for(body)
            content = "Here is the report you asked for:\n" + json.dumps(report) + "\nRegards."
            payload = {"choices": [{"message": {"role": "assistant", "content": content}}]}
        elif type(self).behavior == "garbage_content":
            payload = {"choices": [{"message": {"role": "assistant", "content": "no json here"}}]}
        else:
            report = _report_for(body)
            payload = {"choices": [{"message": {"role": "assistant", "content": json.dumps(report)}}]}
        data = json.dumps(payload).encode("utf-8")
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


def _report_for(body):
    document = json.loads(body["messages"][1]["content"].split("\n", 1)[1])
    return {
        "case_id": document["case"]["case_id"],
        "predicted_class": document["backbone"]["predicted_class"],
        "confidence_band": "medium",
        "impression": "stub report",
        "claims": [],
    }


@pytest.fixture()
def stub_server():
    server = HTTPServer(("127.0.0.1", 0), _StubHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    _StubHandler.requests = []
    _StubHandler.behavior = "echo_report"
    yield f"http://127.0.0.1:{server.server_port}/v1/chat/completions"
    server.shutdown()


def test_http_scribe_round_trip(cfg, stub_server):
    state = simple_state()
    scribe = HttpScribe(endpoint=stub_server, api_key="sk-test", model="m1")
    report = scribe.propose(state.document())
    assert report.case_id == "q1"
    assert structural_violations(report) == []
    sent = _StubHandler.requests[-1]
    assert sent["auth"] == "Bearer sk-test"
    assert sent["body"]["model"] == "m1"
    assert sent["body"]["temperature"] == 0
    assert sent["body"]["messages"][0]["role"] == "system"
    assert "Grounded evidence document" in sent["body"]["messages"][1]["content"]
    assert scribe.transcript


def test_http_scribe_appends_critique_message(cfg, stub_server):
    scribe = HttpScribe(endpoint=stub_server)
    scribe.propose(simple_state().document(), critique="[cite] claim=c000: bad citation")
    messages = _StubHandler.requests[-1]["body"]["messages"]
    assert len(messages) == 3
    assert "bad citation" in messages[2]["content"]


def test_http_scribe_parses_prose_wrapped_json(cfg, stub_server):
    _StubHandler.behavior = "prose"
    report = HttpScribe(endpoint=stub_server).propose(simple_state().document())
    assert report.impression == "stub report"


def test_http_scribe_error_mapping(cfg, stub_server):
    _StubHandler.behavior = "http_error"
    with pytest.raises(BackendUnavailable):
        HttpScribe(endpoint=stub_server).propose(simple_state().document())
    _StubHandler.behavior = "not_chat"
    with pytest.raises(UnparseableResponse):
        HttpScribe(endpoint=stub_server).propose(simple_state().document())
    _StubHandler.behavior = "garbage_content"
    with pytest.raises(UnparseableResponse):
        HttpScribe(endpoint=stub_server).propose(simple_state().document())


def test_http_scribe_unreachable_endpoint():
    scribe = HttpScribe(endpoint="http://127.0.0.1:9/nothing", timeout=0.2)
    with pytest.raises(BackendUnavailable):
        scribe.propose(simple_state().document())


def test_http_scribe_requires_endpoint(monkeypatch):
    monkeypatch.delenv("CASESCRIBE_SCRIBE_ENDPOINT", raising=False)
    with pytest.raises(ConfigError):
        HttpScribe()


def test_http_scribe_reads_endpoint_from_env(monkeypatch, stub_server):
    monkeypatch.setenv("CASESCRIBE_SCRIBE_ENDPOINT", stub_server)
    report = HttpScribe().propose(simple_state().document())
    assert report.case_id == "q1"


def test_extract_json_object_variants():
    assert _extract_json_object('{"a": 1}') == {"a": 1}
    assert _extract_json_object('text {"a": {"b": 2}} more') == {"a": {"b": 2}}
    with pytest.raises(UnparseableResponse):
        _extract_json_object("nothing here")
    with pytest.raises(UnparseableResponse):
        _extract_json_object("{broken")
