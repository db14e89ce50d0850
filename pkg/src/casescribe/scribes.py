"""Report proposal backends.

Three interchangeable backends implement `propose(document, critique)`:

* TemplateScribe: deterministic, always faithful; one claim per differential
  item. Doubles as the convergence oracle for the repair loop.
* AdversarialScribe: wraps the template output with seeded fault injection
  (fabricated citations, wrong partitions, wrong bins, dropped citations,
  flipped polarity wording) to exercise the critic and the repair loop.
* HttpScribe: remote chat-completion endpoint; the grounded-state document is
  serialized into the prompt and the reply is parsed back into a report.

Backends only ever see the gate-sanitized grounded-state document (plus static
vocabulary), never raw records or redacted cards.
"""

from __future__ import annotations

import json
import os
import random
from typing import Optional, Protocol

import requests

from .errors import BackendUnavailable, ConfigError, UnparseableResponse
from .memory import Assertion, dumps_canonical
from .report import Claim, Report, report_from_dict
from .taxonomy import Taxonomy

ENV_ENDPOINT = "CASESCRIBE_SCRIBE_ENDPOINT"
ENV_API_KEY = "CASESCRIBE_SCRIBE_API_KEY"

FAULT_KINDS = ("fabricate", "wrong_partition", "wrong_bin", "drop_citation", "flip_polarity")


class ScribeBackend(Protocol):
    def propose(self, document: dict, critique: Optional[str] = None) -> Report: ...


def confidence_band_for(document: dict) -> str:
    sims = [e["similarity"] for e in document["backbone"]["neighborhood"]]
    top = max(sims) if sims else 0.0
    if top >= 0.75:
        return "high"
    if top >= 0.45:
        return "medium"
    return "low"


def assertion_sentence(partition: str, key: str, prototype_id: int, taxonomy: Taxonomy) -> str:
    a = Assertion.from_key(key)
    display = taxonomy.concepts.get(a.concept_id, a.concept_id)
    if a.qualifier:
        display = f"{display} ({a.qualifier})"
    if partition == "shared":
        return f"{display} is {a.polarity} for both the case and prototype {prototype_id}."
    if partition == "query_only":
        return f"{display} is {a.polarity} for the case but not noted for prototype {prototype_id}."
    return f"{display} is {a.polarity} for prototype {prototype_id} but not noted for the case."


class TemplateScribe:
    """Faithful deterministic scribe: verbalizes exactly the differentials."""

    def __init__(self, taxonomy: Taxonomy):
        self.taxonomy = taxonomy

    def propose(self, document: dict, critique: Optional[str] = None) -> Report:
        del critique  # the template is already faithful; nothing to repair
        claims = []
        n = 0
        for entry in document["visible"]:
            diff = entry["differential"]
            j = diff["prototype_id"]
            for partition in ("shared", "query_only", "proto_only"):
                for key in diff[partition]:
                    claims.append(
                        Claim(
                            claim_id=f"c{n:03d}",
                            partition=partition,
                            evidence_ids=(key,),
                            prototype_id=j,
                            typed_value=None,
                            sentence=assertion_sentence(partition, key, j, self.taxonomy),
                        )
                    )
                    n += 1
            for f, qbin, pbin in diff["tabular_mismatch"]:
                claims.append(
                    Claim(
                        claim_id=f"c{n:03d}",
                        partition="tabular",
                        evidence_ids=(f,),
                        prototype_id=j,
                        typed_value=(f, qbin),
                        sentence=f"Field {f} differs: case {qbin} versus prototype {j} {pbin}.",
                    )
                )
                n += 1
        impression = self._impression(document, claims)
        return Report(
            case_id=document["case"]["case_id"],
            predicted_class=document["backbone"]["predicted_class"],
            confidence_band=confidence_band_for(document),
            impression=impression,
            claims=tuple(claims),
        )

    @staticmethod
    def _impression(document: dict, claims: list) -> str:
        backbone = document["backbone"]
        parts = [
            f"Predicted {backbone['predicted_class']} (severity estimate {backbone['severity_scalar']:g}).",
            f"Compared against {len(document['visible'])} released reference(s); "
            f"{document['redacted_count']} withheld by the release gate.",
        ]
        if document["deferral"] is not None:
            parts.append("Visual comparison deferred; tabular factors only.")
        if not claims:
            parts.append("No comparison findings available.")
        return " ".join(parts)


class AdversarialScribe:
    """Template output perturbed by seeded fault injection.

    `fault_rate` is the per-claim probability of injecting one fault on a
    fresh proposal. When a critique is supplied, the scribe keeps injecting
    with probability `persistence` and otherwise repairs by re-emitting the
    faithful template output. A report with no claims still receives one
    fabricated claim, so fault_rate 1.0 always yields a detectable violation.
    """

    def __init__(
        self,
        taxonomy: Taxonomy,
        fault_rate: float = 0.5,
        persistence: float = 0.0,
        seed: int = 0,
        kinds: tuple[str, ...] = FAULT_KINDS,
    ):
        if not 0.0 <= fault_rate <= 1.0 or not 0.0 <= persistence <= 1.0:
            raise ConfigError("fault_rate and persistence must be in [0, 1]")
        unknown = set(kinds) - set(FAULT_KINDS)
        if unknown or not kinds:
            raise ConfigError(f"unknown fault kinds {sorted(unknown)}")
        self.template = TemplateScribe(taxonomy)
        self.fault_rate = fault_rate
        self.persistence = persistence
        self.kinds = kinds
        self.rng = random.Random(seed)
        self._fabricated = 0

    def propose(self, document: dict, critique: Optional[str] = None) -> Report:
        base = self.template.propose(document)
        if critique is not None and self.rng.random() >= self.persistence:
            return base
        return self._inject(base, document)

    def _inject(self, report: Report, document: dict) -> Report:
        claims = list(report.claims)
        if not claims:
            claims.append(self._fabricated_claim(document))
        else:
            claims = [self._maybe_fault(c, document) for c in claims]
            if self.fault_rate >= 1.0 and claims == list(report.claims):
                claims.append(self._fabricated_claim(document))
        return Report(
            case_id=report.case_id,
            predicted_class=report.predicted_class,
            confidence_band=report.confidence_band,
            impression=report.impression,
            claims=tuple(claims),
        )

    def _fabricated_claim(self, document: dict) -> Claim:
        self._fabricated += 1
        neighborhood = document["backbone"]["neighborhood"]
        j = neighborhood[0]["prototype_id"] if neighborhood else 0
        key = f"fabricated.finding_{self._fabricated}:present"
        return Claim(
            claim_id=f"x{self._fabricated:03d}",
            partition="shared",
            evidence_ids=(key,),
            prototype_id=j,
            typed_value=None,
            sentence=f"Fabricated finding {self._fabricated} is present for both the case and prototype {j}.",
        )

    def _maybe_fault(self, claim: Claim, document: dict) -> Claim:
        if self.rng.random() >= self.fault_rate:
            return claim
        kinds = self.kinds
        if claim.partition == "tabular":
            kinds = tuple(k for k in kinds if k != "flip_polarity") or ("fabricate",)
        kind = kinds[self.rng.randrange(len(kinds))]
        if kind == "fabricate":
            self._fabricated += 1
            return self._replace(claim, evidence_ids=(f"fabricated.finding_{self._fabricated}:present",))
        if kind == "wrong_partition":
            others = [p for p in ("shared", "query_only", "proto_only", "tabular") if p != claim.partition]
            return self._replace(claim, partition=others[self.rng.randrange(len(others))])
        if kind == "wrong_bin":
            record = document["case"]["record"]
            f = sorted(record)[0]
            return self._replace(claim, typed_value=(f, record[f] + "?"))
        if kind == "drop_citation":
            return self._replace(claim, evidence_ids=())
        sentence = claim.sentence or ""
        if "absent" in sentence:
            sentence = sentence.replace("absent", "present")
        else:
            sentence = sentence.replace("present", "absent")
        return self._replace(claim, sentence=sentence)

    @staticmethod
    def _replace(claim: Claim, **changes) -> Claim:
        base = {
            "claim_id": claim.claim_id,
            "partition": claim.partition,
            "evidence_ids": claim.evidence_ids,
            "prototype_id": claim.prototype_id,
            "typed_value": claim.typed_value,
            "sentence": claim.sentence,
        }
        base.update(changes)
        return Claim(**base)


DEFAULT_SYSTEM_PROMPT = (
    "You write structured clinical comparison reports. Reply with a single JSON "
    "object with keys case_id, predicted_class, confidence_band (low|medium|high), "
    "impression, and claims. Each claim needs claim_id, partition (shared|query_only|"
    "proto_only|tabular), evidence_ids (cited from the provided differentials only), "
    "prototype_id, typed_value (null or [field, bin]), and sentence. Cite nothing "
    "that is not present in the grounded evidence document."
)


class HttpScribe:
    """Chat-completion-compatible remote backend.

    Endpoint and key come from arguments or the CASESCRIBE_SCRIBE_ENDPOINT /
    CASESCRIBE_SCRIBE_API_KEY environment variables. Every request/response
    pair is appended to `transcript` for per-case audit logs.
    """

    def __init__(
        self,
        endpoint: Optional[str] = None,
        api_key: Optional[str] = None,
        model: str = "scribe-1",
        timeout: float = 30.0,
        system_prompt: str = DEFAULT_SYSTEM_PROMPT,
        session: Optional[requests.Session] = None,
    ):
        self.endpoint = endpoint or os.environ.get(ENV_ENDPOINT)
        if not self.endpoint:
            raise ConfigError(f"no scribe endpoint; set {ENV_ENDPOINT} or pass endpoint=")
        self.api_key = api_key or os.environ.get(ENV_API_KEY)
        self.model = model
        self.timeout = timeout
        self.system_prompt = system_prompt
        self.session = session or requests.Session()
        self.transcript: list[dict] = []

    def propose(self, document: dict, critique: Optional[str] = None) -> Report:
        messages = [
            {"role": "system", "content": self.system_prompt},
            {"role": "user", "content": "Grounded evidence document:\n" + dumps_canonical(document)},
        ]
        if critique:
            messages.append(
                {"role": "user", "content": "Your previous report failed verification. Repair it:\n" + critique}
            )
        body = {"model": self.model, "messages": messages, "temperature": 0}
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = self.session.post(self.endpoint, json=body, headers=headers, timeout=self.timeout)
        except requests.RequestException as exc:
            raise BackendUnavailable(f"scribe endpoint unreachable: {exc}") from None
        if resp.status_code != 200:
            raise BackendUnavailable(f"scribe endpoint returned HTTP {resp.status_code}")
        self.transcript.append({"request": body, "response": resp.text})
        try:
            content = resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError):
            raise UnparseableResponse("response is not chat-completion shaped") from None
        return report_from_dict(_extract_json_object(content))


def _extract_json_object(text: str):
    """Parse the reply, tolerating prose around a single JSON object."""
    if not isinstance(text, str):
        raise UnparseableResponse("message content is not text")
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    start = text.find("{")
    while start != -1:
        depth = 0
        for i in range(start, len(text)):
            if text[i] == "{":
                depth += 1
            elif text[i] == "}":
                depth -= 1
                if depth == 0:
                    try:
                        return json.loads(text[start : i + 1])
                    except json.JSONDecodeError:
                        break
        start = text.find("{", start + 1)
    raise UnparseableResponse("no JSON object found in reply")
