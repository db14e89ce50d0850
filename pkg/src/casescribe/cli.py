"""Operator surface: distill, gate, generate, evaluate, attack, demo.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 backend failure.
Every run writes exactly one manifest listing its config snapshot, seeds, and
every artifact path; with mock backends a rerun under the same seed reproduces
every artifact byte for byte (the manifest itself carries timing and is the
one intentionally unstable file).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import attacks as attacks_mod
from .backbone import (
    SyntheticCohort,
    SyntheticCohortSpec,
    load_backbone_outputs,
    read_cases,
    read_membership,
    read_prototypes,
    write_backbone_outputs,
    write_cases,
    write_membership,
    write_prototypes,
)
from .config import PipelineConfig, load_config, write_default_config
from .errors import (
    BackendUnavailable,
    CaseScribeError,
    ConfigError,
    InvalidSpec,
    ParseError,
    InvariantViolation,
)
from .gate import (
    apply_gate,
    fit_gate,
    read_gate_index,
    sweep_frontier,
    write_frontier,
    write_gate_index,
    write_gated_bank,
)
from .memory import dumps_canonical, load_bank, read_bank, write_bank
from .metrics import csf
from .pipeline import (
    bank_population,
    casecard_from_query,
    disclosure_suite,
    distill_bank,
    run_generate,
)
from .report import report_from_dict, extract_claims
from .differential import Differential

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_BACKEND = 4

MANIFEST_VERSION = "manifest/1"

SCHEMA_VERSIONS = {
    "bank": "bank/1",
    "gate-index": "gate-index/1",
    "gated": "gated/1",
    "backbone": "backbone/1",
    "prototypes": "prototypes/1",
    "cases": "cases/1",
    "membership": "membership/1",
    "grounded-state": "grounded-state/1",
    "report": "report/1",
    "config": "config/1",
}


def _write_manifest(path: Path, command: str, cfg: PipelineConfig, seeds: dict, inputs: dict, outputs: dict, started: float) -> None:
    manifest = {
        "schema_version": MANIFEST_VERSION,
        "command": command,
        "config": cfg.raw,
        "seeds": seeds,
        "inputs": {k: str(v) for k, v in inputs.items()},
        "outputs": {k: str(v) for k, v in outputs.items()},
        "schema_versions": SCHEMA_VERSIONS,
        "timing": {"started_unix": started, "duration_s": time.time() - started},
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load_cfg(args) -> PipelineConfig:
    overrides = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        try:
            overrides[key] = json.loads(value)
        except json.JSONDecodeError:
            overrides[key] = value
    return load_config(getattr(args, "config", None), overrides)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_distill(args) -> int:
    started = time.time()
    cfg = _load_cfg(args)
    records = read_prototypes(args.prototypes)
    cards = distill_bank(records, cfg)
    out = Path(args.out)
    write_bank(cards, out)
    _write_manifest(
        out.with_suffix(out.suffix + ".manifest.json"),
        "distill",
        cfg,
        seeds={},
        inputs={"prototypes": args.prototypes},
        outputs={"bank": out},
        started=started,
    )
    print(f"distilled {len(cards)} cards -> {out}")
    return EXIT_OK


def cmd_gate_fit(args) -> int:
    started = time.time()
    cfg = _load_cfg(args)
    cards = list(read_bank(args.bank))
    index = fit_gate(bank_population(cards, cfg))
    out = Path(args.out)
    write_gate_index(index, out)
    _write_manifest(
        out.with_suffix(out.suffix + ".manifest.json"),
        "gate fit",
        cfg,
        seeds={},
        inputs={"bank": args.bank},
        outputs={"index": out},
        started=started,
    )
    print(f"fit gate over {len(cards)} cards, {len(index)} signatures -> {out}")
    return EXIT_OK


def cmd_gate_apply(args) -> int:
    started = time.time()
    cfg = _load_cfg(args)
    gate_cfg = cfg.gate
    if args.k is not None or args.l is not None:
        gate_cfg = gate_cfg.with_thresholds(args.k or gate_cfg.k, args.l or gate_cfg.l)
    cards = list(read_bank(args.bank))
    index = read_gate_index(args.index)
    gated = [apply_gate(c, index, gate_cfg, cfg.bucket_map) for c in cards]
    out = Path(args.out)
    write_gated_bank(gated, out)
    visible = sum(1 for g in gated if g.visible)
    _write_manifest(
        out.with_suffix(out.suffix + ".manifest.json"),
        "gate apply",
        cfg,
        seeds={},
        inputs={"bank": args.bank, "index": args.index},
        outputs={"gated": out},
        started=started,
    )
    print(f"gate (k={gate_cfg.k}, l={gate_cfg.l}): {visible}/{len(gated)} visible -> {out}")
    return EXIT_OK


def cmd_gate_sweep(args) -> int:
    started = time.time()
    cfg = _load_cfg(args)
    cards = list(read_bank(args.bank))
    population = bank_population(cards, cfg)
    if args.prototypes:
        sims = {r.prototype_id: r.similarity for r in read_prototypes(args.prototypes)}
        neighborhood = [(c.prototype_id, sims.get(c.prototype_id, 0.0)) for c in cards]
    else:
        neighborhood = [(c.prototype_id, 1.0) for c in cards]
    registry = attacks_mod.registry_from_cards(cards, cfg.gate, cfg.bucket_map)
    k_values = [int(x) for x in args.k_values.split(",")]
    l_values = [int(x) for x in args.l_values.split(",")]
    points = sweep_frontier(
        cards, population, neighborhood, k_values, l_values, registry, cfg.gate, cfg.bucket_map
    )
    out = Path(args.out)
    write_frontier(points, out)
    _write_manifest(
        out.with_suffix(out.suffix + ".manifest.json"),
        "gate sweep",
        cfg,
        seeds={},
        inputs={"bank": args.bank, "prototypes": args.prototypes or ""},
        outputs={"frontier": out},
        started=started,
    )
    print(f"swept {len(points)} (k,l) points -> {out}")
    return EXIT_OK


def cmd_generate(args) -> int:
    started = time.time()
    cfg = _load_cfg(args)
    if args.backend:
        cfg.scribe["backend"] = args.backend
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    queries = read_cases(args.cases)
    backbones = {b.case_id: b for b in load_backbone_outputs(args.backbone)}
    bank = load_bank(args.bank)
    index = read_gate_index(args.index)

    results = run_generate(queries, backbones, bank, index, cfg, seed=args.seed, workers=args.workers)

    reports_path = out_dir / "reports.jsonl"
    references_path = out_dir / "references.jsonl"
    transcripts_path = out_dir / "transcripts.jsonl"
    with open(reports_path, "w", encoding="utf-8") as rep_fh, open(
        references_path, "w", encoding="utf-8"
    ) as ref_fh, open(transcripts_path, "w", encoding="utf-8") as tr_fh:
        for r in results:
            rep_fh.write(
                dumps_canonical(
                    {
                        "case_id": r.case_id,
                        "accepted": r.outcome.accepted,
                        "iterations_used": r.outcome.iterations_used,
                        "reason": r.outcome.reason,
                        "report": None if r.outcome.report is None else r.outcome.report.to_dict(),
                    }
                )
                + "\n"
            )
            ref_fh.write(
                dumps_canonical(
                    {
                        "case_id": r.case_id,
                        "deferral": r.state.deferral is not None,
                        "fallback_tabular_only": r.fallback_tabular_only,
                        "differentials": [d.to_dict() for d in r.reference()],
                    }
                )
                + "\n"
            )
            tr_fh.write(
                dumps_canonical(
                    {
                        "case_id": r.case_id,
                        "document": r.state.serialized(),
                        "iterations": r.transcript,
                    }
                )
                + "\n"
            )

    accepted = sum(1 for r in results if r.outcome.accepted)
    backend_failures = sum(
        1 for r in results if r.outcome.reason and r.outcome.reason.startswith("backend_failure")
    )
    _write_manifest(
        out_dir / "manifest.json",
        "generate",
        cfg,
        seeds={"generate": args.seed},
        inputs={"cases": args.cases, "backbone": args.backbone, "bank": args.bank, "index": args.index},
        outputs={
            "reports": reports_path,
            "references": references_path,
            "transcripts": transcripts_path,
        },
        started=started,
    )
    print(f"generated {len(results)} cases: {accepted} accepted, {len(results) - accepted} deferred")
    if backend_failures:
        print(f"{backend_failures} cases deferred on backend failure", file=sys.stderr)
        return EXIT_BACKEND
    return EXIT_OK


def cmd_evaluate_csf(args) -> int:
    started = time.time()
    cfg = _load_cfg(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    references = {}
    with open(args.references, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                d = json.loads(line)
                references[d["case_id"]] = [Differential.from_dict(x) for x in d["differentials"]]

    per_case = []
    n_total = n_accepted = 0
    with open(args.reports, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            d = json.loads(line)
            n_total += 1
            if not d.get("accepted") or d.get("report") is None:
                continue
            n_accepted += 1
            report = report_from_dict(d["report"])
            triples = extract_claims(report)
            result = csf(references.get(d["case_id"], []), triples)
            per_case.append({"case_id": d["case_id"], **result.to_dict()})

    def macro(name: str):
        values = [c[name] for c in per_case if c[name] is not None]
        return (sum(values) / len(values)) if values else None

    doc = {
        "cases_total": n_total,
        "cases_accepted": n_accepted,
        "cases_evaluated": len(per_case),
        "macro": {
            "precision": macro("precision"),
            "recall": macro("recall"),
            "f1": macro("f1"),
            "weighted_accuracy": macro("weighted_accuracy"),
        },
        "per_case": per_case,
    }
    report_path = out_dir / "csf_report.json"
    report_path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    summary_path = out_dir / "csf_summary.csv"
    rows = ["metric,value"]
    for name in ("precision", "recall", "f1", "weighted_accuracy"):
        value = doc["macro"][name]
        rows.append(f"csf_{name},{'' if value is None else f'{value:.6f}'}")
    rows.append(f"cases_evaluated,{len(per_case)}")
    summary_path.write_text("\n".join(rows) + "\n", encoding="utf-8")
    _write_manifest(
        out_dir / "manifest.json",
        "evaluate csf",
        cfg,
        seeds={},
        inputs={"reports": args.reports, "references": args.references},
        outputs={"report": report_path, "summary": summary_path},
        started=started,
    )
    print(f"evaluated {len(per_case)} accepted reports -> {report_path}")
    return EXIT_OK


def cmd_attack(args) -> int:
    started = time.time()
    cfg = _load_cfg(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    prototypes = read_prototypes(args.prototypes)
    queries = read_cases(args.cases)
    membership = read_membership(args.membership)

    wanted = {"mia": "MIA", "aia": "AIA", "link": "Link@1"}[args.attack]
    conditions = {}
    for name, gated in (("gated", True), ("ungated", False)):
        results = disclosure_suite(prototypes, queries, membership, cfg, gated=gated)
        conditions[name] = {k: v.to_dict() for k, v in results.items()}

    doc = {
        "attack": wanted,
        "gate": {"k": cfg.gate.k, "l": cfg.gate.l},
        "gated": conditions["gated"][wanted],
        "ungated": conditions["ungated"][wanted],
        "all": conditions,
    }
    report_path = out_dir / f"attack_{args.attack}.json"
    report_path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    summary_path = out_dir / f"attack_{args.attack}_summary.csv"
    rows = ["attack,condition,accuracy,trials,tie_events"]
    for cond in ("gated", "ungated"):
        r = doc[cond]
        rows.append(f"{wanted},{cond},{r['accuracy']:.6f},{r['trials']},{r['tie_events']}")
    summary_path.write_text("\n".join(rows) + "\n", encoding="utf-8")
    _write_manifest(
        out_dir / "manifest.json",
        f"attack {args.attack}",
        cfg,
        seeds={},
        inputs={"prototypes": args.prototypes, "cases": args.cases, "membership": args.membership},
        outputs={"report": report_path, "summary": summary_path},
        started=started,
    )
    print(
        f"{wanted}: gated {doc['gated']['accuracy']:.4f} vs ungated {doc['ungated']['accuracy']:.4f}"
    )
    return EXIT_OK


# Diversity binds before class size on this cohort: classes with two sensitive
# values all have size >= 9, so every k in {3,5,7,9} admits the same surface at
# l = 2, the l = 1 frontier varies smoothly with k, and l = 3 is unreachable.
DEMO_EC_SPEC = (
    (3, 1),
    (4, 1),
    (5, 1),
    (5, 1),
    (6, 1),
    (7, 1),
    (8, 1),
    (9, 2),
    (9, 2),
    (10, 2),
    (12, 2),
)


def demo_cohort_spec(seed: int, n_queries: int = 40) -> SyntheticCohortSpec:
    return SyntheticCohortSpec(
        seed=seed,
        ec_spec=DEMO_EC_SPEC,
        n_queries=n_queries,
        nonmember_rate=0.5,
        nonmember_overlap=0.15,
        assertion_noise=0.1,
        neighborhood_k=3,
    )


def cmd_demo(args) -> int:
    from .backbone import synth_cohort

    started = time.time()
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    config_path = out_dir / "config.json"
    write_default_config(config_path)
    cfg = load_config(config_path)

    cohort_dir = out_dir / "cohort"
    cohort_dir.mkdir(exist_ok=True)
    spec = demo_cohort_spec(args.seed)
    cohort = synth_cohort(
        spec,
        cfg.schema,
        cfg.gate.quasi_fields,
        concepts=cfg.common_concepts(),
        reserved_concepts=cfg.reserved_concepts(),
    )
    paths = {
        "prototypes": cohort_dir / "prototypes.jsonl",
        "cases": cohort_dir / "cases.jsonl",
        "backbone": cohort_dir / "backbone.jsonl",
        "membership": cohort_dir / "membership.jsonl",
    }
    write_prototypes(cohort.prototypes, paths["prototypes"])
    write_cases(cohort.cases, paths["cases"])
    write_backbone_outputs(cohort.backbone, paths["backbone"])
    write_membership(cohort.membership, paths["membership"])

    # Distill and gate.
    cards = distill_bank(list(cohort.prototypes), cfg)
    bank_path = out_dir / "bank.jsonl"
    write_bank(cards, bank_path)
    population = bank_population(cards, cfg)
    index = fit_gate(population)
    index_path = out_dir / "gate_index.jsonl"
    write_gate_index(index, index_path)
    gated = [apply_gate(c, index, cfg.gate, cfg.bucket_map) for c in cards]
    gated_path = out_dir / "gated_bank.jsonl"
    write_gated_bank(gated, gated_path)

    sims = {r.prototype_id: r.similarity for r in cohort.prototypes}
    neighborhood = [(c.prototype_id, sims[c.prototype_id]) for c in cards]
    registry = attacks_mod.registry_from_cards(cards, cfg.gate, cfg.bucket_map)
    points = sweep_frontier(
        cards, population, neighborhood, [3, 5, 7, 9], [1, 2, 3], registry, cfg.gate, cfg.bucket_map
    )
    frontier_path = out_dir / "frontier.csv"
    write_frontier(points, frontier_path)

    # Generate with the deterministic template backend.
    gen_args = argparse.Namespace(
        config=config_path,
        set=None,
        backend="template",
        out_dir=out_dir / "reports",
        cases=str(paths["cases"]),
        backbone=str(paths["backbone"]),
        bank=str(bank_path),
        index=str(index_path),
        seed=args.seed,
        workers=args.workers,
    )
    rc = cmd_generate(gen_args)
    if rc != EXIT_OK:
        return rc

    eval_args = argparse.Namespace(
        config=config_path,
        set=None,
        out_dir=out_dir / "eval",
        reports=str(out_dir / "reports" / "reports.jsonl"),
        references=str(out_dir / "reports" / "references.jsonl"),
    )
    rc = cmd_evaluate_csf(eval_args)
    if rc != EXIT_OK:
        return rc

    attack_dir = out_dir / "attacks"
    attack_dir.mkdir(exist_ok=True)
    conditions = {}
    for name, gated_flag in (("gated", True), ("ungated", False)):
        results = disclosure_suite(
            list(cohort.prototypes), list(cohort.cases), list(cohort.membership), cfg, gated=gated_flag
        )
        conditions[name] = {k: v.to_dict() for k, v in results.items()}
    attacks_path = attack_dir / "attacks_report.json"
    attacks_path.write_text(json.dumps(conditions, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    summary_path = attack_dir / "attacks_summary.csv"
    rows = ["attack,condition,accuracy,trials,tie_events"]
    for cond in ("gated", "ungated"):
        for attack_name in ("MIA", "AIA", "Link@1"):
            r = conditions[cond][attack_name]
            rows.append(f"{attack_name},{cond},{r['accuracy']:.6f},{r['trials']},{r['tie_events']}")
    summary_path.write_text("\n".join(rows) + "\n", encoding="utf-8")

    _write_manifest(
        out_dir / "manifest.json",
        "demo",
        cfg,
        seeds={"cohort": args.seed, "generate": args.seed},
        inputs={},
        outputs={
            **{k: v for k, v in paths.items()},
            "config": config_path,
            "bank": bank_path,
            "index": index_path,
            "gated": gated_path,
            "frontier": frontier_path,
            "reports": out_dir / "reports" / "reports.jsonl",
            "references": out_dir / "reports" / "references.jsonl",
            "transcripts": out_dir / "reports" / "transcripts.jsonl",
            "csf_report": out_dir / "eval" / "csf_report.json",
            "csf_summary": out_dir / "eval" / "csf_summary.csv",
            "attacks_report": attacks_path,
            "attacks_summary": summary_path,
        },
        started=started,
    )
    print(f"demo complete -> {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="casescribe",
        description="Decode prototype-retrieval evidence into verifiable, privacy-gated reports.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="pipeline config JSON")
        p.add_argument("--set", action="append", help="override config entries, key=value (dotted keys)")

    p = sub.add_parser("distill", help="build the discrete memory bank")
    common(p)
    p.add_argument("--prototypes", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_distill)

    gate = sub.add_parser("gate", help="release gate operations")
    gate_sub = gate.add_subparsers(dest="gate_command", required=True)

    p = gate_sub.add_parser("fit", help="fit the signature index")
    common(p)
    p.add_argument("--bank", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gate_fit)

    p = gate_sub.add_parser("apply", help="apply the (k, l) rule to a bank")
    common(p)
    p.add_argument("--bank", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--l", type=int, default=None)
    p.set_defaults(func=cmd_gate_apply)

    p = gate_sub.add_parser("sweep", help="privacy-utility frontier over (k, l) grids")
    common(p)
    p.add_argument("--bank", required=True)
    p.add_argument("--prototypes", default=None, help="prototype records supplying similarities")
    p.add_argument("--out", required=True)
    p.add_argument("--k-values", default="3,5,7,9")
    p.add_argument("--l-values", default="1,2,3")
    p.set_defaults(func=cmd_gate_sweep)

    p = sub.add_parser("generate", help="run the scribe-critic loop per case")
    common(p)
    p.add_argument("--cases", required=True)
    p.add_argument("--backbone", required=True)
    p.add_argument("--bank", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--backend", choices=["template", "adversarial", "http"], default=None)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_generate)

    evaluate = sub.add_parser("evaluate", help="faithfulness metrics")
    eval_sub = evaluate.add_subparsers(dest="evaluate_command", required=True)
    p = eval_sub.add_parser("csf", help="comparison faithfulness over generated reports")
    common(p)
    p.add_argument("--reports", required=True)
    p.add_argument("--references", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_evaluate_csf)

    attack = sub.add_parser("attack", help="disclosure attacks, gated vs ungated")
    attack_sub = attack.add_subparsers(dest="attack", required=True)
    for name in ("mia", "aia", "link"):
        p = attack_sub.add_parser(name)
        common(p)
        p.add_argument("--prototypes", required=True)
        p.add_argument("--cases", required=True)
        p.add_argument("--membership", required=True)
        p.add_argument("--out-dir", required=True)
        p.set_defaults(func=cmd_attack, attack=name)

    p = sub.add_parser("demo", help="seeded end-to-end synthetic run")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_demo)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InvalidSpec) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ParseError, InvariantViolation, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except BackendUnavailable as exc:
        print(f"backend failure: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except CaseScribeError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
