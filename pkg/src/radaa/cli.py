"""Command-line entry point: ``radaa <serve|simulate|classify|report|gen-keys>``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import threading
from pathlib import Path
from typing import Optional, Sequence

from radaa.config import ConfigError, config_from_dict, load_config
from radaa.deployment import FAULTS

log = logging.getLogger("radaa")


def _write(path: Optional[str], text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def cmd_serve(args) -> int:
    import uvicorn

    from radaa.deployment import Deployment

    config = load_config(args.config)
    deployment = Deployment(config)
    host, _, port = config.as_listen.rpartition(":")
    rs_host, _, rs_port = config.rs_listen.rpartition(":")
    servers = [uvicorn.Server(uvicorn.Config(deployment.as_app(), host=host, port=int(port), log_level="info"))]
    # resource servers take consecutive ports starting at rs_listen
    for i, rs_id in enumerate(deployment.resource_servers):
        app = deployment.rs_app(rs_id)
        servers.append(uvicorn.Server(uvicorn.Config(app, host=rs_host, port=int(rs_port) + i, log_level="info")))
        log.info("resource server %s on %s:%d", rs_id, rs_host, int(rs_port) + i)
    threads = [threading.Thread(target=s.run, daemon=True) for s in servers[1:]]
    for t in threads:
        t.start()
    try:
        servers[0].run()
    finally:
        for s in servers[1:]:
            s.should_exit = True
        for t in threads:
            t.join(timeout=5)
    return 0


def cmd_simulate(args) -> int:
    from radaa.harness import Scenario, render_json, render_matrix, run_all, run_scenario
    from radaa.harness.scenarios import new_deployment

    faults = args.fault or []
    if args.scenario == "all":
        matrix = run_all(faults)
        text = render_matrix(matrix)
        sys.stdout.write(text)
        if args.report:
            Path(args.report).write_text(render_json(matrix))
            Path(args.report).with_suffix(".txt").write_text(text)
        return 0 if matrix.pass_ else 1
    result = run_scenario(Scenario(args.scenario), new_deployment(faults))
    doc = result.to_json()
    sys.stdout.write(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    if args.report:
        Path(args.report).write_text(json.dumps({"pass": result.passed, "results": [doc]}, indent=2,
                                                sort_keys=True) + "\n")
    return 0 if result.passed else 1


def cmd_classify(args) -> int:
    from radaa.engine import AdaptiveEngine, KnnModel, Stage, TransactionContext
    from radaa.store import Store

    config = load_config(args.config) if args.config else config_from_dict({"issuer_id": "radaa-cli"})
    source = sys.stdin if args.input in (None, "-") else open(args.input)
    with source:
        ctx = TransactionContext.from_json(json.load(source))
    engine = AdaptiveEngine.from_config(config, Store())
    if args.model:
        engine.model = KnnModel.load(args.model, k=config.knn.k, max_samples=config.knn.capacity)
        engine.classifier = "knn"
    assessment = engine.assess(ctx, record=False)
    decision = engine.decide(assessment, Stage(args.stage), args.scope or ())
    out = {
        "score": assessment.score,
        "class": assessment.risk_class.name,
        "decision": {"action": decision.action.value, "stripped_scopes": sorted(decision.stripped_scopes)},
    }
    sys.stdout.write(json.dumps(out, sort_keys=True) + "\n")
    return 0


def cmd_report(args) -> int:
    from radaa.harness.scenarios import ResilienceMatrix, Scenario, ScenarioResult, render_matrix

    doc = json.loads(Path(args.matrix).read_text())
    matrix = ResilienceMatrix([
        ScenarioResult(Scenario(r["id"]), r["attempted"], r["blocked"], [tuple(e) for e in r["evidence"]])
        for r in doc["results"]
    ])
    _write(args.output, render_matrix(matrix))
    return 0 if matrix.pass_ else 1


def cmd_gen_keys(args) -> int:
    from radaa.tokens import Algorithm, KeyPair

    key = KeyPair.generate(args.key_id, Algorithm[args.algorithm])
    _write(args.output, json.dumps(key.to_json(), indent=2) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="radaa", description="risk-adaptive authorization toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run the authorization and resource servers")
    p.add_argument("--config")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("simulate", help="run the threat harness")
    p.add_argument("--scenario", default="all", help="scenario id or 'all'")
    p.add_argument("--fault", action="append", choices=sorted(FAULTS), help="disable a mitigation (repeatable)")
    p.add_argument("--report", help="write the matrix JSON here (and a .txt rendering beside it)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("classify", help="score a transaction context read as JSON")
    p.add_argument("input", nargs="?", help="context file; stdin when omitted")
    p.add_argument("--config")
    p.add_argument("--model", help="KNN snapshot; selects the KNN classifier")
    p.add_argument("--stage", default="AUTHN", choices=["AUTHN", "TOKEN_ISSUE", "RESOURCE_ACCESS"])
    p.add_argument("--scope", action="append", help="requested scope (repeatable)")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("report", help="render a saved matrix JSON as a table")
    p.add_argument("matrix")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("gen-keys", help="generate a signing keypair file")
    p.add_argument("--key-id", default="radaa-key-1")
    p.add_argument("--algorithm", default="ED25519", choices=["ED25519", "HMAC_SHA256"])
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_gen_keys)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
