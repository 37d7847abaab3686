"""Command-line front end.

Subcommands: attack, campaign, serve-oracle, gen-fixtures, verify-core.
The default seed comes from the VERTEXFUZZ_SEED environment variable (0 if unset).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from vertexfuzz import attacks
from vertexfuzz.attacks import AttackConfig
from vertexfuzz.backends import ModelError, load_model
from vertexfuzz.core import QueryLedger, ScoreOracle, VERIFICATION, predict_label
from vertexfuzz.fixtures import FIXTURE_SEED, write_fixtures
from vertexfuzz.harness import (
    METHODS,
    Dataset,
    DatasetError,
    load_dataset,
    model_identifier,
    run_campaign,
    save_dataset,
)
from vertexfuzz.remote import OracleServer, RemoteBackend, RemoteError, RemoteOracleConfig, serve_stream
from vertexfuzz.verify import run_verify_core

SEED_ENV = "VERTEXFUZZ_SEED"

logger = logging.getLogger("vertexfuzz")


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise SystemExit(f"error: {SEED_ENV} must be an integer, got {raw!r}") from None


def _add_source(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--model", help="classifier in .dsmodel format")
    src.add_argument("--remote", metavar="HOST:PORT", help="oracle served over TCP")
    src.add_argument("--remote-cmd", metavar="CMD", help="oracle served over a child process's stdio")
    p.add_argument("--timeout-ms", type=int, default=30000, help="remote request timeout (default 30000)")


def _add_attack_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("attack configuration")
    g.add_argument("--d", type=float, default=8.0, help="L-infinity radius on the 0-255 scale (default 8)")
    g.add_argument("--budget", type=int, default=20000, help="attack query budget (default 20000)")
    g.add_argument("--max-num", type=int, default=None, help="iteration cap (default: none)")
    g.add_argument("--variant", choices=attacks.VARIANTS, default="pairwise",
                   help="objective for multiclass models (default pairwise)")
    g.add_argument("--k", type=int, default=None,
                   help="initial group side (default 4 for images up to 64x64, else 32)")
    g.add_argument("--m", type=int, default=2, help="group split factor (default 2)")
    g.add_argument("--batch-size", type=int, default=64, help="candidates per batch (default 64)")
    g.add_argument("--seed", type=int, default=None, help=f"random seed (default ${SEED_ENV} or 0)")
    g.add_argument("--no-refine", action="store_true", help="skip distortion refinement")
    g.add_argument("--refine-tol", type=float, default=0.5, help="radius bisection tolerance (default 0.5)")
    g.add_argument("--refine-budget", type=int, default=None, help="total refinement query cap (default: none)")
    g.add_argument("--refine-round-budget", type=int, default=None,
                   help="query cap per refinement search round (default: the attack budget)")
    g.add_argument("--refine-search", choices=("hierarchy", "plain"), default="hierarchy",
                   help="search used inside each refinement round (default hierarchy)")
    g.add_argument("--refine-start", choices=("lower", "projection"), default="lower",
                   help="start point of each refinement round (default lower)")
    g.add_argument("--no-early-stop", action="store_true",
                   help="finish each pass even after an adversarial candidate is scored")
    g.add_argument("--method", choices=sorted(METHODS), default="attack",
                   help="attack driver (default: hierarchy search followed by refinement)")


def _config(args) -> AttackConfig:
    seed = args.seed if args.seed is not None else _default_seed()
    return AttackConfig(
        d=args.d,
        budget=args.budget,
        max_num=args.max_num,
        variant=args.variant,
        k=args.k,
        m=args.m,
        batch_size=args.batch_size,
        seed=seed,
        refine=not args.no_refine,
        refine_tol=args.refine_tol,
        refine_budget=args.refine_budget,
        refine_round_budget=args.refine_round_budget,
        refine_search=args.refine_search,
        refine_start=args.refine_start,
        early_stop=not args.no_early_stop,
    )


def _source(args):
    if args.model:
        return load_model(args.model)
    if args.remote:
        return RemoteOracleConfig.tcp(args.remote, timeout_ms=args.timeout_ms)
    return RemoteOracleConfig(command=args.remote_cmd, timeout_ms=args.timeout_ms)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vertexfuzz", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("attack", help="attack one image")
    _add_source(p)
    p.add_argument("--input", required=True, help="dsimg file holding the image")
    p.add_argument("--index", type=int, default=0, help="image index within the file (default 0)")
    p.add_argument("--output", default="outcome.json", help="outcome JSON path (default outcome.json)")
    p.add_argument("--adv-output", default=None,
                   help="dsimg path for the adversarial image (default: <output stem>.adv.dsimg)")
    _add_attack_flags(p)

    p = sub.add_parser("campaign", help="attack every image of a dataset")
    _add_source(p)
    p.add_argument("--dataset", required=True, help="dsimg dataset")
    p.add_argument("--parallelism", type=int, default=1, help="concurrent attacks (default 1)")
    p.add_argument("--report-json", default="report.json", help="JSON report path (default report.json)")
    p.add_argument("--report-csv", default="report.csv", help="CSV report path (default report.csv)")
    _add_attack_flags(p)

    p = sub.add_parser("serve-oracle", help="serve a model over the line-delimited JSON protocol")
    p.add_argument("--model", required=True, help="classifier in .dsmodel format")
    p.add_argument("--host", default="127.0.0.1", help="bind address (default 127.0.0.1)")
    p.add_argument("--port", type=int, default=0, help="TCP port, 0 picks a free one (default 0)")
    p.add_argument("--stdio", action="store_true", help="serve one client on stdin/stdout instead of TCP")

    p = sub.add_parser("gen-fixtures", help="write the seeded fixture models and datasets")
    p.add_argument("--out", default="fixtures", help="output directory (default fixtures)")
    p.add_argument("--fixture-seed", type=int, default=FIXTURE_SEED,
                   help=f"fixture generator seed (default {FIXTURE_SEED}, checked against pinned checksums)")
    p.add_argument("--no-check", action="store_true", help="skip the pinned checksum comparison")

    p = sub.add_parser("verify-core", help="check the vertex search against exhaustive enumeration")
    p.add_argument("--trials", type=int, default=100, help="random models per suite (default 100)")
    p.add_argument("--seed", type=int, default=None, help=f"random seed (default ${SEED_ENV} or 0)")
    p.add_argument("--corrupt-for-testing", action="store_true",
                   help="perturb every comparison so the suites must fail (tests the failure path)")
    return parser


def _dump(doc) -> str:
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def cmd_attack(args) -> int:
    cfg = _config(args)
    ds = load_dataset(args.input)
    if not 0 <= args.index < len(ds):
        raise DatasetError(f"{args.input}: index {args.index} out of range for {len(ds)} images")
    x, label = ds.images[args.index], ds.labels[args.index]
    source = _source(args)
    backend = RemoteBackend(source) if isinstance(source, RemoteOracleConfig) else source
    try:
        predicted = predict_label(ScoreOracle(backend, QueryLedger(0), VERIFICATION).scores(x))
        doc = {"config": cfg.to_dict(), "model_id": model_identifier(source), "input": str(args.input),
               "index": args.index, "label": label}
        if predicted != label:
            doc["outcome"] = {"status": "skipped", "predicted": predicted}
            Path(args.output).write_text(_dump(doc), encoding="utf-8")
            print(f"skipped: model predicts {predicted}, dataset label is {label}")
            return 0
        out = METHODS[args.method](x, attacks.make_oracle(backend, cfg), cfg, label)
    finally:
        if backend is not source:
            backend.close()
    doc["outcome"] = out.to_dict(include_input=True)
    Path(args.output).write_text(_dump(doc), encoding="utf-8")
    print(f"status: {out.status}")
    print(f"queries: attack {out.attack_queries}, refinement {out.refinement_queries}")
    print(f"distortion: linf {out.linf:.6g}, l2 {out.l2:.6g}")
    if out.found:
        adv_path = args.adv_output or str(Path(args.output).with_suffix("")) + ".adv.dsimg"
        save_dataset(Dataset((x.with_data(out.x),), (out.label,)), adv_path)
        print(f"adversarial image: {adv_path} (label {out.label})")
    return 0


def cmd_campaign(args) -> int:
    cfg = _config(args)
    ds = load_dataset(args.dataset)
    report = run_campaign(ds, _source(args), cfg, parallelism=args.parallelism, method=args.method)
    report.write(args.report_json, args.report_csv)
    agg = report.aggregates
    print(f"attempted {agg['attempted']}, successes {agg['successes']}, "
          f"skipped {agg['skipped']}, errors {agg['errors']}")
    if agg["success_rate"] is not None:
        print(f"success rate {agg['success_rate']:.4f}")
    if agg["avg_queries"] is not None:
        print(f"queries: average {agg['avg_queries']:.1f}, median {agg['median_queries']:g}")
    return 0


def cmd_serve_oracle(args) -> int:
    model = load_model(args.model)
    if args.stdio:
        serve_stream(model, sys.stdin.buffer, sys.stdout.buffer)
        return 0
    try:
        server = OracleServer(model, (args.host, args.port))
    except OSError as exc:
        raise OSError(f"cannot bind {args.host}:{args.port}: {exc}") from None
    print(f"listening on {server.endpoint}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def cmd_gen_fixtures(args) -> int:
    sums = write_fixtures(args.out, args.fixture_seed, check=not args.no_check)
    for name, digest in sums.items():
        print(f"{digest}  {name}")
    return 0


def cmd_verify_core(args) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    results = run_verify_core(args.trials, seed, corrupt=args.corrupt_for_testing)
    for r in results:
        print(r.summary())
        for bad in r.mismatches[:3]:
            print(f"  mismatch: {bad}")
    return 0 if all(r.passed for r in results) else 1


COMMANDS = {
    "attack": cmd_attack,
    "campaign": cmd_campaign,
    "serve-oracle": cmd_serve_oracle,
    "gen-fixtures": cmd_gen_fixtures,
    "verify-core": cmd_verify_core,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (OSError, ValueError, ModelError, DatasetError, RemoteError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
