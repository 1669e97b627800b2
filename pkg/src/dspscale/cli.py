"""Command-line driver: run scenarios, serve them over HTTP, bench, verify."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .cluster import ClusterConfig, Mode
from .harness import RunReport, bench, compare, format_table, run
from .persistence import restore
from .scenarios import SCENARIOS, get_scenario
from .server import serve
from .verify import CHECKS, Criterion, report_text, verify

MODES = [m.value for m in Mode]


def _address(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected host:port, got {text!r}")
    try:
        return host or "127.0.0.1", int(port)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad port in {text!r}") from None


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_run(args) -> int:
    config = None
    if args.config:
        config = ClusterConfig.load(args.config).to_dict()
        for key in ("machines", "mode", "seed"):
            config.pop(key)
    report = run(
        args.scenario,
        users=args.users,
        machines=args.machines,
        mode=args.mode,
        seed=args.seed,
        persistent=args.persistent or args.persist is not None,
        persist_path=args.persist,
        faults=args.faults,
        config=config,
        checkpoint_path=args.checkpoints,
    )
    _emit(report.to_json(), args.out)
    for problem in report.errors + report.preservation["violations"]:
        print(f"error: {problem}", file=sys.stderr)
    return 0 if report.ok else 1


def cmd_serve(args) -> int:
    gateway = get_scenario(args.scenario).program()
    if args.persist and Path(args.persist).exists():
        restore(gateway.runtime, args.persist)
    host, port = args.listen
    handle = serve(gateway, host, port, persist=args.persist, background=True)
    print(f"serving {args.scenario} on {handle.url}", flush=True)
    try:
        handle.wait()
    except KeyboardInterrupt:
        pass
    finally:
        handle.close()
    return 0


def cmd_bench(args) -> int:
    rows = bench(args.scenario, args.modes, machines=args.machines, seed=args.seed, users=args.users)
    _emit(format_table(rows, args.format), args.out)
    return 0 if all(r["ok"] for r in rows) else 1


def cmd_verify(args) -> int:
    only = set(args.only) if args.only else None
    report = verify(args.seed, only)
    for doc in report["criteria"]:
        print(Criterion(**doc).line())
    if args.out:
        Path(args.out).write_text(report_text(report), encoding="utf-8")
    print("all criteria passed" if report["passed"] else "some criteria FAILED")
    return 0 if report["passed"] else 1


def cmd_compare(args) -> int:
    verdict = compare(RunReport.load(args.a), RunReport.load(args.b))
    print("equivalent" if verdict else "different")
    for line in verdict.diffs:
        print(f"  {line}")
    return 0 if verdict else 1


def cmd_scenarios(args) -> int:
    for name in sorted(SCENARIOS):
        sc = SCENARIOS[name]
        print(f"{name:10} {sc.description}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dspscale", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log warnings and info to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a scenario and print its report")
    p.add_argument("scenario", choices=sorted(SCENARIOS))
    p.add_argument("--users", type=int, default=1)
    p.add_argument("--machines", type=int, default=1)
    p.add_argument("--mode", choices=MODES, default=Mode.COMPUTATION_CENTRIC.value)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--persist", metavar="PATH", help="snapshot file; implies a snapshot/restore cycle between rounds")
    p.add_argument("--persistent", action="store_true", help="snapshot/restore between rounds using a temp file")
    p.add_argument("--faults", metavar="PLAN", help="JSON list of {event_index, action, machine}")
    p.add_argument("--config", metavar="FILE", help="cluster config JSON (machines, mode and seed come from flags)")
    p.add_argument("--checkpoints", metavar="PATH", help="append walker checkpoints to this JSON-lines file")
    p.add_argument("--out", metavar="FILE")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("serve", help="expose a scenario's entry points over HTTP")
    p.add_argument("--listen", type=_address, default=("127.0.0.1", 8080), metavar="HOST:PORT")
    p.add_argument("--persist", metavar="PATH", help="restore from and snapshot to this file")
    p.add_argument("--scenario", choices=sorted(SCENARIOS), default="counter")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("bench", help="per-mode traffic table")
    p.add_argument("scenario", choices=sorted(SCENARIOS))
    p.add_argument("--modes", nargs="+", choices=MODES, default=MODES)
    p.add_argument("--machines", type=int, default=2)
    p.add_argument("--users", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out", metavar="FILE")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("verify", help="run the acceptance matrix")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--only", type=int, nargs="+", choices=range(1, len(CHECKS) + 1), metavar="N")
    p.add_argument("--out", metavar="FILE", help="write the JSON report here")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("compare", help="compare two run reports")
    p.add_argument("a")
    p.add_argument("b")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("scenarios", help="list bundled scenarios")
    p.set_defaults(func=cmd_scenarios)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (KeyError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
