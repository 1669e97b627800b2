"""Run scenarios at a chosen scale, compare runs, and tabulate costs."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .cluster import Cluster, ClusterConfig, Counters, Mode
from .errors import DSPError
from .graph import id_key
from .persistence import build_image, restore
from .resilience import FaultPlan
from .scenarios import Scenario, get_scenario
from .values import canonical_json, clone, same


@dataclass
class RunReport:
    scenario: str
    scale: dict
    config: dict
    invocations: list
    final_graph: list
    metrics: dict
    preservation: dict
    snapshot: str | None = None
    errors: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors and not self.preservation["violations"] and self.metrics["conservation_ok"]

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["ok"] = self.ok
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, ensure_ascii=False) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "RunReport":
        doc = {k: v for k, v in doc.items() if k != "ok"}
        return cls(**doc)

    @classmethod
    def load(cls, path) -> "RunReport":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def live_reachable(rt) -> tuple[dict, dict]:
    """Copies of every node and edge some root reaches, found by BFS over ``rt.edges``."""
    out: dict[str, list] = {}
    for edge in rt.edges.values():
        out.setdefault(edge.source, []).append(edge)
    nodes, edges = {}, {}
    for _, root in rt.registry.items():
        queue = deque([root])
        seen = {root}
        while queue:
            n = queue.popleft()
            node = rt.nodes[n]
            nodes[n] = (node.archetype, clone(node.properties))
            for edge in out.get(n, ()):
                edges[edge.id] = (edge.source, edge.destination, clone(edge.data))
                if edge.destination not in seen:
                    seen.add(edge.destination)
                    queue.append(edge.destination)
    return nodes, edges


def preservation_violations(expected: tuple[dict, dict], rt) -> list[str]:
    """Elements of ``expected`` (see :func:`live_reachable`) missing or altered in ``rt``."""
    nodes, edges = expected
    problems = []
    for nid in sorted(nodes, key=id_key):
        node = rt.nodes.get(nid)
        if node is None:
            problems.append(f"node {nid} lost")
        elif not same((node.archetype, node.properties), nodes[nid]):
            problems.append(f"node {nid} changed")
    for eid in sorted(edges, key=id_key):
        edge = rt.edges.get(eid)
        if edge is None:
            problems.append(f"edge {eid} lost")
        elif not same((edge.source, edge.destination, edge.data), edges[eid]):
            problems.append(f"edge {eid} changed")
    return problems


def _user_ids(n: int) -> list[str]:
    return [f"user{i}" for i in range(n)]


def run(
    scenario: Scenario | str,
    *,
    users: int = 1,
    machines: int = 1,
    mode: str = Mode.COMPUTATION_CENTRIC.value,
    seed: int = 0,
    persistent: bool = False,
    persist_path: str | os.PathLike | None = None,
    faults=None,
    config: dict | None = None,
    script: tuple | None = None,
    checkpoint_path=None,
) -> RunReport:
    """Run ``scenario``'s setup and script for each user and report.

    Setup calls run once per user, then nodes are placed, then every script
    call runs for every user in turn.  With ``persistent`` the graph is
    snapshotted and restored into a fresh runtime after setup and after each
    script round.
    """
    sc = get_scenario(scenario) if isinstance(scenario, str) else scenario
    settings = {**sc.config, **(config or {}), "machines": machines, "mode": mode, "seed": seed}
    cfg = ClusterConfig.from_dict(settings)
    if isinstance(faults, (str, os.PathLike)):
        faults = FaultPlan.load(faults)
    gateway = sc.program()
    cluster = Cluster(cfg, gateway.runtime, faults, checkpoint_path)
    who = _user_ids(users)
    invocations: list[dict] = []
    errors: list[str] = []
    violations: list[str] = []
    cycles = 0
    checked = [0]

    tmp = None
    if persistent and persist_path is None:
        tmp = tempfile.TemporaryDirectory(prefix="dspscale-")
        path = Path(tmp.name) / "image.json"
    else:
        path = Path(persist_path) if persist_path is not None else None

    def call(phase: str, user: str, entry: str, params: dict) -> None:
        record = {"phase": phase, "user": user, "entrypoint": entry, "params": params}
        try:
            inv = gateway.call(user, entry, params)
            record.update(result=inv.result, error=None, path=inv.path, trace=inv.trace)
        except DSPError as exc:
            message = f"{type(exc).__name__}: {exc}"
            record.update(result=None, error=message, path=[], trace=[])
            errors.append(f"{phase} {user} {entry}: {message}")
        invocations.append(record)

    def cycle() -> None:
        nonlocal gateway, cycles
        with gateway.quiescent() as rt:
            expected = live_reachable(rt)
        gateway.snapshot(path)
        fresh = sc.program()
        restore(fresh.runtime, path)
        cluster.attach(fresh.runtime)
        checked[0] += len(expected[0]) + len(expected[1])
        violations.extend(f"cycle {cycles}: {v}" for v in preservation_violations(expected, fresh.runtime))
        gateway = fresh
        cycles += 1

    try:
        for user in who:
            for entry, params in sc.setup:
                call("setup", user, entry, params)
        if persistent:
            cycle()
        hints = sc.hints(gateway.runtime, machines) if sc.hints is not None else None
        cluster.place(hints=hints)
        before = cluster.totals()
        first_event = cluster.events
        for entry, params in sc.script if script is None else script:
            for user in who:
                call("script", user, entry, params)
            if persistent:
                cycle()
        if path is not None and not persistent:
            gateway.snapshot(path)
    finally:
        if tmp is not None:
            tmp.cleanup()

    metrics = cluster.report()
    script_totals = cluster.totals()
    for name, value in asdict(before).items():
        setattr(script_totals, name, getattr(script_totals, name) - value)
    metrics["script_totals"] = script_totals.as_dict()
    # where the acting walker was at each script-phase event; fault plans aim at these
    metrics["script_events"] = {"first": first_event, "hosts": cluster.event_hosts[first_event:]}
    return RunReport(
        scenario=sc.name,
        scale={"users": users, "machines": machines, "persistent": persistent},
        config=cfg.to_dict(),
        invocations=invocations,
        final_graph=build_image(gateway.runtime).users,
        metrics=metrics,
        preservation={"cycles": cycles, "checked": checked[0], "violations": violations},
        snapshot=None if tmp is not None or path is None else str(path),
        errors=errors,
    )


# -- comparison ---------------------------------------------------------------


@dataclass
class Comparison:
    equivalent: bool
    diffs: list

    def __bool__(self) -> bool:
        return self.equivalent


def _labels(graph: list) -> dict[str, str]:
    """Id-independent names: per user, BFS order from the root, edges in id order."""
    labels = {}
    for section in sorted(graph, key=lambda s: s["user"]):
        out: dict[str, list] = {}
        for e in sorted(section["edges"], key=lambda e: id_key(e["id"])):
            out.setdefault(e["source"], []).append(e["destination"])
        order = [section["root"]]
        seen = {section["root"]}
        queue = deque(order)
        while queue:
            n = queue.popleft()
            for d in out.get(n, ()):
                if d not in seen:
                    seen.add(d)
                    order.append(d)
                    queue.append(d)
        for i, n in enumerate(order):
            labels[n] = f"{section['user']}#{i}"
    return labels


def _canonical_graph(graph: list, labels: dict) -> dict:
    out = {}
    for section in graph:
        nodes = {labels[n["id"]]: (n["id"], n["archetype"], n["properties"]) for n in section["nodes"]}
        edges = sorted(
            (labels[e["source"]], labels[e["destination"]], canonical_json(e["data"])) for e in section["edges"]
        )
        out[section["user"]] = (nodes, edges)
    return out


def _path_labels(path: list, labels: dict, extra: dict) -> list[str]:
    named = []
    for n in path:
        if n not in labels and n not in extra:
            extra[n] = f"~{len(extra)}"
        named.append(labels.get(n) or extra[n])
    return named


def compare(a: RunReport | dict, b: RunReport | dict) -> Comparison:
    """Same results, walker paths and persistent graphs, up to node id renaming."""
    a = a.to_dict() if isinstance(a, RunReport) else a
    b = b.to_dict() if isinstance(b, RunReport) else b
    diffs: list[str] = []
    if a["scenario"] != b["scenario"]:
        diffs.append(f"scenario {a['scenario']!r} != {b['scenario']!r}")
    la, lb = _labels(a["final_graph"]), _labels(b["final_graph"])
    ga, gb = _canonical_graph(a["final_graph"], la), _canonical_graph(b["final_graph"], lb)

    for user in sorted(set(ga) | set(gb)):
        if user not in ga or user not in gb:
            diffs.append(f"user {user} only in {'first' if user in ga else 'second'} run")
            continue
        (na, ea), (nb, eb) = ga[user], gb[user]
        for label in sorted(set(na) | set(nb)):
            if label not in na or label not in nb:
                diffs.append(f"node {label} only in {'first' if label in na else 'second'} run")
                continue
            (ida, arch_a, pa), (idb, arch_b, pb) = na[label], nb[label]
            where = f"node {label} ({ida} vs {idb})"
            if arch_a != arch_b:
                diffs.append(f"{where}: archetype {arch_a!r} != {arch_b!r}")
            for key in sorted(set(pa) | set(pb)):
                if key not in pa or key not in pb or not same(pa[key], pb[key]):
                    diffs.append(f"{where} property {key!r}: {pa.get(key, '<absent>')!r} != {pb.get(key, '<absent>')!r}")
        if ea != eb:
            only_a = sorted(set(ea) - set(eb))
            only_b = sorted(set(eb) - set(ea))
            diffs.append(f"user {user} edges differ: first only {only_a[:5]}, second only {only_b[:5]}")

    ia, ib = a["invocations"], b["invocations"]
    if len(ia) != len(ib):
        diffs.append(f"{len(ia)} invocations != {len(ib)}")
    xa, xb = {}, {}
    for i, (ra, rb) in enumerate(zip(ia, ib)):
        tag = f"invocation {i} ({ra['user']} {ra['entrypoint']})"
        for key in ("user", "entrypoint", "params", "error"):
            if not same(ra.get(key), rb.get(key)):
                diffs.append(f"{tag}: {key} {ra.get(key)!r} != {rb.get(key)!r}")
        if not same(ra.get("result"), rb.get("result")):
            diffs.append(f"{tag}: result {ra.get('result')!r} != {rb.get('result')!r}")
        pa, pb = _path_labels(ra.get("path", []), la, xa), _path_labels(rb.get("path", []), lb, xb)
        if pa != pb:
            diffs.append(f"{tag}: path {pa} != {pb}")
    return Comparison(not diffs, diffs)


# -- cost table ---------------------------------------------------------------

BENCH_COLUMNS = ("scenario", "mode", "machines", "messages", "remote_accesses", "migrations", "replication_messages", "modeled_latency")


def bench(scenario: Scenario | str, modes=None, *, machines: int = 2, seed: int = 0, users: int = 1) -> list[dict]:
    """Script-phase traffic per distribution mode."""
    modes = [m.value for m in Mode] if modes is None else list(modes)
    rows = []
    for mode in modes:
        report = run(scenario, users=users, machines=machines, mode=mode, seed=seed)
        totals = report.metrics["script_totals"]
        row = {"scenario": report.scenario, "mode": mode, "machines": machines}
        row.update({k: totals[k] for k in Counters().as_dict()})
        row["modeled_latency"] = round(row["modeled_latency"], 6)
        row["ok"] = report.ok
        rows.append(row)
    return rows


def format_table(rows: list[dict], fmt: str = "csv") -> str:
    if fmt == "json":
        return json.dumps(rows, sort_keys=True, indent=2) + "\n"
    if fmt != "csv":
        raise ValueError(f"unknown table format {fmt!r}")
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=list(BENCH_COLUMNS), extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buffer.getvalue()
