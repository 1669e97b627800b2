"""The acceptance matrix: ten checks, each against an oracle that does not
share code with the part under test.

``verify(seed)`` returns a report whose JSON form depends only on the seed.
Every check takes size knobs so the unit tests can run it small.
"""

from __future__ import annotations

import itertools
import json
import random
import tempfile
from collections import deque
from dataclasses import asdict, dataclass
from pathlib import Path

from .cluster import Cluster, ClusterConfig, HybridConfig, Mode, Strategy, strategy_for
from .errors import IsolationViolation
from .gateway import STEPS
from .graph import Runtime
from .harness import compare, run
from .partition import cut_size, place_nodes, random_balanced
from .persistence import restore, snapshot
from .scenarios import SCENARIOS
from .users import audit_disjointness

MODES = tuple(m.value for m in Mode)


@dataclass
class Criterion:
    id: int
    name: str
    passed: bool
    detail: dict

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.id:>2} {self.name}: {json.dumps(self.detail, sort_keys=True)}"


def _bfs(adjacency: dict, starts) -> set:
    seen = set(starts)
    queue = deque(seen)
    while queue:
        for d in adjacency.get(queue.popleft(), ()):
            if d not in seen:
                seen.add(d)
                queue.append(d)
    return seen


# 1 -------------------------------------------------------------------------


def persistence_by_reachability(seed: int = 0, graphs: int = 500, max_nodes: int = 10_000) -> Criterion:
    """Random graphs with up to three users; survivors must be exactly the BFS closure of the roots."""
    mismatches = []
    total_nodes = total_survivors = 0
    with tempfile.TemporaryDirectory(prefix="dspscale-verify-") as tmp:
        path = Path(tmp) / "image.json"
        for g in range(graphs):
            rng = random.Random(seed * 1_000_003 + g)
            n = max(1, min(max_nodes, round(10 ** rng.uniform(0, 4))))
            rt = Runtime()
            rt.node_archetype("item")
            ids = [rt.create_node("item", {"i": i}) for i in range(n)]
            adjacency: dict[str, list] = {}
            for _ in range(rng.randint(0, 2 * n)):
                a, b = rng.choice(ids), rng.choice(ids)
                rt.connect(a, b, {"w": rng.randint(0, 9)})
                adjacency.setdefault(a, []).append(b)
            roots = []
            for u in range(rng.randint(1, 3)):
                root = rt.resolve_root(f"u{u}")
                roots.append(root)
                for _ in range(rng.randint(0, 3)):
                    target = rng.choice(ids)
                    try:
                        rt.connect(root, target)
                    except IsolationViolation:
                        continue
                    adjacency.setdefault(root, []).append(target)
            expected = _bfs(adjacency, roots)
            snapshot(rt, path)
            fresh = Runtime()
            restore(fresh, path)
            survivors = set(fresh.nodes)
            total_nodes += len(rt.nodes)
            total_survivors += len(survivors)
            props_ok = all(fresh.nodes[nid].properties == rt.nodes[nid].properties for nid in survivors & expected)
            if survivors != expected or not props_ok:
                mismatches.append(g)
    detail = {
        "graphs": graphs,
        "nodes": total_nodes,
        "survivors": total_survivors,
        "mismatched_graphs": mismatches[:10],
        "mismatches": len(mismatches),
    }
    return Criterion(1, "persistence by reachability", not mismatches, detail)


# 2 -------------------------------------------------------------------------


def preservation(seed: int = 0, users: int = 3, machines: int = 2) -> Criterion:
    per_scenario = {}
    passed = True
    for name in sorted(SCENARIOS):
        report = run(name, users=users, machines=machines, seed=seed, persistent=True)
        info = report.preservation
        per_scenario[name] = {"cycles": info["cycles"], "checked": info["checked"], "violations": len(info["violations"])}
        passed &= not info["violations"] and not report.errors and info["cycles"] > 0
    return Criterion(2, "preservation across snapshot/restore", passed, per_scenario)


# 3 -------------------------------------------------------------------------


class _Shadow:
    """Independent model of the graph: plain adjacency, ownership by BFS."""

    def __init__(self):
        self.edges: dict[str, tuple[str, str]] = {}
        self.roots: dict[str, str] = {}

    def reach(self, extra=None) -> dict[str, set]:
        adjacency: dict[str, list] = {}
        for s, d in list(self.edges.values()) + ([extra] if extra else []):
            adjacency.setdefault(s, []).append(d)
        return {u: _bfs(adjacency, [r]) for u, r in self.roots.items()}

    def crosses(self, extra) -> bool:
        reach = self.reach(extra)
        users = list(reach)
        return any(reach[a] & reach[b] for a, b in itertools.combinations(users, 2))


def isolation(seed: int = 0, sequences: int = 10_000, length: int = 12) -> Criterion:
    ops = commits = cross_attempts = rejected = wrongly_rejected = audit_failures = 0
    for s in range(sequences):
        rng = random.Random(seed * 1_000_003 + s)
        rt = Runtime()
        rt.node_archetype("item")
        shadow = _Shadow()
        for u in ("alice", "bob", "carol"):
            shadow.roots[u] = rt.resolve_root(u)
        nodes = list(shadow.roots.values())
        for _ in range(length):
            ops += 1
            op = rng.choices(("create", "connect", "disconnect", "delete", "set"), weights=(3, 6, 1, 1, 1))[0]
            if op == "create":
                nodes.append(rt.create_node("item", {"v": rng.randint(0, 5)}))
            elif op == "connect" and len(nodes) > 1:
                a, b = rng.choice(nodes), rng.choice(nodes)
                crossing = shadow.crosses((a, b))
                cross_attempts += crossing
                try:
                    eid = rt.connect(a, b)
                except IsolationViolation:
                    rejected += 1
                    wrongly_rejected += not crossing
                    continue
                shadow.edges[eid] = (a, b)
            elif op == "disconnect" and shadow.edges:
                eid = rng.choice(sorted(shadow.edges))
                rt.disconnect(eid)
                del shadow.edges[eid]
            elif op == "delete":
                candidates = [n for n in nodes if n not in shadow.roots.values()]
                if not candidates:
                    continue
                victim = rng.choice(candidates)
                rt.delete_node(victim)
                nodes.remove(victim)
                shadow.edges = {e: sd for e, sd in shadow.edges.items() if victim not in sd}
            elif op == "set":
                rt.set_property(rng.choice(nodes), "v", rng.randint(0, 5))
            else:
                continue
            commits += 1
            reach = shadow.reach()
            shadow_ok = not any(reach[a] & reach[b] for a, b in itertools.combinations(list(reach), 2))
            if audit_disjointness(rt) or not shadow_ok:
                audit_failures += 1
    # every crossing attempt must be rejected, and nothing else
    passed = audit_failures == 0 and rejected == cross_attempts and wrongly_rejected == 0
    detail = {
        "sequences": sequences,
        "operations": ops,
        "committed": commits,
        "cross_user_attempts": cross_attempts,
        "rejected": rejected,
        "wrongly_rejected": wrongly_rejected,
        "audit_failures": audit_failures,
    }
    return Criterion(3, "user isolation fuzz", passed, detail)


# 4 -------------------------------------------------------------------------


def entry_point_protocol(seed: int = 0) -> Criterion:
    single = run("counter", users=1, seed=seed, persistent=True)
    multi = run("counter", users=3, machines=2, seed=seed, persistent=True)
    counts = [inv["result"]["count"] if inv["result"] else None for inv in single.invocations]
    traces = [tuple(inv["trace"]) for report in (single, multi) for inv in report.invocations]
    bad_traces = sum(1 for t in traces if t != STEPS)
    per_user: dict[str, list] = {}
    for inv in multi.invocations:
        per_user.setdefault(inv["user"], []).append(inv["result"]["count"] if inv["result"] else None)
    passed = counts == [1, 2, 3] and bad_traces == 0 and all(v == [1, 2, 3] for v in per_user.values())
    detail = {
        "counts": counts,
        "per_user": per_user,
        "cycles": single.preservation["cycles"],
        "invocations": len(traces),
        "bad_traces": bad_traces,
    }
    return Criterion(4, "entry point protocol", passed, detail)


# 5 -------------------------------------------------------------------------


def distribution_transparency(seed: int = 0, seeds: int = 20, machines=(2, 4), users: int = 1) -> Criterion:
    runs = diffs = broken = 0
    first_diff = None
    for name in sorted(SCENARIOS):
        baseline = run(name, users=users, machines=1, seed=seed)
        for k in machines:
            for mode in MODES:
                for s in range(seeds):
                    report = run(name, users=users, machines=k, mode=mode, seed=seed * 1000 + s, config={"placement": "random"})
                    runs += 1
                    verdict = compare(baseline, report)
                    broken += not report.ok
                    if not verdict:
                        diffs += 1
                        if first_diff is None:
                            first_diff = f"{name} k={k} {mode} seed={s}: {verdict.diffs[0]}"
    detail = {"runs": runs, "diffs": diffs, "unhealthy_runs": broken, "first_diff": first_diff}
    return Criterion(5, "distribution transparency", diffs == 0 and broken == 0, detail)


# 6 -------------------------------------------------------------------------

# one read and one write of ``hits`` per visited node (see the chain scenario)
CHAIN_ACCESSES_PER_NODE = 2


def chain_cost_oracle(path: list, placement: dict, home: int) -> dict:
    """Replay a walk by hand: remote accesses if the walker stays, hops across machines if it moves."""
    remote = sum(CHAIN_ACCESSES_PER_NODE for n in path if placement[n] != home)
    machine_path = [placement[n] for n in path]
    migrations = sum(1 for a, b in zip(machine_path, machine_path[1:]) if a != b)
    return {"data_centric": {"messages": 2 * remote}, "computation_centric": {"migrations": migrations, "messages": migrations}}


def cost_model(seed: int = 0) -> Criterion:
    detail = {}
    passed = True
    for mode in ("computation_centric", "data_centric"):
        report = run("chain", machines=2, mode=mode, seed=seed, script=(("walk_chain", {}),))
        walk = report.invocations[-1]
        placement = report.metrics["placement"]
        oracle = chain_cost_oracle(walk["path"], placement, placement[walk["path"][0]])[mode]
        totals = report.metrics["script_totals"]
        observed = {k: totals[k] for k in oracle}
        detail[mode] = {"observed": observed, "oracle": oracle, "conservation_ok": report.metrics["conservation_ok"]}
        passed &= observed == oracle and report.metrics["conservation_ok"] and len(walk["path"]) == 10
    passed &= detail["computation_centric"]["observed"]["migrations"] == 1
    passed &= detail["data_centric"]["observed"]["messages"] == 20
    # conservation over every bundled scenario, mode and a replicated configuration
    runs = failures = 0
    for name in sorted(SCENARIOS):
        for mode in MODES:
            for rep in (1, 2):
                report = run(name, users=2, machines=3, mode=mode, seed=seed, config={"rep_factor": rep})
                runs += 1
                failures += not report.metrics["conservation_ok"]
    detail["conservation"] = {"runs": runs, "failures": failures}
    return Criterion(6, "cost model", passed and failures == 0, detail)


# 7 -------------------------------------------------------------------------


def strategy_table(seed: int = 0, cases: int = 200, cfg: HybridConfig | None = None) -> list[dict]:
    """Cases labelled by how they were generated, not by evaluating the rule."""
    cfg = cfg or HybridConfig()
    R = cfg.ratio_R
    rng = random.Random(seed)
    kinds = ("node_much_smaller", "walker_much_smaller", "tie", "tie_local", "middle_local", "middle_run", "middle_plain")
    table = []
    for i in range(cases):
        kind = kinds[i % len(kinds)]
        local, run_len = None, 0
        if kind == "node_much_smaller":
            sn = rng.randint(1, 10_000)
            sw = int(sn * R) + rng.randint(0, 100_000)
            local, run_len = rng.choice((None, 0.0, 1.0)), rng.randint(0, 6)
            expected = Strategy.MOVE_DATA
        elif kind == "walker_much_smaller":
            sw = rng.randint(1, 10_000)
            sn = int(sw * R) + rng.randint(0, 100_000)
            local, run_len = rng.choice((None, 0.0, 1.0)), rng.randint(0, 6)
            expected = Strategy.MOVE_COMP
        elif kind == "tie":
            sw = sn = rng.randint(1, 100_000)
            run_len = rng.randint(0, 6)
            expected = Strategy.MOVE_COMP
        elif kind == "tie_local":
            sw = sn = rng.randint(1, 100_000)
            local, run_len = rng.uniform(cfg.locality_pct, 1.0), rng.randint(0, 6)
            expected = Strategy.MOVE_DATA
        else:
            sw = rng.randint(100, 10_000)
            sn = max(1, int(sw * rng.uniform(1 / R * 1.01, R * 0.99)))
            if kind == "middle_local":
                local, run_len = rng.uniform(cfg.locality_pct, 1.0), rng.randint(0, 6)
                expected = Strategy.MOVE_DATA
            elif kind == "middle_run":
                local, run_len = rng.uniform(0, cfg.locality_pct * 0.99), rng.randint(cfg.path_run_len, 8)
                expected = Strategy.MOVE_COMP
            else:
                local, run_len = rng.choice((None, rng.uniform(0, cfg.locality_pct * 0.99))), rng.randint(0, cfg.path_run_len - 1)
                expected = Strategy.MOVE_COMP
        table.append({"kind": kind, "walker_size": sw, "node_size": sn, "local": local, "run": run_len, "expected": expected.value})
    return table


def _sized_choice(walker_bytes: int, node_bytes: int) -> Strategy:
    """choose_strategy on a real two-machine cluster with padded walker and node."""
    rt = Runtime()
    rt.node_archetype("blob")
    rt.walker_archetype("w", {"pad": ""})
    rt.add_ability("w", "entry", lambda w, here: w.visit_all(here.outgoing()), filter="root")
    cluster = Cluster(ClusterConfig(machines=2, mode="hybrid"), rt)
    home = rt.resolve_root("u")
    node = rt.create_node("blob", {"pad": "x" * node_bytes})
    rt.connect(home, node)
    cluster.place(hints={home: 0, node: 1})
    wid = rt.spawn("w", {"pad": "y" * walker_bytes}, at=home, user="u", run=False)
    return cluster.choose_strategy(wid, node)


def hybrid_rule(seed: int = 0, cases: int = 200) -> Criterion:
    cfg = HybridConfig()
    table = strategy_table(seed, cases, cfg)
    mismatches = []
    for i, row in enumerate(table):
        got = strategy_for(row["walker_size"], row["node_size"], row["local"], row["run"], cfg)
        if got.value != row["expected"]:
            mismatches.append(i)
    examples = {
        "node 1KB, walker 1MB": (_sized_choice(1 << 20, 1 << 10).value, Strategy.MOVE_DATA.value),
        "walker 1KB, node 1MB": (_sized_choice(1 << 10, 1 << 20).value, Strategy.MOVE_COMP.value),
    }
    examples_ok = all(got == want for got, want in examples.values())
    kinds = sorted({row["kind"] for row in table})
    detail = {"cases": len(table), "kinds": kinds, "mismatches": mismatches[:10], "examples": examples}
    return Criterion(7, "hybrid strategy rule", not mismatches and examples_ok, detail)


# 8 -------------------------------------------------------------------------


def fault_transparency(seed: int = 0, kills: int = 100, machines: int = 3) -> Criterion:
    config = {"checkpoint": "every_step", "rep_factor": 2}
    baseline = run("long_walk", machines=machines, seed=seed, config=config)
    window = baseline.metrics["script_events"]
    first, hosts = window["first"], window["hosts"]
    rng = random.Random(seed)
    span = range(first, first + len(hosts))
    indices = sorted(rng.sample(span, kills)) if kills <= len(span) else sorted(rng.choice(span) for _ in range(kills))
    diffs = errors = recoveries = 0
    first_problem = None
    for index in indices:
        target = hosts[index - first]
        if target is None:
            target = rng.randrange(machines)
        report = run(
            "long_walk",
            machines=machines,
            seed=seed,
            config=config,
            faults=[{"event_index": index, "action": "kill", "machine": target}],
        )
        verdict = compare(baseline, report)
        recoveries += report.metrics["recoveries"]
        if not verdict or not report.ok:
            diffs += not verdict
            errors += bool(report.errors)
            if first_problem is None:
                first_problem = f"event {index} machine {target}: {(verdict.diffs + report.errors)[:1]}"
    detail = {
        "kills": len(indices),
        "script_events": len(hosts),
        "recoveries": recoveries,
        "diffs": diffs,
        "errors": errors,
        "first_problem": first_problem,
    }
    return Criterion(8, "fault transparency", diffs == 0 and errors == 0, detail)


# 9 -------------------------------------------------------------------------


def two_cliques() -> tuple[list, list]:
    nodes = list(range(6))
    edges = [(a, b) for a, b in itertools.combinations((0, 1, 2), 2)]
    edges += [(a, b) for a, b in itertools.combinations((3, 4, 5), 2)]
    edges.append((2, 3))
    return nodes, edges


def exhaustive_min_cut(nodes: list, edges: list) -> int:
    """Smallest cut over every 2-partition with parts of equal size."""
    half = len(nodes) // 2
    best = None
    for side in itertools.combinations(nodes, half):
        chosen = set(side)
        cut = sum(1 for a, b in edges if (a in chosen) != (b in chosen))
        best = cut if best is None else min(best, cut)
    return best


def partitioner_quality(seed: int = 0, graphs: int = 100, n: int = 20, p: float = 0.2) -> Criterion:
    wins = 0
    for g in range(graphs):
        rng = random.Random(seed * 1_000_003 + g)
        nodes = list(range(n))
        edges = [(a, b) for a, b in itertools.combinations(nodes, 2) if rng.random() < p]
        greedy = cut_size(edges, place_nodes(nodes, edges, 2, seed=g))
        baseline = cut_size(edges, random_balanced(nodes, 2, random.Random(g)))
        wins += greedy <= baseline
    nodes, edges = two_cliques()
    optimum = exhaustive_min_cut(nodes, edges)
    clique_cut = cut_size(edges, place_nodes(nodes, edges, 2, seed=seed))
    share = wins / graphs
    detail = {"graphs": graphs, "greedy_not_worse": wins, "share": share, "two_clique_cut": clique_cut, "two_clique_optimum": optimum}
    return Criterion(9, "partitioner quality", share >= 0.95 and clique_cut == optimum, detail)


# 10 ------------------------------------------------------------------------


def determinism(seed: int = 0) -> Criterion:
    """Two fresh runs of seeded work must serialize to the same bytes."""

    def sample() -> str:
        docs = [
            run(name, users=2, machines=3, mode=mode, seed=seed, config={"placement": "random"}).to_json()
            for name in sorted(SCENARIOS)
            for mode in MODES
        ]
        docs.append(json.dumps(asdict(partitioner_quality(seed, graphs=10)), sort_keys=True))
        docs.append(json.dumps(asdict(fault_transparency(seed, kills=5)), sort_keys=True))
        return "\n".join(docs)

    first, second = sample(), sample()
    return Criterion(10, "determinism", first == second, {"bytes": len(first.encode("utf-8")), "identical": first == second})


CHECKS = (
    persistence_by_reachability,
    preservation,
    isolation,
    entry_point_protocol,
    distribution_transparency,
    cost_model,
    hybrid_rule,
    fault_transparency,
    partitioner_quality,
    determinism,
)


def verify(seed: int = 0, only=None) -> dict:
    """Run the checks (all, or the ids in ``only``) and return the report."""
    results = [check(seed) for i, check in enumerate(CHECKS, start=1) if only is None or i in only]
    return {"seed": seed, "passed": all(r.passed for r in results), "criteria": [asdict(r) for r in results]}


def report_text(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2) + "\n"
