"""Bundled scenario programs, written against the runtime API.

Each scenario registers its archetypes, abilities and entry points on a
fresh gateway, runs a per-user ``setup`` script once, and then a per-user
``script`` of invocations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from .gateway import Gateway, Param
from .graph import ENTRY, ROOT, Runtime


@dataclass(frozen=True)
class Scenario:
    name: str
    description: str
    build: Callable[[Gateway], None]
    setup: tuple = ()
    script: tuple = ()
    hints: Callable[[Runtime, int], dict] | None = None
    config: dict = field(default_factory=dict)

    def program(self) -> Gateway:
        gateway = Gateway(Runtime())
        self.build(gateway)
        return gateway


# -- counter ------------------------------------------------------------------


def build_counter(gw: Gateway) -> None:
    rt = gw.runtime
    rt.node_archetype("counter")
    rt.walker_archetype("incr", {"amount": 1})

    @rt.ability("incr", ENTRY, filter=ROOT)
    def bump(w, here):
        found = here.outgoing("counter")
        if found:
            counter = found[0]
        else:
            counter = w.create("counter", count=0)
            here.connect(counter)
        counter["count"] = counter["count"] + w["amount"]
        w.result["count"] = counter["count"]

    gw.entrypoint("incr", params=[Param("amount", type="int", required=False)])


# -- social graph -------------------------------------------------------------


def build_social(gw: Gateway) -> None:
    rt = gw.runtime
    rt.node_archetype("person")
    rt.walker_archetype("befriend", {"names": []})
    rt.walker_archetype("friends", {"queued": []})

    @rt.ability("befriend", ENTRY, filter=ROOT)
    def add_people(w, here):
        known = {p["name"]: p for p in here.outgoing("person")}
        added = []
        for name in w["names"]:
            if name in known:
                continue
            person = w.create("person", name=name, views=0)
            here.connect(person, kind="knows")
            known[name] = person
            added.append(person)
        # new people befriend the one added right after them
        for a, b in zip(added, added[1:]):
            a.connect(b, kind="friend")
        w.result["added"] = len(added)

    @rt.ability("friends", ENTRY, filter=ROOT)
    def start(w, here):
        w.result["names"] = []
        people = here.outgoing("person")
        w["queued"] = [p.id for p in people[:1]]
        w.visit_all(people[:1])

    @rt.ability("friends", ENTRY, filter="person")
    def meet(w, here):
        here["views"] = here.get("views", 0) + 1
        w.result["names"] = w.result["names"] + [here["name"]]
        queued = list(w["queued"])
        for friend in here.outgoing("person"):
            if friend.id not in queued:
                queued.append(friend.id)
                w.visit(friend)
        w["queued"] = queued

    gw.entrypoint("befriend", params=[Param("names", type="list")])
    gw.entrypoint("friends", results=[("names", "names")])


# -- chain pipeline -----------------------------------------------------------


def build_chain(gw: Gateway) -> None:
    rt = gw.runtime
    rt.node_archetype("stage")
    rt.walker_archetype("build_chain", {"length": 9})
    rt.walker_archetype("walk_chain", {})

    @rt.ability("build_chain", ENTRY, filter=ROOT)
    def lay(w, here):
        previous = here
        for index in range(1, w["length"] + 1):
            stage = w.create("stage", index=index, hits=0)
            previous.connect(stage)
            previous = stage
        w.result["stages"] = w["length"]

    @rt.ability("walk_chain", ENTRY)
    def touch(w, here):
        here["hits"] = here.get("hits", 0) + 1
        w.result["visited"] = w.result.get("visited", 0) + 1
        w.visit_all(here.outgoing("stage"))

    gw.entrypoint("build_chain", params=[Param("length", type="int", required=False, validator=lambda n: n >= 1)])
    gw.entrypoint("walk_chain")


def chain_hints(rt: Runtime, k: int) -> dict:
    """First half of each chain (root counts as index 0) on machine 0, the rest on machine 1."""
    if k < 2:
        return {}
    hints = {}
    for nid, node in rt.nodes.items():
        if node.archetype == ROOT:
            hints[nid] = 0
        elif node.archetype == "stage":
            hints[nid] = 0 if node.properties.get("index", 0) < 5 else 1
    return hints


# -- star fanout --------------------------------------------------------------


def build_star(gw: Gateway) -> None:
    rt = gw.runtime
    rt.node_archetype("hub")
    rt.node_archetype("leaf")
    rt.walker_archetype("build_star", {"leaves": 50, "blob": 4096})
    rt.walker_archetype("scan", {})

    @rt.ability("build_star", ENTRY, filter=ROOT)
    def grow(w, here):
        hub = w.create("hub")
        here.connect(hub)
        for index in range(w["leaves"]):
            leaf = w.create("leaf", index=index, value=index * 3 % 17, blob="x" * w["blob"])
            hub.connect(leaf)
        w.result["leaves"] = w["leaves"]

    @rt.ability("scan", ENTRY, filter=ROOT)
    def enter(w, here):
        w.result["sum"] = 0
        w.result["read"] = 0
        w.visit_all(here.outgoing("hub"))

    @rt.ability("scan", ENTRY, filter="hub")
    def fan_out(w, here):
        w.visit_all(here.outgoing("leaf"))

    @rt.ability("scan", ENTRY, filter="leaf")
    def read(w, here):
        w.result["sum"] += here["value"]
        w.result["read"] += 1

    gw.entrypoint("build_star", params=[Param("leaves", type="int", required=False), Param("blob", type="int", required=False)])
    gw.entrypoint("scan")


def star_hints(rt: Runtime, k: int) -> dict:
    if k < 2:
        return {}
    return {nid: (1 if node.archetype == "leaf" else 0) for nid, node in rt.nodes.items()}


# -- checkpointed long walk ---------------------------------------------------


def build_long_walk(gw: Gateway) -> None:
    rt = gw.runtime
    rt.node_archetype("cell")
    rt.node_archetype("mark")
    rt.walker_archetype("build_ring", {"length": 24})
    rt.walker_archetype("long_walk", {"every": 6})

    @rt.ability("build_ring", ENTRY, filter=ROOT)
    def lay(w, here):
        previous = here
        for index in range(1, w["length"] + 1):
            cell = w.create("cell", index=index, value=index * 7 % 11)
            previous.connect(cell)
            previous = cell
        w.result["cells"] = w["length"]

    @rt.ability("long_walk", ENTRY)
    def walk(w, here):
        if here.archetype == "mark":
            return
        w.result["total"] = w.result.get("total", 0) + here.get("value", 0)
        here["visits"] = here.get("visits", 0) + 1
        steps = w.result.get("steps", 0) + 1
        w.result["steps"] = steps
        if steps % w["every"] == 0:
            mark = w.create("mark", at=steps, total=w.result["total"])
            here.connect(mark)
        w.visit_all(here.outgoing("cell"))

    gw.entrypoint("build_ring", params=[Param("length", type="int", required=False)])
    gw.entrypoint("long_walk", params=[Param("every", type="int", required=False, validator=lambda n: n >= 1)])


SCENARIOS: dict[str, Scenario] = {
    s.name: s
    for s in (
        Scenario(
            "counter",
            "per-user counter node under the root; persistence and isolation",
            build_counter,
            script=(("incr", {}), ("incr", {}), ("incr", {})),
        ),
        Scenario(
            "social",
            "people and friendships per user; isolated traversal",
            build_social,
            setup=(("befriend", {"names": ["ada", "grace", "alan", "edsger", "barbara"]}),),
            script=(("friends", {}), ("befriend", {"names": ["donald", "ada"]}), ("friends", {})),
        ),
        Scenario(
            "chain",
            "ten-node chain split across machines; migration versus remote access",
            build_chain,
            setup=(("build_chain", {}),),
            script=(("walk_chain", {}), ("walk_chain", {})),
            hints=chain_hints,
        ),
        Scenario(
            "star",
            "hub with 50 large leaves on one remote machine; hybrid choice",
            build_star,
            setup=(("build_star", {}),),
            script=(("scan", {}),),
            hints=star_hints,
        ),
        Scenario(
            "long_walk",
            "checkpointed walk over a 24-cell path, dropping marks",
            build_long_walk,
            setup=(("build_ring", {}),),
            script=(("long_walk", {}),),
            config={"checkpoint": "every_step", "rep_factor": 2},
        ),
    )
}


def get_scenario(name: str) -> Scenario:
    try:
        return SCENARIOS[name]
    except KeyError:
        raise KeyError(f"unknown scenario {name!r}; bundled: {sorted(SCENARIOS)}") from None
