from collections import deque

import pytest
from hypothesis import given
from hypothesis import strategies as st

from dspscale import ENTRY, EXIT, Runtime, Status
from dspscale.errors import NoSuchEdge, NoSuchNode, UnknownArchetype, WalkerFault, WalkerStateError
from dspscale.graph import Walker

from .conftest import chain


def test_create_node_round_trip(rt):
    rt.node_archetype("counter")
    nid = rt.create_node("counter", {"count": 0})
    assert rt.properties(nid) == {"count": 0}
    assert rt.nodes[nid].owner is None


def test_no_default_properties(rt):
    rt.node_archetype("counter")
    nid = rt.create_node("counter", {})
    assert rt.get_property(nid, "count", None) is None
    with pytest.raises(KeyError):
        rt.get_property(nid, "count")


def test_thousand_distinct_ids(rt):
    assert len({rt.create_node("item") for _ in range(1000)}) == 1000


def test_ids_not_reused_after_delete(rt):
    a = rt.create_node("item")
    rt.delete_node(a)
    assert rt.create_node("item") != a


def test_unknown_archetype(rt):
    with pytest.raises(UnknownArchetype):
        rt.create_node("nope")
    with pytest.raises(UnknownArchetype):
        rt.spawn("nope", at=rt.create_node("item"))


def test_connect_and_self_loop(rt):
    a, b = rt.create_node("item"), rt.create_node("item")
    rt.connect(a, b)
    assert rt.outgoing(a) == [b]
    rt.connect(a, a)
    assert a in rt.outgoing(a)


def test_connect_missing_endpoint(rt):
    a = rt.create_node("item")
    with pytest.raises(NoSuchNode):
        rt.connect(a, "n999")


def test_values_are_checked(rt):
    a = rt.create_node("item")
    with pytest.raises(TypeError):
        rt.set_property(a, "x", float("nan"))
    with pytest.raises(TypeError):
        rt.set_property(a, "x", {1: "int key"})
    with pytest.raises(TypeError):
        rt.set_property(a, "x", object())


def test_spawn_at_isolated_node_completes(rt):
    a = rt.create_node("item")
    wid = rt.spawn("w", at=a)
    w = rt.walker(wid)
    assert w.status is Status.COMPLETED
    assert w.path == [a]
    assert w.location is None and not w.queue


def _walk_all(rt):
    rt.add_ability("w", ENTRY, lambda w, here: w.visit_all(here.outgoing()))


def test_chain_walk_path(rt):
    _walk_all(rt)
    ids = chain(rt, 3)
    wid = rt.spawn("w", at=ids[0])
    assert rt.walker(wid).path == ids


def test_disengage_at_first_node(rt):
    ids = chain(rt, 3)

    def stop(w, here):
        w.visit_all(here.outgoing())
        w.result["seen"] = here.id
        w.disengage()

    rt.add_ability("w", ENTRY, stop)
    w = rt.walker(rt.spawn("w", at=ids[0]))
    assert w.status is Status.DISENGAGED
    assert not w.queue and w.path == ids[:1]
    assert w.result == {"seen": ids[0]}


def test_visit_is_fifo_and_keeps_duplicates(rt):
    a, b, c = (rt.create_node("item") for _ in range(3))
    rt.connect(a, b)
    rt.connect(a, c)
    wid = rt.spawn("w", at=a, run=False)
    # spawned without abilities: arrival processed, nothing queued, so it finished
    assert rt.walker(wid).status is Status.COMPLETED

    wid = rt.new_walker("w")
    w = rt.walker(wid)
    w.status, w.location, w.started = Status.ACTIVE, a, True
    w.path.append(a)
    rt.visit(wid, b)
    rt.visit(wid, c)
    rt.visit(wid, b)
    assert list(w.queue) == [b, c, b]


def test_visit_requires_an_edge_in_direction(rt):
    a, b = rt.create_node("item"), rt.create_node("item")
    rt.connect(b, a)
    rt.add_ability("w", ENTRY, lambda w, here: w.visit(b))
    with pytest.raises(WalkerFault) as info:
        rt.spawn("w", at=a)
    assert isinstance(info.value.cause, NoSuchEdge)


def test_step_by_step(rt):
    _walk_all(rt)
    a, b = chain(rt, 2)
    wid = rt.spawn("w", at=a, run=False)
    w = rt.walker(wid)
    assert w.status is Status.ACTIVE and list(w.queue) == [b]
    assert rt.step(wid) is Status.COMPLETED
    assert not w.queue
    with pytest.raises(WalkerStateError):
        rt.step(wid)


def test_disengage_twice(rt):
    a = rt.create_node("item")
    rt.connect(a, a)
    rt.add_ability("w", ENTRY, lambda w, here: w.visit(here))
    wid = rt.spawn("w", at=a, run=False)
    rt.disengage(wid)
    with pytest.raises(WalkerStateError):
        rt.disengage(wid)


def test_disengage_mid_traversal_skips_rest(rt):
    ids = chain(rt, 5)
    seen = []

    def body(w, here):
        seen.append(here.id)
        if here["i"] == 2:
            w.disengage()
            return
        w.visit_all(here.outgoing())

    rt.add_ability("w", ENTRY, body)
    rt.add_ability("w", EXIT, lambda w, here: seen.append(("exit", here.id)))
    w = rt.walker(rt.spawn("w", at=ids[0]))
    assert w.status is Status.DISENGAGED
    assert seen == [ids[0], ("exit", ids[0]), ids[1], ("exit", ids[1]), ids[2]]


def test_no_ability_after_disengage(rt):
    a = rt.create_node("item")
    log = []
    rt.add_ability("item", ENTRY, lambda w, here: (log.append("node"), w.disengage()))
    rt.add_ability("w", ENTRY, lambda w, here: log.append("walker"))
    rt.spawn("w", at=a)
    assert log == ["node"]


def test_ability_error_becomes_walker_fault(rt):
    a = rt.create_node("item")

    def boom(w, here):
        raise ZeroDivisionError("x")

    rt.add_ability("w", ENTRY, boom)
    with pytest.raises(WalkerFault) as info:
        rt.spawn("w", at=a)
    assert info.value.ability == "boom"
    assert isinstance(info.value.cause, ZeroDivisionError)
    assert rt.walker(info.value.walker).status is Status.DISENGAGED


def test_filters(rt):
    rt.node_archetype("other")
    rt.walker_archetype("v", {})
    a = rt.create_node("item")
    b = rt.create_node("other")
    rt.connect(a, b)
    log = []
    rt.add_ability("item", ENTRY, lambda w, here: log.append("item/any"))
    rt.add_ability("item", ENTRY, lambda w, here: log.append("item/v"), filter="v")
    rt.add_ability("w", ENTRY, lambda w, here: log.append(f"w@{here.archetype}"), filter="other")
    rt.add_ability("w", ENTRY, lambda w, here: w.visit_all(here.outgoing()))
    rt.spawn("w", at=a)
    assert log == ["item/any", "w@other"]


def test_walker_state_round_trip(rt):
    ids = chain(rt, 4)
    rt.walker_archetype("q", {"n": 1})
    rt.add_ability("q", ENTRY, lambda w, here: w.visit_all(here.outgoing()) if here["i"] == 0 else None)
    wid = rt.spawn("q", at=ids[0], run=False)
    w = rt.walker(wid)
    copy = Walker.from_state(w.state())
    assert copy == w
    assert copy.state() == w.state()


# -- dispatch order against an independent interpreter ------------------------

ARCHETYPES = ("red", "blue")


def _program(rt, log):
    for a in ARCHETYPES:
        rt.node_archetype(a)
    rt.walker_archetype("probe", {})
    for host in ARCHETYPES + ("probe",):
        for trigger in (ENTRY, EXIT):
            for k in range(2):
                tag = f"{host}.{trigger}.{k}"
                rt.add_ability(host, trigger, lambda w, here, tag=tag: log.append((tag, here.id)))
    # declared last, so it runs after the other walker-hosted entry abilities
    rt.add_ability("probe", ENTRY, lambda w, here: w.visit_all(n for n in here.outgoing() if n.id not in w["seen"]))
    rt.add_ability("probe", ENTRY, lambda w, here: w.__setitem__("seen", w["seen"] + [h.id for h in here.outgoing()]))


def _oracle(nodes, edges, start):
    """Expected (event log, path): hand-written from the documented dispatch order."""
    out = {}
    for s, d in edges:
        out.setdefault(s, []).append(d)

    def entry(n):
        arch = nodes[n]
        return [(f"{arch}.entry.0", n), (f"{arch}.entry.1", n), ("probe.entry.0", n), ("probe.entry.1", n)]

    def exit_(n):
        arch = nodes[n]
        return [(f"{arch}.exit.0", n), (f"{arch}.exit.1", n), ("probe.exit.0", n), ("probe.exit.1", n)]

    log, path = [], [start]
    seen = [start]
    queue = deque()
    log += entry(start)
    queue.extend(d for d in out.get(start, []) if d not in seen)
    seen += out.get(start, [])
    here = start
    while queue:
        nxt = queue.popleft()
        log += exit_(here)
        here = nxt
        path.append(here)
        log += entry(here)
        queue.extend(d for d in out.get(here, []) if d not in seen)
        seen += out.get(here, [])
    return log, path


@st.composite
def small_graphs(draw):
    n = draw(st.integers(1, 8))
    colours = draw(st.lists(st.sampled_from(ARCHETYPES), min_size=n, max_size=n))
    edges = draw(st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=3 * n))
    return colours, edges


@given(small_graphs())
def test_dispatch_order_matches_interpreter(graph):
    colours, edges = graph
    log = []
    rt = Runtime()
    _program(rt, log)
    ids = [rt.create_node(c) for c in colours]
    for s, d in edges:
        rt.connect(ids[s], ids[d])
    wid = rt.spawn("probe", {"seen": [ids[0]]}, at=ids[0])
    expected_log, expected_path = _oracle({ids[i]: c for i, c in enumerate(colours)}, [(ids[s], ids[d]) for s, d in edges], ids[0])
    assert rt.walker(wid).path == expected_path
    assert log == expected_log


def test_dispatch_order_frozen_example():
    # red -> blue, one hop; values worked out by hand
    log = []
    rt = Runtime()
    _program(rt, log)
    a, b = rt.create_node("red"), rt.create_node("blue")
    rt.connect(a, b)
    rt.spawn("probe", {"seen": [a]}, at=a)
    assert [tag for tag, _ in log] == [
        "red.entry.0", "red.entry.1", "probe.entry.0", "probe.entry.1",
        "red.exit.0", "red.exit.1", "probe.exit.0", "probe.exit.1",
        "blue.entry.0", "blue.entry.1", "probe.entry.0", "probe.entry.1",
    ]


@given(small_graphs())
def test_runs_are_deterministic(graph):
    colours, edges = graph

    def once():
        log = []
        rt = Runtime()
        _program(rt, log)
        ids = [rt.create_node(c, {"k": i}) for i, c in enumerate(colours)]
        for s, d in edges:
            rt.connect(ids[s], ids[d])
        w = rt.walker(rt.spawn("probe", {"seen": [ids[0]]}, at=ids[0]))
        return log, w.path, w.result, {n: x.properties for n, x in rt.nodes.items()}

    assert once() == once()


@given(small_graphs())
def test_reachable_matches_bfs(graph):
    colours, edges = graph
    rt = Runtime()
    for a in ARCHETYPES:
        rt.node_archetype(a)
    ids = [rt.create_node(c) for c in colours]
    for s, d in edges:
        rt.connect(ids[s], ids[d])
    seen, queue = {ids[0]}, deque([ids[0]])
    while queue:
        x = queue.popleft()
        for s, d in edges:
            if ids[s] == x and ids[d] not in seen:
                seen.add(ids[d])
                queue.append(ids[d])
    nodes, reached_edges = rt.reachable(ids[0])
    assert nodes == seen
    assert reached_edges == {e.id for e in rt.edges.values() if e.source in seen}
