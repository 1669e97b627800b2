import itertools
from collections import deque

import pytest
from hypothesis import given
from hypothesis import strategies as st

from dspscale import Runtime, audit_disjointness, check_isolation
from dspscale.errors import IsolationViolation
from dspscale.users import RootRegistry

from .conftest import chain


def test_resolve_root_idempotent_and_distinct(rt):
    a1, a2 = rt.resolve_root("alice"), rt.resolve_root("alice")
    b = rt.resolve_root("bob")
    assert a1 == a2 and a1 != b
    assert rt.nodes[a1].owner == "alice"
    assert rt.out_edges(a1) == []


def test_resolve_root_rejects_empty_user(rt):
    with pytest.raises(ValueError):
        rt.resolve_root("")


def test_registry_is_injective():
    reg = RootRegistry({"alice": "n1"})
    with pytest.raises(ValueError):
        reg.register("bob", "n1")
    with pytest.raises(ValueError):
        reg.register("alice", "n2")


def test_check_isolation_examples(rt):
    ra, rb = rt.resolve_root("alice"), rt.resolve_root("bob")
    a = rt.create_node("item")
    rt.connect(ra, a)
    assert check_isolation(rt, ra, a) is None
    verdict = check_isolation(rt, a, rb)
    assert isinstance(verdict, IsolationViolation)
    assert verdict.owners == {a: "alice", rb: "bob"}


def test_connect_across_users_raises(rt):
    ra, rb = rt.resolve_root("alice"), rt.resolve_root("bob")
    with pytest.raises(IsolationViolation):
        rt.connect(ra, rb)
    assert rt.out_edges(ra) == []


def test_transient_node_acquires_owner(rt):
    ra = rt.resolve_root("alice")
    ids = chain(rt, 3)
    assert all(rt.nodes[n].owner is None for n in ids)
    assert check_isolation(rt, ra, ids[0]) is None
    rt.connect(ra, ids[0])
    assert [rt.nodes[n].owner for n in ids] == ["alice"] * 3


def test_indirect_conflict_is_caught(rt):
    # t is transient but already points into bob's subgraph
    ra, rb = rt.resolve_root("alice"), rt.resolve_root("bob")
    b = rt.create_node("item")
    rt.connect(rb, b)
    t = rt.create_node("item")
    rt.connect(t, b)
    with pytest.raises(IsolationViolation) as info:
        rt.connect(ra, t)
    assert b in info.value.conflicts


def test_disconnect_releases_ownership(rt):
    ra = rt.resolve_root("alice")
    a, b = chain(rt, 2)
    e = rt.connect(ra, a)
    rt.disconnect(e)
    assert rt.nodes[a].owner is None and rt.nodes[b].owner is None
    rb = rt.resolve_root("bob")
    rt.connect(rb, a)
    assert rt.nodes[b].owner == "bob"


def test_audit_fresh_and_corrupted(rt):
    assert audit_disjointness(rt) == []
    ra, rb = rt.resolve_root("alice"), rt.resolve_root("bob")
    shared = rt.create_node("item")
    rt.connect(ra, shared)
    rt.unsafe_connect(rb, shared)
    assert audit_disjointness(rt) == [shared]


def _reach(edges, root):
    seen, queue = {root}, deque([root])
    while queue:
        x = queue.popleft()
        for s, d in edges:
            if s == x and d not in seen:
                seen.add(d)
                queue.append(d)
    return seen


ops = st.lists(
    st.one_of(
        st.tuples(st.just("create"), st.integers(0, 0), st.integers(0, 0)),
        st.tuples(st.just("connect"), st.integers(0, 30), st.integers(0, 30)),
        st.tuples(st.just("disconnect"), st.integers(0, 30), st.integers(0, 0)),
        st.tuples(st.just("delete"), st.integers(0, 30), st.integers(0, 0)),
    ),
    max_size=40,
)


@given(ops)
def test_isolation_fuzz(sequence):
    rt = Runtime()
    rt.node_archetype("item")
    roots = {u: rt.resolve_root(u) for u in ("alice", "bob", "carol")}
    nodes = list(roots.values())
    for op, x, y in sequence:
        if op == "create":
            nodes.append(rt.create_node("item"))
        elif op == "connect":
            a, b = nodes[x % len(nodes)], nodes[y % len(nodes)]
            edges = [(e.source, e.destination) for e in rt.edges.values()] + [(a, b)]
            reach = {u: _reach(edges, r) for u, r in roots.items()}
            crossing = any(reach[p] & reach[q] for p, q in itertools.combinations(reach, 2))
            try:
                rt.connect(a, b)
                assert not crossing
            except IsolationViolation:
                assert crossing
        elif op == "disconnect" and rt.edges:
            rt.disconnect(sorted(rt.edges)[x % len(rt.edges)])
        elif op == "delete":
            victims = [n for n in nodes if n not in roots.values()]
            if victims:
                v = victims[x % len(victims)]
                rt.delete_node(v)
                nodes.remove(v)
        assert audit_disjointness(rt) == []
        # ownership is exactly "reached from that user's root"
        edges = [(e.source, e.destination) for e in rt.edges.values()]
        for u, r in roots.items():
            assert {n for n, node in rt.nodes.items() if node.owner == u} == _reach(edges, r)
