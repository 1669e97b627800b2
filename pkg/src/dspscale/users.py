"""Per-user root nodes and isolation between users' persistent subgraphs.

Ownership is kept exact: a node's ``owner`` is the user whose root reaches
it, or ``None`` for transient nodes.  ``connect`` claims newly reachable
nodes, and ``disconnect``/``delete_node`` re-derive the affected user's set.
"""

from __future__ import annotations

from typing import TYPE_CHECKING, Iterator

from .errors import IsolationViolation

if TYPE_CHECKING:
    from .graph import Runtime


class RootRegistry:
    """Injective map from user id to that user's root node id."""

    def __init__(self, entries: dict[str, str] | None = None) -> None:
        self._roots: dict[str, str] = {}
        self._users: dict[str, str] = {}
        for user, root in (entries or {}).items():
            self.register(user, root)

    def register(self, user: str, root: str) -> None:
        if user in self._roots:
            raise ValueError(f"user {user!r} already has root {self._roots[user]}")
        if root in self._users:
            raise ValueError(f"node {root} is already the root of {self._users[root]!r}")
        self._roots[user] = root
        self._users[root] = user

    def get(self, user: str) -> str | None:
        return self._roots.get(user)

    def user_of(self, root: str) -> str | None:
        return self._users.get(root)

    def __contains__(self, user: str) -> bool:
        return user in self._roots

    def __len__(self) -> int:
        return len(self._roots)

    def __iter__(self) -> Iterator[str]:
        return iter(sorted(self._roots))

    def items(self) -> list[tuple[str, str]]:
        return sorted(self._roots.items())

    def as_dict(self) -> dict[str, str]:
        return dict(self.items())


def resolve_root(rt: Runtime, user: str) -> str:
    """Return ``user``'s root node, creating it on first use."""
    if not isinstance(user, str) or not user:
        raise ValueError("user id must be a non-empty string")
    root = rt.registry.get(user)
    if root is not None:
        return root
    with rt._lock:
        root = rt.registry.get(user)
        if root is None:
            root = rt.create_node("root")
            rt.nodes[root].owner = user
            rt.registry.register(user, root)
            rt._emit("set_root", user=user, node=root)
    return root


def _closure(rt: Runtime, start: str, stop_owner: str | None) -> Iterator[str]:
    """Nodes reachable from ``start``, not expanding past nodes owned by ``stop_owner``."""
    seen = {start}
    frontier = [start]
    while frontier:
        current = frontier.pop()
        yield current
        if stop_owner is not None and rt.nodes[current].owner == stop_owner:
            continue
        for eid in rt._out[current]:
            dst = rt.edges[eid].destination
            if dst not in seen:
                seen.add(dst)
                frontier.append(dst)


def check_isolation(rt: Runtime, source: str, destination: str) -> IsolationViolation | None:
    """Verdict for a prospective edge ``source -> destination``.

    Returns ``None`` when the edge is allowed, otherwise the (unraised)
    :class:`IsolationViolation`.  An edge from a transient source never
    changes any user's reachable set.  From a node owned by ``u`` the edge
    makes everything reachable from ``destination`` part of ``u``'s subgraph,
    so none of it may belong to another user.
    """
    owner = rt.node(source).owner
    if owner is None:
        return None
    dst_owner = rt.node(destination).owner
    if dst_owner == owner:
        return None
    if dst_owner is not None:
        return IsolationViolation(source, destination, [destination], {source: owner, destination: dst_owner})
    foreign = [n for n in _closure(rt, destination, owner) if rt.nodes[n].owner not in (None, owner)]
    if foreign:
        owners = {source: owner, **{n: rt.nodes[n].owner for n in foreign}}
        return IsolationViolation(source, destination, sorted(foreign), owners)
    return None


def claim(rt: Runtime, source: str, destination: str) -> None:
    owner = rt.nodes[source].owner
    if owner is None:
        return
    # materialise first: _closure stops at nodes the owner already holds
    for nid in list(_closure(rt, destination, owner)):
        rt.nodes[nid].owner = owner


def refresh_owner(rt: Runtime, user: str) -> None:
    """Recompute ownership for ``user`` after edges or nodes were removed."""
    root = rt.registry.get(user)
    reached = rt.reachable(root)[0] if root is not None else set()
    for node in rt.nodes.values():
        if node.owner == user and node.id not in reached:
            node.owner = None
        elif node.id in reached:
            node.owner = user


def refresh_all(rt: Runtime) -> None:
    for user in rt.registry:
        refresh_owner(rt, user)


def audit_disjointness(rt: Runtime) -> list[str]:
    """Node ids reachable from more than one user's root (empty when isolated)."""
    first_seen: dict[str, str] = {}
    shared: set[str] = set()
    for user, root in rt.registry.items():
        for nid in rt.reachable(root)[0]:
            if nid in first_seen and first_seen[nid] != user:
                shared.add(nid)
            first_seen.setdefault(nid, user)
    return sorted(shared, key=lambda n: (n[0], int(n[1:])))
