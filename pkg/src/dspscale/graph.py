"""In-memory node/edge graph and the walker execution engine.

Ability dispatch order is fixed and total:

1. exit abilities at the departed node, node-hosted before walker-hosted;
2. entry abilities at the arrived node, node-hosted before walker-hosted;

and declaration order within each host.  Nothing runs once a walker has
disengaged.
"""

from __future__ import annotations

import enum
import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable

from . import users
from .errors import (
    NoSuchEdge,
    NoSuchNode,
    NoSuchWalker,
    UnknownArchetype,
    WalkerFault,
    WalkerLost,
    WalkerStateError,
)
from .values import check_value, checked_map, clone

ENTRY = "entry"
EXIT = "exit"
WILDCARD = "*"
ROOT = "root"

_MISSING = object()


class Status(str, enum.Enum):
    CREATED = "created"
    ACTIVE = "active"
    COMPLETED = "completed"
    DISENGAGED = "disengaged"


def id_key(ident: str) -> tuple[str, int]:
    """Sort key giving creation order for ids such as ``n12``."""
    return ident[0], int(ident[1:])


@dataclass
class Node:
    id: str
    archetype: str
    properties: dict
    owner: str | None = None


@dataclass
class Edge:
    id: str
    source: str
    destination: str
    data: dict


@dataclass
class Walker:
    id: str
    archetype: str
    properties: dict
    user: str | None = None
    queue: deque = field(default_factory=deque)
    location: str | None = None
    status: Status = Status.CREATED
    path: list = field(default_factory=list)
    result: dict = field(default_factory=dict)
    steps: int = 0
    started: bool = False
    # not part of the serialized state
    lost: bool = field(default=False, compare=False)
    executing: bool = field(default=False, compare=False)
    op_index: int = field(default=0, compare=False)

    def state(self) -> dict:
        """Properties plus execution context, as plain values."""
        check_value(self.properties, f"walker {self.id} properties")
        check_value(self.result, f"walker {self.id} result")
        return {
            "id": self.id,
            "archetype": self.archetype,
            "user": self.user,
            "properties": clone(self.properties),
            "result": clone(self.result),
            "context": {
                "queue": list(self.queue),
                "location": self.location,
                "status": self.status.value,
                "path": list(self.path),
                "steps": self.steps,
                "started": self.started,
            },
        }

    def load_state(self, state: dict) -> None:
        if state["id"] != self.id:
            raise ValueError(f"state belongs to walker {state['id']}, not {self.id}")
        ctx = state["context"]
        self.archetype = state["archetype"]
        self.user = state["user"]
        self.properties = clone(state["properties"])
        self.result = clone(state["result"])
        self.queue = deque(ctx["queue"])
        self.location = ctx["location"]
        self.status = Status(ctx["status"])
        self.path = list(ctx["path"])
        self.steps = ctx["steps"]
        self.started = ctx["started"]
        self.op_index = 0

    @classmethod
    def from_state(cls, state: dict) -> "Walker":
        walker = cls(state["id"], state["archetype"], {})
        walker.load_state(state)
        return walker


@dataclass(frozen=True)
class Ability:
    host: str
    trigger: str
    body: Callable[["WalkerContext", "NodeHandle"], Any]
    filter: str = WILDCARD
    name: str = ""


class Runtime:
    """A graph of nodes and edges plus the walkers that traverse it.

    ``cluster`` may be set to a :class:`dspscale.cluster.Cluster`; the engine
    then routes node access, traversal and step boundaries through it.
    """

    def __init__(self) -> None:
        self.nodes: dict[str, Node] = {}
        self.edges: dict[str, Edge] = {}
        self.walkers: dict[str, Walker] = {}
        self.registry = users.RootRegistry()
        self.cluster = None
        self.observers: list[Callable[[str, dict], None]] = []
        self._out: dict[str, list[str]] = {}
        self._in: dict[str, list[str]] = {}
        self._node_archetypes: set[str] = {ROOT}
        self._walker_archetypes: dict[str, dict] = {}
        self._abilities: dict[tuple[str, str], list[Ability]] = {}
        self._counters = {"n": 0, "e": 0, "w": 0}
        self._lock = threading.RLock()

    # -- archetypes and abilities -------------------------------------------

    def node_archetype(self, name: str) -> str:
        if name in self._walker_archetypes:
            raise ValueError(f"{name!r} is already a walker archetype")
        self._node_archetypes.add(name)
        return name

    def walker_archetype(self, name: str, fields: dict | None = None) -> str:
        """Register a walker class; ``fields`` are its declared properties and defaults."""
        if name in self._node_archetypes:
            raise ValueError(f"{name!r} is already a node archetype")
        self._walker_archetypes[name] = checked_map(fields, f"walker {name} fields")
        return name

    def is_node_archetype(self, name: str) -> bool:
        return name in self._node_archetypes

    def walker_fields(self, name: str) -> dict:
        try:
            return clone(self._walker_archetypes[name])
        except KeyError:
            raise UnknownArchetype(f"unknown walker archetype {name!r}") from None

    def add_ability(self, host: str, trigger: str, body: Callable, filter: str = WILDCARD) -> Ability:
        if trigger not in (ENTRY, EXIT):
            raise ValueError(f"trigger must be {ENTRY!r} or {EXIT!r}")
        if host not in self._node_archetypes and host not in self._walker_archetypes:
            raise UnknownArchetype(f"unknown archetype {host!r}")
        ability = Ability(host, trigger, body, filter, getattr(body, "__name__", repr(body)))
        self._abilities.setdefault((host, trigger), []).append(ability)
        return ability

    def ability(self, host: str, trigger: str = ENTRY, filter: str = WILDCARD):
        """Decorator form of :meth:`add_ability`."""

        def register(body):
            self.add_ability(host, trigger, body, filter)
            return body

        return register

    # -- identifiers and observers ------------------------------------------

    def _new_id(self, kind: str) -> str:
        self._counters[kind] += 1
        return f"{kind}{self._counters[kind]}"

    def _bump_counter(self, ident: str) -> None:
        kind, number = id_key(ident)
        self._counters[kind] = max(self._counters[kind], number)

    def _emit(self, op: str, **args) -> None:
        for observer in self.observers:
            observer(op, args)

    # -- nodes and edges ----------------------------------------------------

    def create_node(self, archetype: str, properties: dict | None = None) -> str:
        if archetype not in self._node_archetypes:
            raise UnknownArchetype(f"unknown node archetype {archetype!r}")
        props = checked_map(properties, f"{archetype} properties")
        with self._lock:
            nid = self._new_id("n")
            self._insert_node(Node(nid, archetype, props))
            self._emit("create_node", id=nid, archetype=archetype, properties=clone(props))
        return nid

    def _insert_node(self, node: Node) -> None:
        self.nodes[node.id] = node
        self._out[node.id] = []
        self._in[node.id] = []
        self._bump_counter(node.id)

    def node(self, nid: str) -> Node:
        try:
            return self.nodes[nid]
        except KeyError:
            raise NoSuchNode(f"no node {nid}") from None

    def edge(self, eid: str) -> Edge:
        try:
            return self.edges[eid]
        except KeyError:
            raise NoSuchEdge(f"no edge {eid}") from None

    def properties(self, nid: str) -> dict:
        return clone(self.node(nid).properties)

    def get_property(self, nid: str, key: str, default: Any = _MISSING):
        props = self.node(nid).properties
        if key in props:
            return clone(props[key])
        if default is _MISSING:
            raise KeyError(key)
        return default

    def set_property(self, nid: str, key: str, value: Any) -> None:
        check_value(value, f"{nid}.{key}")
        with self._lock:
            self.node(nid).properties[key] = clone(value)
            self._emit("set_property", node=nid, key=key, value=clone(value))

    def connect(self, source: str, destination: str, data: dict | None = None) -> str:
        payload = checked_map(data, "edge data")
        with self._lock:
            self.node(source)
            self.node(destination)
            violation = users.check_isolation(self, source, destination)
            if violation is not None:
                raise violation
            eid = self._new_id("e")
            self._insert_edge(Edge(eid, source, destination, payload))
            users.claim(self, source, destination)
            self._emit("connect", id=eid, source=source, destination=destination, data=clone(payload))
        return eid

    def _insert_edge(self, edge: Edge) -> None:
        self.edges[edge.id] = edge
        self._out[edge.source].append(edge.id)
        self._in[edge.destination].append(edge.id)
        self._bump_counter(edge.id)

    def unsafe_connect(self, source: str, destination: str, data: dict | None = None) -> str:
        """Add an edge without the isolation check or ownership update (test hook)."""
        with self._lock:
            self.node(source)
            self.node(destination)
            eid = self._new_id("e")
            self._insert_edge(Edge(eid, source, destination, checked_map(data, "edge data")))
        return eid

    def disconnect(self, eid: str) -> None:
        with self._lock:
            edge = self.edge(eid)
            self._remove_edge(edge)
            owner = self.nodes[edge.source].owner
            if owner is not None:
                users.refresh_owner(self, owner)
            self._emit("disconnect", id=eid)

    def _remove_edge(self, edge: Edge) -> None:
        del self.edges[edge.id]
        self._out[edge.source].remove(edge.id)
        self._in[edge.destination].remove(edge.id)

    def delete_node(self, nid: str) -> None:
        with self._lock:
            node = self.node(nid)
            if self.registry.user_of(nid) is not None:
                raise ValueError(f"{nid} is a root node")
            for eid in list(self._out[nid]) + list(self._in[nid]):
                if eid in self.edges:
                    self._remove_edge(self.edges[eid])
            del self.nodes[nid], self._out[nid], self._in[nid]
            if node.owner is not None:
                users.refresh_owner(self, node.owner)
            self._emit("delete_node", id=nid)

    def out_edges(self, nid: str) -> list[Edge]:
        self.node(nid)
        return [self.edges[e] for e in self._out[nid]]

    def in_edges(self, nid: str) -> list[Edge]:
        self.node(nid)
        return [self.edges[e] for e in self._in[nid]]

    def outgoing(self, nid: str) -> list[str]:
        return [e.destination for e in self.out_edges(nid)]

    def has_edge(self, source: str, destination: str) -> bool:
        return any(self.edges[e].destination == destination for e in self._out.get(source, ()))

    def reachable(self, root: str) -> tuple[set[str], set[str]]:
        """Nodes and edges reachable from ``root`` along edge direction."""
        self.node(root)
        seen = {root}
        edges: set[str] = set()
        frontier = [root]
        while frontier:
            current = frontier.pop()
            for eid in self._out[current]:
                edges.add(eid)
                dst = self.edges[eid].destination
                if dst not in seen:
                    seen.add(dst)
                    frontier.append(dst)
        return seen, edges

    # -- users --------------------------------------------------------------

    def resolve_root(self, user: str) -> str:
        return users.resolve_root(self, user)

    def root_of(self, user: str) -> str | None:
        return self.registry.get(user)

    # -- walkers ------------------------------------------------------------

    def walker(self, wid: str) -> Walker:
        try:
            return self.walkers[wid]
        except KeyError:
            raise NoSuchWalker(f"no walker {wid}") from None

    def new_walker(self, archetype: str, properties: dict | None = None, user: str | None = None) -> str:
        """Instantiate a walker (status ``created``); declared fields take their defaults."""
        props = self.walker_fields(archetype)
        props.update(checked_map(properties, f"{archetype} properties"))
        with self._lock:
            wid = self._new_id("w")
            self.walkers[wid] = Walker(wid, archetype, props, user=user)
        return wid

    def spawn(
        self,
        archetype: str,
        properties: dict | None = None,
        at: str | None = None,
        *,
        user: str | None = None,
        run: bool = True,
    ) -> str:
        if at is None:
            raise ValueError("spawn needs a node")
        self.node(at)
        wid = self.new_walker(archetype, properties, user=user)
        self.start(wid, at, run=run)
        return wid

    def start(self, wid: str, at: str, run: bool = True) -> Status:
        """Place a created walker at ``at`` and dispatch its arrival.

        With ``run`` the walker then proceeds until its queue drains or it
        disengages; otherwise only the arrival is processed.
        """
        walker = self.walker(wid)
        if walker.status is not Status.CREATED:
            raise WalkerStateError(f"walker {wid} is {walker.status.value}, expected created")
        self.node(at)
        walker.status = Status.ACTIVE
        walker.location = at
        if self.cluster is not None:
            self.cluster.on_spawn(walker)
        return self._drive(walker, None if run else 1)

    def visit(self, wid: str, destination: str) -> None:
        walker = self.walker(wid)
        self._require_active(walker)
        node_id = _node_id(destination)
        self.node(node_id)
        linked = self._effect(walker, "topo", walker.location, lambda: self.has_edge(walker.location, node_id))
        if not linked:
            raise NoSuchEdge(f"no edge {walker.location} -> {node_id}")
        walker.queue.append(node_id)

    def step(self, wid: str) -> Status:
        walker = self.walker(wid)
        self._require_active(walker)
        if walker.started and not walker.queue:
            raise WalkerStateError(f"walker {wid} has nothing queued")
        return self._drive(walker, 1)

    def run(self, wid: str) -> Status:
        walker = self.walker(wid)
        self._require_active(walker)
        return self._drive(walker, None)

    def disengage(self, wid: str) -> None:
        walker = self.walker(wid)
        self._require_active(walker)
        walker.status = Status.DISENGAGED
        walker.queue.clear()
        walker.location = None
        if not walker.executing:
            self._finish(walker)

    def traverse(self, wid: str, eid: str) -> Status:
        """Hop along ``eid`` immediately, bypassing the queue."""
        walker = self.walker(wid)
        self._require_active(walker)
        edge = self.edge(eid)
        if walker.location != edge.source:
            raise NoSuchEdge(f"walker {wid} is at {walker.location}, edge {eid} starts at {edge.source}")
        hop = lambda: self._hop(walker, edge.destination)  # noqa: E731
        self._guarded(walker, hop, hop)
        self._settle(walker)
        return walker.status

    def discard_walker(self, wid: str) -> None:
        walker = self.walker(wid)
        if walker.status is Status.ACTIVE:
            raise WalkerStateError(f"walker {wid} is still active")
        del self.walkers[wid]

    def active_walkers(self) -> list[str]:
        return [w.id for w in self.walkers.values() if w.status is Status.ACTIVE]

    def handle(self, nid: str) -> "NodeHandle":
        self.node(nid)
        return NodeHandle(self, nid, None)

    # -- engine internals ---------------------------------------------------

    @staticmethod
    def _require_active(walker: Walker) -> None:
        if walker.status is not Status.ACTIVE:
            raise WalkerStateError(f"walker {walker.id} is {walker.status.value}")

    def _drive(self, walker: Walker, limit: int | None) -> Status:
        done = 0
        while walker.status is Status.ACTIVE and (limit is None or done < limit):
            advance = lambda: self._advance(walker)  # noqa: E731
            self._guarded(walker, advance, advance)
            done += 1
        return walker.status

    def _guarded(self, walker: Walker, action: Callable[[], None], resume: Callable[[], None]) -> None:
        while True:
            try:
                action()
                return
            except WalkerLost:
                walker.executing = False
                if self.cluster is None:
                    raise
                try:
                    self.cluster.recover(walker.id)
                except Exception:
                    self._abort(walker)
                    raise
                action = resume
            except BaseException:
                walker.executing = False
                raise

    def _advance(self, walker: Walker) -> None:
        if self.cluster is not None:
            self.cluster.before_step(walker)
        walker.op_index = 0
        walker.executing = True
        if not walker.started:
            walker.started = True
            walker.path.append(walker.location)
            self._dispatch(walker, walker.location, ENTRY)
        else:
            self._hop(walker, walker.queue.popleft())
        walker.executing = False
        walker.op_index = 0
        walker.steps += 1
        self._settle(walker)

    def _hop(self, walker: Walker, destination: str) -> None:
        walker.executing = True
        if destination not in self.nodes:
            self._abort(walker)
            raise WalkerFault(walker.id, destination, "<traverse>", NoSuchNode(f"no node {destination}"))
        self._dispatch(walker, walker.location, EXIT)
        if walker.status is not Status.ACTIVE:
            return
        if self.cluster is not None:
            self.cluster.on_hop(walker, walker.location, destination)
        walker.location = destination
        walker.path.append(destination)
        self._dispatch(walker, destination, ENTRY)
        walker.executing = False

    def _settle(self, walker: Walker) -> None:
        if walker.status is Status.ACTIVE and not walker.queue:
            walker.status = Status.COMPLETED
            walker.location = None
        if walker.status is not Status.ACTIVE:
            self._finish(walker)

    def _finish(self, walker: Walker) -> None:
        walker.executing = False
        walker.op_index = 0
        if self.cluster is not None:
            self.cluster.on_finish(walker)

    def _abort(self, walker: Walker) -> None:
        walker.status = Status.DISENGAGED
        walker.queue.clear()
        walker.location = None
        walker.lost = False
        self._finish(walker)

    def _abilities_for(self, walker: Walker, node: Node, trigger: str) -> list[Ability]:
        hosted_by_node = [
            a for a in self._abilities.get((node.archetype, trigger), ()) if a.filter in (WILDCARD, walker.archetype)
        ]
        hosted_by_walker = [
            a for a in self._abilities.get((walker.archetype, trigger), ()) if a.filter in (WILDCARD, node.archetype)
        ]
        return hosted_by_node + hosted_by_walker

    def _dispatch(self, walker: Walker, nid: str | None, trigger: str) -> None:
        if nid is None or nid not in self.nodes:
            return
        node = self.nodes[nid]
        context = WalkerContext(self, walker)
        here = NodeHandle(self, nid, walker)
        for ability in self._abilities_for(walker, node, trigger):
            if walker.status is not Status.ACTIVE:
                return
            try:
                ability.body(context, here)
            except WalkerLost:
                raise
            except Exception as exc:
                self._abort(walker)
                raise WalkerFault(walker.id, nid, ability.name, exc) from exc

    def _effect(self, walker: Walker | None, kind: str, nid: str | None, action: Callable[[], Any]):
        if walker is not None and walker.executing and self.cluster is not None:
            return self.cluster.perform(walker, kind, nid, action)
        return action()


def _node_id(target) -> str:
    return target.id if isinstance(target, NodeHandle) else target


class NodeHandle:
    """Location-transparent view of a node as seen from a walker."""

    __slots__ = ("_rt", "id", "_walker")

    def __init__(self, runtime: Runtime, nid: str, walker: Walker | None) -> None:
        self._rt = runtime
        self.id = nid
        self._walker = walker

    def __repr__(self) -> str:
        return f"NodeHandle({self.id})"

    def __eq__(self, other) -> bool:
        return isinstance(other, NodeHandle) and other.id == self.id

    def __hash__(self) -> int:
        return hash(self.id)

    @property
    def archetype(self) -> str:
        return self._rt.node(self.id).archetype

    def _read(self, action):
        return self._rt._effect(self._walker, "read", self.id, action)

    def __getitem__(self, key: str):
        return self._read(lambda: self._rt.get_property(self.id, key))

    def get(self, key: str, default=None):
        return self._read(lambda: self._rt.get_property(self.id, key, default))

    def __contains__(self, key: str) -> bool:
        return self._read(lambda: key in self._rt.node(self.id).properties)

    def properties(self) -> dict:
        return self._read(lambda: self._rt.properties(self.id))

    def __setitem__(self, key: str, value) -> None:
        self._rt._effect(self._walker, "write", self.id, lambda: self._rt.set_property(self.id, key, value))

    def outgoing(self, archetype: str | None = None) -> list["NodeHandle"]:
        def neighbours():
            return [
                dst for dst in self._rt.outgoing(self.id) if archetype is None or self._rt.nodes[dst].archetype == archetype
            ]

        ids = self._rt._effect(self._walker, "topo", self.id, neighbours)
        return [NodeHandle(self._rt, nid, self._walker) for nid in ids]

    def edges(self) -> list[tuple[str, str, dict]]:
        """Outgoing edges as ``(edge id, destination id, data)``."""
        return self._rt._effect(
            self._walker,
            "topo",
            self.id,
            lambda: [(e.id, e.destination, clone(e.data)) for e in self._rt.out_edges(self.id)],
        )

    def connect(self, destination, **data) -> str:
        dst = _node_id(destination)
        return self._rt._effect(self._walker, "connect", self.id, lambda: self._rt.connect(self.id, dst, data))


class WalkerContext:
    """What an ability body sees of the walker running it."""

    __slots__ = ("_rt", "_walker")

    def __init__(self, runtime: Runtime, walker: Walker) -> None:
        self._rt = runtime
        self._walker = walker

    @property
    def id(self) -> str:
        return self._walker.id

    @property
    def archetype(self) -> str:
        return self._walker.archetype

    @property
    def user(self) -> str | None:
        return self._walker.user

    @property
    def result(self) -> dict:
        return self._walker.result

    @property
    def here(self) -> NodeHandle:
        return NodeHandle(self._rt, self._walker.location, self._walker)

    @property
    def root(self) -> NodeHandle:
        if self._walker.user is None:
            raise LookupError(f"walker {self._walker.id} has no user, so no root")
        return NodeHandle(self._rt, self._rt.resolve_root(self._walker.user), self._walker)

    def __getitem__(self, key: str):
        return self._walker.properties[key]

    def __setitem__(self, key: str, value) -> None:
        check_value(value, f"{self._walker.id}.{key}")
        self._walker.properties[key] = value

    def get(self, key: str, default=None):
        return self._walker.properties.get(key, default)

    def node(self, nid: str) -> NodeHandle:
        self._rt.node(nid)
        return NodeHandle(self._rt, nid, self._walker)

    def visit(self, target) -> None:
        self._rt.visit(self._walker.id, _node_id(target))

    def visit_all(self, targets: Iterable) -> None:
        for target in targets:
            self.visit(target)

    def disengage(self) -> None:
        self._rt.disengage(self._walker.id)

    def create(self, archetype: str, **properties) -> NodeHandle:
        nid = self._rt._effect(self._walker, "create", None, lambda: self._rt.create_node(archetype, properties))
        return NodeHandle(self._rt, nid, self._walker)

    def connect(self, source, destination, **data) -> str:
        src, dst = _node_id(source), _node_id(destination)
        return self._rt._effect(self._walker, "connect", src, lambda: self._rt.connect(src, dst, data))

    def disconnect(self, eid: str) -> None:
        self._rt._effect(self._walker, "disconnect", None, lambda: self._rt.disconnect(eid))

    def delete(self, target) -> None:
        nid = _node_id(target)
        self._rt._effect(self._walker, "delete", nid, lambda: self._rt.delete_node(nid))
