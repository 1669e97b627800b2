"""Persistence by reachability: snapshot images, restore, and transient collection.

Only what a user's root reaches (following edge direction) is written to an
image.  Snapshots are taken at quiescent points and written atomically.
An optional append-only journal records mutations after a snapshot so that
``restore(snapshot) + replay(journal)`` reproduces the live graph.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, NamedTuple

from . import users
from .errors import CorruptImage, QuiescenceError, VersionMismatch
from .graph import ROOT, Edge, Node, id_key
from .values import canonical_json, check_value, clone

if TYPE_CHECKING:
    from .graph import Runtime

log = logging.getLogger(__name__)

FORMAT_VERSION = 1


@dataclass(frozen=True)
class ReachableSet:
    root: str
    nodes: frozenset
    edges: frozenset


def reachable_set(rt: Runtime, root: str) -> ReachableSet:
    nodes, edges = rt.reachable(root)
    return ReachableSet(root, frozenset(nodes), frozenset(edges))


@dataclass
class PersistentImage:
    format_version: int
    users: list
    checksum: str

    def body(self) -> dict:
        return {"format_version": self.format_version, "users": self.users}

    def to_text(self) -> str:
        doc = dict(self.body(), checksum=self.checksum)
        return json.dumps(doc, sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False) + "\n"

    @property
    def registry(self) -> dict[str, str]:
        return {section["user"]: section["root"] for section in self.users}

    def node_ids(self) -> set[str]:
        return {n["id"] for section in self.users for n in section["nodes"]}

    def edge_ids(self) -> set[str]:
        return {e["id"] for section in self.users for e in section["edges"]}


def body_checksum(body: dict) -> str:
    return hashlib.sha256(canonical_json(body).encode("utf-8")).hexdigest()


def _require_quiescent(rt: Runtime, what: str) -> None:
    active = rt.active_walkers()
    if active:
        raise QuiescenceError(f"{what} needs a quiescent runtime; active walkers: {active}")


def build_image(rt: Runtime) -> PersistentImage:
    """The union of every user's reachable subgraph, canonically ordered."""
    sections = []
    with rt._lock:
        users.refresh_all(rt)
        for user, root in rt.registry.items():
            nodes, edges = rt.reachable(root)
            sections.append(
                {
                    "user": user,
                    "root": root,
                    "nodes": [
                        {"id": n, "archetype": rt.nodes[n].archetype, "properties": clone(rt.nodes[n].properties)}
                        for n in sorted(nodes, key=id_key)
                    ],
                    "edges": [
                        {
                            "id": e,
                            "source": rt.edges[e].source,
                            "destination": rt.edges[e].destination,
                            "data": clone(rt.edges[e].data),
                        }
                        for e in sorted(edges, key=id_key)
                    ],
                }
            )
        persistent = {n["id"] for s in sections for n in s["nodes"]}
        dangling = [e.id for e in rt.edges.values() if e.source in persistent and e.destination not in persistent]
    if dangling:
        log.warning("dropping %d edges from persistent to transient nodes: %s", len(dangling), dangling[:10])
    body = {"format_version": FORMAT_VERSION, "users": sections}
    return PersistentImage(FORMAT_VERSION, sections, body_checksum(body))


def snapshot(rt: Runtime, path: str | os.PathLike) -> PersistentImage:
    """Write the persistent image of ``rt`` to ``path`` (temp file, then rename)."""
    _require_quiescent(rt, "snapshot")
    image = build_image(rt)
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{target.name}.", dir=target.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(image.to_text())
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return image


def parse_image(text: str) -> PersistentImage:
    try:
        doc = json.loads(text)
    except ValueError as exc:
        raise CorruptImage(f"image is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or not {"format_version", "users", "checksum"} <= doc.keys():
        raise CorruptImage("image lacks format_version/users/checksum")
    if doc["format_version"] != FORMAT_VERSION:
        raise VersionMismatch(f"image format {doc['format_version']!r}, runtime reads {FORMAT_VERSION}")
    body = {"format_version": doc["format_version"], "users": doc["users"]}
    if body_checksum(body) != doc["checksum"]:
        raise CorruptImage("checksum mismatch")
    _validate_sections(doc["users"])
    return PersistentImage(doc["format_version"], doc["users"], doc["checksum"])


def _validate_sections(sections) -> None:
    try:
        seen_nodes: set[str] = set()
        seen_edges: set[str] = set()
        seen_users: set[str] = set()
        for section in sections:
            if section["user"] in seen_users:
                raise CorruptImage(f"user {section['user']!r} appears twice")
            seen_users.add(section["user"])
            local = set()
            for node in section["nodes"]:
                id_key(node["id"])
                if node["id"] in seen_nodes:
                    raise CorruptImage(f"node {node['id']} appears in two sections")
                check_value(node["properties"])
                seen_nodes.add(node["id"])
                local.add(node["id"])
            if section["root"] not in local:
                raise CorruptImage(f"root {section['root']} missing from its own section")
            for edge in section["edges"]:
                id_key(edge["id"])
                if edge["id"] in seen_edges:
                    raise CorruptImage(f"edge {edge['id']} appears twice")
                if edge["source"] not in local or edge["destination"] not in local:
                    raise CorruptImage(f"edge {edge['id']} leaves its user's section")
                check_value(edge["data"])
                seen_edges.add(edge["id"])
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        if isinstance(exc, CorruptImage):
            raise
        raise CorruptImage(f"malformed image: {exc!r}") from exc


def load_image(path: str | os.PathLike) -> PersistentImage:
    try:
        text = Path(path).read_bytes().decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CorruptImage(f"image is not UTF-8: {exc}") from exc
    return parse_image(text)


def restore_image(rt: Runtime, image: PersistentImage) -> users.RootRegistry:
    if rt.nodes or len(rt.registry):
        raise ValueError("restore needs a runtime with an empty graph")
    with rt._lock:
        for section in image.users:
            user = section["user"]
            for record in section["nodes"]:
                if not rt.is_node_archetype(record["archetype"]):
                    rt.node_archetype(record["archetype"])
                rt._insert_node(Node(record["id"], record["archetype"], clone(record["properties"]), owner=user))
            for record in section["edges"]:
                rt._insert_edge(Edge(record["id"], record["source"], record["destination"], clone(record["data"])))
            rt.registry.register(user, section["root"])
            if rt.nodes[section["root"]].archetype != ROOT:
                log.warning("root of %r has archetype %r", user, rt.nodes[section["root"]].archetype)
    return rt.registry


def restore(rt: Runtime, path: str | os.PathLike) -> users.RootRegistry:
    """Load the image at ``path`` into the empty runtime ``rt``.

    The whole image is decoded and verified before ``rt`` is touched, so a
    corrupt file leaves the runtime as it was.  Ids are kept as written.
    """
    return restore_image(rt, load_image(path))


class Reclaimed(NamedTuple):
    nodes: int
    edges: int


def collect_transient(rt: Runtime) -> Reclaimed:
    """Delete nodes no root reaches, unless a paused walker still refers to them."""
    busy = [w.id for w in rt.walkers.values() if w.executing]
    if busy:
        raise QuiescenceError(f"walkers mid-step: {busy}")
    with rt._lock:
        keep: set[str] = set()
        for _, root in rt.registry.items():
            keep |= rt.reachable(root)[0]
        for walker in rt.walkers.values():
            if walker.status.value == "active":
                keep.update(walker.queue)
                if walker.location is not None:
                    keep.add(walker.location)
        doomed = [n for n in rt.nodes if n not in keep]
        edges_before = len(rt.edges)
        for nid in sorted(doomed, key=id_key):
            rt.delete_node(nid)
        return Reclaimed(len(doomed), edges_before - len(rt.edges))


class Journal:
    """Append-only newline-delimited record of graph mutations.

    Attach to a runtime right after a snapshot; :func:`replay_journal` applies
    the records on top of the restored snapshot.
    """

    OPS = ("create_node", "set_property", "connect", "disconnect", "delete_node", "set_root")

    def __init__(self, path: str | os.PathLike) -> None:
        self.path = Path(path)
        self.seq = 0
        self._fh = None

    def attach(self, rt: Runtime) -> "Journal":
        self._fh = open(self.path, "a", encoding="utf-8")
        rt.observers.append(self.record)
        return self

    def detach(self, rt: Runtime) -> None:
        if self.record in rt.observers:
            rt.observers.remove(self.record)
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def record(self, op: str, args: dict) -> None:
        self.seq += 1
        self._fh.write(canonical_json({"op": op, "args": args, "seq": self.seq}) + "\n")
        self._fh.flush()

    @staticmethod
    def read(path: str | os.PathLike) -> list[dict]:
        records = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    records.append(json.loads(line))
        return records


def apply_record(rt: Runtime, record: dict) -> None:
    op, args = record["op"], record["args"]
    if op == "create_node":
        if not rt.is_node_archetype(args["archetype"]):
            rt.node_archetype(args["archetype"])
        rt._insert_node(Node(args["id"], args["archetype"], clone(args["properties"])))
    elif op == "set_property":
        rt.nodes[args["node"]].properties[args["key"]] = clone(args["value"])
    elif op == "connect":
        rt._insert_edge(Edge(args["id"], args["source"], args["destination"], clone(args["data"])))
    elif op == "disconnect":
        rt._remove_edge(rt.edges[args["id"]])
    elif op == "delete_node":
        nid = args["id"]
        for eid in list(rt._out[nid]) + list(rt._in[nid]):
            if eid in rt.edges:
                rt._remove_edge(rt.edges[eid])
        del rt.nodes[nid], rt._out[nid], rt._in[nid]
    elif op == "set_root":
        rt.registry.register(args["user"], args["node"])
    else:
        raise CorruptImage(f"unknown journal op {op!r}")


def replay_journal(rt: Runtime, records: Iterable[dict]) -> int:
    count = 0
    with rt._lock:
        last = 0
        for record in records:
            if record["seq"] <= last:
                raise CorruptImage(f"journal sequence goes backwards at {record['seq']}")
            last = record["seq"]
            apply_record(rt, record)
            count += 1
        users.refresh_all(rt)
    return count
