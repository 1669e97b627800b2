"""Replication, walker checkpoints, fault injection and recovery.

Replication is synchronous primary-copy: a write lands on the primary and
is copied to every replica before it completes.  Recovery restores a walker
from its latest checkpoint; the steps it replays hit the effect journal, so
reads see the values they saw the first time and writes, creates and edges
are not applied twice.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING

from .errors import (
    InsufficientMachines,
    MachineDead,
    NoCheckpoint,
    NotLost,
    UnavailableNode,
    WalkerStateError,
)
from .graph import Status
from .values import canonical_json, clone

if TYPE_CHECKING:
    from .cluster import Cluster


@dataclass
class ReplicaSet:
    node: str
    primary: int
    copies: dict  # machine -> properties copy, primary included
    rep_factor: int

    @property
    def replicas(self) -> list[tuple[int, dict]]:
        return list(self.copies.items())

    @property
    def machines(self) -> list[int]:
        return list(self.copies)


@dataclass(frozen=True)
class WalkerCheckpoint:
    walker: str
    seq: int
    payload: str
    taken_at: int
    epoch: int = 0

    def state(self) -> dict:
        return json.loads(self.payload)


class CheckpointStore:
    """Append-only checkpoint log, optionally mirrored to a JSON-lines file."""

    def __init__(self, path: str | os.PathLike | None = None) -> None:
        self.path = Path(path) if path else None
        self.records: list[WalkerCheckpoint] = []
        self._latest: dict[tuple[int, str], WalkerCheckpoint] = {}
        self._seq = 0

    def append(self, walker: str, payload: str, taken_at: int, epoch: int = 0) -> WalkerCheckpoint:
        self._seq += 1
        record = WalkerCheckpoint(walker, self._seq, payload, taken_at, epoch)
        self.records.append(record)
        self._latest[(epoch, walker)] = record
        if self.path is not None:
            line = canonical_json(
                {"walker": walker, "seq": record.seq, "epoch": epoch, "taken_at": taken_at, "payload": json.loads(payload)}
            )
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")
        return record

    def latest(self, walker: str, epoch: int = 0) -> WalkerCheckpoint | None:
        return self._latest.get((epoch, walker))

    def for_walker(self, walker: str, epoch: int = 0) -> list[WalkerCheckpoint]:
        return [r for r in self.records if r.walker == walker and r.epoch == epoch]

    @staticmethod
    def read(path: str | os.PathLike) -> list[WalkerCheckpoint]:
        out = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    doc = json.loads(line)
                    out.append(
                        WalkerCheckpoint(doc["walker"], doc["seq"], canonical_json(doc["payload"]), doc["taken_at"], doc["epoch"])
                    )
        return out


@dataclass(frozen=True)
class FaultEvent:
    event_index: int
    action: str
    machine: int

    def __post_init__(self):
        if self.action not in ("kill", "revive"):
            raise ValueError(f"fault action must be kill or revive, not {self.action!r}")


class FaultPlan:
    def __init__(self, events=()) -> None:
        parsed = [e if isinstance(e, FaultEvent) else FaultEvent(**e) for e in events]
        self.events = sorted(parsed, key=lambda e: e.event_index)
        self._by_index: dict[int, list[FaultEvent]] = {}
        for event in self.events:
            self._by_index.setdefault(event.event_index, []).append(event)

    def at(self, index: int) -> list[FaultEvent]:
        return self._by_index.get(index, [])

    def to_list(self) -> list[dict]:
        return [{"event_index": e.event_index, "action": e.action, "machine": e.machine} for e in self.events]

    @classmethod
    def load(cls, path: str | os.PathLike) -> "FaultPlan":
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh))

    def __len__(self) -> int:
        return len(self.events)


class EffectJournal:
    """Results of walker effects keyed by ``(walker, step, op index)``."""

    def __init__(self) -> None:
        self._entries: dict[tuple, tuple[str, object]] = {}

    def lookup(self, key: tuple, kind: str):
        entry = self._entries.get(key)
        if entry is None:
            return False, None
        if entry[0] != kind:
            raise RuntimeError(f"replay diverged at {key}: journal has {entry[0]}, step asked for {kind}")
        return True, clone(entry[1])

    def record(self, key: tuple, kind: str, value) -> None:
        self._entries[key] = (kind, clone(value))

    def drop(self, walker: str) -> None:
        for key in [k for k in self._entries if k[0] == walker]:
            del self._entries[key]

    def __len__(self) -> int:
        return len(self._entries)


class FaultTolerance:
    """Replication and recovery operations of :class:`dspscale.cluster.Cluster`."""

    def alive_machines(self: Cluster) -> list[int]:
        return [m for m, up in enumerate(self.alive) if up]

    def replicate(self: Cluster, node: str, rep_factor: int) -> ReplicaSet:
        """Keep copies of ``node`` on ``rep_factor`` distinct alive machines."""
        if rep_factor < 1:
            raise ValueError("rep_factor must be at least 1")
        alive = self.alive_machines()
        if rep_factor > len(alive):
            raise InsufficientMachines(f"rep_factor {rep_factor} with {len(alive)} alive machines")
        primary = self.machine_of(node)
        if not self.alive[primary]:
            raise UnavailableNode(f"{node}: primary machine {primary} is dead")
        k = len(self.alive)
        ring = [(primary + i) % k for i in range(k)]
        chosen = [m for m in ring if self.alive[m]][:rep_factor]
        previous = self.replicas.get(node)
        props = self.runtime.node(node).properties
        copies = {}
        for m in chosen:
            if previous is not None and m in previous.copies:
                copies[m] = previous.copies[m]
            else:
                copies[m] = clone(props)
                if m != primary:
                    self._charge_replication(primary)
        replica_set = ReplicaSet(node, primary, copies, rep_factor)
        self.replicas[node] = replica_set
        return replica_set

    def _propagate(self: Cluster, node: str) -> None:
        replica_set = self.replicas.get(node)
        if replica_set is None:
            return
        props = self.runtime.node(node).properties
        for m in replica_set.copies:
            replica_set.copies[m] = clone(props)
            if m != replica_set.primary:
                self._charge_replication(replica_set.primary)

    def read_replica(self: Cluster, node: str, machine: int) -> dict:
        replica_set = self.replicas.get(node)
        if replica_set is None or machine not in replica_set.copies:
            raise LookupError(f"machine {machine} holds no copy of {node}")
        if not self.alive[machine]:
            raise MachineDead(f"machine {machine} is dead")
        return clone(replica_set.copies[machine])

    def checkpoint(self: Cluster, walker: str) -> WalkerCheckpoint:
        w = self.runtime.walker(walker)
        if w.status is not Status.ACTIVE:
            raise WalkerStateError(f"walker {walker} is {w.status.value}")
        if w.executing:
            raise WalkerStateError(f"walker {walker} is mid-step; checkpoints are taken at step boundaries")
        self._checkpoint_pending.discard(walker)
        return self.checkpoints.append(walker, canonical_json(w.state()), self.events, self.epoch)

    def kill_machine(self: Cluster, machine: int) -> None:
        if not self.alive[machine]:
            raise MachineDead(f"machine {machine} is already dead")
        self.alive[machine] = False
        self.fault_log.append({"event": self.events, "action": "kill", "machine": machine})
        for node, primary in sorted(self.placement.items()):
            if primary != machine:
                continue
            replica_set = self.replicas.get(node)
            survivors = [] if replica_set is None else [m for m in replica_set.copies if m != machine and self.alive[m]]
            if survivors:
                promoted = survivors[0]
                replica_set.primary = promoted
                self._assign(node, promoted)
                if node in self.runtime.nodes:
                    self.runtime.nodes[node].properties = clone(replica_set.copies[promoted])
        for replica_set in self.replicas.values():
            replica_set.copies.pop(machine, None)
        for walker, m in self.walker_machine.items():
            if m == machine and walker in self.runtime.walkers:
                self.runtime.walkers[walker].lost = True

    def revive_machine(self: Cluster, machine: int) -> None:
        """Bring a machine back; nodes it was primary for become reachable again."""
        if self.alive[machine]:
            raise MachineDead(f"machine {machine} is not dead")
        self.alive[machine] = True
        self.fault_log.append({"event": self.events, "action": "revive", "machine": machine})

    def recover(self: Cluster, walker: str) -> str:
        w = self.runtime.walker(walker)
        if not w.lost:
            raise NotLost(f"walker {walker} is not lost")
        latest = self.checkpoints.latest(walker, self.epoch)
        if latest is None:
            raise NoCheckpoint(f"walker {walker} was lost with no checkpoint")
        alive = self.alive_machines()
        if not alive:
            raise MachineDead("no machine left alive")
        w.load_state(latest.state())
        w.lost = False
        w.executing = False
        target = alive[0]
        if w.location is not None and w.location in self.runtime.nodes:
            home = self.machine_of(w.location)
            if self.alive[home]:
                target = home
        self.walker_machine[walker] = target
        self.recoveries += 1
        return walker
