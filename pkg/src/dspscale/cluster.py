"""Deterministic in-process simulation of a multi-machine cluster.

Nodes are placed on machines; walkers either stay put and reach remote
nodes with request/reply messages (data-centric), migrate to the machine of
the node they traverse to (computation-centric), or pick per hop (hybrid).
The cluster only adds accounting, serialization round trips and faults:
walker paths, results and the graph are the same as on a single machine.

Cost model:

* a node property read or write from a walker on another machine is one
  remote access, two messages, and ``base_latency * consistency_strength``
  modeled latency;
* a migration is one message plus ``migration_latency_per_byte`` per
  serialized walker byte;
* each copy sent to a replica is one replication message;
* topology (edge lists) is cluster-wide metadata and free to read.
"""

from __future__ import annotations

import enum
import json
import random
from collections import deque
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import MachineDead, UnavailableNode, WalkerLost, WalkerStateError
from .graph import Runtime, Status, Walker, id_key
from .partition import cut_size, place_nodes, random_balanced
from .resilience import CheckpointStore, EffectJournal, FaultPlan, FaultTolerance, ReplicaSet
from .values import canonical_json, clone


class Mode(str, enum.Enum):
    DATA_CENTRIC = "data_centric"
    COMPUTATION_CENTRIC = "computation_centric"
    HYBRID = "hybrid"


class Strategy(str, enum.Enum):
    MOVE_DATA = "MoveData"
    MOVE_COMP = "MoveComp"


CADENCES = ("none", "every_step", "every_k_steps", "on_migration")


@dataclass
class HybridConfig:
    ratio_R: float = 4.0
    locality_pct: float = 0.8
    path_run_len: int = 3
    window: int = 16


@dataclass
class ClusterConfig:
    machines: int = 1
    capacity_bytes: int = 1 << 30
    mode: str = Mode.COMPUTATION_CENTRIC.value
    consistency_strength: float = 1.0
    base_latency: float = 1.0
    migration_latency_per_byte: float = 0.01
    seed: int = 0
    placement: str = "greedy"
    rep_factor: int = 1
    checkpoint: str = "none"
    checkpoint_every: int = 1
    hybrid: HybridConfig = field(default_factory=HybridConfig)

    def __post_init__(self):
        if isinstance(self.hybrid, dict):
            self.hybrid = HybridConfig(**self.hybrid)
        if self.machines < 1:
            raise ValueError("machines must be at least 1")
        if self.consistency_strength < 1:
            raise ValueError("consistency_strength must be >= 1")
        if self.placement not in ("greedy", "random"):
            raise ValueError(f"unknown placement {self.placement!r}")
        if self.checkpoint not in CADENCES:
            raise ValueError(f"unknown checkpoint cadence {self.checkpoint!r}")
        Mode(self.mode)

    @classmethod
    def from_dict(cls, doc: dict) -> "ClusterConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown cluster config keys: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def load(cls, path) -> "ClusterConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Counters:
    remote_accesses: int = 0
    migrations: int = 0
    messages: int = 0
    replication_messages: int = 0
    modeled_latency: float = 0.0

    def add(self, other: "Counters") -> None:
        for f in fields(self):
            setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class AccessRecord:
    node: str
    walker_machine: int
    node_machine: int
    remote: bool
    messages: int
    latency: float


def strategy_for(
    walker_size: int,
    node_size: int,
    local_fraction: float | None,
    run_on_target: int,
    cfg: HybridConfig,
) -> Strategy:
    """Hybrid decision: size test, then access-pattern test, then MoveComp.

    ``local_fraction`` is the share of recent touches of the node that came
    from the walker's machine (``None`` without history); ``run_on_target``
    is how many of the walker's latest hops in a row landed on the node's
    machine.
    """
    if node_size != walker_size:
        if node_size * cfg.ratio_R <= walker_size:
            return Strategy.MOVE_DATA
        if walker_size * cfg.ratio_R <= node_size:
            return Strategy.MOVE_COMP
    if local_fraction is not None and local_fraction >= cfg.locality_pct:
        return Strategy.MOVE_DATA
    if run_on_target >= cfg.path_run_len:
        return Strategy.MOVE_COMP
    return Strategy.MOVE_COMP


class Cluster(FaultTolerance):
    def __init__(
        self,
        config: ClusterConfig | None = None,
        runtime: Runtime | None = None,
        faults: FaultPlan | list | None = None,
        checkpoint_path=None,
    ) -> None:
        self.config = config or ClusterConfig()
        k = self.config.machines
        self.mode = Mode(self.config.mode)
        self.alive = [True] * k
        self.counters = [Counters() for _ in range(k)]
        self.placement: dict[str, int] = {}
        self.walker_machine: dict[str, int] = {}
        self.replicas: dict[str, ReplicaSet] = {}
        self.sizes: dict[str, int] = {}
        self.checkpoints = CheckpointStore(checkpoint_path)
        self.journal = EffectJournal()
        self.faults = faults if isinstance(faults, FaultPlan) else FaultPlan(faults or ())
        self.fault_log: list[dict] = []
        self.events = 0
        # machine hosting the acting walker at each event index
        self.event_hosts: list[int | None] = []
        self.epoch = 0
        self.recoveries = 0
        self.runtime: Runtime | None = None
        self._load = [0] * k
        self._rng = random.Random(self.config.seed)
        self._touches: dict[str, deque] = {}
        self._hops: dict[str, deque] = {}
        self._checkpoint_pending: set[str] = set()
        if runtime is not None:
            self.attach(runtime)

    # -- wiring -------------------------------------------------------------

    def attach(self, runtime: Runtime) -> None:
        """Bind to ``runtime`` (e.g. one just restored from a snapshot)."""
        if self.runtime is not None and self.runtime.cluster is self:
            self.runtime.cluster = None
        self.runtime = runtime
        runtime.cluster = self
        self.epoch += 1
        self.walker_machine.clear()
        self._hops.clear()
        self._checkpoint_pending.clear()
        for nid in [n for n in self.placement if n not in runtime.nodes]:
            self._forget(nid)
        for nid, replica_set in self.replicas.items():
            props = runtime.nodes[nid].properties
            for m in replica_set.copies:
                replica_set.copies[m] = clone(props)

    def _assign(self, nid: str, machine: int) -> None:
        old = self.placement.get(nid)
        if old is not None:
            self._load[old] -= 1
        self.placement[nid] = machine
        self._load[machine] += 1

    def _forget(self, nid: str) -> None:
        old = self.placement.pop(nid, None)
        if old is not None:
            self._load[old] -= 1
        self.replicas.pop(nid, None)
        self._touches.pop(nid, None)

    def _place_new(self, nid: str, near: int | None) -> int:
        alive = self.alive_machines()
        if not alive:
            raise MachineDead("no machine left alive")
        if self.config.placement == "random":
            machine = self._rng.choice(alive)
        elif near is not None and self.alive[near]:
            machine = near
        else:
            machine = min(alive, key=lambda m: (self._load[m], m))
        self._assign(nid, machine)
        if self.config.rep_factor > 1:
            self.replicate(nid, min(self.config.rep_factor, len(alive)))
        return machine

    def machine_of(self, nid: str) -> int:
        if nid not in self.placement:
            self.runtime.node(nid)
            self._place_new(nid, None)
        return self.placement[nid]

    def place(self, hints: dict | None = None, seed: int | None = None) -> dict[str, int]:
        """Place every available node once, then build replica sets.

        Greedy placement minimises cut edges under the balance bound and
        honours ``hints``; random placement is a seeded balanced shuffle.
        """
        rt = self.runtime
        seed = self.config.seed if seed is None else seed
        alive = self.alive_machines()
        nodes = [
            n for n in sorted(rt.nodes, key=id_key) if n not in self.placement or self.alive[self.placement[n]]
        ]
        keep = set(nodes)
        edges = [
            (e.source, e.destination)
            for e in sorted(rt.edges.values(), key=lambda e: id_key(e.id))
            if e.source in keep and e.destination in keep
        ]
        if self.config.placement == "random":
            slots = random_balanced(nodes, len(alive), random.Random(seed))
        else:
            index = {m: i for i, m in enumerate(alive)}
            local_hints = {n: index[m] for n, m in (hints or {}).items() if m in index}
            slots = place_nodes(
                nodes,
                edges,
                len(alive),
                sizes={n: self.node_size(n) for n in nodes},
                capacity=self.config.capacity_bytes,
                seed=seed,
                hints=local_hints,
            )
        for nid in nodes:
            self._assign(nid, alive[slots[nid]])
            self.replicas.pop(nid, None)
        rep = min(self.config.rep_factor, len(alive))
        if rep > 1:
            for nid in nodes:
                self.replicate(nid, rep)
        return {n: self.placement[n] for n in nodes}

    # -- sizes --------------------------------------------------------------

    def set_node_size(self, nid: str, size: int) -> None:
        self.sizes[nid] = int(size)

    def node_size(self, nid: str) -> int:
        node = self.runtime.node(nid)
        measured = len(canonical_json({"archetype": node.archetype, "properties": node.properties}).encode("utf-8"))
        return max(measured, self.sizes.get(nid, 0))

    def walker_size(self, wid: str) -> int:
        return len(canonical_json(self.runtime.walker(wid).state()).encode("utf-8"))

    # -- accounting ---------------------------------------------------------

    def _charge_replication(self, machine: int) -> None:
        c = self.counters[machine]
        c.replication_messages += 1
        c.messages += 1

    def _ensure_available(self, nid: str) -> int:
        machine = self.machine_of(nid)
        if not self.alive[machine]:
            raise UnavailableNode(f"{nid}: machine {machine} is dead and no replica survives")
        return machine

    def access(self, wid: str, nid: str) -> AccessRecord:
        """Charge one property access by walker ``wid`` to node ``nid``."""
        walker_machine = self.walker_machine[wid]
        node_machine = self._ensure_available(nid)
        touches = self._touches.setdefault(nid, deque(maxlen=self.config.hybrid.window))
        touches.append(walker_machine)
        if walker_machine == node_machine:
            return AccessRecord(nid, walker_machine, node_machine, False, 0, 0.0)
        latency = self.config.base_latency * self.config.consistency_strength
        c = self.counters[walker_machine]
        c.remote_accesses += 1
        c.messages += 2
        c.modeled_latency += latency
        return AccessRecord(nid, walker_machine, node_machine, True, 2, latency)

    def totals(self) -> Counters:
        total = Counters()
        for c in self.counters:
            total.add(c)
        return total

    def conservation_ok(self) -> bool:
        t = self.totals()
        return t.messages == 2 * t.remote_accesses + t.migrations + t.replication_messages

    # -- movement -----------------------------------------------------------

    def migrate(self, wid: str, to: int) -> None:
        """Serialize the walker, ship it to machine ``to`` and rebuild it there."""
        walker = self.runtime.walker(wid)
        if walker.status is not Status.ACTIVE:
            raise WalkerStateError(f"walker {wid} is {walker.status.value}")
        if not 0 <= to < len(self.alive) or not self.alive[to]:
            raise MachineDead(f"cannot migrate {wid} to dead machine {to}")
        payload = canonical_json(walker.state()).encode("utf-8")
        source = self.walker_machine[wid]
        c = self.counters[source]
        c.migrations += 1
        c.messages += 1
        c.modeled_latency += self.config.migration_latency_per_byte * len(payload)
        op_index = walker.op_index
        walker.load_state(json.loads(payload.decode("utf-8")))
        walker.op_index = op_index
        self.walker_machine[wid] = to
        if self.config.checkpoint == "on_migration":
            self._checkpoint_pending.add(wid)

    def choose_strategy(self, wid: str, nid: str) -> Strategy:
        walker_machine = self.walker_machine[wid]
        node_machine = self.machine_of(nid)
        touches = self._touches.get(nid)
        local = None
        if touches:
            local = sum(1 for m in touches if m == walker_machine) / len(touches)
        run = 0
        for m in reversed(self._hops.get(wid, ())):
            if m != node_machine:
                break
            run += 1
        return strategy_for(self.walker_size(wid), self.node_size(nid), local, run, self.config.hybrid)

    def traverse_distributed(self, wid: str, eid: str, mode: Mode | str | None = None) -> Status:
        previous = self.mode
        if mode is not None:
            self.mode = Mode(mode)
        try:
            return self.runtime.traverse(wid, eid)
        finally:
            self.mode = previous

    # -- hooks called by the runtime ----------------------------------------

    def on_spawn(self, walker: Walker) -> None:
        self.walker_machine[walker.id] = self._ensure_available(walker.location)
        self._hops[walker.id] = deque(maxlen=max(self.config.hybrid.path_run_len, 1))
        self.journal.drop(walker.id)

    def _tick(self, walker: Walker) -> None:
        index = self.events
        self.events += 1
        self.event_hosts.append(self.walker_machine.get(walker.id))
        for event in self.faults.at(index):
            if event.action == "kill" and self.alive[event.machine]:
                self.kill_machine(event.machine)
            elif event.action == "revive" and not self.alive[event.machine]:
                self.revive_machine(event.machine)

    def _ensure_alive(self, walker: Walker) -> None:
        machine = self.walker_machine.get(walker.id)
        if walker.lost or machine is None or not self.alive[machine]:
            walker.lost = True
            raise WalkerLost(walker.id, machine)

    def _checkpoint_due(self, walker: Walker) -> bool:
        cadence = self.config.checkpoint
        if cadence == "none":
            return False
        if cadence == "every_step":
            return True
        if cadence == "every_k_steps":
            return walker.steps % max(self.config.checkpoint_every, 1) == 0
        return walker.steps == 0 or walker.id in self._checkpoint_pending

    def before_step(self, walker: Walker) -> None:
        self._ensure_alive(walker)
        if self._checkpoint_due(walker):
            self.checkpoint(walker.id)
        self._tick(walker)
        self._ensure_alive(walker)

    def perform(self, walker: Walker, kind: str, nid: str | None, action):
        self._tick(walker)
        self._ensure_alive(walker)
        key = (walker.id, walker.steps, walker.op_index)
        walker.op_index += 1
        hit, value = self.journal.lookup(key, kind)
        if hit:
            return value
        if kind in ("read", "write"):
            self.access(walker.id, nid)
        result = action()
        if kind == "write":
            self._propagate(nid)
        elif kind == "create":
            self._place_new(result, self.walker_machine[walker.id])
        elif kind == "delete":
            self._forget(nid)
        self.journal.record(key, kind, result)
        return result

    def on_hop(self, walker: Walker, source: str, destination: str) -> None:
        node_machine = self._ensure_available(destination)
        walker_machine = self.walker_machine[walker.id]
        if walker_machine != node_machine:
            if self.mode is Mode.COMPUTATION_CENTRIC:
                self.migrate(walker.id, node_machine)
            elif self.mode is Mode.HYBRID and self.choose_strategy(walker.id, destination) is Strategy.MOVE_COMP:
                self.migrate(walker.id, node_machine)
        self._hops.setdefault(walker.id, deque(maxlen=self.config.hybrid.path_run_len)).append(node_machine)

    def on_finish(self, walker: Walker) -> None:
        self.journal.drop(walker.id)
        self.walker_machine.pop(walker.id, None)
        self._hops.pop(walker.id, None)
        self._checkpoint_pending.discard(walker.id)

    # -- reporting ----------------------------------------------------------

    def cut_edges(self) -> int:
        edges = [
            (e.source, e.destination)
            for e in self.runtime.edges.values()
            if e.source in self.placement and e.destination in self.placement
        ]
        return cut_size(edges, self.placement)

    def report(self) -> dict:
        rt = self.runtime
        placement = {n: self.placement[n] for n in sorted(rt.nodes, key=id_key) if n in self.placement}
        return {
            "machines": len(self.alive),
            "alive": list(self.alive),
            "mode": self.mode.value,
            "consistency_strength": self.config.consistency_strength,
            "per_machine_counters": {str(m): c.as_dict() for m, c in enumerate(self.counters)},
            "totals": self.totals().as_dict(),
            "placement": placement,
            "cut_edges": self.cut_edges(),
            "events": self.events,
            "recoveries": self.recoveries,
            "checkpoints": len(self.checkpoints.records),
            "faults": list(self.fault_log),
            "conservation_ok": self.conservation_ok(),
        }
