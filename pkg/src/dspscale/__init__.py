"""Scale-agnostic data-spatial runtime: graphs, walkers, per-user roots and a simulated cluster."""

from .cluster import Cluster, ClusterConfig, HybridConfig, Mode, Strategy
from .errors import *  # noqa: F401,F403
from .gateway import EntryPointSpec, Gateway, Invocation, Param
from .graph import ENTRY, EXIT, NodeHandle, Runtime, Status, WalkerContext
from .persistence import collect_transient, reachable_set, restore, snapshot
from .users import audit_disjointness, check_isolation

__version__ = "0.1.0"
