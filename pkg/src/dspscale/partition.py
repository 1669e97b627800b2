"""Balanced k-way node placement minimising cut edges.

Multi-start greedy local search: each start seeds a balanced assignment
(largest-first onto the lightest machine, ties shuffled), then applies
improving single-node moves and, once those run out, improving pair swaps.
The best start wins; everything is a pure function of the inputs and seed.
"""

from __future__ import annotations

import random
from collections import defaultdict
from typing import Hashable, Mapping, Sequence

from .errors import CapacityExceeded

# pair swaps cost O(n^2) per pass; above this only single moves are tried
SWAP_LIMIT = 400


def cut_size(edges: Sequence[tuple], assignment: Mapping) -> int:
    return sum(1 for u, v in edges if u != v and assignment[u] != assignment[v])


def random_balanced(nodes: Sequence[Hashable], k: int, rng: random.Random) -> dict:
    """Uniformly shuffled round-robin assignment (part sizes differ by at most one)."""
    order = list(nodes)
    rng.shuffle(order)
    return {n: i % k for i, n in enumerate(order)}


def _neighbours(nodes, edges):
    adj: dict = {n: defaultdict(int) for n in nodes}
    for u, v in edges:
        if u == v:
            continue
        adj[u][v] += 1
        adj[v][u] += 1
    return adj


def _links(adj, node, assignment, k):
    counts = [0] * k
    for other, weight in adj[node].items():
        counts[assignment[other]] += weight
    return counts


def place_nodes(
    nodes: Sequence[Hashable],
    edges: Sequence[tuple],
    k: int,
    *,
    sizes: Mapping | None = None,
    capacity: float | None = None,
    seed: int = 0,
    hints: Mapping | None = None,
    starts: int = 8,
    tolerance: float = 0.2,
) -> dict:
    """Assign every node to a machine in ``range(k)``.

    Machine loads stay within ``tolerance`` of the mean size where the
    starting assignment allows it (hints and very large nodes can make that
    impossible; loads then never get worse than the start).  ``hints`` pin
    nodes to machines when the capacity allows it.
    """
    if k < 1:
        raise ValueError("need at least one machine")
    nodes = list(nodes)
    size = {n: (sizes[n] if sizes is not None else 1) for n in nodes}
    total = sum(size.values())
    if capacity is not None and total > k * capacity:
        raise CapacityExceeded(f"{total} bytes do not fit on {k} machines of {capacity}")
    if k == 1:
        return {n: 0 for n in nodes}

    pinned: dict = {}
    pinned_load = [0.0] * k
    for n in nodes:
        m = (hints or {}).get(n)
        if m is None or not 0 <= m < k:
            continue
        if capacity is not None and pinned_load[m] + size[n] > capacity:
            continue
        pinned[n] = m
        pinned_load[m] += size[n]
    free = [n for n in nodes if n not in pinned]
    adj = _neighbours(nodes, edges)
    mean = total / k
    best = None
    for start in range(max(1, starts)):
        rng = random.Random(seed * 1_000_003 + start)
        assignment, load = _seed(free, pinned, pinned_load, size, k, capacity, rng)
        hi = max(mean * (1 + tolerance), max(load))
        lo = min(mean * (1 - tolerance), min(load))
        if capacity is not None:
            hi = min(hi, capacity) if max(load) <= capacity else max(load)
        _improve(free, adj, assignment, load, size, k, lo, hi)
        cut = cut_size(edges, assignment)
        if best is None or cut < best[0]:
            best = (cut, assignment)
    return best[1]


def _seed(free, pinned, pinned_load, size, k, capacity, rng):
    assignment = dict(pinned)
    load = list(pinned_load)
    order = list(free)
    rng.shuffle(order)
    order.sort(key=lambda n: -size[n])
    for n in order:
        lightest = min(load)
        choices = [m for m in range(k) if load[m] == lightest]
        m = rng.choice(choices)
        if capacity is not None and load[m] + size[n] > capacity:
            m = min(range(k), key=lambda j: load[j])
        assignment[n] = m
        load[m] += size[n]
    return assignment, load


def _improve(free, adj, assignment, load, size, k, lo, hi):
    while True:
        if _best_move(free, adj, assignment, load, size, k, lo, hi):
            continue
        if len(free) <= SWAP_LIMIT and _best_swap(free, adj, assignment, load, size, lo, hi):
            continue
        return


def _best_move(free, adj, assignment, load, size, k, lo, hi) -> bool:
    best = None
    for n in free:
        here = assignment[n]
        links = _links(adj, n, assignment, k)
        for m in range(k):
            if m == here:
                continue
            gain = links[m] - links[here]
            if gain <= 0:
                continue
            if load[m] + size[n] > hi or load[here] - size[n] < lo:
                continue
            if best is None or gain > best[0]:
                best = (gain, n, m)
    if best is None:
        return False
    _, n, m = best
    load[assignment[n]] -= size[n]
    load[m] += size[n]
    assignment[n] = m
    return True


def _best_swap(free, adj, assignment, load, size, lo, hi) -> bool:
    k = len(load)
    links = {n: _links(adj, n, assignment, k) for n in free}
    best = None
    for i, u in enumerate(free):
        mu = assignment[u]
        for v in free[i + 1:]:
            mv = assignment[v]
            if mu == mv:
                continue
            shared = adj[u].get(v, 0)
            gain = links[u][mv] - links[u][mu] + links[v][mu] - links[v][mv] - 2 * shared
            if gain <= 0:
                continue
            delta = size[v] - size[u]
            if not (lo <= load[mu] + delta <= hi and lo <= load[mv] - delta <= hi):
                continue
            if best is None or gain > best[0]:
                best = (gain, u, v)
    if best is None:
        return False
    _, u, v = best
    mu, mv = assignment[u], assignment[v]
    delta = size[v] - size[u]
    load[mu] += delta
    load[mv] -= delta
    assignment[u], assignment[v] = mv, mu
    return True
