import itertools
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from dspscale.errors import CapacityExceeded
from dspscale.partition import cut_size, place_nodes, random_balanced
from dspscale.verify import exhaustive_min_cut, two_cliques


def brute_force_min_cut(nodes, edges, k):
    """Smallest cut over every assignment with part sizes differing by at most one."""
    lo, hi = len(nodes) // k, -(-len(nodes) // k)
    best = None
    for parts in itertools.product(range(k), repeat=len(nodes)):
        sizes = [parts.count(m) for m in range(k)]
        if min(sizes) < lo or max(sizes) > hi:
            continue
        cut = sum(1 for a, b in edges if parts[a] != parts[b])
        best = cut if best is None else min(best, cut)
    return best


def test_single_machine():
    nodes, edges = two_cliques()
    placement = place_nodes(nodes, edges, 1)
    assert set(placement.values()) == {0}
    assert cut_size(edges, placement) == 0


def test_two_cliques_optimum():
    nodes, edges = two_cliques()
    assert exhaustive_min_cut(nodes, edges) == 1
    assert brute_force_min_cut(nodes, edges, 2) == 1
    placement = place_nodes(nodes, edges, 2)
    assert cut_size(edges, placement) == 1
    assert len({placement[n] for n in (0, 1, 2)}) == 1


def test_not_worse_than_random_on_twenty_nodes():
    wins = 0
    for seed in range(40):
        rng = random.Random(seed)
        nodes = list(range(20))
        edges = [(a, b) for a, b in itertools.combinations(nodes, 2) if rng.random() < 0.2]
        greedy = cut_size(edges, place_nodes(nodes, edges, 2, seed=seed))
        baseline = cut_size(edges, random_balanced(nodes, 2, random.Random(seed)))
        wins += greedy <= baseline
    assert wins >= 38


def test_capacity_exceeded():
    with pytest.raises(CapacityExceeded):
        place_nodes([1, 2, 3], [], 2, sizes={1: 10, 2: 10, 3: 10}, capacity=12)


def test_hints_are_honoured():
    nodes, edges = two_cliques()
    placement = place_nodes(nodes, edges, 2, hints={0: 1, 5: 0})
    assert placement[0] == 1 and placement[5] == 0


def test_deterministic():
    rng = random.Random(3)
    nodes = list(range(30))
    edges = [(rng.randrange(30), rng.randrange(30)) for _ in range(60)]
    assert place_nodes(nodes, edges, 3, seed=7) == place_nodes(nodes, edges, 3, seed=7)


graphs = st.integers(2, 9).flatmap(
    lambda n: st.tuples(
        st.just(n),
        st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=2 * n),
        st.integers(2, 3),
    )
)


@given(graphs, st.integers(0, 5))
def test_balanced_and_never_below_optimum(graph, seed):
    n, edges, k = graph
    nodes = list(range(n))
    placement = place_nodes(nodes, edges, k, seed=seed)
    loads = [sum(1 for v in placement.values() if v == m) for m in range(k)]
    mean = n / k
    # within 20% of the mean, or as close as whole nodes allow
    assert all(abs(load - mean) <= max(0.2 * mean, 1) for load in loads)
    assert cut_size(edges, placement) >= brute_force_min_cut(nodes, [e for e in edges if e[0] != e[1]], k)
