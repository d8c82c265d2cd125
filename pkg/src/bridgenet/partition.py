"""Balanced graph partitioning by seeded BFS region growing.

Seeds are spread out by farthest-point selection on hop distance. Regions
grow one node at a time, always extending the currently smallest region
that still has an unassigned neighbour, so every region stays connected.
A rebalancing pass then shifts boundary nodes toward small regions, along
chains of neighbouring regions, while keeping every region connected.
Several seed placements are tried before balance is forced at the cost of
connectivity.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import breadth_first_order, minimum_spanning_tree

from .network import Network, shortest_hops

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Partition:
    assignment: tuple[int, ...]
    part_count: int

    @property
    def sizes(self) -> list[int]:
        return np.bincount(np.asarray(self.assignment), minlength=self.part_count).tolist()

    def members(self, part: int) -> list[int]:
        return [v for v, p in enumerate(self.assignment) if p == part]


def _spread_seeds(net: Network, parts: int, rng: np.random.Generator) -> list[int]:
    n = net.n_nodes
    seeds = [int(rng.integers(n))]
    dist = shortest_hops(net, seeds[0]).astype(float)
    dist[dist < 0] = np.inf
    while len(seeds) < parts:
        d = dist.copy()
        d[seeds] = -1
        best = np.flatnonzero(d == d.max())
        nxt = int(best[rng.integers(len(best))])
        seeds.append(nxt)
        h = shortest_hops(net, nxt).astype(float)
        h[h < 0] = np.inf
        dist = np.minimum(dist, h)
    return seeds


def _still_connected(net: Network, members: set[int], removed: int) -> bool:
    rest = members - {removed}
    if not rest:
        return False
    start = next(iter(rest))
    seen = {start}
    queue = deque([start])
    while queue:
        u = queue.popleft()
        for w, _ in net.adjacency[u]:
            if w in rest and w not in seen:
                seen.add(w)
                queue.append(w)
    return len(seen) == len(rest)


def _grow(net: Network, parts: int, rng: np.random.Generator) -> np.ndarray:
    n = net.n_nodes
    seeds = _spread_seeds(net, parts, rng)
    assign = np.full(n, -1, dtype=np.int64)
    sizes = np.zeros(parts, dtype=np.int64)
    frontier = [deque() for _ in range(parts)]
    for p, s in enumerate(seeds):
        assign[s] = p
        sizes[p] = 1
        frontier[p].append(s)

    adj = net.adjacency
    remaining = n - parts
    while remaining:
        grew = False
        for p in np.argsort(sizes, kind="stable"):
            q = frontier[p]
            while q:
                cand = next((w for w, _ in adj[q[0]] if assign[w] < 0), None)
                if cand is None:
                    q.popleft()
                    continue
                assign[cand] = p
                sizes[p] += 1
                q.append(cand)
                remaining -= 1
                grew = True
                break
            if grew:
                break
        if not grew:
            # nodes unreachable from every seed (only in a disconnected graph)
            v = int(np.flatnonzero(assign < 0)[0])
            p = int(np.argmin(sizes))
            assign[v] = p
            sizes[p] += 1
            frontier[p].append(v)
            remaining -= 1
    return assign


def _parts_connected(net: Network, assign: np.ndarray, parts: int) -> bool:
    for p in range(parts):
        members = set(np.flatnonzero(assign == p).tolist())
        # removing a sentinel that is not a member tests the whole set
        if not members or not _still_connected(net, members | {-1}, -1):
            return False
    return True


def partition(net: Network, parts: int, seed: int = 0, slack: int = 2,
              attempts: int = 16) -> Partition:
    """Split the nodes of ``net`` into ``parts`` balanced, connected regions.

    Up to ``attempts`` seed placements are tried; the first whose regions
    are connected and within the size bound is returned. If none qualifies,
    the size bound is enforced by moves that may split a region.
    """
    n = net.n_nodes
    if not 1 <= parts <= n:
        raise ValueError(f"parts must be in [1, {n}], got {parts}")
    if parts == 1:
        return Partition(tuple([0] * n), 1)
    bound = math.ceil(n / parts) - n // parts + slack
    first = None
    for k in range(attempts):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(k,)))
        assign = _grow(net, parts, rng)
        _rebalance(net, assign, parts)
        _merge_split(net, assign, parts, rng)
        sizes = np.bincount(assign, minlength=parts)
        if sizes.max() - sizes.min() <= bound and _parts_connected(net, assign, parts):
            return Partition(tuple(int(a) for a in assign), parts)
        first = assign if first is None else first
    _force_balance(net, first, parts, bound)
    return Partition(tuple(int(a) for a in first), parts)


def _rebalance(net: Network, assign: np.ndarray, parts: int) -> None:
    """Shift nodes toward the smallest region without disconnecting any region.

    A move may be a chain: the smallest region takes a boundary node from a
    neighbour, which refills from its own neighbour, and so on until a region
    at least two larger has given up one node.
    """
    n = net.n_nodes
    tight = math.ceil(n / parts) - n // parts
    members = [set(np.flatnonzero(assign == p).tolist()) for p in range(parts)]
    sizes = np.array([len(m) for m in members])
    adj = net.adjacency

    def donations(receiver: int):
        """(node, donor) pairs that ``donor`` can hand to ``receiver`` and stay connected."""
        out = {}
        for u in sorted(members[receiver]):
            for w, _ in adj[u]:
                d = int(assign[w])
                if d != receiver and d not in out and _still_connected(net, members[d], w):
                    out[d] = w
        return out

    def find_chain(small: int):
        prev = {small: None}
        queue = deque([small])
        while queue:
            r = queue.popleft()
            for d, w in sorted(donations(r).items()):
                if d in prev:
                    continue
                prev[d] = (r, w)
                if sizes[d] >= sizes[small] + 2:
                    chain = []
                    while prev[d] is not None:
                        r_, w_ = prev[d]
                        chain.append((w_, d, r_))
                        d = r_
                    return chain[::-1]
                queue.append(d)
        return None

    def move(v: int, d: int, r: int) -> None:
        members[d].discard(v)
        members[r].add(v)
        assign[v] = r
        sizes[d] -= 1
        sizes[r] += 1

    for _ in range(4 * n):
        if sizes.max() - sizes.min() <= tight:
            return
        progressed = False
        for small in np.argsort(sizes, kind="stable"):
            if sizes[small] + 2 > sizes.max():
                break
            chain = find_chain(int(small))
            if chain is None:
                continue
            # apply from the receiving end; re-check each step on the live state
            for v, d, r in chain:
                if not (_still_connected(net, members[d], v)
                        and any(assign[w] == r for w, _ in adj[v])):
                    break
                move(v, d, r)
                progressed = True
            if progressed:
                break
        if not progressed:
            return


def _split_tree(net: Network, nodes: list[int], rng: np.random.Generator):
    """Random spanning tree of ``nodes``; returns the subtree cut off by the most even split."""
    local = {v: i for i, v in enumerate(nodes)}
    rows, cols = [], []
    for v in nodes:
        for w, _ in net.adjacency[v]:
            if w in local and local[w] > local[v]:
                rows.append(local[v])
                cols.append(local[w])
    m = len(nodes)
    weights = rng.random(len(rows)) + 1.0  # strictly positive so no edge is dropped
    tree = minimum_spanning_tree(coo_matrix((weights, (rows, cols)), shape=(m, m)))
    order, parent = breadth_first_order(tree, 0, directed=False)
    if len(order) != m:
        return None
    size = np.ones(m, dtype=np.int64)
    for i in order[:0:-1]:
        size[parent[i]] += size[i]
    gap = np.abs(2 * size[1:] - m) if m > 1 else np.array([m])
    best = np.flatnonzero(gap == gap.min())
    root = int(order[1:][best[rng.integers(len(best))]]) if m > 1 else 0
    # collect the subtree under `root`
    children: dict[int, list[int]] = {}
    for i in order[1:]:
        children.setdefault(int(parent[i]), []).append(int(i))
    sub, stack = [], [root]
    while stack:
        i = stack.pop()
        sub.append(nodes[i])
        stack.extend(children.get(i, ()))
    return sub


def _merge_split(net: Network, assign: np.ndarray, parts: int, rng: np.random.Generator,
                 steps: int = 0) -> None:
    """Even out adjacent region pairs by re-splitting their union along a spanning tree.

    A step never widens the pair's size gap, so regions stay connected and
    the size spread never grows; equal-gap steps reshape regions so later
    steps can find an even cut. The best assignment seen is kept.
    """
    n = net.n_nodes
    tight = math.ceil(n / parts) - n // parts
    steps = steps or 4 * parts + n

    def score(sizes):
        return (int(sizes.max() - sizes.min()), int(((sizes - n / parts) ** 2).sum() * 4))

    sizes = np.bincount(assign, minlength=parts)
    best, best_score = assign.copy(), score(sizes)
    pairs = sorted({(min(int(assign[e.u]), int(assign[e.v])), max(int(assign[e.u]), int(assign[e.v])))
                    for e in net.edges if assign[e.u] != assign[e.v]})
    if not pairs:
        return
    for _ in range(steps):
        if best_score[0] <= tight:
            break
        big = [ab for ab in pairs if abs(sizes[ab[0]] - sizes[ab[1]]) >= 2]
        pool = big if big and rng.random() < 0.5 else pairs
        a, b = pool[rng.integers(len(pool))]
        union = np.flatnonzero((assign == a) | (assign == b)).tolist()
        sub = _split_tree(net, union, rng)
        if sub is None or abs(2 * len(sub) - len(union)) > abs(sizes[a] - sizes[b]):
            continue
        assign[union] = b
        assign[sub] = a
        sizes = np.bincount(assign, minlength=parts)
        pairs = sorted({(min(int(assign[e.u]), int(assign[e.v])),
                         max(int(assign[e.u]), int(assign[e.v])))
                        for e in net.edges if assign[e.u] != assign[e.v]})
        sc = score(sizes)
        if sc < best_score:
            best, best_score = assign.copy(), sc
    assign[:] = best


def _force_balance(net: Network, assign: np.ndarray, parts: int, bound: int) -> None:
    members = [set(np.flatnonzero(assign == p).tolist()) for p in range(parts)]
    sizes = np.array([len(m) for m in members])
    while sizes.max() - sizes.min() > bound:
        donor, r = int(np.argmax(sizes)), int(np.argmin(sizes))
        v = next((v for v in sorted(members[donor])
                  if any(assign[w] == r for w, _ in net.adjacency[v])), min(members[donor]))
        logger.warning("partition: moving node %d breaks region connectivity", v)
        members[donor].discard(v)
        members[r].add(v)
        assign[v] = r
        sizes[donor] -= 1
        sizes[r] += 1
