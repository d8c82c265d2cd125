"""Monte Carlo node-to-target connectivity, plus an exact enumeration oracle.

Each draw fails bridges independently; an edge is down when any of its
bridges is down. One reachability sweep from the target per draw labels
every source at once. Draws are generated in fixed-size chunks, each with
its own child seed, so the estimate does not depend on how chunks are
scheduled across workers.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .hazard import FailureField
from .network import Network, is_connected


class McError(ValueError):
    pass


@dataclass(frozen=True)
class McConfig:
    max_samples: int = 10_000
    std_threshold: float = 0.01
    check_interval: int = 500
    min_samples: int = 1_000
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.max_samples < 1:
            raise McError("max_samples must be >= 1")
        if not 0 < self.std_threshold < 1:
            raise McError("std_threshold must lie in (0, 1)")
        if self.check_interval < 1 or self.min_samples < 1 or self.workers < 1:
            raise McError("check_interval, min_samples and workers must be >= 1")


@dataclass(frozen=True, eq=False)
class ConnectivityEstimate:
    target: int
    probability: np.ndarray
    std_error: np.ndarray
    samples: np.ndarray

    def rows(self):
        for v in range(len(self.probability)):
            yield (v, self.target, float(self.probability[v]),
                   float(self.std_error[v]), int(self.samples[v]))


def sample_damage(net: Network, field: FailureField, rng: np.random.Generator) -> set[int]:
    """One damage realisation: the set of failed edge ids."""
    field.check_matches(net)
    if field.bridge_probs is not None:
        broken = rng.random(len(field.bridge_probs)) < field.bridge_probs
        down = np.zeros(net.n_edges, dtype=bool)
        down[net.bridge_edge_index[broken]] = True
    else:
        down = rng.random(net.n_edges) < field.edge_probs
    return {net.edges[k].id for k in np.flatnonzero(down)}


def reach_from_target(net: Network, alive: np.ndarray, t: int) -> np.ndarray:
    """For a (draws, |E|) survival mask, a (draws, |V|) mask of nodes reaching ``t``.

    All draws are stacked into one block-diagonal graph so a single
    connected-components pass labels them together.
    """
    draws = alive.shape[0]
    n = net.n_nodes
    k, e = np.nonzero(alive)
    ends = net.endpoints
    rows = k * n + ends[e, 0]
    cols = k * n + ends[e, 1]
    g = coo_matrix((np.ones(len(rows), dtype=np.int8), (rows, cols)),
                   shape=(draws * n, draws * n)).tocsr()
    _, labels = connected_components(g, directed=False)
    labels = labels.reshape(draws, n)
    return labels == labels[:, t:t + 1]


def _chunk_hits(net: Network, edge_probs: np.ndarray, t: int, seed: int, chunk: int,
                size: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(chunk,)))
    alive = rng.random((size, net.n_edges)) >= edge_probs
    return reach_from_target(net, alive, t).sum(axis=0)


def estimate_connectivity(net: Network, field: FailureField, t: int,
                          cfg: McConfig = McConfig()) -> ConnectivityEstimate:
    """Estimate P(s connected to t) for every node s.

    Draws accumulate in chunks of ``check_interval``; after at least
    ``min_samples`` draws the run stops once every node's standard error
    falls below ``std_threshold``, and never exceeds ``max_samples``.
    """
    net.check_node(t)
    field.check_matches(net)
    p = field.edge_probs
    step = cfg.check_interval
    hits = np.zeros(net.n_nodes, dtype=np.int64)
    done = 0
    chunk = 0
    pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    try:
        converged = False
        while done < cfg.max_samples and not converged:
            # a wave of up to `workers` chunks; results are folded in chunk
            # order and the stopping rule is applied after every chunk
            wave = []
            budget = done
            while len(wave) < cfg.workers and budget < cfg.max_samples:
                size = min(step, cfg.max_samples - budget)
                wave.append((chunk, size))
                chunk += 1
                budget += size
            if pool is None:
                results = (_chunk_hits(net, p, t, cfg.seed, c, s) for c, s in wave)
            else:
                results = pool.map(lambda cs: _chunk_hits(net, p, t, cfg.seed, *cs), wave)
            for (_, size), h in zip(wave, results):
                hits += h
                done += size
                if done >= cfg.min_samples:
                    phat = hits / done
                    if np.all(np.sqrt(phat * (1 - phat) / done) < cfg.std_threshold):
                        converged = True
                        break
    finally:
        if pool is not None:
            pool.shutdown()
    phat = hits / done
    return ConnectivityEstimate(
        target=t, probability=phat,
        std_error=np.sqrt(phat * (1 - phat) / done),
        samples=np.full(net.n_nodes, done, dtype=np.int64))


def exact_connectivity(net: Network, field: FailureField, s: int, t: int,
                       max_uncertain: int = 20) -> float:
    """Two-terminal reliability by enumerating every uncertain-edge state."""
    net.check_node(s)
    net.check_node(t)
    field.check_matches(net)
    p = field.edge_probs
    certain_dead = [net.edges[k].id for k in np.flatnonzero(p == 1.0)]
    uncertain = [k for k in range(net.n_edges) if 0.0 < p[k] < 1.0]
    if len(uncertain) > max_uncertain:
        raise McError(f"{len(uncertain)} uncertain edges exceed the limit of {max_uncertain}")
    ids = [net.edges[k].id for k in uncertain]
    total = 0.0
    for state in itertools.product((False, True), repeat=len(uncertain)):
        prob = 1.0
        failed = list(certain_dead)
        for k, eid, down in zip(uncertain, ids, state):
            if down:
                prob *= p[k]
                failed.append(eid)
            else:
                prob *= 1.0 - p[k]
        if is_connected(net, failed, s, t):
            total += prob
    return total
