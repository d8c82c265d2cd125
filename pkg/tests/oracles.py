"""Independent reference implementations used to check the package."""

import itertools
import math

import networkx as nx


def nx_graph(net, failed=()):
    g = nx.Graph()
    g.add_nodes_from(range(net.n_nodes))
    failed = set(failed)
    for e in net.edges:
        if e.id not in failed:
            g.add_edge(e.u, e.v)
    return g


def two_terminal(net, edge_probs, s, t):
    """Brute-force two-terminal reliability via networkx reachability."""
    idx = [k for k, p in enumerate(edge_probs) if 0.0 < p < 1.0]
    dead = [net.edges[k].id for k, p in enumerate(edge_probs) if p >= 1.0]
    total = 0.0
    for state in itertools.product((0, 1), repeat=len(idx)):
        w = 1.0
        failed = list(dead)
        for k, down in zip(idx, state):
            w *= edge_probs[k] if down else 1.0 - edge_probs[k]
            if down:
                failed.append(net.edges[k].id)
        if nx.has_path(nx_graph(net, failed), s, t):
            total += w
    return total


def hand_pga(m, r, vs30, c1, c2, c3, c4, c5, c6, v_ref):
    return math.exp(c1 + c2 * m - c3 * math.log(r + c4 * math.exp(c5 * m))
                    + c6 * math.log(vs30 / v_ref))


def std_normal_cdf(x):
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def truncated_exp_mean(rate, upper):
    return 1.0 / rate - upper * math.exp(-rate * upper) / (1.0 - math.exp(-rate * upper))
