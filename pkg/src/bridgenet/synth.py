"""Synthetic bridge networks with prescribed node/edge/bridge counts.

Nodes are scattered in a square region around a reference point; candidate
roads are Delaunay edges, a minimum spanning tree guarantees connectivity
and the shortest remaining candidates fill up the edge budget. Bridges are
dropped onto edges with probability proportional to edge length.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.spatial import Delaunay

from .hazard import classify_bridge
from .network import BridgeRecord, Network, NodeRecord, build_network

KM_PER_DEG_LAT = 111.195
DEFAULT_CENTER = (-121.89, 37.34)
KM_PER_NODE_SIDE = 4.5  # region side grows with sqrt(node count)

LEVELS = {
    1: (39, 64, 245),
    2: (84, 133, 448),
    3: (103, 159, 628),
}


class SynthError(ValueError):
    pass


def _to_km(lon, lat, center):
    kx = KM_PER_DEG_LAT * math.cos(math.radians(center[1]))
    return np.column_stack([(np.asarray(lon) - center[0]) * kx,
                            (np.asarray(lat) - center[1]) * KM_PER_DEG_LAT])


def _to_lonlat(xy, center):
    kx = KM_PER_DEG_LAT * math.cos(math.radians(center[1]))
    return center[0] + xy[:, 0] / kx, center[1] + xy[:, 1] / KM_PER_DEG_LAT


def _scatter(rng, n_new, side, existing, min_sep):
    pts = list(existing)
    out = []
    tries = 0
    while len(out) < n_new:
        p = rng.uniform(-side / 2, side / 2, size=2)
        tries += 1
        if tries > 200 * (n_new + 10):
            min_sep *= 0.8
            tries = 0
        if all(np.hypot(*(p - q)) >= min_sep for q in pts):
            pts.append(p)
            out.append(p)
    return np.array(out).reshape(-1, 2)


def _candidate_edges(xy):
    n = len(xy)
    if n == 2:
        return [(0, 1)]
    tri = Delaunay(xy)
    cand = set()
    for simplex in tri.simplices:
        for a in range(3):
            u, v = sorted((int(simplex[a]), int(simplex[(a + 1) % 3])))
            cand.add((u, v))
    return sorted(cand)


def _pick_edges(xy, candidates, n_edges, joined):
    """Kruskal over ``candidates``; ``joined`` nodes start in one component."""
    parent = list(range(len(xy)))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for v in joined[1:]:
        parent[find(v)] = find(joined[0])
    length = {e: float(np.hypot(*(xy[e[0]] - xy[e[1]]))) for e in candidates}
    order = sorted(candidates, key=lambda e: (length[e], e))
    chosen, rest = [], []
    for e in order:
        a, b = find(e[0]), find(e[1])
        if a != b:
            parent[a] = b
            chosen.append(e)
        else:
            rest.append(e)
    if len(chosen) > n_edges:
        raise SynthError(f"need at least {len(chosen)} edges to connect the graph")
    extra = n_edges - len(chosen)
    if extra > len(rest):
        raise SynthError(
            f"{n_edges} edges requested but only {len(chosen) + len(rest)} planar candidates")
    return chosen + rest[:extra], length


def _make_bridges(rng, xy, edges, length, n_bridges, first_id, center):
    if n_bridges == 0:
        return []
    if not edges:
        raise SynthError("bridges requested but there are no edges to carry them")
    w = np.array([length[(min(u, v), max(u, v))] for _, u, v in edges])
    pick = rng.choice(len(edges), size=n_bridges, p=w / w.sum())
    out = []
    for k, ei in enumerate(pick):
        eid, u, v = edges[ei]
        f = rng.uniform(0.1, 0.9)
        pos = xy[u] + f * (xy[v] - xy[u])
        lon, lat = _to_lonlat(pos[None, :], center)
        year = int(rng.integers(1935, 2016))
        material = "steel" if rng.random() < 0.3 else "concrete"
        spans = int(rng.choice([1, 2, 3, 4, 5, 6], p=[0.2, 0.2, 0.25, 0.15, 0.1, 0.1]))
        max_span = float(np.round(rng.uniform(12.0, 60.0) if rng.random() > 0.02
                                  else rng.uniform(150.0, 250.0), 1))
        bridge_len = float(np.round(max_span * spans * rng.uniform(0.7, 1.0), 1))
        out.append(BridgeRecord(
            id=first_id + k, edge_id=eid,
            lon=round(float(lon[0]), 6), lat=round(float(lat[0]), 6),
            bridge_class=classify_bridge(year, material, spans, max_span),
            built_year=year, material=material,
            structure_type="single-span" if spans == 1 else "multi-column",
            num_spans=spans, max_span_m=max_span, length_m=bridge_len,
            skew_deg=float(np.round(rng.uniform(0.0, 45.0), 1))))
    return out


def _check_counts(nodes, edges, bridges):
    if nodes < 1:
        raise SynthError("need at least one node")
    if edges < nodes - 1:
        raise SynthError(f"{edges} edges cannot connect {nodes} nodes")
    if bridges < 0:
        raise SynthError("bridge count must be non-negative")


def synthesize_network(nodes: int, edges: int, bridges: int, seed: int = 0,
                       center=DEFAULT_CENTER) -> Network:
    _check_counts(nodes, edges, bridges)
    rng = np.random.default_rng(seed)
    side = KM_PER_NODE_SIDE * math.sqrt(nodes)
    xy = _scatter(rng, nodes, side, [], 0.45 * side / math.sqrt(nodes))
    cand = _candidate_edges(xy) if nodes > 1 else []
    chosen, length = _pick_edges(xy, cand, edges, [0])
    edge_list = [(i, u, v) for i, (u, v) in enumerate(sorted(chosen))]
    lon, lat = _to_lonlat(xy, center)
    node_recs = [NodeRecord(i, round(float(lon[i]), 6), round(float(lat[i]), 6))
                 for i in range(nodes)]
    bridge_recs = _make_bridges(rng, xy, edge_list, length, bridges, 0, center)
    return build_network(node_recs, edge_list, bridge_recs)


def extend_network(base: Network, nodes: int, edges: int, bridges: int, seed: int = 0,
                   center=DEFAULT_CENTER) -> Network:
    """Grow ``base`` into a superset network with the given total counts.

    Every node, edge and bridge of ``base`` is kept with its id; new nodes
    are scattered in the enlarged region and new bridges sit on new edges.
    """
    _check_counts(nodes, edges, bridges)
    if nodes < base.n_nodes or edges < base.n_edges or bridges < len(base.bridges):
        raise SynthError("superset counts must not be smaller than the base network")
    if edges - base.n_edges < nodes - base.n_nodes:
        raise SynthError("not enough new edges to attach the new nodes")
    rng = np.random.default_rng(seed)
    old_xy = _to_km([n.lon for n in base.nodes], [n.lat for n in base.nodes], center)
    side = KM_PER_NODE_SIDE * math.sqrt(nodes)
    new_xy = _scatter(rng, nodes - base.n_nodes, side, old_xy,
                      0.45 * side / math.sqrt(nodes))
    xy = np.vstack([old_xy, new_xy])
    existing = {(min(e.u, e.v), max(e.u, e.v)) for e in base.edges}
    cand = [e for e in _candidate_edges(xy)
            if e not in existing and max(e) >= base.n_nodes]
    chosen, length = _pick_edges(xy, cand, edges - base.n_edges, list(range(base.n_nodes)))
    next_id = max((e.id for e in base.edges), default=-1) + 1
    new_edges = [(next_id + i, u, v) for i, (u, v) in enumerate(sorted(chosen))]
    lon, lat = _to_lonlat(new_xy, center)
    node_recs = list(base.nodes) + [
        NodeRecord(base.n_nodes + i, round(float(lon[i]), 6), round(float(lat[i]), 6))
        for i in range(len(new_xy))]
    first_bridge = max((b.id for b in base.bridges), default=-1) + 1
    new_bridges = _make_bridges(rng, xy, new_edges, length, bridges - len(base.bridges),
                                first_bridge, center)
    edge_list = [(e.id, e.u, e.v) for e in base.edges] + new_edges
    return build_network(node_recs, edge_list, list(base.bridges) + new_bridges)
