"""Transportation network model: nodes are intersections, edges are roadway
segments, and each edge carries zero or more bridges.

The network is immutable once loaded. Reachability helpers work on edge
*ids* at the public boundary and on edge *indices* (position in
``Network.edges``) internally.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable

import numpy as np

logger = logging.getLogger(__name__)

UNREACHABLE = -1

NODE_COLUMNS = ("id", "lon", "lat")
EDGE_COLUMNS = ("id", "u", "v")
BRIDGE_COLUMNS = (
    "id", "edge_id", "lon", "lat", "bridge_class", "built_year", "material",
    "structure_type", "num_spans", "max_span_m", "length_m", "skew_deg",
)


class NetworkError(ValueError):
    pass


class NetworkParseError(NetworkError):
    pass


class NetworkValidationError(NetworkError):
    pass


@dataclass(frozen=True)
class NodeRecord:
    id: int
    lon: float
    lat: float


@dataclass(frozen=True)
class EdgeRecord:
    id: int
    u: int
    v: int
    bridge_ids: tuple[int, ...] = ()


@dataclass(frozen=True)
class BridgeRecord:
    id: int
    edge_id: int
    lon: float
    lat: float
    bridge_class: str
    built_year: int = 1970
    material: str = "concrete"
    structure_type: str = "multi-column"
    num_spans: int = 3
    max_span_m: float = 30.0
    length_m: float = 90.0
    skew_deg: float = 0.0

    @property
    def attributes(self) -> dict:
        return {k: getattr(self, k) for k in BRIDGE_COLUMNS[5:]}


@dataclass(frozen=True, eq=False)
class Network:
    nodes: tuple[NodeRecord, ...]
    edges: tuple[EdgeRecord, ...]
    bridges: tuple[BridgeRecord, ...] = field(default=())

    def __post_init__(self):
        validate(self)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def edge_index(self) -> dict[int, int]:
        return {e.id: i for i, e in enumerate(self.edges)}

    @cached_property
    def bridge_index(self) -> dict[int, int]:
        return {b.id: i for i, b in enumerate(self.bridges)}

    @cached_property
    def endpoints(self) -> np.ndarray:
        """(|E|, 2) int array of edge endpoints, row order = ``edges``."""
        arr = np.array([(e.u, e.v) for e in self.edges], dtype=np.int64)
        return arr.reshape(-1, 2)

    @cached_property
    def adjacency(self) -> tuple[tuple[tuple[int, int], ...], ...]:
        """Per node, the sorted tuple of ``(neighbor, edge_index)`` pairs."""
        adj: list[list[tuple[int, int]]] = [[] for _ in self.nodes]
        for k, e in enumerate(self.edges):
            adj[e.u].append((e.v, k))
            adj[e.v].append((e.u, k))
        return tuple(tuple(sorted(a)) for a in adj)

    @cached_property
    def degree(self) -> np.ndarray:
        return np.array([len(a) for a in self.adjacency], dtype=np.int64)

    @cached_property
    def bridge_edge_index(self) -> np.ndarray:
        """Edge index of every bridge, in bridge order."""
        idx = self.edge_index
        return np.array([idx[b.edge_id] for b in self.bridges], dtype=np.int64)

    @cached_property
    def fingerprint(self) -> str:
        """Stable structural key (used to cache per-graph operators)."""
        import hashlib

        h = hashlib.sha1()
        h.update(np.int64(self.n_nodes).tobytes())
        h.update(np.ascontiguousarray(self.endpoints).tobytes())
        return h.hexdigest()

    def check_node(self, v: int) -> None:
        if not (isinstance(v, (int, np.integer)) and 0 <= v < self.n_nodes):
            raise NetworkError(f"unknown node id {v!r}")


def validate(net: Network) -> None:
    """Raise NetworkValidationError naming the first violated invariant."""
    for i, nd in enumerate(net.nodes):
        if nd.id != i:
            raise NetworkValidationError(
                f"node ids must be contiguous from 0: position {i} has id {nd.id}")
        if not (math.isfinite(nd.lon) and math.isfinite(nd.lat)):
            raise NetworkValidationError(f"node {nd.id}: non-finite coordinates")
    n = len(net.nodes)
    seen_ids: set[int] = set()
    seen_pairs: set[tuple[int, int]] = set()
    for e in net.edges:
        if e.id in seen_ids:
            raise NetworkValidationError(f"duplicate edge id {e.id}")
        seen_ids.add(e.id)
        for end in (e.u, e.v):
            if not 0 <= end < n:
                raise NetworkValidationError(
                    f"edge {e.id}: endpoint {end} is not a node")
        if e.u == e.v:
            raise NetworkValidationError(f"edge {e.id}: self-loop on node {e.u}")
        pair = (min(e.u, e.v), max(e.u, e.v))
        if pair in seen_pairs:
            raise NetworkValidationError(
                f"edge {e.id}: parallel edge between {pair[0]} and {pair[1]}")
        seen_pairs.add(pair)

    edge_by_id = {e.id: e for e in net.edges}
    owner: dict[int, int] = {}
    for e in net.edges:
        for b in e.bridge_ids:
            if b in owner:
                raise NetworkValidationError(
                    f"bridge {b} listed on edges {owner[b]} and {e.id}")
            owner[b] = e.id
    bridge_ids = set()
    for b in net.bridges:
        if b.id in bridge_ids:
            raise NetworkValidationError(f"duplicate bridge id {b.id}")
        bridge_ids.add(b.id)
        if b.edge_id not in edge_by_id:
            raise NetworkValidationError(
                f"bridge {b.id}: edge_id {b.edge_id} does not exist")
        if owner.get(b.id) != b.edge_id:
            raise NetworkValidationError(
                f"bridge {b.id}: not listed on its edge {b.edge_id}")
        if not (math.isfinite(b.lon) and math.isfinite(b.lat)):
            raise NetworkValidationError(f"bridge {b.id}: non-finite coordinates")
        if not b.bridge_class:
            raise NetworkValidationError(f"bridge {b.id}: empty bridge_class")
    missing = set(owner) - bridge_ids
    if missing:
        raise NetworkValidationError(
            f"edge lists unknown bridge id {min(missing)}")

    if n and not _connected_undamaged(n, net.edges):
        raise NetworkValidationError("network is not connected")


def _connected_undamaged(n: int, edges: Iterable[EdgeRecord]) -> bool:
    adj: list[list[int]] = [[] for _ in range(n)]
    for e in edges:
        adj[e.u].append(e.v)
        adj[e.v].append(e.u)
    seen = [False] * n
    seen[0] = True
    queue = deque([0])
    count = 1
    while queue:
        u = queue.popleft()
        for w in adj[u]:
            if not seen[w]:
                seen[w] = True
                count += 1
                queue.append(w)
    return count == n


def build_network(nodes, edges, bridges) -> Network:
    """Assemble a Network from raw records.

    ``edges`` are ``(id, u, v)`` triples; bridge lists are derived from
    ``bridges``. Parallel edges between the same node pair are merged into
    the lowest-id edge, and their bridges are re-pointed at it.
    """
    nodes = tuple(sorted(nodes, key=lambda r: r.id))
    merged: dict[tuple[int, int], int] = {}
    alias: dict[int, int] = {}
    raw = sorted(edges, key=lambda r: r[0])
    kept = []
    for eid, u, v in raw:
        pair = (min(u, v), max(u, v))
        if u != v and pair in merged:
            logger.warning("merging parallel edge %d into edge %d", eid, merged[pair])
            alias[eid] = merged[pair]
            continue
        merged[pair] = eid
        kept.append((eid, u, v))

    fixed_bridges = []
    on_edge: dict[int, list[int]] = {}
    for b in sorted(bridges, key=lambda r: r.id):
        if b.edge_id in alias:
            b = BridgeRecord(**{**b.__dict__, "edge_id": alias[b.edge_id]})
        fixed_bridges.append(b)
        on_edge.setdefault(b.edge_id, []).append(b.id)
    edge_recs = tuple(
        EdgeRecord(eid, u, v, tuple(on_edge.get(eid, ()))) for eid, u, v in kept)
    known = {e.id for e in edge_recs}
    for b in fixed_bridges:
        if b.edge_id not in known:
            raise NetworkValidationError(
                f"bridge {b.id}: edge_id {b.edge_id} does not exist")
    return Network(nodes, edge_recs, tuple(fixed_bridges))


# -- ingestion ---------------------------------------------------------------

def _read_csv(path: Path, columns: tuple[str, ...]) -> list[dict]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None:
                raise NetworkParseError(f"{path}: missing header row")
            absent = [c for c in columns if c not in reader.fieldnames]
            if absent:
                raise NetworkParseError(f"{path}: missing columns {absent}")
            return list(reader)
    except OSError as exc:
        raise NetworkParseError(f"{path}: {exc}") from exc


def _bridge_from_props(p: dict, where: str) -> BridgeRecord:
    try:
        return BridgeRecord(
            id=int(p["id"]),
            edge_id=int(p["edge_id"]),
            lon=float(p["lon"]),
            lat=float(p["lat"]),
            bridge_class=str(p["bridge_class"]).strip(),
            built_year=int(p["built_year"]),
            material=str(p["material"]).strip(),
            structure_type=str(p["structure_type"]).strip(),
            num_spans=int(p["num_spans"]),
            max_span_m=float(p["max_span_m"]),
            length_m=float(p["length_m"]),
            skew_deg=float(p["skew_deg"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise NetworkParseError(f"{where}: bad bridge record ({exc})") from exc


def _load_csv_pair(directory: Path) -> Network:
    rows_n = _read_csv(directory / "nodes.csv", NODE_COLUMNS)
    rows_e = _read_csv(directory / "edges.csv", EDGE_COLUMNS)
    bpath = directory / "bridges.csv"
    rows_b = _read_csv(bpath, BRIDGE_COLUMNS) if bpath.exists() else []
    try:
        nodes = [NodeRecord(int(r["id"]), float(r["lon"]), float(r["lat"])) for r in rows_n]
        edges = [(int(r["id"]), int(r["u"]), int(r["v"])) for r in rows_e]
    except (TypeError, ValueError) as exc:
        raise NetworkParseError(f"{directory}: {exc}") from exc
    bridges = [_bridge_from_props(r, str(bpath)) for r in rows_b]
    return build_network(nodes, edges, bridges)


def _load_geojson(path: Path) -> Network:
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise NetworkParseError(f"{path}: {exc}") from exc
    if doc.get("type") != "FeatureCollection":
        raise NetworkParseError(f"{path}: expected a FeatureCollection")
    nodes, edges, bridges = [], [], []
    for i, feat in enumerate(doc.get("features", [])):
        geom = feat.get("geometry") or {}
        props = feat.get("properties") or {}
        where = f"{path}: feature {i}"
        try:
            if geom.get("type") == "LineString":
                edges.append((int(props["id"]), int(props["u"]), int(props["v"])))
            elif geom.get("type") == "Point":
                lon, lat = geom["coordinates"][:2]
                if props.get("kind") == "node":
                    nodes.append(NodeRecord(int(props["id"]), float(lon), float(lat)))
                else:
                    bridges.append(_bridge_from_props({**props, "lon": lon, "lat": lat}, where))
            else:
                raise NetworkParseError(f"{where}: unsupported geometry {geom.get('type')!r}")
        except (KeyError, TypeError, ValueError) as exc:
            raise NetworkParseError(f"{where}: {exc}") from exc
    return build_network(nodes, edges, bridges)


def load_network(path, format: str = "csv-pair") -> Network:
    """Load and validate a network.

    ``csv-pair`` expects a directory with ``nodes.csv``, ``edges.csv`` and
    (optionally) ``bridges.csv``; ``geojson`` expects a FeatureCollection file.
    """
    path = Path(path)
    if not path.exists():
        raise NetworkParseError(f"{path}: no such file or directory")
    if format == "csv-pair":
        return _load_csv_pair(path)
    if format == "geojson":
        return _load_geojson(path)
    raise NetworkError(f"unknown network format {format!r}")


def save_network(net: Network, directory) -> None:
    """Write the csv-pair layout."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "nodes.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(NODE_COLUMNS)
        for nd in net.nodes:
            w.writerow((nd.id, repr(nd.lon), repr(nd.lat)))
    with open(directory / "edges.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EDGE_COLUMNS)
        for e in net.edges:
            w.writerow((e.id, e.u, e.v))
    with open(directory / "bridges.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BRIDGE_COLUMNS)
        for b in net.bridges:
            w.writerow([getattr(b, c) if not isinstance(getattr(b, c), float)
                        else repr(getattr(b, c)) for c in BRIDGE_COLUMNS])


def to_geojson(net: Network) -> dict:
    feats = []
    for nd in net.nodes:
        feats.append({"type": "Feature",
                      "geometry": {"type": "Point", "coordinates": [nd.lon, nd.lat]},
                      "properties": {"kind": "node", "id": nd.id}})
    for e in net.edges:
        a, b = net.nodes[e.u], net.nodes[e.v]
        feats.append({"type": "Feature",
                      "geometry": {"type": "LineString",
                                   "coordinates": [[a.lon, a.lat], [b.lon, b.lat]]},
                      "properties": {"id": e.id, "u": e.u, "v": e.v}})
    for br in net.bridges:
        props = {c: getattr(br, c) for c in BRIDGE_COLUMNS if c not in ("lon", "lat")}
        feats.append({"type": "Feature",
                      "geometry": {"type": "Point", "coordinates": [br.lon, br.lat]},
                      "properties": props})
    return {"type": "FeatureCollection", "features": feats}


# -- reachability ------------------------------------------------------------

def is_connected(net: Network, failed_edges, s: int, t: int) -> bool:
    """True iff ``s`` reaches ``t`` without using any edge id in ``failed_edges``."""
    net.check_node(s)
    net.check_node(t)
    if s == t:
        return True
    idx = net.edge_index
    dead = {idx[e] for e in failed_edges if e in idx}
    adj = net.adjacency
    seen = bytearray(net.n_nodes)
    seen[s] = 1
    queue = deque([s])
    while queue:
        u = queue.popleft()
        for w, k in adj[u]:
            if seen[w] or k in dead:
                continue
            if w == t:
                return True
            seen[w] = 1
            queue.append(w)
    return False


def shortest_hops(net: Network, t: int) -> np.ndarray:
    """Hop distance from every node to ``t`` on the undamaged graph."""
    net.check_node(t)
    hops = np.full(net.n_nodes, UNREACHABLE, dtype=np.int64)
    hops[t] = 0
    queue = deque([t])
    adj = net.adjacency
    while queue:
        u = queue.popleft()
        for w, _ in adj[u]:
            if hops[w] == UNREACHABLE:
                hops[w] = hops[u] + 1
                queue.append(w)
    return hops
