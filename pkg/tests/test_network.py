import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bridgenet.network import (NetworkParseError, NetworkValidationError, NodeRecord,
                               BridgeRecord, build_network, is_connected, load_network,
                               save_network, shortest_hops, to_geojson)
from conftest import make_net, path_net, random_connected_net
from oracles import nx_graph

import networkx as nx


def _write(dirpath, nodes, edges, bridges=None):
    (dirpath / "nodes.csv").write_text("id,lon,lat\n" + "".join(f"{r}\n" for r in nodes))
    (dirpath / "edges.csv").write_text("id,u,v\n" + "".join(f"{r}\n" for r in edges))
    if bridges is not None:
        head = ("id,edge_id,lon,lat,bridge_class,built_year,material,structure_type,"
                "num_spans,max_span_m,length_m,skew_deg\n")
        (dirpath / "bridges.csv").write_text(head + "".join(f"{r}\n" for r in bridges))


def test_minimal_file(tmp_path):
    _write(tmp_path, ["0,-121.9,37.3", "1,-121.8,37.3"], ["0,0,1"])
    net = load_network(tmp_path)
    assert (net.n_nodes, net.n_edges, len(net.bridges)) == (2, 1, 0)


def test_dangling_bridge_edge(tmp_path):
    _write(tmp_path, ["0,-121.9,37.3", "1,-121.8,37.3"], ["0,0,1"],
           ["0,99,-121.85,37.3,HWB5,1960,concrete,multi-column,3,30,90,0"])
    with pytest.raises(NetworkValidationError, match="edge_id 99"):
        load_network(tmp_path)


def test_malformed_file(tmp_path):
    _write(tmp_path, ["0,-121.9,37.3", "1,abc,37.3"], ["0,0,1"])
    with pytest.raises(NetworkParseError):
        load_network(tmp_path)
    (tmp_path / "edges.csv").write_text("id,a,b\n0,0,1\n")
    with pytest.raises(NetworkParseError, match="missing columns"):
        load_network(tmp_path)


@pytest.mark.parametrize("nodes,edges,msg", [
    (["0,0,0", "2,1,1"], ["0,0,2"], "contiguous"),
    (["0,0,0", "1,1,1"], ["0,0,5"], "node"),
    (["0,0,0", "1,1,1"], ["0,0,0", "1,0,1"], "self-loop"),
    (["0,0,0", "1,1,1", "2,2,2"], ["0,0,1"], "connected"),
])
def test_validation_errors(tmp_path, nodes, edges, msg):
    _write(tmp_path, nodes, edges)
    with pytest.raises(NetworkValidationError, match=msg):
        load_network(tmp_path)


def test_parallel_edges_merged():
    nodes = [NodeRecord(0, 0.0, 0.0), NodeRecord(1, 0.1, 0.0)]
    bridges = [BridgeRecord(0, 0, 0.05, 0.0, "HWB5"), BridgeRecord(1, 3, 0.05, 0.0, "HWB7")]
    net = build_network(nodes, [(0, 0, 1), (3, 1, 0)], bridges)
    assert net.n_edges == 1
    assert net.edges[0].bridge_ids == (0, 1)
    assert [b.edge_id for b in net.bridges] == [0, 0]


def test_level1_synthetic_counts(level1, tmp_path):
    save_network(level1, tmp_path)
    net = load_network(tmp_path)
    assert (net.n_nodes, net.n_edges, len(net.bridges)) == (39, 64, 245)
    assert net.fingerprint == level1.fingerprint


def test_geojson_roundtrip(level1, tmp_path):
    p = tmp_path / "net.geojson"
    p.write_text(json.dumps(to_geojson(level1)))
    net = load_network(p, "geojson")
    assert net.fingerprint == level1.fingerprint


def test_is_connected_examples():
    net = path_net(3)
    assert is_connected(net, set(), 0, 2)
    assert not is_connected(net, {0}, 0, 2)
    assert is_connected(net, {0, 1}, 1, 1)
    with pytest.raises(ValueError):
        is_connected(net, set(), 0, 7)


def test_shortest_hops_examples():
    assert list(shortest_hops(path_net(3), 2)) == [2, 1, 0]
    star = make_net(5, [(0, i) for i in range(1, 5)])
    assert list(shortest_hops(star, 0)) == [0, 1, 1, 1, 1]
    with pytest.raises(ValueError):
        shortest_hops(star, 5)


def test_undamaged_all_pairs_connected(level1):
    for s in range(level1.n_nodes):
        for t in range(level1.n_nodes):
            assert is_connected(level1, set(), s, t)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 14), extra=st.integers(0, 8),
       fail_frac=st.floats(0, 1))
def test_is_connected_symmetric_and_matches_networkx(seed, n, extra, fail_frac):
    rng = np.random.default_rng(seed)
    net = random_connected_net(rng, n, extra)
    failed = {e.id for e in net.edges if rng.random() < fail_frac}
    g = nx_graph(net, failed)
    s, t = (int(x) for x in rng.integers(0, n, 2))
    assert is_connected(net, failed, s, t) == is_connected(net, failed, t, s)
    assert is_connected(net, failed, s, t) == nx.has_path(g, s, t)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 20), extra=st.integers(0, 10))
def test_hops_step_property(seed, n, extra):
    rng = np.random.default_rng(seed)
    net = random_connected_net(rng, n, extra)
    t = int(rng.integers(0, n))
    hops = shortest_hops(net, t)
    assert hops[t] == 0
    ref = nx.single_source_shortest_path_length(nx_graph(net), t)
    assert all(hops[v] == ref[v] for v in range(n))
    for e in net.edges:
        assert abs(hops[e.u] - hops[e.v]) <= 1
