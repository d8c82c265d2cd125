import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bridgenet.hazard import FailureField
from bridgenet.montecarlo import (McConfig, McError, estimate_connectivity,
                                  exact_connectivity, reach_from_target, sample_damage)
from conftest import make_net, path_net, random_connected_net
from oracles import nx_graph, two_terminal

import networkx as nx

WHEATSTONE = [(0, 1), (0, 2), (1, 2), (1, 3), (2, 3)]


def test_sample_damage_extremes():
    net = make_net(3, [(0, 1), (1, 2)], bridges_on=[0, 1])
    rng = np.random.default_rng(0)
    assert sample_damage(net, FailureField(np.zeros(2), np.zeros(2)), rng) == set()
    assert sample_damage(net, FailureField(np.ones(2), np.ones(2)), rng) == {0, 1}


def test_sample_damage_frequency():
    net = make_net(2, [(0, 1)], bridges_on=[0, 0])
    fld = FailureField(np.array([0.28]), np.array([0.1, 0.2]))
    rng = np.random.default_rng(11)
    freq = np.mean([0 in sample_damage(net, fld, rng) for _ in range(100_000)])
    assert abs(freq - 0.28) <= 0.01


def test_all_zero_field():
    net = path_net(5)
    est = estimate_connectivity(net, FailureField(np.zeros(4)), 2,
                                McConfig(check_interval=1, min_samples=1))
    assert np.all(est.probability == 1.0)
    assert est.samples[0] == 1


def test_single_edge_analytic():
    net = path_net(2)
    est = estimate_connectivity(net, FailureField(np.array([0.3])), 1,
                                McConfig(max_samples=10_000, std_threshold=1e-6))
    assert est.samples[0] == 10_000
    assert abs(est.probability[0] - 0.7) <= 3 * math.sqrt(0.21 / 10_000)
    assert est.probability[1] == 1.0


def test_two_parallel_paths():
    net = make_net(3, [(0, 2), (0, 1), (1, 2)])
    fld = FailureField(np.array([0.5, 0.5, 0.0]))
    # edge 1-2 never fails, so 0 reaches {1,2} unless both 0-2 and 0-1 fail
    est = estimate_connectivity(net, fld, 2, McConfig(std_threshold=1e-6, seed=4))
    assert abs(est.probability[0] - 0.75) <= 3 * est.std_error[0]
    assert exact_connectivity(net, fld, 0, 2) == 0.75


def test_exact_examples():
    series = path_net(3)
    assert exact_connectivity(series, FailureField(np.array([0.1, 0.2])), 0, 2) == pytest.approx(
        0.72, abs=1e-12)
    wheat = make_net(4, WHEATSTONE)
    assert exact_connectivity(wheat, FailureField(np.full(5, 0.5)), 0, 3) == pytest.approx(
        0.5, abs=1e-12)
    assert exact_connectivity(wheat, FailureField(np.zeros(5)), 0, 3) == 1.0


def test_exact_limit():
    net = path_net(23)
    with pytest.raises(McError):
        exact_connectivity(net, FailureField(np.full(22, 0.5)), 0, 22)
    # certain edges do not count toward the limit
    probs = np.zeros(22)
    probs[:20] = 0.5
    assert exact_connectivity(net, FailureField(probs), 0, 22) == pytest.approx(0.5 ** 20)


def test_target_is_one_and_isolated_is_zero():
    net = make_net(4, [(0, 1), (1, 2), (2, 3)])
    fld = FailureField(np.array([0.2, 0.4, 1.0]))
    est = estimate_connectivity(net, fld, 1, McConfig(seed=2))
    assert est.probability[1] == 1.0
    assert est.probability[3] == 0.0


def test_deterministic_and_worker_independent(level1):
    fld = FailureField(np.random.default_rng(0).uniform(0, 0.4, level1.n_edges))
    a = estimate_connectivity(level1, fld, 5, McConfig(seed=9))
    b = estimate_connectivity(level1, fld, 5, McConfig(seed=9))
    c = estimate_connectivity(level1, fld, 5, McConfig(seed=9, workers=3))
    assert a.probability.tobytes() == b.probability.tobytes() == c.probability.tobytes()
    assert a.samples.tolist() == c.samples.tolist()
    d = estimate_connectivity(level1, fld, 5, McConfig(seed=10))
    assert a.probability.tobytes() != d.probability.tobytes()


def test_stopping_rule(level1):
    fld = FailureField(np.random.default_rng(1).uniform(0, 0.2, level1.n_edges))
    est = estimate_connectivity(level1, fld, 0, McConfig(std_threshold=0.02, seed=1))
    n = est.samples[0]
    assert 1000 <= n < 10_000 and n % 500 == 0
    assert np.all(est.std_error < 0.02)
    capped = estimate_connectivity(level1, fld, 0, McConfig(std_threshold=1e-4, max_samples=1500))
    assert capped.samples[0] == 1500


def test_reach_matches_networkx(level1):
    rng = np.random.default_rng(3)
    alive = rng.random((20, level1.n_edges)) > 0.4
    reach = reach_from_target(level1, alive, 7)
    for i in range(20):
        failed = {level1.edges[k].id for k in np.flatnonzero(~alive[i])}
        comp = nx.node_connected_component(nx_graph(level1, failed), 7)
        assert set(np.flatnonzero(reach[i]).tolist()) == comp


def test_rows_columns(level1):
    est = estimate_connectivity(level1, FailureField(np.zeros(level1.n_edges)), 3)
    rows = list(est.rows())
    assert rows[0] == (0, 3, 1.0, 0.0, 1000)


def test_config_validation():
    for kw in (dict(max_samples=0), dict(std_threshold=0), dict(std_threshold=1)):
        with pytest.raises(McError):
            McConfig(**kw)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 7), extra=st.integers(0, 4))
def test_exact_matches_independent_oracle(seed, n, extra):
    rng = np.random.default_rng(seed)
    net = random_connected_net(rng, n, extra)
    p = rng.choice([0.0, 0.1, 0.5, 0.9, 1.0], net.n_edges)
    s, t = (int(x) for x in rng.integers(0, n, 2))
    assert exact_connectivity(net, FailureField(p), s, t) == pytest.approx(
        two_terminal(net, p, s, t), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 6), extra=st.integers(0, 3),
       k=st.integers(0, 7), bump=st.floats(0, 1))
def test_exact_monotone_in_each_edge(seed, n, extra, k, bump):
    rng = np.random.default_rng(seed)
    net = random_connected_net(rng, n, extra)
    p = rng.random(net.n_edges)
    k %= net.n_edges
    s, t = (int(x) for x in rng.integers(0, n, 2))
    base = exact_connectivity(net, FailureField(p), s, t)
    q = p.copy()
    q[k] = max(p[k], bump)
    assert exact_connectivity(net, FailureField(q), s, t) <= base + 1e-12


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_estimate_invariants(seed):
    rng = np.random.default_rng(seed)
    net = random_connected_net(rng, int(rng.integers(2, 12)), int(rng.integers(0, 5)))
    p = rng.choice([0.0, 0.3, 1.0], net.n_edges)
    t = int(rng.integers(0, net.n_nodes))
    est = estimate_connectivity(net, FailureField(p), t, McConfig(seed=seed % 1000))
    assert est.probability[t] == 1.0
    assert np.all((est.probability >= 0) & (est.probability <= 1))
    for v in range(net.n_nodes):
        if v != t and all(p[k] == 1.0 for _, k in net.adjacency[v]):
            assert est.probability[v] == 0.0
