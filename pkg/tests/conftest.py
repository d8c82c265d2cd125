import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from bridgenet.network import BridgeRecord, NodeRecord, build_network  # noqa: E402


def make_net(n, pairs, bridges_on=(), bridge_class="HWB5"):
    """Network on ``n`` nodes with edges ``pairs``; one bridge per listed edge index."""
    nodes = [NodeRecord(i, -121.9 + 0.01 * i, 37.3 + 0.005 * (i % 3)) for i in range(n)]
    edges = [(k, u, v) for k, (u, v) in enumerate(pairs)]
    bridges = []
    for j, k in enumerate(bridges_on):
        u, v = pairs[k]
        bridges.append(BridgeRecord(j, k, (nodes[u].lon + nodes[v].lon) / 2,
                                    (nodes[u].lat + nodes[v].lat) / 2, bridge_class))
    return build_network(nodes, edges, bridges)


def path_net(n):
    return make_net(n, [(i, i + 1) for i in range(n - 1)])


def random_connected_net(rng, n, extra):
    """Random spanning tree plus ``extra`` random chords."""
    pairs = set()
    for v in range(1, n):
        u = int(rng.integers(0, v))
        pairs.add((u, v))
    tries = 0
    while n > 1 and len(pairs) < n - 1 + extra and tries < 1000:
        u, v = sorted(int(x) for x in rng.choice(n, 2, replace=False))
        pairs.add((u, v))
        tries += 1
    return make_net(n, sorted(pairs))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def level1():
    from bridgenet.synth import synthesize_network
    return synthesize_network(39, 64, 245, seed=1)


ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(criterion: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[criterion] = (bool(ok), detail)
    print(f"criterion {criterion}: {'PASS' if ok else 'FAIL'} ({detail})")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
