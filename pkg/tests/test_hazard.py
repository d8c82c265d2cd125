import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bridgenet.hazard import (FailureField, FragilityCurve, GmpeConfig, HazardError,
                              SeismicScenario, SiteParams, SpectralShapeTable,
                              bridge_failure_prob, classify_bridge, compute_failure_field,
                              compute_pga, compute_sa, edge_failure_prob,
                              epicentral_distance_km, load_fragility, load_gmpe)
from conftest import make_net
from oracles import hand_pga, std_normal_cdf

CFG = load_gmpe()
FRAG = load_fragility()


def test_degenerate_coefficients():
    cfg = GmpeConfig(c1=math.log(0.3), c2=0.0, c3=1e-300, c4=0.0, c5=0.0, c6=0.0)
    for r in (1.0, 50.0, 300.0):
        assert compute_pga(SeismicScenario(7.0), SiteParams(400, r), cfg) == pytest.approx(0.3)


def test_default_calibration_window():
    pga = compute_pga(SeismicScenario(7.0), SiteParams(400, 10), CFG)
    assert 0.2 <= pga <= 0.6


def test_pga_decreases_with_distance():
    scn = SeismicScenario(7.0)
    assert compute_pga(scn, SiteParams(400, 10), CFG) > compute_pga(scn, SiteParams(400, 50), CFG)


def test_pga_matches_hand_evaluation():
    got = compute_pga(SeismicScenario(7.5), SiteParams(400, 20), CFG)
    want = hand_pga(7.5, 20, 400, -4.5, 0.9, 1.2, 0.06, 0.6, -0.5, 760.0)
    assert got == pytest.approx(want, rel=1e-12)


def test_sampled_mode_is_seeded():
    scn = SeismicScenario(7.0, sigma_mode="sampled")
    a = compute_pga(scn, SiteParams(400, 20), CFG, rng_seed=5)
    b = compute_pga(scn, SiteParams(400, 20), CFG, rng_seed=5)
    med = compute_pga(SeismicScenario(7.0), SiteParams(400, 20), CFG)
    assert a == b and a != med


@settings(max_examples=50, deadline=None)
@given(m=st.floats(6.5, 7.99), r=st.floats(1.0, 199.0))
def test_pga_monotone_finite_differences(m, r):
    scn, site = SeismicScenario(m), SiteParams(400, r)
    base = compute_pga(scn, site, CFG)
    assert compute_pga(SeismicScenario(m + 1e-3), site, CFG) > base
    assert compute_pga(scn, SiteParams(400, r + 1e-3), CFG) < base


def test_sa_identities():
    flat = GmpeConfig(-4.5, 0.9, 1.2, 0.06, 0.6, -0.5, mu=SpectralShapeTable.constant(1.0))
    scn, site = SeismicScenario(7.0), SiteParams(400, 30)
    assert compute_sa(0.37, 1.0, scn, site, flat) == pytest.approx(0.37)
    assert compute_sa(0.0, 0.3, scn, site, CFG) == 0.0
    with pytest.raises(HazardError, match="unsupported period"):
        compute_sa(0.3, 2.0, scn, site, CFG)


def test_sa_bilinear_midpoint():
    mu = CFG.mu
    table = mu.values[1.0]
    k = int(np.abs(mu.vs30_bins - 400).argmin())
    m = (mu.m_breaks[0] + mu.m_breaks[1]) / 2
    r = (mu.r_breaks[1] + mu.r_breaks[2]) / 2
    corners = table[k, 0:2, 1:3]
    assert float(mu(1.0, m, r, 400)) == pytest.approx(corners.mean(), rel=1e-12)
    # nearest vs30 bin
    assert float(mu(1.0, m, r, 310)) == pytest.approx(table[0, 0:2, 1:3].mean(), rel=1e-12)


def test_fragility_examples():
    c = FragilityCurve("X", 0.8, 0.6)
    assert bridge_failure_prob(0.8, c) == 0.5
    assert bridge_failure_prob(0.0, c) == 0.0
    assert bridge_failure_prob(0.8 * math.e ** 0.6, c) == pytest.approx(std_normal_cdf(1.0), abs=1e-12)
    assert abs(bridge_failure_prob(0.8 * math.e ** 0.6, c) - 0.841345) < 1e-6


@settings(max_examples=100, deadline=None)
@given(a=st.floats(1e-6, 50), b=st.floats(1e-6, 50))
def test_fragility_monotone_open_interval(a, b):
    c = FragilityCurve("X", 1.1, 0.6)
    lo, hi = sorted((a, b))
    pa, pb = bridge_failure_prob(lo, c), bridge_failure_prob(hi, c)
    assert pa <= pb
    assert 0.0 < pa and pb < 1.0 or hi > 20


def test_edge_failure_examples():
    assert edge_failure_prob([]) == 0.0
    assert edge_failure_prob([0.1, 0.2]) == 0.28
    assert edge_failure_prob([1.0, 0.0]) == 1.0


probs = st.lists(st.floats(0, 1), min_size=1, max_size=8)


@settings(max_examples=200, deadline=None)
@given(ps=probs, seed=st.integers(0, 1000), bump=st.floats(0, 1))
def test_edge_failure_properties(ps, seed, bump):
    v = edge_failure_prob(ps)
    perm = list(np.random.default_rng(seed).permutation(ps))
    assert v == pytest.approx(edge_failure_prob(perm), abs=1e-12)
    i = seed % len(ps)
    raised = list(ps)
    raised[i] = max(ps[i], bump)
    assert edge_failure_prob(raised) >= v - 1e-12
    only = [0.0] * len(ps)
    only[i] = ps[i]
    assert edge_failure_prob(only) == pytest.approx(ps[i], abs=1e-15)
    assert 0.0 <= v <= 1.0


def test_classify_bridge_tree():
    assert classify_bridge(1960, "concrete", 3) == "HWB5"
    assert classify_bridge(1975, "concrete", 3) == "HWB7"
    assert classify_bridge(1960, "steel", 3) == "HWB12"
    assert classify_bridge(1990, "steel", 3) == "HWB14"
    assert classify_bridge(1960, "concrete", 1) == "HWB3"
    assert classify_bridge(1990, "steel", 1) == "HWB4"
    assert classify_bridge(1960, "steel", 5, 200.0) == "HWB1"
    assert classify_bridge(2000, "concrete", 5, 200.0) == "HWB2"
    for cls in ("HWB1", "HWB2", "HWB3", "HWB4", "HWB5", "HWB7", "HWB12", "HWB14"):
        assert cls in FRAG


def test_haversine_known_distance():
    # one degree of latitude
    assert epicentral_distance_km(0, 0, 0, 1) == pytest.approx(111.195, rel=1e-4)


def test_field_no_bridges():
    net = make_net(3, [(0, 1), (1, 2)])
    fld = compute_failure_field(net, SeismicScenario(7.5), CFG, FRAG)
    assert list(fld.edge_probs) == [0.0, 0.0]


def test_field_single_bridge_at_median():
    net = make_net(2, [(0, 1)], bridges_on=[0], bridge_class="X")
    b = net.bridges[0]
    scn = SeismicScenario(7.0)
    r = float(epicentral_distance_km(scn.epicenter[0], scn.epicenter[1], b.lon, b.lat))
    site = SiteParams(400, r)
    sa = compute_sa(compute_pga(scn, site, CFG), 1.0, scn, site, CFG)
    fld = compute_failure_field(net, scn, CFG, {"X": FragilityCurve("X", sa, 0.6)})
    assert fld.edge_probs[0] == pytest.approx(0.5, abs=1e-12)


def test_field_unbridged_edges_exactly_zero(level1):
    fld = compute_failure_field(level1, SeismicScenario(8.0), CFG, FRAG)
    for k, e in enumerate(level1.edges):
        if not e.bridge_ids:
            assert fld.edge_probs[k] == 0.0
    assert np.all((fld.bridge_probs >= 0) & (fld.bridge_probs <= 1))


def test_field_matches_scalar_path(level1):
    scn = SeismicScenario(7.3)
    fld = compute_failure_field(level1, scn, CFG, FRAG)
    for i, b in enumerate(level1.bridges[:40]):
        r = float(epicentral_distance_km(scn.epicenter[0], scn.epicenter[1], b.lon, b.lat))
        site = SiteParams(400, r)
        sa = compute_sa(compute_pga(scn, site, CFG), 1.0, scn, site, CFG)
        assert fld.bridge_probs[i] == pytest.approx(bridge_failure_prob(sa, FRAG[b.bridge_class]),
                                                    rel=1e-12, abs=1e-15)
    for k, e in enumerate(level1.edges):
        ps = [fld.bridge_probs[level1.bridge_index[j]] for j in e.bridge_ids]
        assert fld.edge_probs[k] == edge_failure_prob(ps)


def test_field_mean_grows_with_magnitude(level1):
    hi = compute_failure_field(level1, SeismicScenario(8.0), CFG, FRAG).edge_probs.mean()
    lo = compute_failure_field(level1, SeismicScenario(6.5), CFG, FRAG).edge_probs.mean()
    assert hi > lo


def test_field_pure(level1):
    scn = SeismicScenario(7.4, sigma_mode="sampled")
    a = compute_failure_field(level1, scn, CFG, FRAG, rng_seed=9)
    b = compute_failure_field(level1, scn, CFG, FRAG, rng_seed=9)
    assert a.edge_probs.tobytes() == b.edge_probs.tobytes()
    assert a.bridge_probs.tobytes() == b.bridge_probs.tobytes()


def test_missing_fragility_class(level1):
    frag = dict(FRAG)
    cls = level1.bridges[0].bridge_class
    del frag[cls]
    with pytest.raises(HazardError, match=cls):
        compute_failure_field(level1, SeismicScenario(7.0), CFG, frag)


@pytest.mark.parametrize("kw", [dict(magnitude=3.9), dict(magnitude=7, q0=0),
                                dict(magnitude=7, basin_depth_km=-1),
                                dict(magnitude=7, style_of_faulting="oblique")])
def test_scenario_validation(kw):
    with pytest.raises(HazardError):
        SeismicScenario(**kw)


def test_field_validation():
    with pytest.raises(HazardError):
        FailureField(np.array([0.5, 1.2]))
    with pytest.raises(HazardError):
        SiteParams(0, 10)
