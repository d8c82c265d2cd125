"""Ground motion at bridge sites and bridge/edge failure probabilities.

The attenuation model is a pluggable three-term form

    ln PGA = c1 + c2*M - c3*ln(R + c4*exp(c5*M)) + c6*ln(vs30/v_ref) [+ sigma*z]

with spectral acceleration obtained by scaling PGA with a tabulated
spectral shape factor. Coefficients are calibration constants shipped in
``data/gmpe_default.toml``, not a published coefficient set.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from ._toml import tomllib
from .network import Network

EARTH_RADIUS_KM = 6371.0088
SUPPORTED_PERIODS = (0.3, 1.0)
FAULT_STYLES = ("strike-slip", "reverse", "normal")


class HazardError(ValueError):
    pass


@dataclass(frozen=True)
class SeismicScenario:
    magnitude: float
    epicenter: tuple[float, float] = (-121.883, 37.036)
    style_of_faulting: str = "strike-slip"
    q0: float = 150.0  # carried for completeness; unused by the default form
    basin_depth_km: float = 0.0
    sigma_mode: str = "median"

    def __post_init__(self):
        if not 4.0 <= self.magnitude <= 9.0:
            raise HazardError(f"magnitude {self.magnitude} outside [4, 9]")
        if self.q0 <= 0:
            raise HazardError("q0 must be positive")
        if self.basin_depth_km < 0:
            raise HazardError("basin depth must be non-negative")
        if self.style_of_faulting not in FAULT_STYLES:
            raise HazardError(f"unknown style of faulting {self.style_of_faulting!r}")
        if self.sigma_mode not in ("median", "sampled"):
            raise HazardError("sigma_mode must be 'median' or 'sampled'")


@dataclass(frozen=True)
class SiteParams:
    vs30: float
    rupture_distance_km: float

    def __post_init__(self):
        if not self.vs30 > 0:
            raise HazardError("vs30 must be positive")
        if not self.rupture_distance_km >= 0:
            raise HazardError("rupture distance must be non-negative")


@dataclass(frozen=True, eq=False)
class SpectralShapeTable:
    """Spectral shape factor mu tabulated on a (vs30 bin, M, R) grid per period."""

    m_breaks: np.ndarray
    r_breaks: np.ndarray
    vs30_bins: np.ndarray
    values: dict[float, np.ndarray]  # period -> (n_vs30, n_m, n_r)

    def __post_init__(self):
        for T, v in self.values.items():
            if v.shape != (len(self.vs30_bins), len(self.m_breaks), len(self.r_breaks)):
                raise HazardError(f"mu table for T={T} has shape {v.shape}")
            if not np.all(v > 0):
                raise HazardError(f"mu table for T={T} has non-positive entries")
        if np.any(np.diff(self.m_breaks) <= 0) or np.any(np.diff(self.r_breaks) <= 0):
            raise HazardError("mu table breakpoints must be strictly increasing")

    @classmethod
    def constant(cls, value: float = 1.0) -> "SpectralShapeTable":
        one = np.full((1, 2, 2), float(value))
        return cls(np.array([4.0, 9.0]), np.array([0.0, 1000.0]), np.array([760.0]),
                   {T: one.copy() for T in SUPPORTED_PERIODS})

    def __call__(self, T: float, magnitude, distance, vs30):
        table = self.values.get(_period_key(T))
        if table is None:
            raise HazardError(f"unsupported period T={T}")
        m = np.clip(np.asarray(magnitude, dtype=float), self.m_breaks[0], self.m_breaks[-1])
        r = np.clip(np.asarray(distance, dtype=float), self.r_breaks[0], self.r_breaks[-1])
        k = np.abs(np.asarray(vs30, dtype=float)[..., None] - self.vs30_bins).argmin(axis=-1)
        i = np.clip(np.searchsorted(self.m_breaks, m, side="right") - 1, 0, len(self.m_breaks) - 2)
        j = np.clip(np.searchsorted(self.r_breaks, r, side="right") - 1, 0, len(self.r_breaks) - 2)
        fm = (m - self.m_breaks[i]) / (self.m_breaks[i + 1] - self.m_breaks[i])
        fr = (r - self.r_breaks[j]) / (self.r_breaks[j + 1] - self.r_breaks[j])
        return ((1 - fm) * (1 - fr) * table[k, i, j] + fm * (1 - fr) * table[k, i + 1, j]
                + (1 - fm) * fr * table[k, i, j + 1] + fm * fr * table[k, i + 1, j + 1])


def _period_key(T: float):
    for p in SUPPORTED_PERIODS:
        if math.isclose(T, p):
            return p
    return None


@dataclass(frozen=True, eq=False)
class GmpeConfig:
    c1: float
    c2: float
    c3: float
    c4: float
    c5: float
    c6: float
    v_ref: float = 760.0
    sigma_ln_pga: float = 0.6
    mu: SpectralShapeTable = field(default_factory=SpectralShapeTable.constant)

    def __post_init__(self):
        if not self.c3 > 0:
            raise HazardError("attenuation exponent c3 must be positive")
        if not self.v_ref > 0:
            raise HazardError("v_ref must be positive")
        if self.sigma_ln_pga < 0:
            raise HazardError("sigma_ln_pga must be non-negative")

    @classmethod
    def from_dict(cls, doc: dict) -> "GmpeConfig":
        mt = doc.get("mu_table")
        if mt is None:
            mu = SpectralShapeTable.constant()
        else:
            mb = np.asarray(mt["m_breaks"], dtype=float)
            rb = np.asarray(mt["r_breaks"], dtype=float)
            vb = np.asarray(mt.get("vs30_bins", [760.0]), dtype=float)
            shape = (len(vb), len(mb), len(rb))
            values = {}
            for T in SUPPORTED_PERIODS:
                key = f"T{T:.1f}".replace(".", "_")
                values[T] = np.asarray(mt[key], dtype=float).reshape(shape)
            mu = SpectralShapeTable(mb, rb, vb, values)
        return cls(c1=float(doc["c1"]), c2=float(doc["c2"]), c3=float(doc["c3"]),
                   c4=float(doc["c4"]), c5=float(doc["c5"]), c6=float(doc["c6"]),
                   v_ref=float(doc.get("v_ref", 760.0)),
                   sigma_ln_pga=float(doc.get("sigma_ln_pga", 0.0)), mu=mu)


def load_gmpe(path=None) -> GmpeConfig:
    """Read a GMPE config; ``None`` loads the packaged default."""
    if path is None:
        text = resources.files("bridgenet").joinpath("data/gmpe_default.toml").read_text()
    else:
        text = Path(path).read_text(encoding="utf-8")
    return GmpeConfig.from_dict(tomllib.loads(text))


@dataclass(frozen=True)
class FragilityCurve:
    bridge_class: str
    median_sa_extensive: float
    beta: float

    def __post_init__(self):
        if not (self.median_sa_extensive > 0 and self.beta > 0):
            raise HazardError(f"fragility {self.bridge_class}: median and beta must be positive")


def load_fragility(path=None) -> dict[str, FragilityCurve]:
    if path is None:
        text = resources.files("bridgenet").joinpath("data/fragility.csv").read_text()
    else:
        text = Path(path).read_text(encoding="utf-8")
    table = {}
    for row in csv.DictReader(text.splitlines()):
        c = FragilityCurve(row["bridge_class"].strip(), float(row["median_sa_extensive_g"]),
                           float(row["beta"]))
        table[c.bridge_class] = c
    return table


def classify_bridge(built_year: int, material: str, num_spans: int,
                    max_span_m: float = 0.0) -> str:
    """Map NBI-style attributes to a fragility class key.

    Pre-1975 bridges are treated as conventionally designed and later ones
    as seismically designed. Major bridges (any span over 150 m) come first;
    then single-span bridges; then multi-span by material.
    """
    seismic = built_year >= 1975
    if max_span_m > 150.0:
        return "HWB2" if seismic else "HWB1"
    if num_spans <= 1:
        return "HWB4" if seismic else "HWB3"
    if material.lower().startswith("steel"):
        return "HWB14" if seismic else "HWB12"
    return "HWB7" if seismic else "HWB5"


def epicentral_distance_km(lon1, lat1, lon2, lat2):
    """Great-circle (haversine) distance in km."""
    lon1, lat1, lon2, lat2 = map(np.radians, (lon1, lat1, lon2, lat2))
    a = (np.sin((lat2 - lat1) / 2) ** 2
         + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2)
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def ln_pga_median(magnitude, distance, vs30, cfg: GmpeConfig):
    magnitude = np.asarray(magnitude, dtype=float)
    ln_g1 = cfg.c1 + cfg.c2 * magnitude
    ln_g2 = -cfg.c3 * np.log(np.asarray(distance, dtype=float) + cfg.c4 * np.exp(cfg.c5 * magnitude))
    ln_g4 = cfg.c6 * np.log(np.asarray(vs30, dtype=float) / cfg.v_ref)
    return ln_g1 + ln_g2 + ln_g4


def compute_pga(scn: SeismicScenario, site: SiteParams, cfg: GmpeConfig, rng_seed=None) -> float:
    """PGA in g at one site."""
    ln_pga = float(ln_pga_median(scn.magnitude, site.rupture_distance_km, site.vs30, cfg))
    if scn.sigma_mode == "sampled":
        z = np.random.default_rng(rng_seed).standard_normal()
        ln_pga += cfg.sigma_ln_pga * z
    return math.exp(ln_pga)


def compute_sa(pga, T: float, scn: SeismicScenario, site: SiteParams, cfg: GmpeConfig):
    if _period_key(T) is None:
        raise HazardError(f"unsupported period T={T}; expected one of {SUPPORTED_PERIODS}")
    if np.any(np.asarray(pga) < 0):
        raise HazardError("pga must be non-negative")
    mu = cfg.mu(T, scn.magnitude, site.rupture_distance_km, site.vs30)
    return pga * float(mu) if np.ndim(pga) == 0 else np.asarray(pga) * mu


def bridge_failure_prob(sa_1s, curve: FragilityCurve):
    """P(damage >= extensive | SA(1.0 s)) from a lognormal fragility curve."""
    sa = np.asarray(sa_1s, dtype=float)
    with np.errstate(divide="ignore"):
        p = ndtr(np.log(sa / curve.median_sa_extensive) / curve.beta)
    p = np.where(sa > 0, p, 0.0)
    return float(p) if p.ndim == 0 else p


def edge_failure_prob(bridge_probs) -> float:
    """An edge fails when at least one of its bridges fails: 1 - prod(1 - p).

    Accumulated as ``acc + p * (1 - acc)``, which equals the product form
    and rounds exactly on short decimal inputs such as ``[0.1, 0.2]``.
    """
    acc = 0.0
    for p in bridge_probs:
        acc = min(1.0, acc + float(p) * (1.0 - acc))
    return acc


@dataclass(frozen=True, eq=False)
class FailureField:
    """Failure probabilities for one scenario; arrays follow network order."""

    edge_probs: np.ndarray
    bridge_probs: np.ndarray | None = None
    scenario: SeismicScenario | None = None
    pga: np.ndarray | None = None
    sa_03: np.ndarray | None = None
    sa_10: np.ndarray | None = None

    def __post_init__(self):
        ep = np.asarray(self.edge_probs, dtype=float)
        if ep.ndim != 1 or np.any(~np.isfinite(ep)) or np.any((ep < 0) | (ep > 1)):
            raise HazardError("edge probabilities must be a 1-d array in [0, 1]")
        object.__setattr__(self, "edge_probs", ep)
        if self.bridge_probs is not None:
            bp = np.asarray(self.bridge_probs, dtype=float)
            if np.any((bp < 0) | (bp > 1)):
                raise HazardError("bridge probabilities must lie in [0, 1]")
            object.__setattr__(self, "bridge_probs", bp)

    def with_edge_probs(self, edge_probs) -> "FailureField":
        """Copy with replaced edge probabilities (bridge detail is dropped)."""
        return FailureField(np.asarray(edge_probs, dtype=float), None, self.scenario)

    def check_matches(self, net: Network) -> None:
        if len(self.edge_probs) != net.n_edges:
            raise HazardError(
                f"failure field has {len(self.edge_probs)} edges, network has {net.n_edges}")
        if self.bridge_probs is not None and len(self.bridge_probs) != len(net.bridges):
            raise HazardError("failure field bridge count does not match network")


def compose_edge_probs(net: Network, bridge_probs: np.ndarray) -> np.ndarray:
    """Vectorised ``edge_failure_prob`` over all edges, same accumulation order."""
    pb = np.asarray(bridge_probs, dtype=float)
    acc = np.zeros(net.n_edges)
    rank = np.zeros(net.n_edges, dtype=np.int64)
    order = np.empty(len(pb), dtype=np.int64)  # position of each bridge within its edge
    for e in net.edges:
        for pos, b in enumerate(e.bridge_ids):
            order[net.bridge_index[b]] = pos
        rank[net.edge_index[e.id]] = len(e.bridge_ids)
    edge_of = net.bridge_edge_index
    for pos in range(int(rank.max(initial=0))):
        sel = order == pos
        k = edge_of[sel]
        acc[k] = np.minimum(1.0, acc[k] + pb[sel] * (1.0 - acc[k]))
    return acc


def compute_failure_field(net: Network, scn: SeismicScenario, cfg: GmpeConfig,
                          fragility: dict[str, FragilityCurve], vs30: float = 400.0,
                          rng_seed=None) -> FailureField:
    """PGA -> SA(1.0 s) -> fragility per bridge, then composition per edge."""
    missing = sorted({b.bridge_class for b in net.bridges} - set(fragility))
    if missing:
        raise HazardError(f"fragility table has no class {missing[0]!r}")
    nb = len(net.bridges)
    if nb == 0:
        z = np.zeros(0)
        return FailureField(np.zeros(net.n_edges), z, scn, z, z, z)

    lon = np.array([b.lon for b in net.bridges])
    lat = np.array([b.lat for b in net.bridges])
    dist = epicentral_distance_km(scn.epicenter[0], scn.epicenter[1], lon, lat)
    site_vs30 = np.full(nb, float(vs30))
    ln_pga = ln_pga_median(scn.magnitude, dist, site_vs30, cfg)
    if scn.sigma_mode == "sampled":
        ln_pga = ln_pga + cfg.sigma_ln_pga * np.random.default_rng(rng_seed).standard_normal(nb)
    pga = np.exp(ln_pga)
    sa03 = pga * cfg.mu(0.3, scn.magnitude, dist, site_vs30)
    sa10 = pga * cfg.mu(1.0, scn.magnitude, dist, site_vs30)
    median = np.array([fragility[b.bridge_class].median_sa_extensive for b in net.bridges])
    beta = np.array([fragility[b.bridge_class].beta for b in net.bridges])
    pb = ndtr(np.log(sa10 / median) / beta)
    return FailureField(compose_edge_probs(net, pb), pb, scn, pga, sa03, sa10)
