"""Scenario sampling, node/edge features, MC labelling and target splits."""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from ._toml import tomli_w, tomllib
from .hazard import FailureField, SeismicScenario, compute_failure_field
from .montecarlo import McConfig, estimate_connectivity
from .network import Network, shortest_hops
from .partition import Partition, partition

logger = logging.getLogger(__name__)

FEATURE_NAMES = ("degree", "max_edge_p", "min_edge_p", "hops_to_target")


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class MagnitudeSampler:
    upper: float = 8.0
    rate: float = 1.5
    lower: float = 6.5
    seed: int = 0

    def __post_init__(self):
        if not self.upper > self.lower:
            raise DatasetError("magnitude upper bound must exceed the lower bound")
        if not self.rate > 0:
            raise DatasetError("magnitude rate must be positive")

    @property
    def span(self) -> float:
        return self.upper - self.lower

    def truncated_mean(self) -> float:
        """Closed-form mean of the truncated exponential offset."""
        r, L = self.rate, self.span
        return 1.0 / r - L * math.exp(-r * L) / (1.0 - math.exp(-r * L))


def sample_magnitude(sampler: MagnitudeSampler, n: int, rng=None) -> np.ndarray:
    """Magnitudes ``upper - lam`` with ``lam`` exponential, truncated by rejection."""
    if n < 1:
        raise DatasetError("n must be >= 1")
    rng = np.random.default_rng(sampler.seed) if rng is None else rng
    out = np.empty(0)
    while len(out) < n:
        lam = rng.exponential(1.0 / sampler.rate, size=max(16, 2 * (n - len(out))))
        out = np.concatenate([out, lam[lam <= sampler.span]])
    return sampler.upper - out[:n]


@dataclass(frozen=True)
class SplitSpec:
    test_fraction: float = 0.20
    train_target_ratio: float = 0.60
    parts: int = 0  # 0: one part per test target
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.test_fraction < 1:
            raise DatasetError("test_fraction must lie in (0, 1)")
        if not 0.05 <= self.train_target_ratio <= 0.80:
            raise DatasetError("train_target_ratio must lie in [0.05, 0.80]")
        if self.parts < 0:
            raise DatasetError("parts must be non-negative")


@dataclass(frozen=True, eq=False)
class GraphSample:
    node_features: np.ndarray  # (|V|, 4)
    edge_features: np.ndarray  # (|E|, 1)
    target: int
    labels: np.ndarray  # (|V|,)
    magnitude: float = float("nan")
    scenario_index: int = 0
    net: Network | None = field(default=None, repr=False)


def build_features(net: Network, field: FailureField, t: int):
    """Node features (degree, max/min incident p_e, hops to ``t``) and edge features."""
    field.check_matches(net)
    p = field.edge_probs
    n = net.n_nodes
    hi = np.zeros(n)
    lo = np.zeros(n)
    for v, nbrs in enumerate(net.adjacency):
        if nbrs:
            pv = p[[k for _, k in nbrs]]
            hi[v] = pv.max()
            lo[v] = pv.min()
    x_n = np.column_stack([net.degree.astype(float), hi, lo,
                           shortest_hops(net, t).astype(float)])
    return x_n, p.reshape(-1, 1).copy()


@dataclass(frozen=True)
class TargetSplit:
    train: tuple[int, ...]
    test: tuple[int, ...]
    partition: Partition


def split_targets(net: Network, split: SplitSpec) -> TargetSplit:
    """Pick held-out test targets spread over partition parts, then training targets.

    Targets are taken round-robin across parts. The test set depends only on
    the seed and ``test_fraction``; training targets for a smaller ratio are
    a prefix of those for a larger one.
    """
    n = net.n_nodes
    n_test = max(1, round(split.test_fraction * n))
    if n_test >= n:
        raise DatasetError("test fraction leaves no nodes for training")
    parts = min(split.parts or n_test, n)
    part = partition(net, parts, seed=split.seed)
    rng = np.random.default_rng(np.random.SeedSequence(split.seed, spawn_key=(7,)))
    pools = [list(rng.permutation(part.members(p))) for p in range(parts)]

    def round_robin(pools, count):
        picked = []
        while len(picked) < count and any(pools):
            for pool in pools:
                if pool and len(picked) < count:
                    picked.append(int(pool.pop(0)))
        return picked

    test = round_robin(pools, n_test)
    n_train = min(max(1, round(split.train_target_ratio * n)), n - n_test)
    train = round_robin(pools, n_train)
    return TargetSplit(tuple(train), tuple(test), part)


@dataclass
class LabelJob:
    net: Network
    gmpe: object
    fragility: dict
    scenario: SeismicScenario
    mc: McConfig
    sampler: MagnitudeSampler
    vs30: float = 400.0


def _scenario_seed(seed: int, target: int, k: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=(11, target, k))


def make_sample(job: LabelJob, t: int, k: int, seed: int) -> GraphSample:
    ss = _scenario_seed(seed, t, k)
    mag_ss, mc_ss, sigma_ss = ss.spawn(3)
    mag = float(sample_magnitude(job.sampler, 1, np.random.default_rng(mag_ss))[0])
    scn = replace(job.scenario, magnitude=mag)
    fld = compute_failure_field(job.net, scn, job.gmpe, job.fragility, vs30=job.vs30,
                                rng_seed=np.random.default_rng(sigma_ss))
    x_n, x_e = build_features(job.net, fld, t)
    mc_seed = int(mc_ss.generate_state(1)[0])
    est = estimate_connectivity(job.net, fld, t, replace(job.mc, seed=mc_seed))
    return GraphSample(x_n, x_e, t, est.probability, mag, k, job.net)


def label_targets(job: LabelJob, targets, n_k: int, seed: int, workers: int = 1):
    """``n_k`` scenarios per target, ordered by (target, scenario index)."""
    tasks = [(t, k) for t in sorted(targets) for k in range(n_k)]
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(lambda tk: make_sample(job, tk[0], tk[1], seed), tasks))
    return [make_sample(job, t, k, seed) for t, k in tasks]


@dataclass(frozen=True, eq=False)
class Dataset:
    train: list[GraphSample]
    test: list[GraphSample]
    feature_mean: np.ndarray
    feature_std: np.ndarray
    split: SplitSpec
    n_k: int
    seed: int
    train_targets: tuple[int, ...] = ()
    test_targets: tuple[int, ...] = ()


def feature_stats(samples) -> tuple[np.ndarray, np.ndarray]:
    x = np.vstack([s.node_features for s in samples])
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std[std < 1e-12] = 1.0
    return mean, std


def generate_dataset(net: Network, n_k: int, split: SplitSpec, job: LabelJob,
                     seed: int = 0, workers: int = 1) -> Dataset:
    if n_k < 1:
        raise DatasetError("scenarios per target must be >= 1")
    ts = split_targets(net, split)
    logger.info("labelling %d train and %d test targets x %d scenarios",
                len(ts.train), len(ts.test), n_k)
    train = label_targets(job, ts.train, n_k, seed, workers)
    test = label_targets(job, ts.test, n_k, seed, workers)
    mean, std = feature_stats(train)
    return Dataset(train, test, mean, std, split, n_k, seed,
                   tuple(sorted(ts.train)), tuple(sorted(ts.test)))


# -- on-disk format ----------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def write_sample(path: Path, s: GraphSample) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["[node_features]"])
    w.writerow(FEATURE_NAMES)
    for row in s.node_features:
        w.writerow([_fmt(v) for v in row])
    w.writerow(["[edge_features]"])
    w.writerow(["p_fail"])
    for row in s.edge_features:
        w.writerow([_fmt(v) for v in row])
    w.writerow(["[target]"])
    w.writerow([s.target])
    w.writerow(["[labels]"])
    w.writerow(["probability"])
    for v in s.labels:
        w.writerow([_fmt(v)])
    path.write_text(buf.getvalue(), encoding="utf-8")


def read_sample(path: Path, magnitude=float("nan"), scenario_index=0, net=None) -> GraphSample:
    sections: dict[str, list[list[str]]] = {}
    current = None
    for row in csv.reader(path.read_text(encoding="utf-8").splitlines()):
        if len(row) == 1 and row[0].startswith("[") and row[0].endswith("]"):
            current = row[0][1:-1]
            sections[current] = []
        elif current is not None and row:
            sections[current].append(row)
    try:
        x_n = np.array(sections["node_features"][1:], dtype=float).reshape(-1, 4)
        x_e = np.array(sections["edge_features"][1:], dtype=float).reshape(-1, 1)
        t = int(sections["target"][0][0])
        y = np.array([r[0] for r in sections["labels"][1:]], dtype=float)
    except (KeyError, IndexError, ValueError) as exc:
        raise DatasetError(f"{path}: malformed sample file ({exc})") from exc
    return GraphSample(x_n, x_e, t, y, magnitude, scenario_index, net)


def save_dataset(ds: Dataset, directory) -> None:
    directory = Path(directory)
    (directory / "samples").mkdir(parents=True, exist_ok=True)
    entries = []
    for i, (part, s) in enumerate([("train", s) for s in ds.train] + [("test", s) for s in ds.test]):
        name = f"samples/{i:04d}.csv"
        write_sample(directory / name, s)
        entries.append({"file": name, "split": part, "target": int(s.target),
                        "scenario_index": int(s.scenario_index), "magnitude": float(s.magnitude)})
    manifest = {
        "format_version": 1,
        "seed": int(ds.seed),
        "scenarios_per_target": int(ds.n_k),
        "split": asdict(ds.split),
        "train_targets": list(ds.train_targets),
        "test_targets": list(ds.test_targets),
        "normalization": {"feature_names": list(FEATURE_NAMES),
                          "mean": [float(v) for v in ds.feature_mean],
                          "std": [float(v) for v in ds.feature_std]},
        "samples": entries,
    }
    (directory / "manifest.toml").write_text(tomli_w.dumps(manifest), encoding="utf-8")


def load_dataset(directory, net: Network | None = None) -> Dataset:
    directory = Path(directory)
    try:
        manifest = tomllib.loads((directory / "manifest.toml").read_text(encoding="utf-8"))
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise DatasetError(f"{directory}: cannot read manifest ({exc})") from exc
    train, test = [], []
    for e in manifest["samples"]:
        s = read_sample(directory / e["file"], e["magnitude"], e["scenario_index"], net)
        (train if e["split"] == "train" else test).append(s)
    norm = manifest["normalization"]
    return Dataset(train, test, np.array(norm["mean"]), np.array(norm["std"]),
                   SplitSpec(**manifest["split"]), manifest["scenarios_per_target"],
                   manifest["seed"], tuple(manifest["train_targets"]),
                   tuple(manifest["test_targets"]))
