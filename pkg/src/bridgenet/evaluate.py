"""Accuracy metrics and experiment protocols for the surrogate vs the MC oracle."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ._toml import tomli_w, tomllib
from .dataset import (GraphSample, LabelJob, SplitSpec, build_features, feature_stats,
                      label_targets, split_targets)
from .gnn import GnnModel, TrainConfig, init_model, predict_samples, train
from .hazard import FailureField
from .montecarlo import estimate_connectivity
from .network import Network

logger = logging.getLogger(__name__)

CLASS_NAMES_3 = ("major disconnection", "minor disconnection", "normal connection")


class EvaluateError(ValueError):
    pass


@dataclass(frozen=True)
class ClassBands:
    two_class: tuple[float, ...] = (0.5,)
    three_class: tuple[float, ...] = (0.5, 0.75)
    fp_fn_cut: float = 0.75

    def __post_init__(self):
        for cuts in (self.two_class, self.three_class):
            c = np.asarray(cuts)
            if np.any(np.diff(c) <= 0) or np.any((c <= 0) | (c >= 1)):
                raise EvaluateError("band cuts must be strictly increasing inside (0, 1)")


def classify(p, cuts) -> np.ndarray:
    """Band index per probability; a value equal to a cut goes to the upper band."""
    return np.searchsorted(np.asarray(cuts, dtype=float), np.asarray(p, dtype=float),
                           side="right")


def f1_macro(true_cls, pred_cls) -> float:
    """Macro F1 over classes present in either labels or predictions."""
    true_cls = np.asarray(true_cls)
    pred_cls = np.asarray(pred_cls)
    scores = []
    for c in np.union1d(true_cls, pred_cls):
        tp = np.sum((pred_cls == c) & (true_cls == c))
        fp = np.sum((pred_cls == c) & (true_cls != c))
        fn = np.sum((pred_cls != c) & (true_cls == c))
        scores.append(2 * tp / (2 * tp + fp + fn))
    return float(np.mean(scores))


@dataclass
class MetricsReport:
    mae: float
    mse: float
    f1_2class: float
    f1_3class: float
    pearson_r: float | None  # None when undefined (constant input)
    fp_fn_rate: float
    n: int
    max_node_mae: float = 0.0
    max_mae_node: int = -1
    wall_time_gnn: float = 0.0
    wall_time_mc: float = 0.0

    TIMING = ("wall_time_gnn", "wall_time_mc")

    def metrics(self) -> dict:
        return {k: v for k, v in asdict(self).items()
                if k not in self.TIMING and v is not None}

    def timing(self) -> dict:
        return {k: getattr(self, k) for k in self.TIMING}


def compute_metrics(pred, labels, bands: ClassBands = ClassBands()) -> MetricsReport:
    pred = np.asarray(pred, dtype=float).ravel()
    labels = np.asarray(labels, dtype=float).ravel()
    if pred.shape != labels.shape:
        raise EvaluateError(f"length mismatch: {pred.shape} vs {labels.shape}")
    if len(pred) < 2:
        raise EvaluateError("need at least two values")
    err = pred - labels
    if np.std(pred) == 0 or np.std(labels) == 0:
        logger.warning("pearson correlation undefined for constant input")
        r = None
    else:
        r = float(np.corrcoef(pred, labels)[0, 1])
    cut = bands.fp_fn_cut
    return MetricsReport(
        mae=float(np.mean(np.abs(err))),
        mse=float(np.mean(err ** 2)),
        f1_2class=f1_macro(classify(labels, bands.two_class), classify(pred, bands.two_class)),
        f1_3class=f1_macro(classify(labels, bands.three_class),
                           classify(pred, bands.three_class)),
        pearson_r=r,
        fp_fn_rate=float(np.mean((pred >= cut) != (labels >= cut))),
        n=len(pred),
    )


# -- predictors ----------------------------------------------------------------

Predictor = Callable[[Sequence[GraphSample]], list]


def gnn_predictor(model: GnnModel) -> Predictor:
    return lambda samples: predict_samples(model, list(samples))


def oracle_stub(samples) -> list:
    """Feeds the MC labels back as predictions."""
    return [s.labels.copy() for s in samples]


def constant_predictor(value: float) -> Predictor:
    return lambda samples: [np.full(len(s.labels), value) for s in samples]


@dataclass
class NodeErrors:
    rows: list[tuple] = field(default_factory=list)  # per (sample, node)
    node_mae: dict[int, float] = field(default_factory=dict)


def _evaluate(predictor: Predictor, samples, bands: ClassBands):
    if not samples:
        raise EvaluateError("no test samples")
    t0 = time.perf_counter()
    preds = predictor(samples)
    elapsed = time.perf_counter() - t0
    pred = np.concatenate(preds)
    lab = np.concatenate([s.labels for s in samples])
    report = compute_metrics(pred, lab, bands)
    errs = NodeErrors()
    acc: dict[int, list[float]] = {}
    for s, p in zip(samples, preds):
        cp = classify(p, bands.three_class)
        cl = classify(s.labels, bands.three_class)
        for v in range(len(p)):
            e = abs(float(p[v]) - float(s.labels[v]))
            errs.rows.append((v, s.target, float(p[v]), float(s.labels[v]), e,
                              int(cp[v]), int(cl[v])))
            acc.setdefault(v, []).append(e)
    errs.node_mae = {v: float(np.mean(e)) for v, e in sorted(acc.items())}
    worst = max(errs.node_mae, key=lambda v: (errs.node_mae[v], -v))
    report.max_mae_node = int(worst)
    report.max_node_mae = errs.node_mae[worst]
    return report, errs, elapsed


def time_mc(job: LabelJob, samples) -> float:
    """Wall time to recompute the MC labels of ``samples`` from their edge probabilities."""
    t0 = time.perf_counter()
    for s in samples:
        estimate_connectivity(job.net if s.net is None else s.net,
                              FailureField(s.edge_features[:, 0]), s.target, job.mc)
    return time.perf_counter() - t0


def run_accuracy_experiment(predictor: Predictor, test_samples, bands: ClassBands = ClassBands(),
                            train_time: float = 0.0, job: LabelJob | None = None):
    """Surrogate vs MC labels on held-out targets.

    ``wall_time_gnn`` is ``train_time`` plus inference; ``wall_time_mc`` is
    filled in when ``job`` is given, by re-estimating every test sample.
    """
    report, errs, infer = _evaluate(predictor, test_samples, bands)
    report.wall_time_gnn = train_time + infer
    if job is not None:
        report.wall_time_mc = time_mc(job, test_samples)
    return report, errs


def fit_model(train_samples, cfg: TrainConfig, seed: int | None = None):
    mean, std = feature_stats(train_samples)
    model = init_model(cfg.seed if seed is None else seed)
    model.feature_mean, model.feature_std = mean, std
    t0 = time.perf_counter()
    model, hist = train(model, train_samples, cfg)
    return model, hist, time.perf_counter() - t0


def run_ratio_sweep(job: LabelJob, ratios, split: SplitSpec, n_k: int, cfg: TrainConfig,
                    seed: int = 0, bands: ClassBands = ClassBands(), workers: int = 1):
    """One freshly initialised model per training-target ratio, all scored on one test set."""
    ratios = list(ratios)
    if any(not 0.05 <= r <= 0.80 for r in ratios):
        raise EvaluateError("ratios must lie in [0.05, 0.80]")
    splits = {r: split_targets(job.net, replace(split, train_target_ratio=r)) for r in ratios}
    test_ids = {splits[r].test for r in ratios}
    if len(test_ids) != 1:
        raise EvaluateError("test targets changed across ratios")
    test_targets = next(iter(test_ids))
    all_train = sorted(set().union(*(splits[r].train for r in ratios)))
    pool = label_targets(job, all_train, n_k, seed, workers)
    test = label_targets(job, test_targets, n_k, seed, workers)
    out = {}
    for i, r in enumerate(ratios):
        chosen = set(splits[r].train)
        train_samples = [s for s in pool if s.target in chosen]
        model, _, t_train = fit_model(train_samples, replace(cfg, seed=cfg.seed + 1000 * i))
        report, _ = run_accuracy_experiment(gnn_predictor(model), test, bands, t_train)
        out[r] = report
        logger.info("ratio %.2f: %d samples, MAE %.4f, F1 %.3f", r, len(train_samples),
                    report.mae, report.f1_2class)
    return out, tuple(sorted(test_targets))


def perturb_field(edge_probs, noise_frac: float, rng) -> np.ndarray:
    """Zero-mean Gaussian noise with std ``noise_frac * p`` per edge, clipped to [0, 1]."""
    p = np.asarray(edge_probs, dtype=float)
    return np.clip(p + rng.standard_normal(p.shape) * (noise_frac * p), 0.0, 1.0)


def perturb_samples(job: LabelJob, samples, noise_frac: float = 0.20, seed: int = 0,
                    label_seed: int = 0):
    """Perturbed copies of ``samples`` with rebuilt features and fresh MC labels.

    The MC seed of each sample is the one used to label the original, so a
    zero noise level reproduces the original labels exactly.
    """
    from .dataset import _scenario_seed

    out = []
    for i, s in enumerate(samples):
        net = s.net if s.net is not None else job.net
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(23, i)))
        fld = FailureField(perturb_field(s.edge_features[:, 0], noise_frac, rng))
        x_n, x_e = build_features(net, fld, s.target)
        mc_ss = _scenario_seed(label_seed, s.target, s.scenario_index).spawn(3)[1]
        est = estimate_connectivity(net, fld, s.target,
                                    replace(job.mc, seed=int(mc_ss.generate_state(1)[0])))
        out.append(GraphSample(x_n, x_e, s.target, est.probability, s.magnitude,
                               s.scenario_index, net))
    return out


def run_perturbation_experiment(predictor: Predictor, job: LabelJob, test_samples,
                                noise_frac: float = 0.20, seed: int = 0, label_seed: int = 0,
                                bands: ClassBands = ClassBands()):
    perturbed = perturb_samples(job, test_samples, noise_frac, seed, label_seed)
    report, errs = run_accuracy_experiment(predictor, perturbed, bands)
    return report, errs, perturbed


def run_transfer_experiment(model: GnnModel, job_b: LabelJob, split: SplitSpec, n_k: int,
                            seed: int = 0, targets=None, bands: ClassBands = ClassBands(),
                            workers: int = 1):
    """Evaluate a frozen model on another network without any retraining."""
    if model.node_in != 4:
        raise EvaluateError("model node feature width does not match the 4 built features")
    if targets is None:
        targets = split_targets(job_b.net, split).test
    samples = label_targets(job_b, targets, n_k, seed, workers)
    report, errs = run_accuracy_experiment(gnn_predictor(model), samples, bands)
    return report, errs, samples


# -- report files ------------------------------------------------------------------

def write_report(report: MetricsReport, directory, config: dict | None = None,
                 errors: NodeErrors | None = None, net: Network | None = None,
                 name: str = "report.toml") -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    doc = {"metrics": report.metrics(),
           "pearson_defined": report.pearson_r is not None,
           "config": config or {},
           "timing": report.timing()}
    path = directory / name
    path.write_text(tomli_w.dumps(doc), encoding="utf-8")
    if errors is not None:
        with open(directory / "per_node_errors.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["node_id", "target_id", "pred", "label", "abs_err",
                        "class_pred", "class_label"])
            for row in errors.rows:
                w.writerow([row[0], row[1], repr(row[2]), repr(row[3]), repr(row[4]),
                            row[5], row[6]])
        if net is not None:
            feats = [{"type": "Feature",
                      "geometry": {"type": "Point",
                                   "coordinates": [net.nodes[v].lon, net.nodes[v].lat]},
                      "properties": {"kind": "node", "id": v, "mean_abs_err": e}}
                     for v, e in errors.node_mae.items()]
            (directory / "error_map.geojson").write_text(
                json.dumps({"type": "FeatureCollection", "features": feats}, indent=1),
                encoding="utf-8")
    return path


def read_report(path) -> tuple[MetricsReport, dict]:
    doc = tomllib.loads(Path(path).read_text(encoding="utf-8"))
    vals = {**doc["metrics"], **doc.get("timing", {})}
    names = {f.name for f in fields(MetricsReport)}
    vals.setdefault("pearson_r", None)
    return MetricsReport(**{k: v for k, v in vals.items() if k in names}), doc.get("config", {})
