"""Command-line entry point: ``bridgenet <command> --config run.toml``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from ._toml import tomli_w
from .config import ConfigError, RunConfig, load_config
from .dataset import LabelJob, generate_dataset, load_dataset, save_dataset
from .evaluate import (fit_model, gnn_predictor, oracle_stub, run_accuracy_experiment,
                       run_perturbation_experiment, run_ratio_sweep, run_transfer_experiment,
                       write_report)
from .gnn import load_model, predict, save_model
from .hazard import FailureField, compute_failure_field, load_fragility, load_gmpe
from .montecarlo import estimate_connectivity
from .network import load_network, save_network, to_geojson
from .synth import LEVELS, extend_network, synthesize_network

logger = logging.getLogger("bridgenet")


class CliError(Exception):
    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _fail(self.prog, "UsageError", message)


def _fail(stage: str, kind: str, message: str, field: str | None = None, code: int = 2):
    rec = {"error": kind, "stage": stage, "message": message}
    if field:
        rec["field"] = field
    sys.stderr.write(json.dumps(rec, sort_keys=True) + "\n")
    sys.exit(code)


def _setup_logging():
    level = os.environ.get("BRIDGENET_LOG", "warn").upper()
    level = {"WARN": "WARNING"}.get(level, level)
    if level not in ("ERROR", "WARNING", "INFO", "DEBUG"):
        level = "WARNING"
    logging.basicConfig(level=level, stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


# -- helpers ---------------------------------------------------------------------

def _job(cfg: RunConfig, net=None) -> LabelJob:
    net = net if net is not None else load_network(cfg.paths.network, cfg.paths.format)
    return LabelJob(net, load_gmpe(cfg.paths.gmpe), load_fragility(cfg.paths.fragility),
                    cfg.scenario, cfg.mc, cfg.sampler, cfg.vs30)


def _out(cfg: RunConfig) -> Path:
    cfg.paths.out.mkdir(parents=True, exist_ok=True)
    return cfg.paths.out


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def read_edge_field(path, net) -> FailureField:
    """Edge probabilities from an ``edge_id,p_fail`` CSV."""
    probs = np.zeros(net.n_edges)
    seen = set()
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            eid = int(row["edge_id"])
            if eid not in net.edge_index:
                raise CliError(f"{path}: unknown edge id {eid}", "paths.field")
            probs[net.edge_index[eid]] = float(row["p_fail"])
            seen.add(eid)
    if len(seen) != net.n_edges:
        raise CliError(f"{path}: probabilities for {net.n_edges - len(seen)} edges missing",
                       "paths.field")
    return FailureField(probs)


def _scenario_field(cfg: RunConfig, job: LabelJob) -> FailureField:
    if cfg.paths.field is not None:
        return read_edge_field(cfg.paths.field, job.net)
    return compute_failure_field(job.net, cfg.scenario, job.gmpe, job.fragility, cfg.vs30,
                                 rng_seed=cfg.seed)


def _check_target(cfg: RunConfig, net):
    if not 0 <= cfg.target < net.n_nodes:
        raise ConfigError("scenario.target", f"node {cfg.target} not in network")


def _load_ds(cfg: RunConfig, net):
    path = cfg.paths.out / "dataset"
    if not (path / "manifest.toml").exists():
        raise CliError(f"{path}: no dataset; run `bridgenet dataset` first")
    return load_dataset(path, net)


def _load_model(cfg: RunConfig):
    path = cfg.paths.out / "model.bin"
    if not path.exists():
        raise CliError(f"{path}: no model; run `bridgenet train` first")
    return load_model(path)


# -- commands --------------------------------------------------------------------

def cmd_synth(args) -> None:
    if args.level:
        nodes, edges, bridges = LEVELS[args.level]
    else:
        if None in (args.nodes, args.edges, args.bridges):
            raise CliError("give --level or all of --nodes/--edges/--bridges")
        nodes, edges, bridges = args.nodes, args.edges, args.bridges
    seed = 0 if args.seed is None else args.seed
    if args.extend:
        base = load_network(args.extend, args.format)
        net = extend_network(base, nodes, edges, bridges, seed)
    else:
        net = synthesize_network(nodes, edges, bridges, seed)
    out = Path(args.out)
    if args.format == "geojson":
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps(to_geojson(net), indent=1), encoding="utf-8")
    else:
        save_network(net, out)
    print(f"wrote {net.n_nodes} nodes, {net.n_edges} edges, {len(net.bridges)} bridges to {out}")


def cmd_hazard(cfg: RunConfig, args) -> None:
    job = _job(cfg)
    fld = compute_failure_field(job.net, cfg.scenario, job.gmpe, job.fragility, cfg.vs30,
                                rng_seed=cfg.seed)
    out = _out(cfg)
    _write_csv(out / "bridge_failure.csv",
               ["bridge_id", "edge_id", "pga_g", "sa_03_g", "sa_10_g", "p_fail"],
               [(b.id, b.edge_id, float(fld.pga[i]), float(fld.sa_03[i]), float(fld.sa_10[i]),
                 float(fld.bridge_probs[i])) for i, b in enumerate(job.net.bridges)])
    _write_csv(out / "edge_failure.csv", ["edge_id", "p_fail"],
               [(e.id, float(fld.edge_probs[k])) for k, e in enumerate(job.net.edges)])


def cmd_mc(cfg: RunConfig, args) -> None:
    job = _job(cfg)
    _check_target(cfg, job.net)
    fld = _scenario_field(cfg, job)
    t0 = time.perf_counter()
    est = estimate_connectivity(job.net, fld, cfg.target, cfg.mc)
    logger.info("mc: %d samples in %.3fs", est.samples[0], time.perf_counter() - t0)
    _write_csv(_out(cfg) / "mc_estimates.csv",
               ["node_id", "target_id", "probability", "std_error", "samples"], est.rows())


def cmd_dataset(cfg: RunConfig, args) -> None:
    job = _job(cfg)
    ds = generate_dataset(job.net, cfg.scenarios_per_target, cfg.split, job, cfg.seed,
                          cfg.threads)
    save_dataset(ds, _out(cfg) / "dataset")


def cmd_train(cfg: RunConfig, args) -> None:
    net = load_network(cfg.paths.network, cfg.paths.format)
    ds = _load_ds(cfg, net)
    model, hist, elapsed = fit_model(ds.train, cfg.train)
    out = _out(cfg)
    save_model(model, out / "model.bin")
    _write_csv(out / "loss_history.csv", ["epoch", "train_l1", "val_l1"],
               [(i, a, b) for i, (a, b) in enumerate(zip(hist.train_loss, hist.val_loss))])
    (out / "train_timing.toml").write_text(
        tomli_w.dumps({"timing": {"wall_time_train": elapsed}}), encoding="utf-8")


def cmd_predict(cfg: RunConfig, args) -> None:
    job = _job(cfg)
    _check_target(cfg, job.net)
    model = _load_model(cfg)
    fld = _scenario_field(cfg, job)
    pred = predict(model, job.net, fld, cfg.target)
    _write_csv(_out(cfg) / "predictions.csv", ["node_id", "target_id", "probability"],
               [(v, cfg.target, float(p)) for v, p in enumerate(pred)])


def _train_time(cfg: RunConfig) -> float:
    from ._toml import tomllib

    path = cfg.paths.out / "train_timing.toml"
    if path.exists():
        return float(tomllib.loads(path.read_text())["timing"]["wall_time_train"])
    return 0.0


def cmd_evaluate(cfg: RunConfig, args) -> None:
    job = _job(cfg)
    ds = _load_ds(cfg, job.net)
    if args.oracle_stub:
        predictor, t_train = oracle_stub, 0.0
    else:
        predictor, t_train = gnn_predictor(_load_model(cfg)), _train_time(cfg)
    report, errs = run_accuracy_experiment(predictor, ds.test, train_time=t_train,
                                           job=job if args.time_mc else None)
    echo = {**cfg.echo(), "predictor": "oracle-stub" if args.oracle_stub else "gnn",
            "test_targets": list(ds.test_targets)}
    write_report(report, _out(cfg), echo, errs, job.net)


def cmd_experiment(cfg: RunConfig, args) -> None:
    out = _out(cfg) / "experiments" / args.kind
    if args.kind == "ratio":
        job = _job(cfg)
        reports, test_targets = run_ratio_sweep(job, cfg.ratios, cfg.split,
                                                cfg.scenarios_per_target, cfg.train, cfg.seed,
                                                workers=cfg.threads)
        doc = {"config": {**cfg.echo(), "test_targets": list(test_targets)},
               "ratios": {f"{r:.2f}": rep.metrics() for r, rep in reports.items()},
               "timing": {f"{r:.2f}": rep.timing() for r, rep in reports.items()}}
        out.mkdir(parents=True, exist_ok=True)
        (out / "ratio_sweep.toml").write_text(tomli_w.dumps(doc), encoding="utf-8")
    elif args.kind == "perturb":
        job = _job(cfg)
        ds = _load_ds(cfg, job.net)
        model = _load_model(cfg)
        report, errs, _ = run_perturbation_experiment(gnn_predictor(model), job, ds.test,
                                                      cfg.noise_frac, cfg.seed, ds.seed)
        write_report(report, out, {**cfg.echo(), "experiment_kind": "perturb"}, errs, job.net)
    elif args.kind == "transfer":
        if cfg.paths.transfer_network is None:
            raise ConfigError("paths.transfer_network", "required for the transfer experiment")
        net_b = load_network(cfg.paths.transfer_network, cfg.paths.transfer_format)
        job_b = _job(cfg, net_b)
        model = _load_model(cfg)
        report, errs, _ = run_transfer_experiment(model, job_b, cfg.split,
                                                  cfg.scenarios_per_target, cfg.seed,
                                                  workers=cfg.threads)
        write_report(report, out, {**cfg.echo(), "experiment_kind": "transfer"}, errs, net_b)


# -- argument parsing ------------------------------------------------------------

def _common(p: argparse.ArgumentParser, config_required: bool = True):
    p.add_argument("--config", required=config_required, metavar="PATH",
                   help="run configuration (TOML)")
    p.add_argument("--seed", type=int, metavar="U64", help="override the config seed")
    p.add_argument("--threads", type=int, metavar="N", help="cap worker threads")
    p.add_argument("--out", metavar="DIR", help="override the output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bridgenet", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic bridge network")
    p.add_argument("--nodes", type=int)
    p.add_argument("--edges", type=int)
    p.add_argument("--bridges", type=int)
    p.add_argument("--level", type=int, choices=sorted(LEVELS),
                   help="use the node/edge/bridge counts of a region level")
    p.add_argument("--extend", metavar="DIR", help="grow this network into a superset")
    p.add_argument("--format", choices=("csv-pair", "geojson"), default="csv-pair")
    p.add_argument("--seed", type=int, metavar="U64")
    p.add_argument("--threads", type=int, metavar="N", help="accepted for uniformity")
    p.add_argument("--out", required=True, metavar="DIR")

    for name, text in [("hazard", "bridge and edge failure probabilities for the scenario"),
                       ("mc", "Monte Carlo connectivity to the scenario target"),
                       ("dataset", "generate the labelled train/test dataset"),
                       ("train", "train the GNN surrogate on the dataset"),
                       ("predict", "surrogate connectivity for the scenario target")]:
        _common(sub.add_parser(name, help=text))
    p = sub.add_parser("evaluate", help="score the surrogate on the held-out test targets")
    _common(p)
    p.add_argument("--oracle-stub", action="store_true",
                   help="use the MC labels as predictions (sanity check)")
    p.add_argument("--time-mc", action="store_true",
                   help="also time MC re-estimation of the test samples")
    p = sub.add_parser("experiment", help="ratio sweep, perturbation or transfer experiment")
    p.add_argument("kind", choices=("ratio", "perturb", "transfer"))
    _common(p)
    return parser


COMMANDS = {"hazard": cmd_hazard, "mc": cmd_mc, "dataset": cmd_dataset, "train": cmd_train,
            "predict": cmd_predict, "evaluate": cmd_evaluate, "experiment": cmd_experiment}


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    stage = args.command if args.command != "experiment" else f"experiment.{args.kind}"
    try:
        if args.threads is not None and args.threads < 1:
            raise ConfigError("threads", "must be >= 1")
        if args.command == "synth":
            cmd_synth(args)
        else:
            cfg = load_config(args.config, args.seed, args.threads, args.out)
            COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        _fail(stage, "ConfigError", exc.message, exc.field, 2)
    except CliError as exc:
        _fail(stage, "CliError", str(exc), exc.field, 1)
    except (ValueError, OSError, KeyError) as exc:
        _fail(stage, type(exc).__name__, str(exc), None, 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
