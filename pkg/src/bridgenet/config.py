"""Run configuration: one TOML file with a section per pipeline stage."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from ._toml import tomllib
from .dataset import DatasetError, MagnitudeSampler, SplitSpec
from .gnn import GnnError, TrainConfig
from .hazard import HazardError, SeismicScenario
from .montecarlo import McConfig, McError


class ConfigError(ValueError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
        self.message = message


@dataclass
class Paths:
    network: Path
    format: str = "csv-pair"
    fragility: Path | None = None
    gmpe: Path | None = None
    field: Path | None = None  # optional edge_id,p_fail override for hazard output
    out: Path = Path("out")
    transfer_network: Path | None = None
    transfer_format: str = "csv-pair"


@dataclass
class RunConfig:
    paths: Paths
    scenario: SeismicScenario
    vs30: float
    target: int
    mc: McConfig
    sampler: MagnitudeSampler
    scenarios_per_target: int
    split: SplitSpec
    train: TrainConfig
    ratios: tuple[float, ...] = (0.05, 0.2, 0.4, 0.6, 0.8)
    noise_frac: float = 0.20
    seed: int = 0
    threads: int = 1
    raw: dict = field(default_factory=dict)

    def echo(self) -> dict:
        """Plain-data view for report headers."""
        return {
            "seed": self.seed,
            "scenario": {**asdict(self.scenario), "epicenter": list(self.scenario.epicenter),
                         "vs30": self.vs30, "target": self.target},
            "mc": {k: v for k, v in asdict(self.mc).items() if k != "workers"},
            "dataset": {"scenarios_per_target": self.scenarios_per_target,
                        **{f"magnitude_{k}": v for k, v in asdict(self.sampler).items()
                           if k != "seed"}},
            "split": asdict(self.split),
            "train": asdict(self.train),
            "experiment": {"ratios": list(self.ratios), "noise_frac": self.noise_frac},
        }


def _section(doc: dict, name: str) -> dict:
    sec = doc.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(name, "must be a table")
    return sec


def _build(cls, name: str, values: dict, **extra):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"{name}.{unknown[0]}", "unknown key")
    try:
        return cls(**{**values, **extra})
    except (TypeError, ValueError, HazardError, McError, DatasetError, GnnError) as exc:
        raise ConfigError(name, str(exc)) from exc


def _path(base: Path, value, name: str, must_exist: bool) -> Path | None:
    if value in (None, ""):
        return None
    p = Path(value)
    p = p if p.is_absolute() else base / p
    if must_exist and not p.exists():
        raise ConfigError(name, f"{p} does not exist")
    return p


def load_config(path, seed: int | None = None, threads: int | None = None,
                out: str | None = None) -> RunConfig:
    path = Path(path)
    try:
        doc = tomllib.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError("config", str(exc)) from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("config", f"invalid TOML ({exc})") from exc
    return config_from_dict(doc, path.parent, seed, threads, out)


def config_from_dict(doc: dict, base: Path, seed=None, threads=None, out=None) -> RunConfig:
    base = Path(base)
    allowed = {"seed", "threads", "paths", "scenario", "mc", "dataset", "split", "train",
               "experiment"}
    unknown = sorted(set(doc) - allowed)
    if unknown:
        raise ConfigError(unknown[0], "unknown section or key")
    run_seed = int(doc.get("seed", 0) if seed is None else seed)
    n_threads = int(doc.get("threads", 1) if threads is None else threads)
    if n_threads < 1:
        raise ConfigError("threads", "must be >= 1")

    p = dict(_section(doc, "paths"))
    if "network" not in p:
        raise ConfigError("paths.network", "required")
    paths = Paths(
        network=_path(base, p.pop("network"), "paths.network", True),
        format=p.pop("format", "csv-pair"),
        fragility=_path(base, p.pop("fragility", None), "paths.fragility", True),
        gmpe=_path(base, p.pop("gmpe", None), "paths.gmpe", True),
        field=_path(base, p.pop("field", None), "paths.field", True),
        out=_path(base, out if out is not None else p.pop("out", "out"), "paths.out", False),
        transfer_network=_path(base, p.pop("transfer_network", None),
                               "paths.transfer_network", True),
        transfer_format=p.pop("transfer_format", "csv-pair"),
    )
    p.pop("out", None)
    if p:
        raise ConfigError(f"paths.{sorted(p)[0]}", "unknown key")
    for name, fmt in (("paths.format", paths.format), ("paths.transfer_format",
                                                        paths.transfer_format)):
        if fmt not in ("csv-pair", "geojson"):
            raise ConfigError(name, f"unknown format {fmt!r}")

    s = dict(_section(doc, "scenario"))
    vs30 = float(s.pop("vs30", 400.0))
    if not vs30 > 0:
        raise ConfigError("scenario.vs30", "must be positive")
    target = int(s.pop("target", 0))
    if "epicenter" in s:
        s["epicenter"] = tuple(float(v) for v in s["epicenter"])
    s.setdefault("magnitude", 7.5)
    scenario = _build(SeismicScenario, "scenario", s)

    # every stage seed derives from the single run seed
    mc = _build(McConfig, "mc", dict(_section(doc, "mc")), workers=n_threads, seed=run_seed)

    d = dict(_section(doc, "dataset"))
    n_k = int(d.pop("scenarios_per_target", 20))
    if n_k < 1:
        raise ConfigError("dataset.scenarios_per_target", "must be >= 1")
    sampler = _build(MagnitudeSampler, "dataset",
                     {k.removeprefix("magnitude_"): v for k, v in d.items()}, seed=run_seed)

    split = _build(SplitSpec, "split", dict(_section(doc, "split")), seed=run_seed)
    train = _build(TrainConfig, "train", dict(_section(doc, "train")), seed=run_seed)

    ex = dict(_section(doc, "experiment"))
    ratios = tuple(float(r) for r in ex.pop("ratios", (0.05, 0.2, 0.4, 0.6, 0.8)))
    if any(not 0.05 <= r <= 0.80 for r in ratios):
        raise ConfigError("experiment.ratios", "values must lie in [0.05, 0.80]")
    noise = float(ex.pop("noise_frac", 0.20))
    if noise < 0:
        raise ConfigError("experiment.noise_frac", "must be non-negative")
    if ex:
        raise ConfigError(f"experiment.{sorted(ex)[0]}", "unknown key")

    return RunConfig(paths, scenario, vs30, target, mc, sampler, n_k, split, train,
                     ratios, noise, run_seed, n_threads, doc)
