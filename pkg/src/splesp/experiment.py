"""Experiment configuration files and the generate/train/evaluate/compare drivers.

Configs are INI files with up to four sections::

    [dataset]     DatasetSpec fields (tuples as comma-separated numbers)
    [train]       TrainConfig fields; schedules as xi0/xi_e1/xi_e2 and
                  lambda0/lambda_e1/lambda_e2
    [eval]        conf_threshold, nms_iou, match_iou, ap_conf_threshold
    [experiment]  seeds, modes, jobs

Every key is optional; unknown sections or keys are contract errors.
"""
from __future__ import annotations

import configparser
import io
import json
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import _kernels
from .assignment import DEFAULT_CONF_THRESHOLD, DEFAULT_NMS_IOU
from .detector import (
    CHECKPOINT_FORMAT, CHECKPOINT_VERSION, DetectorParams, forward_batch,
)
from .errors import ContractError
from .metrics import (
    AP_CONF_THRESHOLD, COMPARISON_COLUMNS, EvalReport, append_comparison_row, comparison_row, evaluate,
    oracle_maps,
)
from .spl_core import lambda_params, xi_params
from .synth_world import (
    FORMAT_NAME as DATASET_FORMAT, FORMAT_VERSION as DATASET_VERSION, Dataset, DatasetSpec, generate_dataset,
    load_dataset, save_dataset, summarize,
)
from .trainer import Mode, TrainConfig, TrainResult, train

RUN_FORMAT = "splesp-run"
RUN_VERSION = 1
COMPARE_MODES = (Mode.AS, Mode.ES, Mode.HEM, Mode.SPL_ESP_BC)
_SCHEDULE_KEYS = {
    "xi0": ("xi", "start_value"), "xi_e1": ("xi", "e1"), "xi_e2": ("xi", "e2"),
    "lambda0": ("lam", "start_value"), "lambda_e1": ("lam", "e1"), "lambda_e2": ("lam", "e2"),
}


@dataclass(frozen=True)
class EvalSettings:
    conf_threshold: float = DEFAULT_CONF_THRESHOLD
    nms_iou: float = DEFAULT_NMS_IOU
    match_iou: float = 0.5
    ap_conf_threshold: float = AP_CONF_THRESHOLD

    def __post_init__(self):
        for f in fields(self):
            if not 0.0 < getattr(self, f.name) < 1.0:
                raise ContractError(f"eval setting {f.name} must lie in (0, 1)")


@dataclass
class ExperimentConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalSettings = field(default_factory=EvalSettings)
    seeds: tuple[int, ...] = (0,)
    modes: tuple[Mode, ...] = COMPARE_MODES
    jobs: int = 1

    def __post_init__(self):
        if not self.seeds:
            raise ContractError("seed list is empty")
        if not self.modes:
            raise ContractError("mode list is empty")
        if self.jobs < 1:
            raise ContractError("jobs must be at least 1")

    def with_overrides(self, seed=None, mode=None) -> "ExperimentConfig":
        cfg = self
        if seed is not None:
            cfg = replace(cfg, seeds=(int(seed),), train=replace(cfg.train, seed=int(seed)))
        if mode is not None:
            m = Mode.parse(mode) if isinstance(mode, str) else mode
            cfg = replace(cfg, train=_train_for_mode(cfg.train, m), modes=(m,))
        return cfg

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset.to_dict(),
            "train": self.train.to_dict(),
            "eval": {f.name: getattr(self.eval, f.name) for f in fields(self.eval)},
            "seeds": list(self.seeds),
            "modes": [m.value for m in self.modes],
            "jobs": self.jobs,
        }


def _train_for_mode(config: TrainConfig, mode: Mode) -> TrainConfig:
    # TrainConfig validates epoch counts per mode, so swap the mode via a dict
    d = {f.name: getattr(config, f.name) for f in fields(config)}
    d["mode"] = mode
    return TrainConfig(**d)


# -- INI parsing --------------------------------------------------------------

def _convert(raw: str, default, key: str):
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(float(x) for x in raw.split(",") if x.strip())
        if isinstance(default, Mode):
            return Mode.parse(raw)
    except ValueError as exc:
        raise ContractError(f"config key {key!r}: cannot parse {raw!r}") from exc
    return raw


def _section_values(parser, section: str, defaults: dict, extra=()) -> dict:
    out = {}
    if not parser.has_section(section):
        return out
    for key, raw in parser.items(section):
        if key in extra:
            out[key] = raw
        elif key in defaults:
            out[key] = _convert(raw, defaults[key], f"{section}.{key}")
        else:
            raise ContractError(f"unknown key {key!r} in section [{section}]")
    return out


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ContractError(f"{source}: {exc}") from exc
    unknown = set(parser.sections()) - {"dataset", "train", "eval", "experiment"}
    if unknown:
        raise ContractError(f"{source}: unknown section(s) {sorted(unknown)}")

    spec_defaults = DatasetSpec().to_dict()
    spec_defaults = {k: (tuple(v) if isinstance(v, list) else v) for k, v in spec_defaults.items()}
    spec = DatasetSpec(**_section_values(parser, "dataset", spec_defaults))

    base = TrainConfig()
    train_defaults = {f.name: getattr(base, f.name) for f in fields(base) if f.name not in ("xi", "lam")}
    tv = _section_values(parser, "train", train_defaults, extra=tuple(_SCHEDULE_KEYS))
    sched = {"xi": {}, "lam": {}}
    for key, (which, attr) in _SCHEDULE_KEYS.items():
        if key in tv:
            sched[which][attr] = _convert(tv.pop(key), 0.0, f"train.{key}")
    xi, lam = xi_params(), lambda_params()
    if sched["xi"]:
        xi = replace(xi, **sched["xi"])
    if sched["lam"]:
        lam = replace(lam, **sched["lam"])
    train_cfg = TrainConfig(xi=xi, lam=lam, **tv)

    ev = EvalSettings(**_section_values(parser, "eval", {f.name: f.default for f in fields(EvalSettings)}))

    exp = {}
    if parser.has_section("experiment"):
        for key, raw in parser.items("experiment"):
            if key == "seeds":
                try:
                    exp["seeds"] = tuple(int(x) for x in raw.split(",") if x.strip())
                except ValueError as exc:
                    raise ContractError(f"experiment.seeds: cannot parse {raw!r}") from exc
            elif key == "modes":
                exp["modes"] = tuple(Mode.parse(x) for x in raw.split(",") if x.strip())
            elif key == "jobs":
                exp["jobs"] = _convert(raw, 1, "experiment.jobs")
            else:
                raise ContractError(f"unknown key {key!r} in section [experiment]")
    return ExperimentConfig(dataset=spec, train=train_cfg, eval=ev, **exp)


def load_config(path=None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    path = Path(path)
    if not path.is_file():
        raise ContractError(f"config file {path} does not exist")
    return parse_config(path.read_text(), str(path))


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, Mode):
        return v.value
    return repr(v) if isinstance(v, float) else str(v)


def config_to_ini(cfg: ExperimentConfig) -> str:
    """INI text that parses back to an equal config."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser["dataset"] = {k: _fmt(v) for k, v in cfg.dataset.to_dict().items()}
    tr = {}
    for f in fields(cfg.train):
        if f.name in ("xi", "lam"):
            continue
        tr[f.name] = _fmt(getattr(cfg.train, f.name))
    for key, (which, attr) in _SCHEDULE_KEYS.items():
        tr[key] = _fmt(getattr(getattr(cfg.train, which), attr))
    parser["train"] = tr
    parser["eval"] = {f.name: _fmt(getattr(cfg.eval, f.name)) for f in fields(cfg.eval)}
    parser["experiment"] = {
        "seeds": _fmt(cfg.seeds), "modes": _fmt(cfg.modes), "jobs": str(cfg.jobs),
    }
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


# -- provenance -----------------------------------------------------------------

def provenance(cfg: ExperimentConfig, extra=None) -> dict:
    from . import __version__

    d = {
        "format": RUN_FORMAT,
        "version": RUN_VERSION,
        "package_version": __version__,
        "dataset_format": [DATASET_FORMAT, DATASET_VERSION],
        "checkpoint_format": [CHECKPOINT_FORMAT, CHECKPOINT_VERSION],
        "kernel_backend": _kernels.BACKEND,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "seed": cfg.train.seed,
        "mode": cfg.train.mode.value,
        "config": cfg.to_dict(),
    }
    if extra:
        d.update(extra)
    return d


def write_run_header(run_dir: Path, cfg: ExperimentConfig, extra=None) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.ini").write_text(config_to_ini(cfg))
    (run_dir / "run.json").write_text(json.dumps(provenance(cfg, extra), sort_keys=True, indent=1))


def read_run_config(run_dir) -> ExperimentConfig:
    path = Path(run_dir) / "config.ini"
    if not path.is_file():
        raise ContractError(f"{run_dir} is not a run directory (no config.ini)")
    return load_config(path)


# -- drivers ----------------------------------------------------------------------

def obtain_dataset(cfg: ExperimentConfig, data_dir=None) -> Dataset:
    """Load a saved dataset, or generate one from the config's spec."""
    if data_dir is not None:
        return load_dataset(data_dir)
    return generate_dataset(cfg.dataset)


def run_generate(cfg: ExperimentConfig, out_dir) -> dict:
    out_dir = Path(out_dir)
    ds = generate_dataset(cfg.dataset)
    try:
        save_dataset(out_dir, ds)
    except OSError as exc:
        raise ContractError(f"cannot write dataset to {out_dir}: {exc}") from exc
    return summarize(ds)


def run_train(cfg: ExperimentConfig, run_dir, dataset: Dataset | None = None) -> TrainResult:
    run_dir = Path(run_dir)
    ds = dataset if dataset is not None else obtain_dataset(cfg)
    write_run_header(run_dir, replace(cfg, dataset=ds.spec))
    return train(cfg.train, ds.train, ds.spec.grid, run_dir=run_dir)


def evaluate_params(params: DetectorParams, cfg: ExperimentConfig, dataset: Dataset) -> EvalReport:
    maps = forward_batch(params, dataset.test, dataset.spec.grid)
    return _evaluate_maps(maps, cfg, dataset)


def evaluate_oracle(cfg: ExperimentConfig, dataset: Dataset) -> EvalReport:
    grid = dataset.spec.grid
    return _evaluate_maps([oracle_maps(s, grid) for s in dataset.test], cfg, dataset)


def _evaluate_maps(maps, cfg: ExperimentConfig, dataset: Dataset) -> EvalReport:
    e = cfg.eval
    return evaluate(
        maps, dataset.test, dataset.spec.grid,
        conf_threshold=e.conf_threshold, nms_iou=e.nms_iou, match_iou=e.match_iou,
        ap_conf_threshold=e.ap_conf_threshold,
    )


def find_checkpoint(path) -> Path:
    """A checkpoint file, or the final checkpoint inside a run directory."""
    path = Path(path)
    if path.is_dir():
        path = path / "checkpoint_final.json"
    if not path.is_file():
        raise ContractError(f"no checkpoint at {path}")
    return path


@dataclass
class RunOutcome:
    mode: Mode
    seed: int
    report: EvalReport
    log: list
    run_dir: Path


def _compare_job(args) -> RunOutcome:
    cfg, mode, seed, run_dir = args
    cfg = cfg.with_overrides(seed=seed, mode=mode)
    ds = generate_dataset(cfg.dataset)
    res = run_train(cfg, run_dir, ds)
    report = evaluate_params(res.params, cfg, ds)
    report.save(Path(run_dir) / "eval.json")
    return RunOutcome(mode, seed, report, [r.to_dict() for r in res.log], Path(run_dir))


def run_comparison(cfg: ExperimentConfig, out_dir, modes=None, seeds=None, jobs=None) -> tuple[list, list]:
    """Train and evaluate every (mode, seed) pair on the config's dataset.

    Returns ``(rows, outcomes)``. Rows follow the configured mode order; each
    mode contributes one row per seed and then a row of seed means.
    ``comparison.tsv`` in ``out_dir`` receives the same rows.
    """
    modes = tuple(Mode.parse(m) if isinstance(m, str) else m for m in (modes or cfg.modes))
    seeds = tuple(int(s) for s in (seeds or cfg.seeds))
    if not modes or not seeds:
        raise ContractError("comparison needs at least one mode and one seed")
    jobs = jobs or cfg.jobs
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tasks = [(cfg, m, s, out_dir / f"{m.value}_seed{s}") for m in modes for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_compare_job, tasks))
    else:
        outcomes = [_compare_job(t) for t in tasks]

    rows = []
    for m in modes:
        mine = [o for o in outcomes if o.mode is m]
        per_seed = [comparison_row(m.value, m.value, o.seed, o.report) for o in mine]
        rows.extend(per_seed)
        mean = {"label": m.value, "mode": m.value, "seed": "mean"}
        for col in COMPARISON_COLUMNS[3:]:
            mean[col] = float(np.mean([r[col] for r in per_seed]))
        rows.append(mean)
    table = out_dir / "comparison.tsv"
    if table.exists():
        table.unlink()
    for r in rows:
        append_comparison_row(table, r)
    return rows, outcomes

