"""Run configuration: one TOML file, overridable from the command line.

Precedence, lowest first: built-in defaults, the bundled
``default_config.toml``, a user ``--config`` file, explicit command-line
flags.  Relative data paths in a config file are resolved against the
directory holding that file; a missing data path means the bundled
synthetic file.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

import tomli

from fraudsim.calibration import CalibrationTargets, SearchSettings
from fraudsim.model import GlobalParams
from fraudsim.simulation import SimulationConfig

DATA_KEYS = ("panel", "macro", "text", "rates", "corpus")
BUNDLED_FILES = {"panel": "panel.csv", "macro": "macro.csv", "text": "text_indicators.csv", "rates": "fx_rates.csv"}


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("fraudsim") / "data" / name))


@dataclass
class DataPaths:
    panel: Path = field(default_factory=lambda: bundled_path(BUNDLED_FILES["panel"]))
    macro: Path = field(default_factory=lambda: bundled_path(BUNDLED_FILES["macro"]))
    text: Path | None = field(default_factory=lambda: bundled_path(BUNDLED_FILES["text"]))
    rates: Path = field(default_factory=lambda: bundled_path(BUNDLED_FILES["rates"]))
    corpus: Path | None = None     # if set, text indicators are counted from this corpus

    def check_exist(self) -> list[str]:
        missing = []
        for key in DATA_KEYS:
            p = getattr(self, key)
            if p is not None and not Path(p).exists():
                missing.append(f"{key}: {p}")
        return missing


@dataclass
class ValidationConfig:
    history: int = 0
    pool_histories: bool = False


@dataclass
class RunConfig:
    seed: int = 20120101
    workers: int = 0               # 0 means one per CPU
    out_dir: Path = Path("fraudsim-out")
    data: DataPaths = field(default_factory=DataPaths)
    gp: GlobalParams = field(default_factory=GlobalParams)
    targets: CalibrationTargets = field(default_factory=CalibrationTargets)
    search: SearchSettings = field(default_factory=SearchSettings)
    skip_search: bool = False
    n_histories: int = 500
    block_size: int = 25
    validation: ValidationConfig = field(default_factory=ValidationConfig)

    def simulation(self) -> SimulationConfig:
        return SimulationConfig(n_histories=self.n_histories, master_seed=self.seed,
                                block_size=self.block_size, workers=self.workers)


def _check_keys(table: dict, allowed, where: str) -> None:
    extra = set(table) - set(allowed)
    if extra:
        raise ValueError(f"unknown keys in [{where}]: {sorted(extra)}")


def _dataclass_update(obj, table: dict, where: str):
    names = {f.name: f for f in fields(obj)}
    _check_keys(table, names, where)
    conv = {}
    for k, v in table.items():
        cur = getattr(obj, k)
        if isinstance(cur, tuple):
            v = tuple(float(x) for x in v)
        elif isinstance(cur, bool):
            v = bool(v)
        elif isinstance(cur, float):
            v = float(v)
        conv[k] = v
    return replace(obj, **conv)


def apply_toml(cfg: RunConfig, doc: dict, base_dir: Path) -> RunConfig:
    _check_keys(doc, ("seed", "workers", "out_dir", "data", "global", "targets", "calibration",
                      "simulation", "validation"), "top level")
    cfg = replace(cfg)
    if "seed" in doc:
        cfg.seed = int(doc["seed"])
    if "workers" in doc:
        cfg.workers = int(doc["workers"])
    if "out_dir" in doc:
        cfg.out_dir = (base_dir / doc["out_dir"]).resolve() if not Path(doc["out_dir"]).is_absolute() \
            else Path(doc["out_dir"])
    if "data" in doc:
        _check_keys(doc["data"], DATA_KEYS, "data")
        paths = replace(cfg.data)
        for k, v in doc["data"].items():
            p = Path(v)
            setattr(paths, k, p if p.is_absolute() else (base_dir / p).resolve())
        if "corpus" in doc["data"] and "text" not in doc["data"]:
            paths.text = None
        cfg.data = paths
    if "global" in doc:
        cfg.gp = _dataclass_update(cfg.gp, doc["global"], "global")
    if "targets" in doc:
        cfg.targets = _dataclass_update(cfg.targets, doc["targets"], "targets")
    if "calibration" in doc:
        table = dict(doc["calibration"])
        if "skip_search" in table:
            cfg.skip_search = bool(table.pop("skip_search"))
        cfg.search = _dataclass_update(cfg.search, table, "calibration")
    if "simulation" in doc:
        _check_keys(doc["simulation"], ("n_histories", "block_size"), "simulation")
        cfg.n_histories = int(doc["simulation"].get("n_histories", cfg.n_histories))
        cfg.block_size = int(doc["simulation"].get("block_size", cfg.block_size))
    if "validation" in doc:
        cfg.validation = _dataclass_update(cfg.validation, doc["validation"], "validation")
    return cfg


def load_config(path: Path | None = None) -> RunConfig:
    """Defaults, then the bundled config, then ``path`` if given."""
    cfg = RunConfig()
    default = bundled_path("default_config.toml")
    with open(default, "rb") as fh:
        cfg = apply_toml(cfg, tomli.load(fh), Path.cwd())
    if path is not None:
        path = Path(path)
        with open(path, "rb") as fh:
            cfg = apply_toml(cfg, tomli.load(fh), path.parent.resolve())
    return cfg
