# --------------------------------------------------------------------------------------------
# Copyright (c) Microsoft Corporation. All rights reserved.
# Licensed under the MIT License. See LICENSE.txt in the project root for license information.
# --------------------------------------------------------------------------------------------
"""
Run configuration of the experiment runner, read from and written to TOML.

A run file has the sections [system], [data], [model], [train] (with [train.rates]),
[finetune], [eval], [complexity] and [run]; any section or key left out keeps its default and
unknown sections or keys are rejected. Every command writes the fully resolved configuration
next to its outputs as `resolved_config.toml`.
"""
import dataclasses
import os
from dataclasses import dataclass, field

import toml

from precodelab.channel_sim import ArrayGeometry
from precodelab.check_inputs import ConfigurationError, DatasetIOError
from precodelab.complexity import ComplexityConfig
from precodelab.mldg_train import FineTuneConfig, LearningRates, TrainConfig
from precodelab.papp_model import ModelConfig
from precodelab.precoding import SystemConfig
from precodelab.site_profiles import HELD_OUT_SITES, TRAINING_SITES

__all__ = [
    "SystemSection",
    "DataConfig",
    "EvalConfig",
    "RunSection",
    "RunConfig",
    "OUTPUT_ROOT_ENV",
    "load_run_config",
    "run_config_from_dict",
    "run_config_to_dict",
    "dump_run_config",
    "output_root",
    "resolve_output_dir",
]

OUTPUT_ROOT_ENV = "PRECODELAB_OUTPUT_ROOT"
RESOLVED_CONFIG_NAME = "resolved_config.toml"
EVAL_METHODS = ["ZF", "WMMSE", "MRT", "PaPP-zero-shot", "PaPP-FT", "single-site"]


@dataclass(frozen=True)
class SystemSection:
    n_tx: int = 64
    n_users: int = 4
    p_max: float = 1.0
    array_rows: int = None
    array_cols: int = None
    spacing: float = 0.5

    def system(self):
        return SystemConfig(n_tx=self.n_tx, n_users=self.n_users, p_max=self.p_max)

    def geometry(self):
        if self.array_rows is None and self.array_cols is None:
            return ArrayGeometry.for_antennas(self.n_tx, self.spacing)
        rows = self.array_rows if self.array_rows is not None else self.n_tx // self.array_cols
        cols = self.array_cols if self.array_cols is not None else self.n_tx // self.array_rows
        geom = ArrayGeometry(rows=rows, cols=cols, spacing=self.spacing)
        if geom.n_elements != self.n_tx:
            raise ConfigurationError(f"Error: a {rows} x {cols} array does not have n_tx = {self.n_tx} elements")
        return geom


@dataclass(frozen=True)
class DataConfig:
    """Dataset generation: sites, samples per site, WMMSE reference SNRs and locations."""
    samples_per_site: int = 2000
    sites: tuple = tuple(TRAINING_SITES)
    held_out_sites: tuple = tuple(HELD_OUT_SITES)
    held_out_samples: int = 500
    held_out_adapt_samples: int = 250
    reference_snr_db: tuple = (0.0, 10.0, 20.0, 30.0, 40.0)
    data_dir: str = None
    profile_file: str = None
    wmmse_tol: float = 1e-3
    wmmse_max_iter: int = 100


@dataclass(frozen=True)
class EvalConfig:
    """Evaluation sweep: SNRs, methods, sites and the checkpoints to read."""
    snr_db: tuple = (0.0, 10.0, 20.0, 30.0, 40.0)
    methods: tuple = tuple(EVAL_METHODS)
    sites: tuple = tuple(HELD_OUT_SITES)
    backbone_checkpoint: str = None
    finetuned_checkpoint: str = None
    single_site_checkpoint: str = None
    finetuned_dir: str = None
    max_samples: int = None
    batch_size: int = 256

    def __post_init__(self):
        unknown = set(self.methods) - set(EVAL_METHODS)
        if unknown:
            raise ConfigurationError(f"Error: unknown evaluation methods {sorted(unknown)}; choose from {EVAL_METHODS}")


@dataclass(frozen=True)
class RunSection:
    """Seed, determinism, worker threads and output directory common to every command."""
    seed: int = 0
    deterministic: bool = True
    threads: int = 1
    output_dir: str = None
    verbose: bool = True

    def __post_init__(self):
        if int(self.threads) < 1:
            raise ConfigurationError("Error: threads must be >= 1")


@dataclass(frozen=True)
class RunConfig:
    system: SystemSection = field(default_factory=SystemSection)
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    finetune: FineTuneConfig = field(default_factory=FineTuneConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    complexity: ComplexityConfig = field(default_factory=ComplexityConfig)
    run: RunSection = field(default_factory=RunSection)


_SECTION_TYPES = {
    "system": SystemSection,
    "data": DataConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "finetune": FineTuneConfig,
    "eval": EvalConfig,
    "complexity": ComplexityConfig,
    "run": RunSection,
}


def _build(cls, table, where):
    if not isinstance(table, dict):
        raise ConfigurationError(f"Error: [{where}] must be a table")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(table) - set(known)
    if unknown:
        raise ConfigurationError(f"Error: unknown keys {sorted(unknown)} in [{where}]")
    values = {}
    for key, value in table.items():
        if cls is TrainConfig and key == "rates":
            values[key] = _build(LearningRates, value, f"{where}.rates")
        elif isinstance(value, list):
            values[key] = tuple(value)
        else:
            values[key] = value
    try:
        return cls(**values)
    except TypeError as error:
        raise ConfigurationError(f"Error: invalid values in [{where}]: {error}") from error


def run_config_from_dict(document: dict):
    """Builds a RunConfig from a parsed TOML document; missing entries keep their defaults."""
    unknown = set(document) - set(_SECTION_TYPES)
    if unknown:
        raise ConfigurationError(f"Error: unknown configuration sections {sorted(unknown)}")
    sections = {name: _build(_SECTION_TYPES[name], table, name) for name, table in document.items()}
    config = RunConfig(**sections)
    if config.system.n_users > config.system.n_tx:
        raise ConfigurationError("Error: n_users cannot exceed n_tx")
    return config


def load_run_config(path: str = None, overrides: dict = None):
    """
    Name
    ----
    load_run_config

    Description
    -----------
    Reads a run configuration from TOML (or starts from the defaults when `path` is None)
    and applies `overrides`, a mapping section -> {key: value} such as the command-line
    flags.

    Parameters
    ----------
    path : str, optional
        TOML file.
    overrides : dict, optional
        Values replacing file entries; None values are ignored.

    Returns
    -------
    RunConfig

    Example
    -------
    >>> config = load_run_config("run.toml", {"run": {"seed": 3}})
    """
    document = {}
    if path is not None:
        if not os.path.isfile(path):
            raise DatasetIOError(f"Error: configuration file {path} does not exist")
        try:
            document = toml.load(path)
        except toml.TomlDecodeError as error:
            raise ConfigurationError(f"Error: could not parse configuration file {path}: {error}") from error
    for section, table in (overrides or {}).items():
        for key, value in table.items():
            if value is not None:
                document.setdefault(section, {})[key] = value
    return run_config_from_dict(document)


def _plain(value):
    if dataclasses.is_dataclass(value):
        return {k: _plain(v) for k, v in dataclasses.asdict(value).items() if v is not None}
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items() if v is not None}
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    return value


def run_config_to_dict(config: RunConfig):
    """Nested dict of every set value (None entries are left out, so they reload as defaults)."""
    return {section: _plain(getattr(config, section)) for section in _SECTION_TYPES}


def dump_run_config(config: RunConfig, out_dir: str):
    """Writes `resolved_config.toml` into `out_dir` and returns its path."""
    path = os.path.join(out_dir, RESOLVED_CONFIG_NAME)
    try:
        os.makedirs(out_dir, exist_ok=True)
        with open(path, "w", encoding="utf-8") as handle:
            toml.dump(run_config_to_dict(config), handle)
    except OSError as error:
        raise DatasetIOError(f"Error: could not write {path}: {error}") from error
    return path


def output_root():
    """$PRECODELAB_OUTPUT_ROOT, or ./precodelab-runs when unset."""
    return os.environ.get(OUTPUT_ROOT_ENV, "precodelab-runs")


def resolve_output_dir(config: RunConfig, command: str):
    """`run.output_dir` when set, else <output root>/<command>."""
    if config.run.output_dir:
        return config.run.output_dir
    return os.path.join(output_root(), command)
