"""TOML experiment files.

An experiment file holds a ``[model]`` table (inline or ``file = ...``), an
optional ``[run]`` table with the sampler settings and one optional table per
subcommand (``[scan]``, ``[flow]``, ``[inequalities]``, ``[audit]``)::

    [model]
    kind = "toy"
    shift_to_origin = true

    [run]
    h = 0.1
    N = 2000
    K = 2000
    init = "warm_start"      # or { kind = "gaussian", theta = [0.0], mean = [0.0], cov = [[1.0]] }
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import tomli

from .errors import ConfigurationError
from .sampler import ExplicitInit, GaussianInit, RunConfig, WarmStart

__all__ = ["read_toml", "ExperimentSpec", "load_experiment", "init_from_value", "run_config_from_dict"]


def read_toml(path):
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            return tomli.load(fh)
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}") from None
    except tomli.TOMLDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid TOML ({exc})") from None


def init_from_value(value):
    if value is None or value == "warm_start":
        return WarmStart()
    if isinstance(value, str):
        raise ConfigurationError(f"unknown init {value!r}; use 'warm_start' or a table")
    kind = value.get("kind")
    try:
        if kind == "gaussian":
            return GaussianInit(value["theta"], value["mean"], value["cov"], value.get("theta_cov"))
        if kind == "explicit":
            return ExplicitInit(value["theta"], value["particles"])
    except KeyError as exc:
        raise ConfigurationError(f"{kind} init is missing field {exc}") from None
    if kind == "warm_start":
        return WarmStart()
    raise ConfigurationError(f"unknown init kind {kind!r}")


_RUN_KEYS = {"h", "N", "K", "seed", "algorithm", "init", "record_every", "keep_particles"}


def run_config_from_dict(table, **overrides):
    table = {**table, **{k: v for k, v in overrides.items() if v is not None}}
    unknown = set(table) - _RUN_KEYS
    if unknown:
        raise ConfigurationError(f"unknown [run] keys: {sorted(unknown)}")
    for key in ("h", "N", "K"):
        if key not in table:
            raise ConfigurationError(f"[run] requires '{key}'")
    return RunConfig(
        h=table["h"], N=table["N"], K=table["K"], seed=table.get("seed", 0),
        algorithm=str(table.get("algorithm", "pgd")).lower(),
        init=init_from_value(table.get("init")),
        record_every=table.get("record_every"),
        keep_particles=bool(table.get("keep_particles", False)),
    )


@dataclass
class ExperimentSpec:
    """Parsed experiment file plus command-line overrides."""

    model: object
    tables: dict
    path: Path
    seed: int = 0
    replicates: int = 50
    workers: int = 1
    out_dir: Path = field(default_factory=lambda: Path("."))

    def table(self, name):
        return dict(self.tables.get(name, {}))

    def run_config(self, **overrides):
        table = self.table("run")
        table["seed"] = self.seed
        return run_config_from_dict(table, **overrides)


def load_experiment(path, seed=None, replicates=None, workers=None, out_dir=None):
    from .models import model_from_dict

    path = Path(path)
    data = read_toml(path)
    if "model" not in data:
        raise ConfigurationError(f"{path}: missing [model] table")
    model = model_from_dict(data["model"], base_dir=path.parent)
    base_seed = seed
    if base_seed is None:
        base_seed = data.get("run", {}).get("seed", data.get("seed", 0))
    reps = data.get("replicates", 50) if replicates is None else replicates
    if int(reps) != reps or reps < 1:
        raise ConfigurationError("replicate count must be at least 1")
    if int(base_seed) != base_seed or not 0 <= base_seed < 2**64:
        raise ConfigurationError("seed must be a 64-bit unsigned integer")
    return ExperimentSpec(model, data, path, int(base_seed), int(reps), int(workers or 1),
                          Path(out_dir) if out_dir is not None else Path("."))
