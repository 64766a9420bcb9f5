"""YAML experiment configuration: parsing, validation and instance sampling.

Entity parameters accept four forms: a scalar (same value for every entity),
a list (one value per entity), ``{uniform: [a, b]}`` (real draw) and
``{randint: [a, b]}`` (integer draw, inclusive). Random draws come from the
environment's ``instance_seed`` so that the hidden system parameters are
fixed across replications.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from .env import GHZ, HETEROGENEOUS, HOMOGENEOUS, KB_BITS, MBPS, MECEnvironment, ServerProfile, UserProfile
from .errors import ConfigError

ALGORITHMS = ("debo", "udebo", "ddebo", "fdebo", "hdebo", "mucb", "mexp3", "dmnon0")

DEFAULT_PARAMS = {
    "t1_cap": None,
    "delta_min_override": None,
    "beta": 1.0,
    "zeta": 0.5,
    "vartheta": 0.5,
    "c0": 0.5,
    "c1": 50,
    "gamma_exp": 0.05,
    "match_full_budget": False,
}

USER_FIELDS = {
    "task_size_kb": True,
    "cycles_per_bit": True,
    "task_value": True,
    "latency_sensitivity": True,
    "resource_demand": False,
}
SERVER_FIELDS = {
    "tx_rate_mbps": True,
    "cpu_ghz": True,
    "task_capacity": False,
    "resource_capacity": False,
}

# Default instance: 10 users, 3 servers, ranges of the reference evaluation.
DEFAULT_ENVIRONMENT = {
    "capacity_model": HOMOGENEOUS,
    "instance_seed": 0,
    "noise_half_width": 0.3,
    "reward_lower": 0.3,
    "reward_upper": 3.8,
    "users": {
        "count": 10,
        "task_size_kb": {"uniform": [500, 1600]},
        "cycles_per_bit": 1000,
        "task_value": {"uniform": [3.0, 3.5]},
        "latency_sensitivity": {"uniform": [0.2, 0.5]},
        "resource_demand": {"uniform": [0.5, 1.0]},
    },
    "servers": {
        "count": 3,
        "tx_rate_mbps": {"uniform": [9, 11]},
        "cpu_ghz": {"uniform": [4, 8]},
        "task_capacity": [4, 3, 5],
        "resource_capacity": {"uniform": [2.0, 3.5]},
    },
}


@dataclass
class ExperimentConfig:
    environment: dict
    algorithm: str = "debo"
    horizon: int = 2 ** 18
    replications: int = 20
    seed: int = 0
    params: dict = field(default_factory=lambda: dict(DEFAULT_PARAMS))
    events: list = field(default_factory=list)
    output_dir: str = "runs"
    full_trace: bool = False
    source: Optional[str] = None  # raw text of the file the config came from

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}",
                              "experiment.algorithm")
        if int(self.horizon) < 1:
            raise ConfigError("must be >= 1", "experiment.horizon")
        if int(self.replications) < 1:
            raise ConfigError("must be >= 1", "experiment.replications")
        self.horizon = int(self.horizon)
        self.replications = int(self.replications)
        self.seed = int(self.seed)
        unknown = set(self.params) - set(DEFAULT_PARAMS)
        if unknown:
            raise ConfigError(f"unknown parameters {sorted(unknown)}", "experiment.params")
        self.params = {**DEFAULT_PARAMS, **self.params}

    def with_overrides(self, **kw) -> "ExperimentConfig":
        cfg = copy.deepcopy(self)
        for k, v in kw.items():
            if v is not None:
                setattr(cfg, k, v)
        cfg.__post_init__()
        return cfg

    def resolved(self) -> dict:
        return {
            "environment": self.environment,
            "experiment": {
                "algorithm": self.algorithm,
                "horizon": self.horizon,
                "replications": self.replications,
                "seed": self.seed,
                "params": self.params,
                "events": self.events,
                "output_dir": self.output_dir,
                "full_trace": self.full_trace,
            },
        }


def _draw(spec: Any, count: int, rng: np.random.Generator, name: str) -> np.ndarray:
    if isinstance(spec, dict):
        if len(spec) != 1:
            raise ConfigError("expected exactly one of 'uniform' or 'randint'", name)
        (kind, bounds), = spec.items()
        try:
            lo, hi = (float(b) for b in bounds)
        except (TypeError, ValueError):
            raise ConfigError("bounds must be a pair of numbers", name) from None
        if lo > hi:
            raise ConfigError("lower bound exceeds upper bound", name)
        if kind == "uniform":
            return rng.uniform(lo, hi, count)
        if kind == "randint":
            return rng.integers(int(lo), int(hi) + 1, count).astype(float)
        raise ConfigError(f"unknown distribution {kind!r}", name)
    if isinstance(spec, (list, tuple)):
        if len(spec) != count:
            raise ConfigError(f"expected {count} values, got {len(spec)}", name)
        return np.asarray(spec, dtype=float)
    try:
        return np.full(count, float(spec))
    except (TypeError, ValueError):
        raise ConfigError(f"cannot interpret {spec!r}", name) from None


def _entities(section: dict, fields: dict, seed: int, stream: int, name: str):
    if not isinstance(section, dict):
        raise ConfigError("must be a mapping", name)
    profiles = section.get("profiles")
    if profiles is not None:
        rows = []
        for k, p in enumerate(profiles):
            missing = [f for f, req in fields.items() if req and f not in p]
            if missing:
                raise ConfigError(f"missing {missing}", f"{name}.profiles[{k}]")
            rows.append({"id": int(p.get("id", k + 1)), **{f: p.get(f) for f in fields}})
        return rows
    count = section.get("count")
    if not isinstance(count, int) or count < 1:
        raise ConfigError("positive integer 'count' required", f"{name}.count")
    ids = section.get("ids", list(range(1, count + 1)))
    if len(ids) != count:
        raise ConfigError(f"expected {count} ids", f"{name}.ids")
    # Every field has its own stream, so adding or removing one field (for
    # example resource demands) leaves the draws of the others unchanged.
    cols = {}
    for k, (f, req) in enumerate(fields.items()):
        if f in section:
            rng = np.random.default_rng([seed, stream, k])
            cols[f] = _draw(section[f], count, rng, f"{name}.{f}")
        elif req:
            raise ConfigError("required", f"{name}.{f}")
    return [{"id": int(ids[k]), **{f: (float(c[k]) if f in cols else None) for f, c in cols.items()}}
            for k in range(count)] if cols else [{"id": int(i)} for i in ids]


def _user(row) -> UserProfile:
    return UserProfile(
        id=row["id"],
        task_size_bits=float(row["task_size_kb"]) * KB_BITS,
        cycles_per_bit=float(row["cycles_per_bit"]),
        task_value=float(row["task_value"]),
        latency_sensitivity=float(row["latency_sensitivity"]),
        resource_demand=None if row.get("resource_demand") is None else float(row["resource_demand"]),
    )


def _server(row) -> ServerProfile:
    cap = row.get("task_capacity")
    if cap is not None and float(cap) != int(cap):
        raise ConfigError("must be an integer", f"server {row['id']}.task_capacity")
    return ServerProfile(
        id=row["id"],
        tx_rate_bits_per_s=float(row["tx_rate_mbps"]) * MBPS,
        cpu_speed_cycles_per_s=float(row["cpu_ghz"]) * GHZ,
        task_capacity=None if cap is None else int(cap),
        resource_capacity=None if row.get("resource_capacity") is None else float(row["resource_capacity"]),
    )


def build_environment(env_cfg: dict, extra_users=()) -> MECEnvironment:
    """Sample the hidden system parameters and build the environment.

    Draws are seeded by ``instance_seed``. ``extra_users`` are appended after
    the configured users (used for users entering later).
    """
    env_cfg = {**DEFAULT_ENVIRONMENT, **env_cfg}
    unknown = set(env_cfg) - set(DEFAULT_ENVIRONMENT)
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)}", "environment")
    seed = int(env_cfg["instance_seed"])
    servers = [_server(r) for r in _entities(env_cfg["servers"], SERVER_FIELDS, seed, 0, "environment.servers")]
    users = [_user(r) for r in _entities(env_cfg["users"], USER_FIELDS, seed, 1, "environment.users")]
    users += [_user(r) if isinstance(r, dict) else r for r in extra_users]
    return MECEnvironment(users, servers,
                          noise_half_width=float(env_cfg["noise_half_width"]),
                          reward_lower=float(env_cfg["reward_lower"]),
                          reward_upper=float(env_cfg["reward_upper"]),
                          capacity_model=env_cfg["capacity_model"])


def parse_config(raw: dict, source: Optional[str] = None) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a mapping", "<root>")
    unknown = set(raw) - {"environment", "experiment"}
    if unknown:
        raise ConfigError(f"unknown sections {sorted(unknown)}", "<root>")
    env_cfg = raw.get("environment") or {}
    exp = dict(raw.get("experiment") or {})
    known = {"algorithm", "horizon", "replications", "seed", "params", "events", "output_dir", "full_trace"}
    extra = set(exp) - known
    if extra:
        raise ConfigError(f"unknown keys {sorted(extra)}", "experiment")
    return ExperimentConfig(environment=env_cfg, source=source, **exp)


def load_config(path) -> ExperimentConfig:
    """Read and parse a YAML config. Full validation happens in ``validate``."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(str(e), str(path)) from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"parse error: {e}", str(path)) from None
    return parse_config(raw, source=text)
