"""File formats: network/label JSON-lines, model JSON, experiment config."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from .errors import InvalidParameterError
from .learn import DppModel
from .network import LinkNetwork, PowerConfig, check_subset


@dataclass(frozen=True)
class ExperimentConfig:
    """Simulation settings; powers are in dB relative to the noise power."""

    mean_links: float = 20.0
    disc_radius: float = 10.0
    link_distance: float = 1.0
    alpha: float = 2.0
    p_high_db: float = 33.0
    p_low_db: float = 13.0
    p_max_db: float = 33.0
    p_threshold_db: float = 23.0
    train_count: int = 200
    test_count: int = 200
    seed: int = 0
    power: PowerConfig = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.train_count < 1 or self.test_count < 1:
            raise InvalidParameterError("train_count and test_count must be >= 1")
        if not self.mean_links > 0:
            raise InvalidParameterError("mean_links must be positive")
        object.__setattr__(self, "power", PowerConfig.from_db(
            self.p_high_db, self.p_low_db, self.p_max_db, self.p_threshold_db))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        """Read a YAML or JSON mapping; unknown keys are rejected."""
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
        known = {f.name for f in fields(cls) if f.init}
        unknown = set(data) - known
        if unknown:
            raise InvalidParameterError(f"unknown config keys in {path}: {sorted(unknown)}")
        return cls(**data)

    def replace(self, **changes) -> "ExperimentConfig":
        data = {k: v for k, v in asdict(self).items() if k != "power"}
        data.update({k: v for k, v in changes.items() if v is not None})
        return ExperimentConfig(**data)


@dataclass
class NetworkRecord:
    network_id: int
    network: LinkNetwork
    optimal_subset: frozenset | None = None
    solver_time_s: float | None = None

    def to_dict(self) -> dict:
        out = {"network_id": self.network_id, **self.network.to_dict()}
        if self.optimal_subset is not None:
            out["optimal_subset"] = sorted(self.optimal_subset)
        if self.solver_time_s is not None:
            out["solver_time_s"] = self.solver_time_s
        return out

    @classmethod
    def from_dict(cls, record: dict, default_id: int = 0) -> "NetworkRecord":
        net = LinkNetwork.from_dict(record)
        subset = record.get("optimal_subset")
        if subset is not None:
            subset = check_subset(subset, net.m)
        return cls(int(record.get("network_id", default_id)), net, subset,
                   record.get("solver_time_s"))


def write_records(path, records) -> None:
    path = Path(path)
    try:
        with path.open("w") as fh:
            for rec in records:
                fh.write(json.dumps(rec.to_dict(), separators=(",", ":")) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def read_records(path) -> list:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc}") from exc
    out = []
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            out.append(NetworkRecord.from_dict(json.loads(line), lineno - 1))
        except (KeyError, ValueError, TypeError) as exc:
            raise InvalidParameterError(f"{path}:{lineno}: bad record ({exc})") from exc
    return out


def training_pairs(records) -> list:
    missing = [r.network_id for r in records if r.optimal_subset is None]
    if missing:
        raise InvalidParameterError(f"records without optimal_subset: {missing[:5]}")
    return [(r.network, r.optimal_subset) for r in records]


def save_model(path, model: DppModel) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=2) + "\n")


def load_model(path) -> DppModel:
    try:
        return DppModel.from_dict(json.loads(Path(path).read_text()))
    except (KeyError, ValueError, TypeError) as exc:
        raise InvalidParameterError(f"{path}: bad model file ({exc})") from exc


def to_builtin(value):
    """Turn numpy scalars/arrays into JSON-friendly Python objects."""
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    return value
