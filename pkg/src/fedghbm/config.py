"""Run configuration: nested specs, dict round-tripping and hashing."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from typing import List, Optional, Tuple

from .algorithms import AlgoKind
from .errors import ConfigError


@dataclass(frozen=True)
class TaskSpec:
    kind: str = "quadratic"  # quadratic | logistic | mlp
    n: int = 6400
    # quadratic generator
    x_low: float = -10.0
    x_high: float = 10.0
    coeffs: Tuple[float, float, float] = (10.0, 5.0, -1.0)
    noise_std: float = 0.0
    # classification generator
    d_in: int = 10
    n_classes: int = 10
    hidden: int = 16
    cluster_spread: float = 1.0
    center_scale: float = 1.0
    test_fraction: float = 0.2
    data_seed: Optional[int] = None  # None: derived from the run seed

    def __post_init__(self):
        if self.kind not in ("quadratic", "logistic", "mlp"):
            raise ConfigError(f"unknown task kind {self.kind!r}")
        if not 0.0 <= self.test_fraction < 1.0:
            raise ConfigError("test_fraction must lie in [0, 1)")
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))


@dataclass(frozen=True)
class PartitionSpec:
    kind: str = "iid"  # iid | dirichlet | domain_split
    num_clients: int = 10
    alpha: float = 0.0

    def __post_init__(self):
        if self.kind not in ("iid", "dirichlet", "domain_split"):
            raise ConfigError(f"unknown partition kind {self.kind!r}")
        if self.num_clients < 1:
            raise ConfigError("num_clients must be >= 1")


@dataclass(frozen=True)
class SamplerSpec:
    kind: str = "uniform"  # uniform | cyclic
    participation: float = 1.0


@dataclass(frozen=True)
class RunConfig:
    task: TaskSpec = field(default_factory=TaskSpec)
    partition: PartitionSpec = field(default_factory=PartitionSpec)
    sampler: SamplerSpec = field(default_factory=SamplerSpec)
    algorithm: AlgoKind = field(default_factory=AlgoKind)
    rounds: int = 100
    batch_size: Optional[int] = None  # None: full local batch
    eval_every: int = 1
    seed: int = 0
    workers: int = 1
    probe_taus: Tuple[int, ...] = ()

    def __post_init__(self):
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        taus = tuple(int(x) for x in self.probe_taus)
        if any(x < 1 for x in taus):
            raise ConfigError("probe taus must be >= 1")
        object.__setattr__(self, "probe_taus", taus)

    # -- serialisation --------------------------------------------------

    def to_dict(self) -> dict:
        d = asdict(self)
        d["task"]["coeffs"] = list(self.task.coeffs)
        d["algorithm"] = self.algorithm.to_dict()
        d["probe_taus"] = list(self.probe_taus)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        _reject_unknown(cls, d, "run")
        sub = {
            "task": TaskSpec,
            "partition": PartitionSpec,
            "sampler": SamplerSpec,
            "algorithm": AlgoKind,
        }
        kwargs = {}
        for key, value in d.items():
            if key in sub:
                _reject_unknown(sub[key], value, key)
                kwargs[key] = sub[key](**value)
            elif key == "probe_taus":
                kwargs[key] = tuple(value)
            else:
                kwargs[key] = value
        return cls(**kwargs)

    def replay_dict(self) -> dict:
        """Everything that determines the trajectory (worker count excluded)."""
        d = self.to_dict()
        d.pop("workers")
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.replay_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_updates(self, **changes) -> "RunConfig":
        """Shallow overrides; nested specs may be given as dicts of field changes."""
        d = self.to_dict()
        for key, value in changes.items():
            if isinstance(value, dict) and isinstance(d.get(key), dict):
                d[key].update(value)
            else:
                d[key] = value
        return RunConfig.from_dict(d)


def _reject_unknown(cls, d, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name for f in fields(cls)}
    extra = sorted(set(d) - known)
    if extra:
        raise ConfigError(f"{where}: unknown key(s) {extra}")
