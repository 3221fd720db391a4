"""Experiment configuration, read from a YAML file.

Example::

    mode: pigeon_plus          # vanilla | pigeon | pigeon_plus
    seed: 0
    output: runs/demo
    protocol: {M: 12, N: 3, T: 40, E: 5, B: 20, lr: 0.05}
    arch:
      client: [784, 32]        # layer widths up to and including the cut
      ap: [32, 10]
      hidden: relu             # activation of every layer but the last
    dataset:
      kind: mnist_subset       # blobs | idx | mnist_subset
      D_m: 300
      D_o: 300
      test_n: 1000
    behaviors:                 # optional, default all honest
      - clients: [1, 2, 3]
        attack: gradient_tamper
    grad_probe: shared         # optional: shared | train (union of client shards)
"""

from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from ..adversary import ATTACKS, BehaviorSpec
from ..errors import ConfigurationError
from ..split_model import SplitArch

MODES = ("vanilla", "pigeon", "pigeon_plus")
DATASET_KINDS = ("blobs", "idx", "mnist_subset")
GRAD_PROBES = ("shared", "train")


@dataclass(frozen=True)
class DatasetSpec:
    kind: str
    D_m: int
    D_o: int
    test_n: int
    seed: int | None = None  # defaults to the experiment seed
    # blobs
    classes: int = 10
    dim: int = 16
    n: int = 0
    spread: float = 0.25
    # idx
    images: str | None = None
    labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None

    def __post_init__(self):
        if self.kind not in DATASET_KINDS:
            raise ConfigurationError(f"dataset.kind must be one of {DATASET_KINDS}, got {self.kind!r}")
        if self.kind == "idx" and not (self.images and self.labels):
            raise ConfigurationError("idx datasets need 'images' and 'labels' paths")
        if bool(self.test_images) != bool(self.test_labels):
            raise ConfigurationError("give both test_images and test_labels, or neither")


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str
    M: int
    N: int
    T: int
    E: int
    B: int
    lr: float
    arch: SplitArch
    dataset: DatasetSpec
    seed: int
    output: str | None = None
    behaviors: dict[int, BehaviorSpec] = field(default_factory=dict)
    eps: float = 0.0
    allow_excess_malicious: bool = False
    grad_probe: str = "shared"  # set for the gradient-norm metric: shared set or all client shards

    def __post_init__(self):
        if self.grad_probe not in GRAD_PROBES:
            raise ConfigurationError(f"grad_probe must be one of {GRAD_PROBES}, got {self.grad_probe!r}")
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.N < 0 or self.M < 1 or self.M % (self.N + 1):
            raise ConfigurationError(f"M={self.M} must be a positive multiple of N+1={self.N + 1}")
        if self.T < 0 or self.E < 1 or self.B < 1:
            raise ConfigurationError("need T >= 0, E >= 1, B >= 1")
        if not self.lr >= 0:
            raise ConfigurationError(f"learning rate must be >= 0, got {self.lr}")
        if self.B > self.dataset.D_m:
            raise ConfigurationError(f"B={self.B} exceeds D_m={self.dataset.D_m}")
        bad = [c for c in self.behaviors if not 1 <= c <= self.M]
        if bad:
            raise ConfigurationError(f"behaviors name unknown clients {bad}")
        n_bad = len(self.malicious)
        if n_bad > self.N:
            msg = f"{n_bad} malicious clients exceed the tolerated N={self.N}"
            if not self.allow_excess_malicious:
                raise ConfigurationError(msg + " (set allow_excess_malicious for stress runs)")
            warnings.warn(msg, stacklevel=2)

    @property
    def R(self) -> int:
        return 1 if self.mode == "vanilla" else self.N + 1

    @property
    def cluster_size(self) -> int:
        return self.M // self.R

    @property
    def malicious(self) -> tuple[int, ...]:
        return tuple(sorted(c for c, b in self.behaviors.items() if b.is_malicious))

    def behavior(self, client_id: int) -> BehaviorSpec:
        return self.behaviors.get(client_id, BehaviorSpec())

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


def _require(section: dict, key: str, where: str):
    if key not in section:
        raise ConfigurationError(f"missing required field {where}{key}")
    return section[key]


def _parse_behaviors(entries, num_classes: int) -> dict[int, BehaviorSpec]:
    out: dict[int, BehaviorSpec] = {}
    for entry in entries or []:
        entry = dict(entry)
        clients = entry.pop("clients", None)
        if clients is None and "client" in entry:
            clients = [entry.pop("client")]
        if not clients:
            raise ConfigurationError("each behavior entry needs 'clients'")
        attack = entry.pop("attack", None)
        if attack is None or attack == "honest":
            spec = BehaviorSpec()
        elif attack in ATTACKS:
            entry.setdefault("num_classes", num_classes)
            spec = BehaviorSpec.malicious(attack, **entry)
        else:
            raise ConfigurationError(f"unknown attack {attack!r}")
        for c in clients:
            if int(c) in out:
                raise ConfigurationError(f"client {c} given two behaviors")
            out[int(c)] = spec
    return out


def config_from_dict(raw: dict[str, Any]) -> ExperimentConfig:
    proto = _require(raw, "protocol", "")
    arch_raw = _require(raw, "arch", "")
    data_raw = dict(_require(raw, "dataset", ""))
    arch = SplitArch.from_widths(
        [int(w) for w in _require(arch_raw, "client", "arch.")],
        [int(w) for w in _require(arch_raw, "ap", "arch.")],
        hidden=arch_raw.get("hidden", "relu"),
    )
    for key in ("kind", "D_m", "D_o", "test_n"):
        _require(data_raw, key, "dataset.")
    unknown = set(data_raw) - {f.name for f in dataclasses.fields(DatasetSpec)}
    if unknown:
        raise ConfigurationError(f"unknown dataset fields {sorted(unknown)}")
    return ExperimentConfig(
        mode=str(_require(raw, "mode", "")),
        M=int(_require(proto, "M", "protocol.")),
        N=int(_require(proto, "N", "protocol.")),
        T=int(_require(proto, "T", "protocol.")),
        E=int(_require(proto, "E", "protocol.")),
        B=int(_require(proto, "B", "protocol.")),
        lr=float(_require(proto, "lr", "protocol.")),
        arch=arch,
        dataset=DatasetSpec(**data_raw),
        seed=int(_require(raw, "seed", "")),
        output=_require(raw, "output", ""),
        behaviors=_parse_behaviors(raw.get("behaviors"), arch.num_classes),
        eps=float(raw.get("eps", 0.0)),
        allow_excess_malicious=bool(raw.get("allow_excess_malicious", False)),
        grad_probe=str(raw.get("grad_probe", "shared")),
    )


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{path}: expected a mapping at top level")
    cfg = config_from_dict(raw)
    ds = cfg.dataset
    # relative data paths resolve against the config file's directory
    base = Path(path).resolve().parent
    paths = {k: str(base / v) for k in ("images", "labels", "test_images", "test_labels")
             if (v := getattr(ds, k)) and not Path(v).is_absolute()}
    if paths:
        cfg = cfg.replace(dataset=dataclasses.replace(ds, **paths))
    return cfg
