"""Experiment configuration: one JSON file with ``benchmark``, ``train`` and
``eval`` sections plus ``seed``, ``seeds`` and ``output_dir``.

Unknown keys anywhere are rejected. The experiment seed drives both the
benchmark generator and training, so the sections themselves take no seed.
Training keys left out of the file fall back to :data:`DESK_TRAIN`, which
trades the reference learning rate for one that converges in a few seconds
on the synthetic benchmark.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .core import InvalidConfig
from .evaluate import GroupThresholds
from .synthgen import BenchmarkConfig
from .trainer import TrainConfig

DESK_TRAIN = {"learning_rate": 1.0, "epochs": 30, "batch_per_domain": 64}


@dataclass(frozen=True)
class EvalOptions:
    image_only: bool = False
    export_embeddings: bool = False
    pca2d: bool = False
    class_mean: bool = False
    head_min_exclusive: int = 70
    tail_max_exclusive: int = 15

    def thresholds(self) -> GroupThresholds:
        return GroupThresholds(self.head_min_exclusive, self.tail_max_exclusive)


def _build(cls, section: dict, name: str, base: dict | None = None, forbid=("seed",)):
    if not isinstance(section, dict):
        raise InvalidConfig(f"section {name!r} must be an object")
    allowed = {f.name for f in dataclasses.fields(cls)} - set(forbid)
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise InvalidConfig(f"unknown key(s) in {name!r}: {', '.join(unknown)}")
    kw = dict(base or {})
    kw.update(section)
    try:
        return cls(**kw)
    except TypeError as exc:
        raise InvalidConfig(f"bad value in {name!r}: {exc}") from exc


@dataclass(frozen=True)
class ExperimentConfig:
    benchmark: BenchmarkConfig = field(default_factory=BenchmarkConfig)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(**DESK_TRAIN))
    eval: EvalOptions = field(default_factory=EvalOptions)
    seed: int = 0
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    output_dir: str | None = None

    def __post_init__(self):
        for s in (self.seed, *self.seeds):
            if not isinstance(s, int) or isinstance(s, bool) or s < 0:
                raise InvalidConfig(f"seeds must be non-negative integers, got {s!r}")
        if not self.seeds:
            raise InvalidConfig("seeds must not be empty")
        # sections inherit the experiment seed
        if self.benchmark.seed != self.seed:
            object.__setattr__(self, "benchmark", self.benchmark.replace(seed=self.seed))
        if self.train.seed != self.seed:
            object.__setattr__(self, "train", self.train.replace(seed=self.seed))

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return dataclasses.replace(self, seed=seed)

    def to_dict(self) -> dict:
        strip = lambda d: {k: v for k, v in d.items() if k != "seed"}  # noqa: E731
        return {
            "benchmark": strip(dataclasses.asdict(self.benchmark)),
            "train": strip(dataclasses.asdict(self.train)),
            "eval": dataclasses.asdict(self.eval),
            "seed": self.seed,
            "seeds": list(self.seeds),
            "output_dir": self.output_dir,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise InvalidConfig("configuration must be a JSON object")
        known = {"benchmark", "train", "eval", "seed", "seeds", "output_dir"}
        unknown = sorted(set(d) - known)
        if unknown:
            raise InvalidConfig(f"unknown top-level key(s): {', '.join(unknown)}")
        seed = d.get("seed", 0)
        seeds = d.get("seeds", [0, 1, 2, 3, 4])
        if not isinstance(seeds, list):
            raise InvalidConfig("seeds must be a list of integers")
        out = d.get("output_dir")
        if out is not None and not isinstance(out, str):
            raise InvalidConfig("output_dir must be a string")
        if not isinstance(seed, int) or isinstance(seed, bool):
            raise InvalidConfig("seed must be an integer")
        return cls(
            benchmark=_build(BenchmarkConfig, d.get("benchmark", {}), "benchmark", {"seed": seed}),
            train=_build(TrainConfig, d.get("train", {}), "train", {**DESK_TRAIN, "seed": seed}),
            eval=_build(EvalOptions, d.get("eval", {}), "eval", forbid=()),
            seed=seed,
            seeds=tuple(seeds),
            output_dir=out,
        )


def load_config(path) -> ExperimentConfig:
    """Parse a config file; a missing file is an I/O error, bad content a config error."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"{path}: not valid JSON ({exc})") from exc
    return ExperimentConfig.from_dict(data)
