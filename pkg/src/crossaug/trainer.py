"""Minibatch SGD over merged Source+Target batches, plus checkpoint I/O."""
from __future__ import annotations

import dataclasses
import logging
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import CrossAugError, Dataset, DomainTag, InvalidConfig, Rng
from .model import Batch, LossConfig, ModelParams, forward_backward, init_params, predict_logits

log = logging.getLogger(__name__)

COUNT_MODES = ("combined", "target-only", "source-only")


class TrainingDiverged(CrossAugError, RuntimeError):
    def __init__(self, epoch: int, batch: int, value: float):
        super().__init__(f"non-finite loss {value} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


class BadCheckpoint(CrossAugError, ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    batch_per_domain: int = 128
    epochs: int = 10
    shared_dim: int = 32
    momentum: float = 0.0
    lambda_align: float = 1.0
    lambda_cal: float = 1.0
    margin: float = 0.3
    mining: str = "hardest_in_batch"
    use_alignment: bool = True
    use_calibration: bool = True
    use_title: bool = True
    use_ingredients: bool = True
    normalize_embeddings: bool = True
    alignment_scope: str = "merged"
    count_mode: str = "combined"
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise InvalidConfig("learning_rate must be >= 0")
        if self.batch_per_domain < 2:
            raise InvalidConfig("batch_per_domain must be >= 2")
        if self.epochs < 1:
            raise InvalidConfig("epochs must be >= 1")
        if self.shared_dim < 1:
            raise InvalidConfig("shared_dim must be >= 1")
        if not 0 <= self.momentum < 1:
            raise InvalidConfig("momentum must lie in [0, 1)")
        if self.count_mode not in COUNT_MODES:
            raise InvalidConfig(f"count_mode must be one of {COUNT_MODES}")
        self.loss_config()  # validates margin, weights and mining

    def loss_config(self) -> LossConfig:
        return LossConfig(
            margin=self.margin, mining=self.mining,
            lambda_align=self.lambda_align, lambda_cal=self.lambda_cal,
            use_alignment=self.use_alignment, use_calibration=self.use_calibration,
            use_title=self.use_title, use_ingredients=self.use_ingredients,
            normalize_embeddings=self.normalize_embeddings,
            alignment_scope=self.alignment_scope,
        )

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)


@dataclass
class EpochRecord:
    epoch: int
    total_loss: float
    alignment_loss: float
    calibration_loss: float
    train_top1_source: float
    train_top1_target: float
    wall_time: float

    def to_dict(self, with_time: bool = True) -> dict:
        d = dataclasses.asdict(self)
        if not with_time:
            d.pop("wall_time")
        return d


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def losses(self) -> np.ndarray:
        return np.array([r.total_loss for r in self.records])

    def to_dict(self, with_time: bool = False) -> dict:
        return {"epochs": [r.to_dict(with_time) for r in self.records]}

    def same_as(self, other: "TrainHistory") -> bool:
        return self.to_dict(False) == other.to_dict(False)


def make_epoch_batches(source: Dataset, target: Dataset, batch_per_domain: int,
                       rng: Rng) -> list[tuple[np.ndarray, np.ndarray]]:
    """Index pairs ``(source_idx, target_idx)`` for one epoch.

    Each domain is shuffled independently. The epoch is one pass over Source
    in whole batches; the Target order is repeated as often as needed.
    """
    if source.size == 0 or target.size == 0:
        raise InvalidConfig("both domains need at least one training sample")
    b = batch_per_domain
    n_batches = source.size // b
    if n_batches == 0:
        raise InvalidConfig(f"source has {source.size} samples, fewer than one batch of {b}")
    s_order = rng.child("source").permutation(source.size)
    t_order = rng.child("target").permutation(target.size)
    need = n_batches * b
    t_cycled = np.tile(t_order, -(-need // target.size))[:need]
    return [(s_order[k * b:(k + 1) * b], t_cycled[k * b:(k + 1) * b]) for k in range(n_batches)]


def calibration_counts(source: Dataset, target: Dataset, mode: str = "combined") -> np.ndarray:
    s = np.bincount(source.labels, minlength=source.num_classes)
    t = np.bincount(target.labels, minlength=target.num_classes)
    counts = {"combined": s + t, "target-only": t, "source-only": s}[mode]
    # classes absent from the chosen domain still need a positive count
    return np.maximum(counts, 1)


def accuracy(params: ModelParams, ds: Dataset, loss_config: LossConfig,
             image_only: bool = False) -> float:
    if ds.size == 0:
        return float("nan")
    logits = predict_logits(params, Batch.from_dataset(ds), loss_config, image_only)
    return float(np.mean(np.argmax(logits, axis=1) == ds.labels))


def train(source: Dataset, target: Dataset, config: TrainConfig,
          params: ModelParams | None = None) -> tuple[ModelParams, TrainHistory]:
    if source.num_classes != target.num_classes:
        raise InvalidConfig("source and target disagree on num_classes")
    if source.feature_dim != target.feature_dim or source.text_dim != target.text_dim:
        raise InvalidConfig("source and target feature dims differ")
    rng = Rng(config.seed)
    if params is None:
        params = init_params(source.feature_dim, source.text_dim, config.shared_dim,
                             source.num_classes, rng.child("init"))
    else:
        params = params.copy()
    loss_config = config.loss_config()
    counts = calibration_counts(source, target, config.count_mode)
    velocity = params.zeros_like() if config.momentum > 0 else None
    names = [f.name for f in dataclasses.fields(ModelParams)]
    history = TrainHistory()

    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        sums = np.zeros(3)
        batches = make_epoch_batches(source, target, config.batch_per_domain,
                                     rng.child("epoch", epoch))
        for k, (si, ti) in enumerate(batches):
            batch = Batch.concat([Batch.from_dataset(source, si), Batch.from_dataset(target, ti)])
            loss, grads = forward_backward(params, batch, counts, loss_config)
            if not np.isfinite(loss.value):
                raise TrainingDiverged(epoch, k, loss.value)
            sums += (loss.value, float(loss.grads["alignment"]), float(loss.grads["calibration"]))
            if config.learning_rate == 0.0:
                continue
            for name in names:
                g = getattr(grads, name)
                if velocity is not None:
                    v = getattr(velocity, name)
                    v *= config.momentum
                    v += g
                    g = v
                getattr(params, name).__isub__(config.learning_rate * g)
        if not params.is_finite():
            raise TrainingDiverged(epoch, len(batches) - 1, float("nan"))
        n = len(batches)
        rec = EpochRecord(
            epoch=epoch,
            total_loss=float(sums[0] / n),
            alignment_loss=float(sums[1] / n),
            calibration_loss=float(sums[2] / n),
            train_top1_source=accuracy(params, source, loss_config),
            train_top1_target=accuracy(params, target, loss_config),
            wall_time=time.perf_counter() - t0,
        )
        history.records.append(rec)
        log.debug("epoch %d loss %.5f", epoch, rec.total_loss)
    return params, history


# checkpoint layout: b"XMLT", u32 version, u32 feature_dim, u32 text_dim,
# u32 shared_dim, u32 num_classes, then float64 LE arrays in PARAM_ORDER
CHECKPOINT_MAGIC = b"XMLT"
CHECKPOINT_VERSION = 1
_CK_HEADER = struct.Struct("<4sIIIII")


def checkpoint_bytes(params: ModelParams) -> bytes:
    header = _CK_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, *params.dims)
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in params.arrays())
    return header + body


def save_checkpoint(params: ModelParams, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(params))


def parse_checkpoint(data: bytes) -> ModelParams:
    if len(data) < _CK_HEADER.size:
        raise BadCheckpoint("checkpoint shorter than its header")
    magic, version, f, t, s, c = _CK_HEADER.unpack_from(data)
    if magic != CHECKPOINT_MAGIC:
        raise BadCheckpoint(f"bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
    if version != CHECKPOINT_VERSION:
        raise BadCheckpoint(
            f"unsupported checkpoint version {version} (this build reads version {CHECKPOINT_VERSION})")
    shapes = [(s, f), (s,), (s, 2 * t), (s,), (c, s), (c,)]
    expected = _CK_HEADER.size + 8 * sum(int(np.prod(sh)) for sh in shapes)
    if len(data) != expected:
        raise BadCheckpoint(f"checkpoint has {len(data)} bytes, header implies {expected}")
    arrays, pos = [], _CK_HEADER.size
    for sh in shapes:
        n = int(np.prod(sh))
        arrays.append(np.frombuffer(data, dtype="<f8", count=n, offset=pos).astype(np.float64).reshape(sh))
        pos += 8 * n
    return ModelParams(*arrays)


def load_checkpoint(path) -> ModelParams:
    return parse_checkpoint(Path(path).read_bytes())


def domain_split(ds: Dataset) -> tuple[Dataset, Dataset]:
    return ds.domain(DomainTag.SOURCE), ds.domain(DomainTag.TARGET)
