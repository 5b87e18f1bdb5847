"""Synthetic two-domain, long-tailed, fine-grained embedding benchmarks.

Construction (all constants live on :class:`BenchmarkConfig`):

* cluster centres are ``cluster_scale`` times orthonormal directions (random
  Gaussian directions if there are more clusters than feature dims);
* a class mean is its cluster centre plus ``class_radius`` times a random
  unit vector, so intra-cluster mean distances are at most ``2*class_radius``;
* image features are ``class_mean + N(0, image_noise^2 I)``; Target features
  are then mapped through ``x -> M x + o`` with
  ``M = (1 - mixing) I + mixing Q`` (``Q`` random orthogonal) and ``o`` a
  random vector of norm ``shift_offset``;
* a class title is ``normalize(cluster_title + title_specificity * u_c)``;
  ingredients are the cluster's shared ingredients plus
  ``unique_ingredients`` class-specific ones, all random unit vectors;
* every sample copies its class text with ``N(0, text_jitter^2 I)`` jitter;
  with probability ``text_error_rate`` the whole text of a uniformly drawn
  other class is used instead.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import (
    Dataset,
    DomainTag,
    EmbeddingVector,
    InvalidConfig,
    InvalidInput,
    Rng,
)


@dataclass(frozen=True)
class BenchmarkConfig:
    num_classes: int = 30
    clusters: int = 3
    feature_dim: int = 32
    text_dim: int = 32
    n_max: int = 200
    n_max_target: int | None = None
    imbalance_ratio: float = 100.0
    shift_offset: float = 4.0
    shift_mixing: float = 0.0
    label_noise_rate: float = 0.0
    text_error_rate: float = 0.05
    test_per_class: int = 40
    seed: int = 0
    # construction constants
    cluster_scale: float = 4.0
    class_radius: float = 1.0
    image_noise: float = 0.25
    title_specificity: float = 0.5
    text_jitter: float = 0.1
    shared_ingredients: int = 3
    unique_ingredients: int = 1

    def __post_init__(self):
        if self.imbalance_ratio < 1:
            raise InvalidConfig(f"imbalance_ratio must be >= 1, got {self.imbalance_ratio}")
        if not (self.num_classes >= self.clusters >= 1):
            raise InvalidConfig("need num_classes >= clusters >= 1")
        for name in ("label_noise_rate", "text_error_rate", "shift_mixing"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidConfig(f"{name} must lie in [0, 1], got {v}")
        if self.feature_dim < 1 or self.text_dim < 1:
            raise InvalidConfig("feature_dim and text_dim must be positive")
        if self.n_max < 1 or (self.n_max_target is not None and self.n_max_target < 1):
            raise InvalidConfig("n_max must be >= 1")
        if self.test_per_class < 1:
            raise InvalidConfig("test_per_class must be >= 1")
        if self.unique_ingredients < 1:
            raise InvalidConfig("every class needs at least one unique ingredient")
        if self.shared_ingredients + self.unique_ingredients > 255:
            raise InvalidConfig("at most 255 ingredients per sample")
        if min(self.cluster_scale, self.class_radius, self.image_noise, self.text_jitter,
               self.shift_offset, self.title_specificity) < 0:
            raise InvalidConfig("construction constants must be non-negative")

    @property
    def has_domain_shift(self) -> bool:
        return self.shift_offset > 0 or self.shift_mixing > 0

    def replace(self, **kw) -> "BenchmarkConfig":
        return dataclasses.replace(self, **kw)


@dataclass(frozen=True)
class ClassSpec:
    class_mean: EmbeddingVector
    cluster_id: int
    title_vector: EmbeddingVector
    ingredient_vectors: tuple[EmbeddingVector, ...]
    unique_ingredients: tuple[int, ...] = field(default=())


@dataclass(frozen=True)
class DomainTransform:
    matrix: np.ndarray
    offset: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        return x @ self.matrix.T + self.offset


def long_tailed_counts(C: int, n_max: int, IR: float, permutation: Sequence[int] | None = None) -> np.ndarray:
    """Exponentially decaying per-class counts.

    Rank ``r`` gets ``round(n_max * IR ** (-r / (C - 1)))`` (at least 1);
    ``permutation[c]`` is the rank of class ``c`` (identity if omitted).
    """
    if C < 1 or n_max < 1:
        raise InvalidConfig("C and n_max must be >= 1")
    if IR < 1:
        raise InvalidConfig(f"imbalance ratio must be >= 1, got {IR}")
    if C == 1:
        by_rank = np.array([n_max], dtype=np.int64)
    else:
        r = np.arange(C, dtype=np.float64)
        # np.rint is round-half-even; use half-up to match the usual convention
        by_rank = np.floor(n_max * IR ** (-r / (C - 1)) + 0.5).astype(np.int64)
        by_rank = np.maximum(by_rank, 1)
    if permutation is None:
        return by_rank
    perm = np.asarray(permutation, dtype=np.int64)
    if sorted(perm.tolist()) != list(range(C)):
        raise InvalidInput("permutation must be a permutation of range(C)")
    return by_rank[perm]


def shuffle_target_distribution(counts, seed) -> np.ndarray:
    counts = np.asarray(counts, dtype=np.int64)
    if counts.size == 0:
        raise InvalidInput("counts must be nonempty")
    rng = seed if isinstance(seed, Rng) else Rng(int(seed)).child("target-shuffle")
    return counts[rng.permutation(counts.size)]


def imbalance_ratio(counts) -> float:
    counts = np.asarray(counts)
    if counts.size == 0:
        raise InvalidInput("counts must be nonempty")
    if counts.min() < 1:
        raise InvalidInput("all counts must be >= 1")
    return float(counts.max()) / float(counts.min())


def _unit_rows(rng: Rng, n: int, d: int) -> np.ndarray:
    v = rng.standard_normal((n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _orthonormal_rows(rng: Rng, n: int, d: int) -> np.ndarray:
    if n > d:
        return _unit_rows(rng, n, d)
    q, r = np.linalg.qr(rng.standard_normal((d, n)))
    q = q * np.sign(np.diag(r))
    return q.T


def make_class_specs(config: BenchmarkConfig, rng: Rng) -> list[ClassSpec]:
    C, K = config.num_classes, config.clusters
    centres = config.cluster_scale * _orthonormal_rows(rng.child("centres"), K, config.feature_dim)
    cluster_of = np.arange(C) % K
    offsets = config.class_radius * _unit_rows(rng.child("class-offsets"), C, config.feature_dim)
    means = centres[cluster_of] + offsets

    cluster_titles = _unit_rows(rng.child("cluster-titles"), K, config.text_dim)
    class_dirs = _unit_rows(rng.child("class-titles"), C, config.text_dim)
    titles = cluster_titles[cluster_of] + config.title_specificity * class_dirs
    titles /= np.linalg.norm(titles, axis=1, keepdims=True)

    shared = _unit_rows(rng.child("shared-ingredients"), K * config.shared_ingredients, config.text_dim)
    shared = shared.reshape(K, config.shared_ingredients, config.text_dim)
    unique = _unit_rows(rng.child("unique-ingredients"), C * config.unique_ingredients, config.text_dim)
    unique = unique.reshape(C, config.unique_ingredients, config.text_dim)

    specs = []
    for c in range(C):
        k = int(cluster_of[c])
        ingredients = tuple(EmbeddingVector(v) for v in shared[k]) + tuple(
            EmbeddingVector(v) for v in unique[c])
        specs.append(ClassSpec(
            class_mean=EmbeddingVector(means[c]),
            cluster_id=k,
            title_vector=EmbeddingVector(titles[c]),
            ingredient_vectors=ingredients,
            unique_ingredients=tuple(range(config.shared_ingredients, len(ingredients))),
        ))
    return specs


def make_domain_transform(config: BenchmarkConfig, rng: Rng) -> DomainTransform:
    d = config.feature_dim
    q, r = np.linalg.qr(rng.child("shift-rotation").standard_normal((d, d)))
    q = q * np.sign(np.diag(r))
    matrix = (1.0 - config.shift_mixing) * np.eye(d) + config.shift_mixing * q
    direction = _unit_rows(rng.child("shift-offset"), 1, d)[0]
    return DomainTransform(matrix=matrix, offset=config.shift_offset * direction)


def synthesize_domain(specs: Sequence[ClassSpec], counts, domain: DomainTag,
                      config: BenchmarkConfig, rng: Rng, first_id: int = 0,
                      transform: DomainTransform | None = None) -> Dataset:
    """Emit ``counts[c]`` samples of class ``c`` for one domain.

    ``transform`` defaults to :func:`make_domain_transform` drawn from the
    config seed, so every Target partition of a benchmark shares one shift.
    """
    counts = np.asarray(counts, dtype=np.int64)
    if counts.shape[0] != len(specs):
        raise InvalidInput("counts length must equal number of class specs")
    if counts.min(initial=0) < 0:
        raise InvalidInput("counts must be non-negative")
    n = int(counts.sum())
    C = len(specs)
    labels = np.repeat(np.arange(C), counts)
    means = np.stack([s.class_mean.values for s in specs])
    image = means[labels] + config.image_noise * rng.child("image-noise").standard_normal(
        (n, config.feature_dim))
    if domain == DomainTag.TARGET:
        if transform is None:
            transform = make_domain_transform(config, Rng(config.seed).child("domain-shift"))
        image = transform.apply(image)

    # whole-text substitution from a uniformly drawn other class
    text_class = labels.copy()
    if C > 1 and config.text_error_rate > 0:
        err_rng = rng.child("text-errors")
        wrong = err_rng.random(n) < config.text_error_rate
        shift = err_rng.integers(1, C, size=n)
        text_class = np.where(wrong, (labels + shift) % C, labels)

    titles = np.stack([s.title_vector.values for s in specs])
    max_ing = max(len(s.ingredient_vectors) for s in specs)
    ing_table = np.zeros((C, max_ing, config.text_dim))
    n_ing_table = np.zeros(C, dtype=np.int64)
    for c, s in enumerate(specs):
        k = len(s.ingredient_vectors)
        n_ing_table[c] = k
        if k:
            ing_table[c, :k] = np.stack([v.values for v in s.ingredient_vectors])
    jitter = rng.child("text-jitter")
    title = titles[text_class] + config.text_jitter * jitter.standard_normal((n, config.text_dim))
    n_ing = n_ing_table[text_class]
    mask = (np.arange(max_ing)[None, :] < n_ing[:, None])[:, :, None]
    ingredients = (ing_table[text_class]
                   + config.text_jitter * jitter.standard_normal((n, max_ing, config.text_dim))) * mask

    return Dataset(
        ids=np.arange(first_id, first_id + n, dtype=np.uint64),
        labels=labels,
        domains=np.full(n, int(domain), dtype=np.uint8),
        image=image, title=title, ingredients=ingredients, n_ingredients=n_ing,
        num_classes=C,
    )


def add_label_noise(ds: Dataset, rate: float, rng: Rng) -> Dataset:
    """Relabel each sample to a uniformly drawn other class with probability ``rate``.

    Features and text are untouched: the text still describes the true class.
    """
    if rate <= 0 or ds.num_classes < 2:
        return ds
    flip = rng.random(ds.size) < rate
    shift = rng.integers(1, ds.num_classes, size=ds.size)
    labels = np.where(flip, (ds.labels + shift) % ds.num_classes, ds.labels)
    return dataclasses.replace(ds, labels=labels)


def split_train_test(dataset: Dataset, test_per_class: int, rng: Rng) -> tuple[Dataset, Dataset]:
    """Hold out ``test_per_class`` Target samples of every class as a balanced test set."""
    if test_per_class < 1:
        raise InvalidConfig("test_per_class must be >= 1")
    test_idx = []
    for c in range(dataset.num_classes):
        pool = np.flatnonzero((dataset.labels == c) & (dataset.domains == DomainTag.TARGET))
        if pool.size < test_per_class:
            raise InvalidConfig(
                f"class {c} has {pool.size} Target samples, need {test_per_class} for the test set")
        test_idx.append(rng.child("split", c).choice(pool, size=test_per_class, replace=False))
    test_idx = np.sort(np.concatenate(test_idx)) if test_idx else np.zeros(0, dtype=np.int64)
    is_test = np.zeros(dataset.size, dtype=bool)
    is_test[test_idx] = True
    return dataset.subset(np.flatnonzero(~is_test)), dataset.subset(test_idx)


@dataclass(frozen=True)
class Benchmark:
    config: BenchmarkConfig
    specs: tuple[ClassSpec, ...]
    source_counts: np.ndarray
    target_counts: np.ndarray
    source_train: Dataset
    target_train: Dataset
    target_test: Dataset

    def manifest(self) -> dict:
        return {
            "num_classes": self.config.num_classes,
            "seed": self.config.seed,
            "imbalance_ratio": self.config.imbalance_ratio,
            "source_imbalance_ratio": imbalance_ratio(self.source_counts),
            "target_imbalance_ratio": imbalance_ratio(self.target_counts),
            "source_counts": self.source_counts.tolist(),
            "target_counts": self.target_counts.tolist(),
            "test_per_class": self.config.test_per_class,
            "sizes": {
                "source_train": self.source_train.size,
                "target_train": self.target_train.size,
                "target_test": self.target_test.size,
            },
            "rng": Rng.ALGORITHM,
            "config": dataclasses.asdict(self.config),
        }


def generate_benchmark(config: BenchmarkConfig) -> Benchmark:
    """Build Source train, Target train and a balanced Target test set."""
    root = Rng(config.seed)
    specs = make_class_specs(config, root.child("specs"))
    C = config.num_classes
    source_counts = long_tailed_counts(C, config.n_max, config.imbalance_ratio)
    n_max_t = config.n_max if config.n_max_target is None else config.n_max_target
    target_counts = shuffle_target_distribution(
        long_tailed_counts(C, n_max_t, config.imbalance_ratio), root.child("target-shuffle"))

    transform = make_domain_transform(config, root.child("domain-shift"))
    source = synthesize_domain(specs, source_counts, DomainTag.SOURCE, config,
                               root.child("source"), first_id=0)
    pool = synthesize_domain(specs, target_counts + config.test_per_class, DomainTag.TARGET,
                             config, root.child("target"), first_id=source.size,
                             transform=transform)
    target_train, target_test = split_train_test(pool, config.test_per_class, root.child("split"))
    source = add_label_noise(source, config.label_noise_rate, root.child("label-noise", "source"))
    target_train = add_label_noise(target_train, config.label_noise_rate,
                                   root.child("label-noise", "target"))
    return Benchmark(config, tuple(specs), source_counts, target_counts,
                     source, target_train, target_test)
