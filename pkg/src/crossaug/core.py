"""Shared data model: embedding vectors, samples, datasets and the seeded RNG.

Feature math runs in float64 throughout. Datasets are stored column-wise as
numpy arrays; :class:`Sample` objects are materialised on demand.
"""
from __future__ import annotations

import enum
import zlib
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

EPS = 1e-12


class CrossAugError(Exception):
    """Base class for all package errors."""


class InvalidVector(CrossAugError, ValueError):
    pass


class DimMismatch(CrossAugError, ValueError):
    pass


class DegenerateVector(CrossAugError, ValueError):
    pass


class InvalidInput(CrossAugError, ValueError):
    pass


class InvalidConfig(CrossAugError, ValueError):
    pass


def _as_array(v) -> np.ndarray:
    if isinstance(v, EmbeddingVector):
        return v.values
    return np.asarray(v, dtype=np.float64)


@dataclass(frozen=True, eq=False)
class EmbeddingVector:
    """Immutable, finite, 1-D float64 vector."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float64, copy=True).reshape(-1)
        if arr.size == 0:
            raise InvalidVector("embedding must have dim >= 1")
        if not np.all(np.isfinite(arr)):
            raise InvalidVector("embedding contains NaN or Inf")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    def __len__(self) -> int:
        return self.dim

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmbeddingVector):
            return NotImplemented
        return np.array_equal(self.values, other.values)

    def __hash__(self) -> int:
        return hash(self.values.tobytes())

    def __repr__(self) -> str:
        return f"EmbeddingVector({np.array2string(self.values, precision=4)})"


class DomainTag(enum.IntEnum):
    SOURCE = 0
    TARGET = 1


class ClassGroup(enum.IntEnum):
    HEAD = 0
    MEDIUM = 1
    TAIL = 2

    @property
    def label(self) -> str:
        return self.name.lower()


def l2_normalize(v) -> tuple[EmbeddingVector, bool]:
    """Scale ``v`` to unit Euclidean norm.

    Returns ``(vector, degenerate)``. When ``‖v‖ <= 1e-12`` the input is
    returned unchanged and ``degenerate`` is True.
    """
    arr = _as_array(v)
    if not np.all(np.isfinite(arr)):
        raise InvalidVector("cannot normalise a non-finite vector")
    norm = float(np.sqrt(np.dot(arr, arr)))
    if norm <= EPS:
        return EmbeddingVector(arr), True
    return EmbeddingVector(arr / norm), False


def cosine_similarity(a, b) -> float:
    a = _as_array(a)
    b = _as_array(b)
    if a.shape != b.shape:
        raise DimMismatch(f"dims differ: {a.shape[0]} vs {b.shape[0]}")
    na = float(np.sqrt(np.dot(a, a)))
    nb = float(np.sqrt(np.dot(b, b)))
    if na <= EPS or nb <= EPS:
        raise DegenerateVector("cosine similarity of a zero-norm vector")
    return float(min(1.0, max(-1.0, np.dot(a, b) / (na * nb))))


def normalize_rows(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise L2 normalisation; degenerate rows pass through unchanged.

    Returns the normalised matrix and the raw row norms.
    """
    norms = np.sqrt(np.einsum("ij,ij->i", z, z))
    safe = np.where(norms > EPS, norms, 1.0)
    return z / safe[:, None], norms


def normalize_rows_backward(y: np.ndarray, norms: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """Gradient through :func:`normalize_rows` given its outputs."""
    ok = norms > EPS
    proj = np.einsum("ij,ij->i", y, dy)
    dz = (dy - y * proj[:, None]) / np.where(ok, norms, 1.0)[:, None]
    if not ok.all():
        dz[~ok] = dy[~ok]
    return dz


class Rng:
    """Seeded PCG64 streams with named, order-independent substreams.

    ``Rng(seed).child("a", 3)`` always yields the same stream regardless of
    which other children were drawn before; keys are hashed with CRC-32 into
    the numpy ``SeedSequence`` spawn key.
    """

    ALGORITHM = "numpy PCG64 via SeedSequence(seed, spawn_key=crc32(keys))"

    def __init__(self, seed: int, _path: tuple[int, ...] = ()):
        if not 0 <= int(seed) < 2**64:
            raise InvalidConfig(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = int(seed)
        self._path = tuple(_path)
        self.generator = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=self._path))
        )

    @staticmethod
    def _key(k) -> int:
        if isinstance(k, (int, np.integer)):
            return int(k)
        return zlib.crc32(str(k).encode("utf-8"))

    def child(self, *keys) -> "Rng":
        return Rng(self.seed, self._path + tuple(self._key(k) for k in keys))

    def __getattr__(self, name):
        return getattr(self.generator, name)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, path={self._path})"


@dataclass(frozen=True)
class Sample:
    image_feature: EmbeddingVector
    title_feature: EmbeddingVector
    ingredient_features: tuple[EmbeddingVector, ...]
    label: int
    domain: DomainTag
    id: int


def _rows(a, n: int) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    return (a if a.ndim == 2 else a.reshape(n, -1)).copy()


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-wise collection of samples.

    ``ingredients`` is padded to ``(n, max_ingredients, text_dim)``; only the
    first ``n_ingredients[i]`` rows of sample ``i`` are meaningful.
    """

    ids: np.ndarray
    labels: np.ndarray
    domains: np.ndarray
    image: np.ndarray
    title: np.ndarray
    ingredients: np.ndarray
    n_ingredients: np.ndarray
    num_classes: int
    _pooled: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        n = np.asarray(self.ids).shape[0]
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        set_("ids", _frozen(np.asarray(self.ids, dtype=np.uint64).copy()))
        set_("labels", _frozen(np.asarray(self.labels, dtype=np.int64).copy()))
        set_("domains", _frozen(np.asarray(self.domains, dtype=np.uint8).copy()))
        set_("image", _frozen(_rows(self.image, n)))
        set_("title", _frozen(_rows(self.title, n)))
        ing = np.asarray(self.ingredients, dtype=np.float64)
        if ing.ndim != 3:
            ing = ing.reshape(n, -1, self.title.shape[1])
        set_("ingredients", _frozen(ing.copy()))
        set_("n_ingredients", _frozen(np.asarray(self.n_ingredients, dtype=np.int64).copy()))
        if self.num_classes < 1:
            raise InvalidInput("num_classes must be positive")
        for name in ("labels", "domains", "image", "title", "ingredients", "n_ingredients"):
            if getattr(self, name).shape[0] != n:
                raise DimMismatch(f"column {name} has {getattr(self, name).shape[0]} rows, expected {n}")
        if self.ingredients.shape[2] != self.title.shape[1]:
            raise DimMismatch("ingredient dim differs from title dim")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise InvalidInput("label out of range")
        if n and (self.n_ingredients.min() < 0 or self.n_ingredients.max() > self.ingredients.shape[1]):
            raise InvalidInput("ingredient count out of range")
        if np.unique(self.ids).size != n:
            raise InvalidInput("sample ids are not unique")
        if not (np.isfinite(self.image).all() and np.isfinite(self.title).all()
                and np.isfinite(self.ingredients).all()):
            raise InvalidVector("dataset contains non-finite features")
        set_("_pooled", _frozen(self._pool()))

    def _pool(self) -> np.ndarray:
        n, m, t = self.ingredients.shape
        mask = np.arange(m)[None, :] < self.n_ingredients[:, None]
        total = np.einsum("nm,nmt->nt", mask.astype(np.float64), self.ingredients)
        denom = np.maximum(self.n_ingredients, 1).astype(np.float64)
        return total / denom[:, None]

    @property
    def size(self) -> int:
        return int(self.ids.shape[0])

    def __len__(self) -> int:
        return self.size

    @property
    def feature_dim(self) -> int:
        return int(self.image.shape[1])

    @property
    def text_dim(self) -> int:
        return int(self.title.shape[1])

    @property
    def max_ingredients(self) -> int:
        return int(self.ingredients.shape[1])

    @property
    def pooled_ingredients(self) -> np.ndarray:
        """Element-wise mean of each sample's ingredient vectors (zeros if none)."""
        return self._pooled

    @property
    def class_counts(self) -> np.ndarray:
        """``(2, num_classes)`` counts, row 0 Source, row 1 Target."""
        out = np.zeros((2, self.num_classes), dtype=np.int64)
        for d in DomainTag:
            sel = self.labels[self.domains == d]
            out[d] = np.bincount(sel, minlength=self.num_classes)
        return out

    def sample(self, i: int) -> Sample:
        k = int(self.n_ingredients[i])
        return Sample(
            image_feature=EmbeddingVector(self.image[i]),
            title_feature=EmbeddingVector(self.title[i]),
            ingredient_features=tuple(EmbeddingVector(v) for v in self.ingredients[i, :k]),
            label=int(self.labels[i]),
            domain=DomainTag(int(self.domains[i])),
            id=int(self.ids[i]),
        )

    @property
    def samples(self) -> Iterator[Sample]:
        return (self.sample(i) for i in range(self.size))

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(
            ids=self.ids[idx], labels=self.labels[idx], domains=self.domains[idx],
            image=self.image[idx], title=self.title[idx],
            ingredients=self.ingredients[idx], n_ingredients=self.n_ingredients[idx],
            num_classes=self.num_classes,
        )

    def domain(self, tag: DomainTag) -> "Dataset":
        return self.subset(np.flatnonzero(self.domains == tag))

    @classmethod
    def from_samples(cls, samples: Sequence[Sample], num_classes: int,
                     feature_dim: int | None = None, text_dim: int | None = None,
                     max_ingredients: int | None = None) -> "Dataset":
        samples = list(samples)
        if feature_dim is None:
            feature_dim = samples[0].image_feature.dim
        if text_dim is None:
            text_dim = samples[0].title_feature.dim
        if max_ingredients is None:
            max_ingredients = max((len(s.ingredient_features) for s in samples), default=0)
        n = len(samples)
        image = np.zeros((n, feature_dim))
        title = np.zeros((n, text_dim))
        ing = np.zeros((n, max_ingredients, text_dim))
        n_ing = np.zeros(n, dtype=np.int64)
        for i, s in enumerate(samples):
            if s.image_feature.dim != feature_dim or s.title_feature.dim != text_dim:
                raise DimMismatch(f"sample {s.id} dims do not match dataset dims")
            image[i] = s.image_feature.values
            title[i] = s.title_feature.values
            k = len(s.ingredient_features)
            if k > max_ingredients:
                raise InvalidInput(f"sample {s.id} has more than {max_ingredients} ingredients")
            for j, v in enumerate(s.ingredient_features):
                if v.dim != text_dim:
                    raise DimMismatch(f"sample {s.id} ingredient dim {v.dim} != {text_dim}")
                ing[i, j] = v.values
            n_ing[i] = k
        return cls(
            ids=np.array([s.id for s in samples], dtype=np.uint64),
            labels=np.array([s.label for s in samples], dtype=np.int64),
            domains=np.array([int(s.domain) for s in samples], dtype=np.uint8),
            image=image, title=title, ingredients=ing, n_ingredients=n_ing,
            num_classes=num_classes,
        )

    @classmethod
    def concat(cls, parts: Sequence["Dataset"]) -> "Dataset":
        parts = list(parts)
        m = max(p.max_ingredients for p in parts)
        t = parts[0].text_dim

        def pad(p):
            if p.max_ingredients == m:
                return p.ingredients
            out = np.zeros((p.size, m, t))
            out[:, : p.max_ingredients] = p.ingredients
            return out

        return cls(
            ids=np.concatenate([p.ids for p in parts]),
            labels=np.concatenate([p.labels for p in parts]),
            domains=np.concatenate([p.domains for p in parts]),
            image=np.concatenate([p.image for p in parts]),
            title=np.concatenate([p.title for p in parts]),
            ingredients=np.concatenate([pad(p) for p in parts]),
            n_ingredients=np.concatenate([p.n_ingredients for p in parts]),
            num_classes=parts[0].num_classes,
        )

    def equals(self, other: "Dataset") -> bool:
        return (
            self.num_classes == other.num_classes
            and np.array_equal(self.ids, other.ids)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.domains, other.domains)
            and np.array_equal(self.image, other.image)
            and np.array_equal(self.title, other.title)
            and np.array_equal(self.n_ingredients, other.n_ingredients)
            and all(
                np.array_equal(self.ingredients[i, :k], other.ingredients[i, :k])
                for i, k in enumerate(self.n_ingredients)
            )
        )
