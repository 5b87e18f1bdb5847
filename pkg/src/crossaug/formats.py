"""Binary embedding files (``.xmeb``).

Layout, all little-endian::

    header  magic b"XMEB" | u32 version | u64 count | u32 feature_dim
            | u32 text_dim | u32 max_ingredients | u32 flags | u32 num_classes
    sample  u64 id | u32 label | u8 domain | u8 n_ingredients
            | f32[feature_dim] image | f32[text_dim] title
            | f32[n_ingredients * text_dim] ingredients

Values are stored as float32 and widened to float64 on read.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .core import CrossAugError, Dataset

MAGIC = b"XMEB"
VERSION = 1
HEADER = struct.Struct("<4sIQIIIII")
SAMPLE_HEAD = struct.Struct("<QIBB")
KNOWN_FLAGS = 0


class NotAnEmbeddingFile(CrossAugError, ValueError):
    pass


class CorruptFile(CrossAugError, ValueError):
    pass


class InvalidPayload(CrossAugError, ValueError):
    pass


def _f32(a: np.ndarray, what: str) -> bytes:
    with np.errstate(over="ignore"):
        out = np.ascontiguousarray(a, dtype="<f4")
    if not np.isfinite(out).all():
        raise InvalidPayload(f"{what} is not finite in float32")
    return out.tobytes()


def to_bytes(ds: Dataset) -> bytes:
    if ds.max_ingredients > 255:
        raise InvalidPayload("at most 255 ingredients per sample can be stored")
    parts = [HEADER.pack(MAGIC, VERSION, ds.size, ds.feature_dim, ds.text_dim,
                         ds.max_ingredients, KNOWN_FLAGS, ds.num_classes)]
    for i in range(ds.size):
        k = int(ds.n_ingredients[i])
        parts.append(SAMPLE_HEAD.pack(int(ds.ids[i]), int(ds.labels[i]), int(ds.domains[i]), k))
        parts.append(_f32(ds.image[i], f"sample {int(ds.ids[i])} image feature"))
        parts.append(_f32(ds.title[i], f"sample {int(ds.ids[i])} title feature"))
        parts.append(_f32(ds.ingredients[i, :k], f"sample {int(ds.ids[i])} ingredients"))
    return b"".join(parts)


def write_embedding_file(ds: Dataset, path) -> None:
    Path(path).write_bytes(to_bytes(ds))


def from_bytes(data: bytes) -> Dataset:
    if len(data) < 4 or data[:4] != MAGIC:
        raise NotAnEmbeddingFile(f"bad magic {bytes(data[:4])!r}, expected {MAGIC!r}")
    if len(data) < HEADER.size:
        raise CorruptFile("file shorter than its header")
    _, version, count, fdim, tdim, max_ing, flags, num_classes = HEADER.unpack_from(data)
    if version != VERSION:
        raise CorruptFile(f"unsupported embedding file version {version} (expected {VERSION})")
    if flags & ~KNOWN_FLAGS:
        raise CorruptFile(f"unknown header flags {flags:#x}")
    if fdim < 1 or tdim < 1 or num_classes < 1:
        raise CorruptFile("header declares a zero dimension")
    # reject absurd counts before allocating for them
    min_sample = SAMPLE_HEAD.size + 4 * (fdim + tdim)
    if count > (len(data) - HEADER.size) // min_sample:
        raise CorruptFile(f"header declares {count} samples, body is too short for them")
    ids = np.zeros(count, dtype=np.uint64)
    labels = np.zeros(count, dtype=np.int64)
    domains = np.zeros(count, dtype=np.uint8)
    n_ing = np.zeros(count, dtype=np.int64)
    image = np.zeros((count, fdim))
    title = np.zeros((count, tdim))
    ingredients = np.zeros((count, max_ing, tdim))
    pos = HEADER.size
    for i in range(count):
        if pos + SAMPLE_HEAD.size > len(data):
            raise CorruptFile(f"header declares {count} samples, body ends after {i}")
        ids[i], labels[i], domains[i], k = SAMPLE_HEAD.unpack_from(data, pos)
        pos += SAMPLE_HEAD.size
        if k > max_ing:
            raise CorruptFile(f"sample {i} has {k} ingredients, header allows {max_ing}")
        if domains[i] > 1:
            raise CorruptFile(f"sample {i} has unknown domain tag {domains[i]}")
        n = fdim + tdim + k * tdim
        if pos + 4 * n > len(data):
            raise CorruptFile(f"header declares {count} samples, body ends inside sample {i}")
        vals = np.frombuffer(data, dtype="<f4", count=n, offset=pos).astype(np.float64)
        pos += 4 * n
        if not np.isfinite(vals).all():
            raise InvalidPayload(f"sample {i} contains NaN or Inf")
        image[i] = vals[:fdim]
        title[i] = vals[fdim:fdim + tdim]
        ingredients[i, :k] = vals[fdim + tdim:].reshape(k, tdim)
        n_ing[i] = k
    if pos != len(data):
        raise CorruptFile(f"{len(data) - pos} trailing bytes after {count} samples")
    if count and labels.max() >= num_classes:
        raise CorruptFile("label exceeds declared num_classes")
    return Dataset(ids=ids, labels=labels, domains=domains, image=image, title=title,
                   ingredients=ingredients, n_ingredients=n_ing, num_classes=int(num_classes))


def read_embedding_file(path) -> Dataset:
    return from_bytes(Path(path).read_bytes())


def float32_roundtrip(ds: Dataset) -> Dataset:
    """The dataset as it reads back from disk (one float64->float32->float64 pass)."""
    f = lambda a: a.astype(np.float32).astype(np.float64)  # noqa: E731
    return Dataset(ids=ds.ids, labels=ds.labels, domains=ds.domains, image=f(ds.image),
                   title=f(ds.title), ingredients=f(ds.ingredients),
                   n_ingredients=ds.n_ingredients, num_classes=ds.num_classes)
