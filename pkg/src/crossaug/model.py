"""Projection heads, additive text augmentation and the linear classifier.

Pipeline per sample::

    e_I   = normalize(W_img x + b_img)
    e_T   = normalize(W_txt [title ; mean(ingredients)] + b_txt)
    e_hat = e_I + e_T            (e_T computed from the enabled text parts)
    logits = W_cls e_hat + b_cls

The alignment loss always sees the full text (title and ingredients); the
``use_title`` / ``use_ingredients`` switches only decide what text is added
to the image embedding. With both off the classifier sees ``e_I`` alone.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import losses
from .core import (
    Dataset,
    DimMismatch,
    EmbeddingVector,
    InvalidConfig,
    Rng,
    l2_normalize,
    normalize_rows,
    normalize_rows_backward,
)

PARAM_ORDER = ("w_img", "b_img", "w_txt", "b_txt", "w_cls", "b_cls")
ALIGNMENT_SCOPES = ("merged", "per-domain")


@dataclass
class ModelParams:
    """Weights stored as ``(out, in)`` matrices plus bias vectors."""

    w_img: np.ndarray
    b_img: np.ndarray
    w_txt: np.ndarray
    b_txt: np.ndarray
    w_cls: np.ndarray
    b_cls: np.ndarray

    def __post_init__(self):
        s = self.w_img.shape[0]
        if (self.b_img.shape != (s,) or self.w_txt.shape[0] != s or self.b_txt.shape != (s,)
                or self.w_cls.shape[1] != s or self.b_cls.shape != (self.w_cls.shape[0],)
                or self.w_txt.shape[1] % 2):
            raise DimMismatch("inconsistent parameter shapes")

    @property
    def feature_dim(self) -> int:
        return int(self.w_img.shape[1])

    @property
    def text_dim(self) -> int:
        return int(self.w_txt.shape[1] // 2)

    @property
    def shared_dim(self) -> int:
        return int(self.w_img.shape[0])

    @property
    def num_classes(self) -> int:
        return int(self.w_cls.shape[0])

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return self.feature_dim, self.text_dim, self.shared_dim, self.num_classes

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, k) for k in PARAM_ORDER]

    def copy(self) -> "ModelParams":
        return ModelParams(*(a.copy() for a in self.arrays()))

    def zeros_like(self) -> "ModelParams":
        return ModelParams(*(np.zeros_like(a) for a in self.arrays()))

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    @classmethod
    def from_flat(cls, flat: np.ndarray, like: "ModelParams") -> "ModelParams":
        out, pos = [], 0
        for a in like.arrays():
            out.append(np.asarray(flat[pos:pos + a.size], dtype=np.float64).reshape(a.shape).copy())
            pos += a.size
        return cls(*out)

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())

    def equals(self, other: "ModelParams") -> bool:
        return all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))


Gradients = ModelParams


def init_params(feature_dim: int, text_dim: int, shared_dim: int, num_classes: int,
                rng: Rng) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""

    def uniform(key, out, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.child(key).uniform(-bound, bound, size=(out, fan_in))

    return ModelParams(
        w_img=uniform("w_img", shared_dim, feature_dim),
        b_img=np.zeros(shared_dim),
        w_txt=uniform("w_txt", shared_dim, 2 * text_dim),
        b_txt=np.zeros(shared_dim),
        w_cls=uniform("w_cls", num_classes, shared_dim),
        b_cls=np.zeros(num_classes),
    )


@dataclass(frozen=True)
class LossConfig:
    margin: float = 0.3
    mining: str = "hardest_in_batch"
    lambda_align: float = 1.0
    lambda_cal: float = 1.0
    use_alignment: bool = True
    use_calibration: bool = True
    use_title: bool = True
    use_ingredients: bool = True
    normalize_embeddings: bool = True
    alignment_scope: str = "merged"

    def __post_init__(self):
        if self.alignment_scope not in ALIGNMENT_SCOPES:
            raise InvalidConfig(f"alignment_scope must be one of {ALIGNMENT_SCOPES}")
        if self.margin < 0:
            raise InvalidConfig("margin must be >= 0")
        if self.lambda_align < 0 or self.lambda_cal < 0:
            raise InvalidConfig("loss weights must be >= 0")
        losses.Mining.parse(self.mining)

    @property
    def augment(self) -> bool:
        return self.use_title or self.use_ingredients

    @property
    def effective_lambda_align(self) -> float:
        return self.lambda_align if self.use_alignment else 0.0

    def replace(self, **kw) -> "LossConfig":
        return dataclasses.replace(self, **kw)


def _vec(v) -> np.ndarray:
    return v.values if isinstance(v, EmbeddingVector) else np.asarray(v, dtype=np.float64)


def encode_image(params: ModelParams, raw) -> EmbeddingVector:
    x = _vec(raw)
    if x.shape != (params.feature_dim,):
        raise DimMismatch(f"image feature dim {x.shape[0]} != {params.feature_dim}")
    return l2_normalize(params.w_img @ x + params.b_img)[0]


def pool_ingredients(vectors, text_dim: int | None = None) -> EmbeddingVector:
    """Element-wise mean; an empty list pools to the zero vector of ``text_dim``."""
    vectors = [_vec(v) for v in vectors]
    if not vectors:
        if text_dim is None:
            raise DimMismatch("text_dim is required to pool an empty ingredient list")
        return EmbeddingVector(np.zeros(text_dim))
    dims = {v.shape for v in vectors}
    if len(dims) != 1:
        raise DimMismatch(f"ingredient vectors have mixed dims {sorted(d[0] for d in dims)}")
    return EmbeddingVector(np.mean(np.stack(vectors), axis=0))


def encode_text(params: ModelParams, title, ingredients) -> EmbeddingVector:
    t = _vec(title)
    if t.shape != (params.text_dim,):
        raise DimMismatch(f"title dim {t.shape[0]} != {params.text_dim}")
    pooled = _vec(pool_ingredients(ingredients, params.text_dim))
    if pooled.shape != t.shape:
        raise DimMismatch("ingredient dim differs from title dim")
    return l2_normalize(params.w_txt @ np.concatenate([t, pooled]) + params.b_txt)[0]


def augment(e_image, e_text) -> np.ndarray:
    a, b = _vec(e_image), _vec(e_text)
    if a.shape != b.shape:
        raise DimMismatch("image and text embeddings differ in dim")
    return a + b


def classify(params: ModelParams, e_hat) -> tuple[np.ndarray, int]:
    """Logits and argmax prediction (ties go to the lowest class index)."""
    h = _vec(e_hat)
    if h.shape != (params.shared_dim,):
        raise DimMismatch(f"embedding dim {h.shape[0]} != {params.shared_dim}")
    logits = params.w_cls @ h + params.b_cls
    return logits, int(np.argmax(logits))


@dataclass(frozen=True)
class Batch:
    """Array view of a set of samples ready for the heads."""

    image: np.ndarray
    title: np.ndarray
    pooled: np.ndarray
    labels: np.ndarray
    domains: np.ndarray

    @classmethod
    def from_dataset(cls, ds: Dataset, idx=None) -> "Batch":
        if idx is None:
            return cls(ds.image, ds.title, ds.pooled_ingredients, ds.labels, ds.domains)
        idx = np.asarray(idx, dtype=np.int64)
        return cls(ds.image[idx], ds.title[idx], ds.pooled_ingredients[idx],
                   ds.labels[idx], ds.domains[idx])

    @classmethod
    def concat(cls, parts) -> "Batch":
        return cls(*(np.concatenate([getattr(p, f.name) for p in parts])
                     for f in dataclasses.fields(cls)))

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def text_input(self, use_title: bool = True, use_ingredients: bool = True) -> np.ndarray:
        t = self.title if use_title else np.zeros_like(self.title)
        p = self.pooled if use_ingredients else np.zeros_like(self.pooled)
        return np.concatenate([t, p], axis=1)


def _check_dims(params: ModelParams, batch: Batch):
    if batch.image.shape[1] != params.feature_dim or batch.title.shape[1] != params.text_dim:
        raise DimMismatch(
            f"batch dims ({batch.image.shape[1]}, {batch.title.shape[1]}) do not match model "
            f"({params.feature_dim}, {params.text_dim})")


def _project(w, b, x, normalize):
    z = x @ w.T + b
    if normalize:
        e, n = normalize_rows(z)
        return e, (e, n)
    return z, None


def _project_back(cache, de):
    return de if cache is None else normalize_rows_backward(cache[0], cache[1], de)


def embed(params: ModelParams, batch: Batch, config: LossConfig = LossConfig(),
          image_only: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(e_I, e_hat)`` for every row of ``batch``."""
    _check_dims(params, batch)
    e_img, _ = _project(params.w_img, params.b_img, batch.image, config.normalize_embeddings)
    if not config.augment or image_only:
        return e_img, e_img
    t = batch.text_input(config.use_title, config.use_ingredients)
    e_txt, _ = _project(params.w_txt, params.b_txt, t, config.normalize_embeddings)
    return e_img, e_img + e_txt


def predict_logits(params: ModelParams, batch: Batch, config: LossConfig = LossConfig(),
                   image_only: bool = False) -> np.ndarray:
    _, e_hat = embed(params, batch, config, image_only)
    return e_hat @ params.w_cls.T + params.b_cls


def _alignment(e_img, e_txt, batch: Batch, config: LossConfig):
    """Triplet loss on the merged batch, or the mean of per-domain losses."""
    if config.alignment_scope == "merged":
        tl = losses.triplet_alignment_loss(
            losses.TripletBatch(e_img, e_txt, batch.labels), config.margin, config.mining)
        return tl.value, tl.grads["image"], tl.grads["text"], tl.flags
    g_img = np.zeros_like(e_img)
    g_txt = np.zeros_like(e_txt)
    parts = [np.flatnonzero(batch.domains == d) for d in np.unique(batch.domains)]
    parts = [p for p in parts if p.size >= 2]
    value, flags = 0.0, ()
    for rows in parts:
        tl = losses.triplet_alignment_loss(
            losses.TripletBatch(e_img[rows], e_txt[rows], batch.labels[rows]),
            config.margin, config.mining)
        value += tl.value / len(parts)
        g_img[rows] += tl.grads["image"] / len(parts)
        g_txt[rows] += tl.grads["text"] / len(parts)
        flags += tl.flags
    return value, g_img, g_txt, flags


def forward_backward(params: ModelParams, batch: Batch, class_counts,
                     config: LossConfig = LossConfig()) -> tuple[losses.LossValue, Gradients]:
    """Total loss on a merged batch and exact gradients for every parameter.

    ``LossValue.grads`` holds ``alignment`` and ``calibration`` (unweighted
    component values, as 0-d arrays) for logging.
    """
    _check_dims(params, batch)
    norm = config.normalize_embeddings
    lam_a = config.effective_lambda_align
    lam_c = config.lambda_cal
    grads = params.zeros_like()
    if lam_a == 0.0 and lam_c == 0.0:
        return losses.LossValue(0.0, {"alignment": np.float64(0.0),
                                      "calibration": np.float64(0.0)}), grads

    x = batch.image
    e_img, img_cache = _project(params.w_img, params.b_img, x, norm)

    t_full = batch.text_input()
    e_txt = txt_cache = None
    if lam_a > 0.0:
        e_txt, txt_cache = _project(params.w_txt, params.b_txt, t_full, norm)

    e_aug = aug_cache = t_aug = None
    if config.augment:
        if config.use_title and config.use_ingredients and e_txt is not None:
            e_aug, aug_cache, t_aug = e_txt, txt_cache, t_full
        else:
            t_aug = batch.text_input(config.use_title, config.use_ingredients)
            e_aug, aug_cache = _project(params.w_txt, params.b_txt, t_aug, norm)
        e_hat = e_img + e_aug
    else:
        e_hat = e_img

    align_val = 0.0
    d_img = np.zeros_like(e_img)
    d_txt = None
    flags: tuple[str, ...] = ()
    if lam_a > 0.0:
        align_val, g_img, g_txt, flags = _alignment(e_img, e_txt, batch, config)
        d_img += lam_a * g_img
        d_txt = lam_a * g_txt

    counts = class_counts if config.use_calibration else np.ones(params.num_classes)
    logits = e_hat @ params.w_cls.T + params.b_cls
    cal = losses.balanced_softmax_batch(logits, batch.labels, counts)
    d_logits = lam_c * cal.grads["logits"]
    grads.w_cls = d_logits.T @ e_hat
    grads.b_cls = d_logits.sum(axis=0)
    d_hat = d_logits @ params.w_cls
    d_img += d_hat

    dz = _project_back(img_cache, d_img)
    grads.w_img = dz.T @ x
    grads.b_img = dz.sum(axis=0)

    if config.augment and e_aug is e_txt and d_txt is not None:
        d_txt = d_txt + d_hat
    elif config.augment:
        dz_aug = _project_back(aug_cache, d_hat)
        grads.w_txt += dz_aug.T @ t_aug
        grads.b_txt += dz_aug.sum(axis=0)
    if d_txt is not None:
        dz_txt = _project_back(txt_cache, d_txt)
        grads.w_txt += dz_txt.T @ t_full
        grads.b_txt += dz_txt.sum(axis=0)

    value = lam_a * align_val + lam_c * cal.value
    return losses.LossValue(value, {"alignment": np.float64(align_val),
                                    "calibration": np.float64(cal.value)}, flags), grads
