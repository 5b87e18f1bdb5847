"""Top-k accuracy, head/medium/tail groups, the 3x3 source-by-target group
matrix, the cross-domain centroid gap and embedding export.

Undefined quantities (empty groups, classes without test samples) are
``None`` and never averaged in as zeros.
"""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import ClassGroup, CrossAugError, Dataset, DomainTag, InvalidInput
from .model import Batch, LossConfig, ModelParams, embed, predict_logits

GROUP_NAMES = tuple(g.label for g in ClassGroup)


class Undefined(CrossAugError, ValueError):
    pass


class WriteError(CrossAugError, OSError):
    pass


@dataclass(frozen=True)
class GroupThresholds:
    head_min_exclusive: int = 70
    tail_max_exclusive: int = 15

    def __post_init__(self):
        if self.head_min_exclusive < self.tail_max_exclusive:
            raise InvalidInput("head threshold must be >= tail threshold")


def topk_accuracy(logit_rows, labels, k: int) -> float:
    """Fraction of rows whose label ranks in the top ``k``.

    Rank counts strictly larger logits plus equal logits at a lower class
    index, so ties resolve toward the lowest index.
    """
    logits = np.atleast_2d(np.asarray(logit_rows, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if logits.shape[0] != labels.shape[0]:
        raise InvalidInput("number of logit rows and labels differ")
    if not 1 <= k <= logits.shape[1]:
        raise InvalidInput(f"k must lie in [1, {logits.shape[1]}], got {k}")
    if labels.size == 0:
        raise InvalidInput("no rows to score")
    rows = np.arange(labels.size)
    true = logits[rows, labels][:, None]
    idx = np.arange(logits.shape[1])[None, :]
    rank = (logits > true).sum(axis=1) + ((logits == true) & (idx < labels[:, None])).sum(axis=1)
    return float(np.mean(rank < k))


def assign_groups(target_train_counts, thresholds: GroupThresholds = GroupThresholds()) -> list[ClassGroup]:
    counts = np.asarray(target_train_counts)
    if (counts < 0).any():
        raise InvalidInput("counts must be non-negative")
    out = []
    for n in counts.tolist():
        if n > thresholds.head_min_exclusive:
            out.append(ClassGroup.HEAD)
        elif n >= thresholds.tail_max_exclusive:
            out.append(ClassGroup.MEDIUM)
        else:
            out.append(ClassGroup.TAIL)
    return out


def per_class_tallies(logits, labels, num_classes: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-class Top-1 correct counts and test totals."""
    labels = np.asarray(labels, dtype=np.int64)
    pred = np.argmax(np.asarray(logits), axis=1)
    correct = np.bincount(labels[pred == labels], minlength=num_classes)
    totals = np.bincount(labels, minlength=num_classes)
    return correct, totals


def _pooled(correct, totals, members, class_mean: bool):
    members = [c for c in members if totals[c] > 0]
    if not members:
        return None
    if class_mean:
        return float(np.mean([correct[c] / totals[c] for c in members]))
    return float(sum(correct[c] for c in members) / sum(totals[c] for c in members))


def group_accuracy(per_class_top1, groups, per_class_test_totals=None,
                   class_mean: bool = False) -> dict[str, float | None]:
    """Accuracy of each group; ``None`` for groups without test samples.

    Sample-weighted by default (``per_class_test_totals`` default to equal
    counts); ``class_mean=True`` averages per-class accuracies instead.
    """
    acc = np.asarray(per_class_top1, dtype=np.float64)
    totals = (np.ones_like(acc) if per_class_test_totals is None
              else np.asarray(per_class_test_totals, dtype=np.float64))
    if acc.shape != totals.shape or len(groups) != acc.shape[0]:
        raise InvalidInput("per-class arrays and groups must have equal length")
    correct = np.where(totals > 0, acc, 0.0) * totals
    out = {}
    for g in ClassGroup:
        members = [c for c, gc in enumerate(groups) if gc == g]
        out[g.label] = _pooled(correct, totals, members, class_mean)
    return out


def nine_group_matrix(source_counts, target_counts, per_class_correct, per_class_test_totals,
                      thresholds: GroupThresholds = GroupThresholds(),
                      class_mean: bool = False) -> list[list[float | None]]:
    """3x3 Top-1 by (source group, target group); rows are the source group."""
    sg = assign_groups(source_counts, thresholds)
    tg = assign_groups(target_counts, thresholds)
    correct = np.asarray(per_class_correct, dtype=np.float64)
    totals = np.asarray(per_class_test_totals, dtype=np.float64)
    if not (len(sg) == len(tg) == correct.shape[0] == totals.shape[0]):
        raise InvalidInput("count and tally arrays must all have num_classes entries")
    matrix = []
    for gs in ClassGroup:
        row = []
        for gt in ClassGroup:
            members = [c for c in range(len(sg)) if sg[c] == gs and tg[c] == gt]
            row.append(_pooled(correct, totals, members, class_mean))
        matrix.append(row)
    return matrix


def nine_group_members(source_counts, target_counts,
                       thresholds: GroupThresholds = GroupThresholds()) -> list[list[list[int]]]:
    sg = assign_groups(source_counts, thresholds)
    tg = assign_groups(target_counts, thresholds)
    return [[[c for c in range(len(sg)) if sg[c] == gs and tg[c] == gt] for gt in ClassGroup]
            for gs in ClassGroup]


def domain_gap(embeddings, labels, domains) -> float:
    """Mean over classes of ``1 - cos(source centroid, target centroid)``.

    Classes missing either domain are skipped.
    """
    e = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    domains = np.asarray(domains)
    gaps = []
    for c in np.unique(labels):
        s = e[(labels == c) & (domains == DomainTag.SOURCE)]
        t = e[(labels == c) & (domains == DomainTag.TARGET)]
        if len(s) == 0 or len(t) == 0:
            continue
        a, b = s.mean(axis=0), t.mean(axis=0)
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        if na == 0 or nb == 0:
            continue
        gaps.append(1.0 - float(np.clip(a @ b / (na * nb), -1.0, 1.0)))
    if not gaps:
        raise Undefined("no class has samples in both domains")
    return float(np.mean(gaps))


def pca2d(x: np.ndarray) -> np.ndarray:
    """Project rows onto the top two principal components.

    Components come from the covariance eigendecomposition, ordered by
    descending eigenvalue, each signed so its largest-magnitude coordinate is
    positive.
    """
    x = np.asarray(x, dtype=np.float64)
    centred = x - x.mean(axis=0)
    cov = centred.T @ centred / max(x.shape[0] - 1, 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1][:2]
    comps = vecs[:, order]
    for j in range(comps.shape[1]):
        if comps[np.argmax(np.abs(comps[:, j])), j] < 0:
            comps[:, j] = -comps[:, j]
    out = centred @ comps
    if out.shape[1] < 2:
        out = np.hstack([out, np.zeros((x.shape[0], 2 - out.shape[1]))])
    return out


def export_embeddings(params: ModelParams, dataset: Dataset, path, projection: str = "none",
                      loss_config: LossConfig = LossConfig(), groups=None) -> None:
    """Write ``id,label,domain,group,v0..vK`` rows of image embeddings ``e_I``."""
    if projection not in ("none", "pca2d"):
        raise InvalidInput(f"unknown projection {projection!r}")
    e, _ = embed(params, Batch.from_dataset(dataset), loss_config)
    values = pca2d(e) if projection == "pca2d" else e
    header = ["id", "label", "domain", "group"] + [f"v{j}" for j in range(values.shape[1])]
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for i in range(dataset.size):
                label = int(dataset.labels[i])
                group = groups[label].label if groups is not None else ""
                w.writerow([int(dataset.ids[i]), label, DomainTag(int(dataset.domains[i])).name.lower(),
                            group] + [repr(float(v)) for v in values[i]])
    except OSError as exc:
        raise WriteError(f"cannot write embeddings to {path}: {exc}") from exc


@dataclass
class MetricsReport:
    top1_all: float
    top5_all: float
    group_top1: dict[str, float | None]
    nine_group: list[list[float | None]]
    per_class_top1: list[float | None]
    domain_gap_before: float | None
    domain_gap_after: float | None
    config_fingerprint: str
    seed: int
    image_only: bool = False
    group_class_counts: dict[str, int] = field(default_factory=dict)
    group_test_counts: dict[str, int] = field(default_factory=dict)

    # serialisation key order is the field order above
    def to_dict(self) -> dict:
        return {
            "top1_all": self.top1_all,
            "top5_all": self.top5_all,
            "group_top1": {k: self.group_top1.get(k) for k in GROUP_NAMES},
            "nine_group": self.nine_group,
            "per_class_top1": self.per_class_top1,
            "domain_gap_before": self.domain_gap_before,
            "domain_gap_after": self.domain_gap_after,
            "config_fingerprint": self.config_fingerprint,
            "seed": self.seed,
            "image_only": self.image_only,
            "group_class_counts": {k: self.group_class_counts.get(k, 0) for k in GROUP_NAMES},
            "group_test_counts": {k: self.group_test_counts.get(k, 0) for k in GROUP_NAMES},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def fingerprint(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def evaluate(params: ModelParams, test: Dataset, source_train: Dataset, target_train: Dataset,
             loss_config: LossConfig = LossConfig(), image_only: bool = False,
             thresholds: GroupThresholds = GroupThresholds(), initial_params: ModelParams | None = None,
             class_mean: bool = False, config_fingerprint: str = "", seed: int = 0) -> MetricsReport:
    """Score ``params`` on ``test`` with groups taken from the training counts."""
    C = params.num_classes
    logits = predict_logits(params, Batch.from_dataset(test), loss_config, image_only)
    correct, totals = per_class_tallies(logits, test.labels, C)
    per_class = [float(correct[c] / totals[c]) if totals[c] else None for c in range(C)]
    s_counts = np.bincount(source_train.labels, minlength=C)
    t_counts = np.bincount(target_train.labels, minlength=C)
    groups = assign_groups(t_counts, thresholds)
    acc = np.array([p if p is not None else 0.0 for p in per_class])
    g_acc = group_accuracy(acc, groups, totals, class_mean)
    nine = nine_group_matrix(s_counts, t_counts, correct, totals, thresholds, class_mean)

    train_all = Dataset.concat([source_train, target_train])
    batch = Batch.from_dataset(train_all)

    def gap(p):
        try:
            return domain_gap(embed(p, batch, loss_config)[0], train_all.labels, train_all.domains)
        except Undefined:
            return None

    return MetricsReport(
        top1_all=topk_accuracy(logits, test.labels, 1),
        top5_all=topk_accuracy(logits, test.labels, min(5, C)),
        group_top1=g_acc,
        nine_group=nine,
        per_class_top1=per_class,
        domain_gap_before=gap(initial_params) if initial_params is not None else None,
        domain_gap_after=gap(params),
        config_fingerprint=config_fingerprint,
        seed=seed,
        image_only=image_only,
        group_class_counts={g.label: sum(1 for x in groups if x == g) for g in ClassGroup},
        group_test_counts={g.label: int(sum(totals[c] for c in range(C) if groups[c] == g))
                           for g in ClassGroup},
    )


def group_topk(logits, labels, groups, k: int) -> dict[str, float | None]:
    """Sample-weighted Top-k per group; ``None`` for groups without test rows."""
    labels = np.asarray(labels, dtype=np.int64)
    out = {}
    for g in ClassGroup:
        mask = np.array([groups[c] == g for c in labels], dtype=bool)
        out[g.label] = topk_accuracy(np.asarray(logits)[mask], labels[mask], k) if mask.any() else None
    return out
