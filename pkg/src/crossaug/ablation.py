"""The five-row component ablation: ERM, then alignment, calibration, title
and ingredients switched on cumulatively. Each row is scored as the median
over seeds."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ExperimentConfig
from .core import Dataset
from .evaluate import GROUP_NAMES, assign_groups, domain_gap, group_topk, topk_accuracy
from .model import Batch, embed, predict_logits
from .synthgen import Benchmark, generate_benchmark
from .trainer import TrainConfig, train

_OFF = dict(use_alignment=False, use_calibration=False, use_title=False, use_ingredients=False)
ABLATION_ROWS: tuple[tuple[str, dict], ...] = (
    ("none", _OFF),
    ("align", {**_OFF, "use_alignment": True}),
    ("align+cal", {**_OFF, "use_alignment": True, "use_calibration": True}),
    ("align+cal+title", {**_OFF, "use_alignment": True, "use_calibration": True, "use_title": True}),
    ("align+cal+title+ingredients",
     dict(use_alignment=True, use_calibration=True, use_title=True, use_ingredients=True)),
)
COLUMNS = tuple(f"{m}_{g}" for m in ("top1", "top5") for g in (*GROUP_NAMES, "all"))


@dataclass
class RunScore:
    row: str
    seed: int
    scores: dict[str, float | None]
    domain_gap: float


def score_run(bench: Benchmark, config: TrainConfig, row: str = "",
              image_only: bool = False) -> RunScore:
    params, _ = train(bench.source_train, bench.target_train, config)
    lc = config.loss_config()
    test = bench.target_test
    logits = predict_logits(params, Batch.from_dataset(test), lc, image_only)
    C = params.num_classes
    groups = assign_groups(np.bincount(bench.target_train.labels, minlength=C))
    scores = {}
    for name, k in (("top1", 1), ("top5", min(5, C))):
        for g, v in group_topk(logits, test.labels, groups, k).items():
            scores[f"{name}_{g}"] = v
        scores[f"{name}_all"] = topk_accuracy(logits, test.labels, k)
    train_all = Dataset.concat([bench.source_train, bench.target_train])
    e_img, _ = embed(params, Batch.from_dataset(train_all), lc)
    gap = domain_gap(e_img, train_all.labels, train_all.domains)
    return RunScore(row, config.seed, {c: scores[c] for c in COLUMNS}, gap)


def _median(values):
    vals = [v for v in values if v is not None]
    return float(np.median(vals)) if vals else None


def run_ablation(config: ExperimentConfig, rows=ABLATION_ROWS) -> dict:
    """Train every row on every seed; return per-run scores and the median table."""
    runs: list[RunScore] = []
    for seed in config.seeds:
        bench = generate_benchmark(config.benchmark.replace(seed=seed))
        for name, switches in rows:
            tc = config.train.replace(seed=seed, **switches)
            runs.append(score_run(bench, tc, name, config.eval.image_only))
    table = []
    for name, switches in rows:
        mine = [r for r in runs if r.row == name]
        entry = {"row": name, **{k: bool(v) for k, v in switches.items()}}
        for c in COLUMNS:
            entry[c] = _median([r.scores[c] for r in mine])
        entry["domain_gap"] = _median([r.domain_gap for r in mine])
        table.append(entry)
    return {
        "seeds": list(config.seeds),
        "columns": list(COLUMNS),
        "rows": table,
        "runs": [{"row": r.row, "seed": r.seed, **r.scores, "domain_gap": r.domain_gap} for r in runs],
    }


def format_table(result: dict) -> str:
    """Fixed-width text rendering of the median table."""
    cols = result["columns"] + ["domain_gap"]
    width = max(len(r["row"]) for r in result["rows"])
    lines = ["  ".join([f"{'row':<{width}}"] + [f"{c:>10}" for c in cols])]
    for r in result["rows"]:
        cells = [f"{'-':>10}" if r[c] is None else f"{r[c]:>10.4f}" for c in cols]
        lines.append("  ".join([f"{r['row']:<{width}}"] + cells))
    return "\n".join(lines) + "\n"
