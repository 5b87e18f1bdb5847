"""``crossaug synth|train|eval|ablate``.

Exit codes: 0 success, 2 bad configuration, 3 training diverged,
4 data and model disagree, 5 I/O or file-format failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .ablation import format_table, run_ablation
from .config import ExperimentConfig, load_config
from .core import CrossAugError, DimMismatch, InvalidConfig, Rng
from .evaluate import WriteError, assign_groups, evaluate, export_embeddings, fingerprint
from .formats import CorruptFile, InvalidPayload, NotAnEmbeddingFile, read_embedding_file, write_embedding_file
from .model import init_params
from .synthgen import generate_benchmark
from .trainer import BadCheckpoint, TrainingDiverged, load_checkpoint, save_checkpoint, train

log = logging.getLogger("crossaug")

EXIT_CONFIG, EXIT_TRAIN, EXIT_MISMATCH, EXIT_IO = 2, 3, 4, 5
FILES = {"source": "source_train.xmeb", "target": "target_train.xmeb", "test": "target_test.xmeb"}
CHECKPOINT = "checkpoint.xmlt"


class Mismatch(CrossAugError):
    pass


def _dump(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    out = args.out or cfg.output_dir
    if out is None:
        raise InvalidConfig("no output directory: pass --out or set output_dir")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _read_split(data_dir: Path, key: str):
    return read_embedding_file(data_dir / FILES[key])


def cmd_synth(args, cfg: ExperimentConfig) -> None:
    out = _out_dir(args, cfg)
    bench = generate_benchmark(cfg.benchmark)
    write_embedding_file(bench.source_train, out / FILES["source"])
    write_embedding_file(bench.target_train, out / FILES["target"])
    write_embedding_file(bench.target_test, out / FILES["test"])
    _dump({**bench.manifest(), "files": dict(FILES)}, out / "manifest.json")


def cmd_train(args, cfg: ExperimentConfig) -> None:
    out = _out_dir(args, cfg)
    data = Path(args.data) if args.data else out
    source, target = _read_split(data, "source"), _read_split(data, "target")
    params, history = train(source, target, cfg.train)
    save_checkpoint(params, out / CHECKPOINT)
    _dump(history.to_dict(with_time=False), out / "history.json")


def cmd_eval(args, cfg: ExperimentConfig) -> None:
    out = _out_dir(args, cfg)
    data = Path(args.data) if args.data else out
    params = load_checkpoint(Path(args.checkpoint) if args.checkpoint else out / CHECKPOINT)
    source, target, test = (_read_split(data, k) for k in ("source", "target", "test"))
    for ds in (source, target, test):
        if (ds.feature_dim, ds.text_dim, ds.num_classes) != (
                params.feature_dim, params.text_dim, params.num_classes):
            raise Mismatch(
                f"data has feature/text/classes {ds.feature_dim}/{ds.text_dim}/{ds.num_classes}, "
                f"checkpoint expects {params.feature_dim}/{params.text_dim}/{params.num_classes}")
    opts = cfg.eval
    image_only = opts.image_only or args.image_only_eval
    lc = cfg.train.loss_config()
    init = init_params(*params.dims, Rng(cfg.train.seed).child("init"))
    report = evaluate(params, test, source, target, lc, image_only=image_only,
                      thresholds=opts.thresholds(), initial_params=init,
                      class_mean=opts.class_mean, config_fingerprint=fingerprint(cfg.to_dict()),
                      seed=cfg.seed)
    (out / "metrics.json").write_text(report.to_json(), encoding="utf-8")
    if opts.export_embeddings or args.export_embeddings:
        groups = assign_groups(np.bincount(target.labels, minlength=params.num_classes),
                               opts.thresholds())
        projection = "pca2d" if (opts.pca2d or args.pca2d) else "none"
        export_embeddings(params, test, out / "embeddings.csv", projection, lc, groups)


def cmd_ablate(args, cfg: ExperimentConfig) -> None:
    out = _out_dir(args, cfg)
    if args.image_only_eval:
        cfg = dataclasses.replace(cfg, eval=dataclasses.replace(cfg.eval, image_only=True))
    result = run_ablation(cfg)
    _dump(result, out / "ablation.json")
    (out / "ablation.txt").write_text(format_table(result), encoding="utf-8")


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crossaug", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="experiment JSON; built-in defaults when omitted")
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p.add_argument("--seed", type=int, help="override the experiment seed")
    p.add_argument("--data", help="directory holding the .xmeb splits (default: --out)")
    p.add_argument("--checkpoint", help="checkpoint to evaluate (default: <out>/checkpoint.xmlt)")
    p.add_argument("--image-only-eval", action="store_true", help="score with e_T zeroed")
    p.add_argument("--export-embeddings", action="store_true", help="write embeddings.csv")
    p.add_argument("--pca2d", action="store_true", help="export 2-D PCA projections")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load(args)
        COMMANDS[args.command](args, cfg)
    except InvalidConfig as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDiverged as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return EXIT_TRAIN
    except (Mismatch, DimMismatch) as exc:
        print(f"data/model mismatch: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except (OSError, NotAnEmbeddingFile, CorruptFile, InvalidPayload, BadCheckpoint, WriteError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return 0


if __name__ == "__main__":
    sys.exit(main())
