"""Command-line interface.

Exit codes: 0 success, 1 runtime or data error, 2 usage error.
Set ``CLIP_LOG=debug`` or ``CLIP_LOG=info`` for progress logging.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import curriculum as cur
from . import metrics, report
from .dataio import Dataset, Sample, load_dataset, save_dataset
from .errors import ClipError
from .model import NO_AUGMENT, AugmentConfig, load_checkpoint, predict, save_checkpoint
from .synthdata import SceneConfig, generate_dataset

log = logging.getLogger("clipcl")


class UsageError(Exception):
    pass


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _epsilon(text: str) -> float:
    value = float(text)
    if not 0 <= value < 1:
        raise argparse.ArgumentTypeError(f"epsilon must be in [0, 1), got {value}")
    return value


def _fraction(text: str) -> float:
    value = float(text)
    if not 0 <= value < 1:
        raise argparse.ArgumentTypeError(f"must be in [0, 1), got {value}")
    return value


def _seed_list(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="clipcl", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic dot-annotated dataset")
    g.add_argument("--n", type=_positive_int, required=True)
    g.add_argument("--height", type=int, default=32)
    g.add_argument("--width", type=int, default=32)
    g.add_argument("--count-min", type=int, default=0)
    g.add_argument("--count-max", type=int, default=30)
    g.add_argument("--sigma", type=float, default=2.0, help="ground-truth kernel bandwidth (px)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)

    s = sub.add_parser("score", help="score training samples by a pre-trained model's loss")
    s.add_argument("--data", required=True)
    s.add_argument("--epochs", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--batch-size", type=_positive_int, default=8)
    s.add_argument("--val-fraction", type=_fraction, default=0.2)
    s.add_argument("--plot", help="optional SVG of sorted per-sample losses")
    s.add_argument("--out", required=True)

    t = sub.add_parser("train", help="train under the standard or CLIP schedule")
    t.add_argument("--data", required=True)
    t.add_argument("--scores", help="score file; computed on the fly for clip when omitted")
    t.add_argument("--strategy", choices=("standard", "clip"), default="clip")
    t.add_argument("--pacing", choices=("linear", "quadratic"), default="quadratic")
    t.add_argument("--b0", type=float, default=0.2)
    t.add_argument("--stages", type=_positive_int, default=10)
    t.add_argument("--epochs-per-stage", type=_positive_int, default=2)
    t.add_argument("--epochs", type=_positive_int, help="standard epochs (default stages x epochs-per-stage)")
    t.add_argument("--epsilon", type=_epsilon, default=0.05)
    t.add_argument("--prune-policy", choices=("prefix_truncate", "prune_easiest"), default="prefix_truncate")
    t.add_argument("--batch-size", type=_positive_int, default=8)
    t.add_argument("--lr", type=float, default=1e-4)
    t.add_argument("--score-epochs", type=int, default=5)
    t.add_argument("--val-fraction", type=_fraction, default=0.2)
    t.add_argument("--game-level", type=int, default=2)
    t.add_argument("--no-augment", action="store_true")
    seeds = t.add_mutually_exclusive_group()
    seeds.add_argument("--seed", type=int, default=0)
    seeds.add_argument("--seeds", type=_seed_list, help="comma-separated replicate seeds, run concurrently")
    t.add_argument("--out", required=True, help="output directory")

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--data", required=True)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--split", choices=("train", "val", "all"), default="val")
    e.add_argument("--val-fraction", type=_fraction, default=0.2)
    e.add_argument("--game-level", type=int, default=2)
    e.add_argument("--self-check", action="store_true", help="use the model's own predictions as ground truth")
    e.add_argument("--out", help="optional JSON report path")

    r = sub.add_parser("report", help="compare run logs")
    r.add_argument("--logs", nargs="+", required=True)
    r.add_argument("--loss-threshold", type=float)
    r.add_argument("--out", required=True, help="output directory")
    return p


# -- commands ---------------------------------------------------------------


def cmd_gen(args) -> Path:
    if args.count_min < 0 or args.count_max < args.count_min:
        raise UsageError("need 0 <= --count-min <= --count-max")
    try:
        cfg = SceneConfig(args.height, args.width, (args.count_min, args.count_max), sigma_gt=args.sigma)
    except ValueError as e:
        raise UsageError(str(e)) from None
    manifest = save_dataset(generate_dataset(args.n, cfg, args.seed), args.out)
    print(manifest)
    return manifest


def cmd_score(args) -> Path:
    train, _ = load_dataset(args.data).split(args.val_fraction)
    scorer = cur.pretrain_scorer(train, args.epochs, args.seed, args.batch_size)
    scored = cur.score_samples(train, scorer)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    cur.write_scores(scored, out)
    ordered = scored.scores[list(scored.order)]
    print(out)
    print(
        f"n={len(ordered)} min={ordered.min():.6g} median={np.median(ordered):.6g} max={ordered.max():.6g}"
    )
    if args.plot:
        svg = report.line_chart_svg(
            [("per-sample loss", list(range(len(ordered))), list(ordered))],
            "Per-sample loss (sorted)", "sample rank", "loss",
        )
        Path(args.plot).write_text(svg, encoding="utf-8")
    return out


def _plan_for(args, train: Dataset, seed: int) -> tuple[cur.CurriculumPlan, cur.ScoredDataset | Dataset]:
    if args.strategy == "standard":
        epochs = args.epochs or args.stages * args.epochs_per_stage
        return cur.build_standard_schedule(train, epochs, args.batch_size, seed), train
    if args.scores:
        scored = cur.read_scores(args.scores, train)
    else:
        log.info("no score file given, pretraining a scorer (seed %d)", seed)
        scored = cur.score_samples(train, cur.pretrain_scorer(train, args.score_epochs, seed, args.batch_size))
    pacing = cur.PacingParams(args.pacing, args.b0, args.stages, args.epochs_per_stage)
    cfg = cur.ClipConfig(args.epsilon, args.prune_policy, args.batch_size, seed)
    return cur.build_clip_schedule(scored, pacing, cfg), scored


def train_one(args, seed: int) -> tuple[Path, Path]:
    train, val = load_dataset(args.data).split(args.val_fraction)
    plan, source = _plan_for(args, train, seed)
    augment_cfg = NO_AUGMENT if args.no_augment else AugmentConfig()
    params, runlog = cur.run_plan(plan, source, val, seed, augment_cfg, args.lr, args.game_level)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = out / f"{args.strategy}_seed{seed}"
    csv_path = report.write_runlog(runlog, stem.with_suffix(".csv"))
    ckpt = save_checkpoint(params, stem.with_suffix(".ckpt"))
    cur.save_plan(plan, stem.with_suffix(".plan.json"), train)
    meta = {
        "strategy": args.strategy,
        "pacing": args.pacing if args.strategy == "clip" else None,
        "epsilon": args.epsilon if args.strategy == "clip" else None,
        "prune_policy": args.prune_policy if args.strategy == "clip" else None,
        "seed": seed,
        "dataset": str(args.data),
        "total_samples_consumed": plan.total_samples_consumed,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    stem.with_suffix(".meta.json").write_text(json.dumps(meta, indent=1) + "\n", encoding="utf-8")
    return csv_path, ckpt


def cmd_train(args) -> list[tuple[Path, Path]]:
    seeds = args.seeds if args.seeds else [args.seed]
    if not seeds:
        raise UsageError("--seeds is empty")
    if args.game_level < 0:
        raise UsageError("--game-level must be >= 0")
    if len(seeds) == 1:
        results = [train_one(args, seeds[0])]
    else:
        with ProcessPoolExecutor(max_workers=min(len(seeds), os.cpu_count() or 1)) as pool:
            results = list(pool.map(train_one, [args] * len(seeds), seeds))
    for csv_path, ckpt in results:
        print(csv_path)
        print(ckpt)
    return results


def _split(dataset: Dataset, which: str, val_fraction: float) -> Dataset:
    if which == "all":
        return dataset
    train, val = dataset.split(val_fraction)
    return train if which == "train" else val


def cmd_eval(args) -> metrics.MetricsRecord:
    params = load_checkpoint(args.checkpoint)
    data = _split(load_dataset(args.data), args.split, args.val_fraction)
    if len(data) == 0:
        raise ClipError(f"split {args.split!r} is empty")
    h, w = data[0].shape
    if args.game_level < 0 or 2**args.game_level > min(h, w):
        raise UsageError(f"--game-level {args.game_level} too large for {h}x{w} images")
    preds = predict(params, [s.image for s in data])
    if args.self_check:
        data = [Sample(s.id, s.image, s.dots, p) for s, p in zip(data, preds)]
    record = metrics.evaluate(preds, data, args.game_level)
    text = json.dumps(record.as_dict(), indent=1)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    return record


def cmd_report(args) -> tuple[Path, Path]:
    if len(args.logs) < 2:
        raise UsageError("report needs at least two run logs")
    names = report.unique_names(args.logs)
    runs = {name: report.read_runlog(p) for name, p in zip(names, args.logs)}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    header, rows = report.merge_runs(runs)
    table = out / "comparison.csv"
    with open(table, "w", encoding="utf-8") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(str(c) for c in row) + "\n")
    chart = out / "loss_vs_samples.svg"
    chart.write_text(report.loss_chart(runs), encoding="utf-8")
    print(table)
    print(chart)
    if args.loss_threshold is not None:
        lines = ["run,samples_to_threshold"]
        for name, runlog in runs.items():
            reached = report.samples_to_threshold(runlog, args.loss_threshold)
            lines.append(f"{name},{report.NOT_REACHED if reached is None else reached}")
        (out / "threshold.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
        print(f"samples to reach loss <= {args.loss_threshold:g}:")
        for line in lines[1:]:
            name, value = line.split(",")
            print(f"  {name}: {value}")
    return table, chart


COMMANDS = {"gen": cmd_gen, "score": cmd_score, "train": cmd_train, "eval": cmd_eval, "report": cmd_report}


def _setup_logging() -> None:
    level = os.environ.get("CLIP_LOG", "").lower()
    logging.basicConfig(
        level={"debug": logging.DEBUG, "info": logging.INFO}.get(level, logging.WARNING),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        COMMANDS[args.command](args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"clipcl {args.command}: error: {e}", file=sys.stderr)
        return 2
    except (ClipError, OSError, ValueError) as e:
        print(f"clipcl {args.command}: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
