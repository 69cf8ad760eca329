"""Loss-based scoring, pacing functions and CLIP schedule construction.

A schedule (:class:`CurriculumPlan`) is computed entirely up front from the
sample scores, so its sample budget can be compared against standard training
before any training happens. :func:`run_plan` then replays a plan.
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from . import metrics
from .dataio import Dataset
from .errors import ConfigError, DataFormatError, StateError
from .model import (
    NO_AUGMENT,
    AugmentConfig,
    ModelParams,
    augment,
    init_model,
    init_optimizer,
    per_sample_losses,
    predict,
    train_batch,
)

log = logging.getLogger(__name__)

PacingKind = Literal["linear", "quadratic"]
PrunePolicy = Literal["prefix_truncate", "prune_easiest"]
# absorbs representation error in products like 100 * 0.6 before flooring
_FLOOR_SLACK = 1e-9


@dataclass(frozen=True, eq=False)
class ScoredDataset:
    dataset: Dataset
    scores: np.ndarray
    order: tuple[int, ...]

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        if scores.shape != (len(self.dataset),):
            raise ValueError("need exactly one score per sample")
        if sorted(self.order) != list(range(len(self.dataset))):
            raise ValueError("order must be a permutation of sample indices")
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "order", tuple(int(i) for i in self.order))

    @classmethod
    def from_scores(cls, dataset: Dataset, scores: Sequence[float]) -> "ScoredDataset":
        """Sort ascending by score, breaking ties by sample id."""
        scores = np.asarray(scores, dtype=np.float64)
        if scores.shape != (len(dataset),):
            raise ValueError(f"{len(scores)} scores for {len(dataset)} samples")
        if np.any(~np.isfinite(scores)) or np.any(scores < 0):
            raise ValueError("scores must be finite and non-negative")
        order = sorted(range(len(dataset)), key=lambda i: (scores[i], dataset[i].id))
        return cls(dataset, scores, tuple(order))

    def score_map(self) -> dict[str, float]:
        return {s.id: float(v) for s, v in zip(self.dataset, self.scores)}


@dataclass(frozen=True)
class PacingParams:
    kind: PacingKind = "quadratic"
    start_fraction: float = 0.2
    stages: int = 10
    epochs_per_stage: int = 2

    def __post_init__(self):
        if self.kind not in ("linear", "quadratic"):
            raise ConfigError(f"unknown pacing kind {self.kind!r}")
        if not 0 < self.start_fraction <= 1:
            raise ConfigError(f"start fraction must be in (0, 1], got {self.start_fraction}")
        if self.stages < 1 or self.epochs_per_stage < 1:
            raise ConfigError("stages and epochs_per_stage must be positive")


@dataclass(frozen=True)
class ClipConfig:
    epsilon: float = 0.05
    prune_policy: PrunePolicy = "prefix_truncate"
    batch_size: int = 8
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.epsilon < 1:
            raise ConfigError(f"epsilon must be in [0, 1), got {self.epsilon}")
        if self.prune_policy not in ("prefix_truncate", "prune_easiest"):
            raise ConfigError(f"unknown prune policy {self.prune_policy!r}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")


@dataclass(frozen=True)
class StagePlan:
    stage_index: int
    raw_size: int
    subset: tuple[int, ...]
    epochs: tuple[tuple[tuple[int, ...], ...], ...]  # epoch -> batch -> dataset index

    @property
    def subset_size(self) -> int:
        return len(self.subset)

    @property
    def samples_consumed(self) -> int:
        return sum(len(b) for epoch in self.epochs for b in epoch)


@dataclass(frozen=True)
class CurriculumPlan:
    """Stages of dataset indices. Subsets and batches index into the plan's training dataset."""

    stages: tuple[StagePlan, ...]
    strategy: str = "clip"

    @property
    def total_samples_consumed(self) -> int:
        return sum(s.samples_consumed for s in self.stages)

    @property
    def stage_sizes(self) -> list[int]:
        return [s.subset_size for s in self.stages]

    @property
    def total_epochs(self) -> int:
        return sum(len(s.epochs) for s in self.stages)

    def cumulative_samples(self) -> list[int]:
        out, total = [], 0
        for stage in self.stages:
            for epoch in stage.epochs:
                total += sum(len(b) for b in epoch)
                out.append(total)
        return out

    def to_json(self, dataset: Dataset | None = None) -> dict:
        def ids(idx):
            return [dataset[i].id for i in idx] if dataset is not None else list(idx)

        return {
            "strategy": self.strategy,
            "total_samples_consumed": self.total_samples_consumed,
            "stages": [
                {
                    "stage": s.stage_index,
                    "raw_size": s.raw_size,
                    "size": s.subset_size,
                    "subset": ids(s.subset),
                }
                for s in self.stages
            ],
        }


# -- scoring ------------------------------------------------------------------


def score_samples(dataset: Dataset, scoring_model: ModelParams) -> ScoredDataset:
    """Difficulty of each sample = its squared-error loss under the scoring model."""
    for s in dataset:
        if s.density is None:
            raise StateError(f"sample {s.id!r} has no cached density")
    return ScoredDataset.from_scores(dataset, per_sample_losses(scoring_model, list(dataset)))


def pretrain_scorer(
    dataset: Dataset,
    epochs: int = 5,
    seed: int = 0,
    batch_size: int = 8,
    lr: float = 1e-4,
) -> ModelParams:
    """Train a fresh model with plain shuffled epochs; its losses become the scores."""
    if len(dataset) == 0:
        raise ValueError("cannot pretrain a scorer on an empty dataset")
    params = init_model(seed)
    if epochs <= 0:
        return params
    plan = build_standard_schedule(dataset, epochs, min(batch_size, len(dataset)), seed)
    opt = init_optimizer(params, lr=lr)
    for stage in plan.stages:
        for epoch in stage.epochs:
            for batch in epoch:
                params, opt, _ = train_batch(params, opt, [dataset[i] for i in batch])
    return params


def write_scores(scored: ScoredDataset, path: str | os.PathLike) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as f:
        for i in scored.order:
            f.write(f"{scored.dataset[i].id} {float(scored.scores[i])!r}\n")
    return path


def read_scores(path: str | os.PathLike, dataset: Dataset) -> ScoredDataset:
    """Load a "sample_id score" file; every sample of ``dataset`` must be covered."""
    by_id = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            parts = line.split()
            try:
                if len(parts) != 2:
                    raise ValueError
                by_id[parts[0]] = float(parts[1])
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: expected 'sample_id score'") from None
    missing = [s.id for s in dataset if s.id not in by_id]
    if missing:
        raise DataFormatError(f"{path}: no score for {len(missing)} sample(s), e.g. {missing[0]!r}")
    return ScoredDataset.from_scores(dataset, [by_id[s.id] for s in dataset])


# -- pacing and pruning -------------------------------------------------------


def pacing_fraction(params: PacingParams, stage: int) -> float:
    t = stage / params.stages
    if params.kind == "quadratic":
        t = t * t
    b0 = params.start_fraction
    return min(1.0, b0 + (1.0 - b0) * t)


def pacing_size(params: PacingParams, stage: int, n: int, batch_size: int = 1) -> int:
    """Number of (easiest-first) samples exposed at ``stage`` in 1..stages."""
    if not 1 <= stage <= params.stages:
        raise ValueError(f"stage {stage} outside 1..{params.stages}")
    size = math.floor(n * pacing_fraction(params, stage) + _FLOOR_SLACK)
    return max(size, min(batch_size, n))


def prune_size(size: int, epsilon: float) -> int:
    """Subset size after eliminating an ``epsilon`` share of it (never below 1)."""
    if size < 0:
        raise ValueError("size must be non-negative")
    kept = math.floor(size * (1.0 - epsilon) + _FLOOR_SLACK)
    return max(kept, 1) if size >= 1 else 0


# -- plans --------------------------------------------------------------------


def _epochs(subset: Sequence[int], n_epochs: int, batch_size: int, rng) -> tuple:
    out = []
    for _ in range(n_epochs):
        perm = rng.permutation(np.asarray(subset, dtype=np.int64))
        out.append(tuple(tuple(int(i) for i in perm[j : j + batch_size]) for j in range(0, len(perm), batch_size)))
    return tuple(out)


def _check_batch(batch_size: int, size: int, stage: int) -> None:
    if batch_size > size:
        raise ConfigError(f"stage {stage}: batch size {batch_size} exceeds subset size {size}")


def build_curriculum_schedule(
    scored: ScoredDataset, pacing: PacingParams, batch_size: int = 8, seed: int = 0
) -> CurriculumPlan:
    """Plain curriculum learning: the easiest ``pacing_size(i)`` samples at stage i."""
    n = len(scored.order)
    if n == 0:
        raise ValueError("empty scored dataset")
    rng = np.random.default_rng(seed)
    stages = []
    for i in range(1, pacing.stages + 1):
        size = pacing_size(pacing, i, n, batch_size)
        _check_batch(batch_size, size, i)
        subset = scored.order[:size]
        stages.append(StagePlan(i, size, subset, _epochs(subset, pacing.epochs_per_stage, batch_size, rng)))
    return CurriculumPlan(tuple(stages), strategy="curriculum")


def build_clip_schedule(scored: ScoredDataset, pacing: PacingParams, cfg: ClipConfig) -> CurriculumPlan:
    """Curriculum schedule with a fraction ``cfg.epsilon`` of each stage's subset pruned.

    ``prefix_truncate`` shortens the easiest-first prefix. ``prune_easiest``
    permanently drops the lowest-score samples from the pool, cumulatively
    across stages, and takes the stage subset from the survivors.
    """
    n = len(scored.order)
    if n == 0:
        raise ValueError("empty scored dataset")
    bs = cfg.batch_size
    rng = np.random.default_rng(cfg.seed)
    pool = list(scored.order)
    stages = []
    for i in range(1, pacing.stages + 1):
        raw = pacing_size(pacing, i, n, bs)
        effective = prune_size(raw, cfg.epsilon)
        if cfg.prune_policy == "prefix_truncate":
            subset = scored.order[:effective]
        else:
            drop = min(raw - effective, max(0, len(pool) - max(bs, 1)))
            if drop:
                log.debug("stage %d: pruning %d easiest samples", i, drop)
            pool = pool[drop:]
            subset = tuple(pool[: min(effective, len(pool))])
        _check_batch(bs, len(subset), i)
        stages.append(StagePlan(i, raw, tuple(subset), _epochs(subset, pacing.epochs_per_stage, bs, rng)))
    return CurriculumPlan(tuple(stages), strategy="clip")


def build_standard_schedule(dataset, total_epochs: int, batch_size: int = 8, seed: int = 0) -> CurriculumPlan:
    """Baseline: every epoch is a fresh shuffle of the whole dataset."""
    n = len(dataset.order) if isinstance(dataset, ScoredDataset) else len(dataset)
    if n == 0:
        raise ValueError("empty dataset")
    if batch_size < 1:
        raise ConfigError("batch_size must be positive")
    _check_batch(batch_size, n, 1)
    rng = np.random.default_rng(seed)
    subset = tuple(range(n))
    return CurriculumPlan((StagePlan(1, n, subset, _epochs(subset, total_epochs, batch_size, rng)),), "standard")


def save_plan(plan: CurriculumPlan, path: str | os.PathLike, dataset: Dataset | None = None) -> Path:
    path = Path(path)
    path.write_text(json.dumps(plan.to_json(dataset), indent=1) + "\n", encoding="utf-8")
    return path


# -- training -----------------------------------------------------------------


@dataclass(frozen=True)
class RunLogRow:
    stage: int
    epoch: int
    samples_cum: int
    train_loss: float
    val_mae: float
    val_game: float
    val_ssim: float
    val_psnr: float


@dataclass
class RunLog:
    rows: list[RunLogRow] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def column(self, name: str) -> list:
        return [getattr(r, name) for r in self.rows]


def _validate_plan(plan: CurriculumPlan, n: int) -> None:
    for stage in plan.stages:
        members = set(stage.subset)
        if any(not 0 <= i < n for i in members):
            raise ConfigError(f"stage {stage.stage_index}: index outside dataset of size {n}")
        for epoch in stage.epochs:
            if any(i not in members for b in epoch for i in b):
                raise ConfigError(f"stage {stage.stage_index}: batch index outside the stage subset")


def run_plan(
    plan: CurriculumPlan,
    train: Dataset | ScoredDataset,
    val: Dataset | None = None,
    seed: int = 0,
    augment_cfg: AugmentConfig = NO_AUGMENT,
    lr: float = 1e-4,
    game_level: int = 2,
) -> tuple[ModelParams, RunLog]:
    """Train a fresh model along ``plan``; one log row per epoch."""
    dataset = train.dataset if isinstance(train, ScoredDataset) else train
    _validate_plan(plan, len(dataset))
    init_seq, aug_seq = np.random.SeedSequence(seed).spawn(2)
    params = init_model(int(init_seq.generate_state(1)[0]))
    opt = init_optimizer(params, lr=lr)
    rng = np.random.default_rng(aug_seq)
    val_samples = list(val) if val is not None else []
    runlog = RunLog(meta={"strategy": plan.strategy, "seed": seed, "lr": lr})
    consumed = 0
    for stage in plan.stages:
        for e, epoch in enumerate(stage.epochs, 1):
            loss_sum, count = 0.0, 0
            for batch_idx in epoch:
                batch = [augment(dataset[i], augment_cfg, rng) for i in batch_idx]
                params, opt, batch_loss = train_batch(params, opt, batch)
                loss_sum += batch_loss * len(batch)
                count += len(batch)
            consumed += count
            if val_samples:
                rec = metrics.evaluate(predict(params, [s.image for s in val_samples]), val_samples, game_level)
            else:
                rec = metrics.MetricsRecord(math.nan, math.nan, math.nan, math.nan, game_level)
            row = RunLogRow(
                stage.stage_index, e, consumed, loss_sum / count, rec.mae, rec.game, rec.ssim, rec.psnr
            )
            log.info(
                "stage %d epoch %d: samples=%d loss=%.5f val_mae=%.3f",
                row.stage, row.epoch, row.samples_cum, row.train_loss, row.val_mae,
            )
            runlog.rows.append(row)
    return params, runlog
