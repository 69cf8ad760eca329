"""CLIP versus standard training at an equal epoch budget."""

from __future__ import annotations

from dataclasses import dataclass

from . import curriculum as cur
from .dataio import Dataset
from .model import AugmentConfig
from .report import samples_to_threshold


@dataclass(frozen=True)
class ConvergenceResult:
    seed: int
    threshold: float
    clip_samples: int | None
    standard_samples: int | None
    clip_log: cur.RunLog
    standard_log: cur.RunLog

    @property
    def clip_faster(self) -> bool:
        return self.clip_samples is not None and (
            self.standard_samples is None or self.clip_samples < self.standard_samples
        )


def compare_convergence(
    dataset: Dataset,
    seed: int,
    pacing: cur.PacingParams = cur.PacingParams("quadratic", 0.2, 10, 2),
    epsilon: float = 0.05,
    prune_policy: str = "prefix_truncate",
    batch_size: int = 8,
    val_fraction: float = 0.2,
    score_epochs: int = 5,
    threshold_factor: float = 1.5,
    augment_cfg: AugmentConfig | None = None,
) -> ConvergenceResult:
    """Train both strategies from the same initialisation.

    The loss threshold is ``threshold_factor`` times the standard run's final
    training loss; each strategy reports the cumulative samples it consumed
    before first reaching it.
    """
    augment_cfg = augment_cfg or AugmentConfig()
    train, val = dataset.split(val_fraction)
    scored = cur.score_samples(train, cur.pretrain_scorer(train, score_epochs, seed, batch_size))
    clip_plan = cur.build_clip_schedule(scored, pacing, cur.ClipConfig(epsilon, prune_policy, batch_size, seed))
    std_plan = cur.build_standard_schedule(train, pacing.stages * pacing.epochs_per_stage, batch_size, seed)
    _, clip_log = cur.run_plan(clip_plan, scored, val, seed, augment_cfg)
    _, std_log = cur.run_plan(std_plan, train, val, seed, augment_cfg)
    tau = threshold_factor * std_log.rows[-1].train_loss
    return ConvergenceResult(
        seed, tau, samples_to_threshold(clip_log, tau), samples_to_threshold(std_log, tau), clip_log, std_log
    )
