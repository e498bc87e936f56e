import logging

import numpy as np

from convflat.core.config import settings
from convflat.core.constants import StopPolicyKind
from convflat.experiments.sweep import run_training
from convflat.schemas.records import RunRecord, StopSummary
from convflat.schemas.training import StopCompareConfig, TrainConfig
from convflat.services.parallel import ordered_map

logger = logging.getLogger(__name__)


def _run(task: tuple[TrainConfig, bool]) -> list[RunRecord]:
    cfg, record_timing = task
    return run_training(cfg, record_timing)


def _strategy_tasks(cfg: StopCompareConfig, strategy: StopPolicyKind) -> list[TrainConfig]:
    shared = cfg.model_dump(exclude={"strategies", "seeds", "optimizer", "early_stopping"})
    policy = cfg.early_stopping.model_copy(update={"kind": strategy})
    return [
        TrainConfig(
            **shared,
            optimizer=cfg.optimizer.model_copy(update={"seed": seed}),
            early_stopping=policy,
        )
        for seed in cfg.seeds
    ]


def summarize_strategy(strategy: StopPolicyKind, runs: list[list[RunRecord]]) -> StopSummary:
    """Per-strategy means over the runs that did not diverge."""
    finals = [r[-1] for r in runs if not r[-1].diverged]
    if len(finals) < len(runs):
        logger.warning(
            f"{len(runs) - len(finals)} {strategy.value} runs diverged and are excluded",
            extra={"props": {"strategy": strategy.value}},
        )

    def mean(values: list[float]) -> float:
        return float(np.mean(values)) if values else float("nan")

    return StopSummary(
        strategy=strategy,
        runs=len(finals),
        mean_epochs=mean([f.epoch for f in finals]),
        mean_val_acc=mean([f.val_acc for f in finals]),
        mean_final_flatness=mean([f.flatness for f in finals]),
        mean_time_s=mean(
            [sum(rec.time_s for rec in r) for r in runs if not r[-1].diverged]
        ),
    )


def compare_stopping_strategies(
    cfg: StopCompareConfig, jobs: int | None = None, record_timing: bool | None = None
) -> list[StopSummary]:
    """Train every seed under each stopping strategy; one summary row per strategy."""
    timing = settings.RECORD_TIMING if record_timing is None else record_timing
    tasks = [
        (strategy, task)
        for strategy in cfg.strategies
        for task in _strategy_tasks(cfg, strategy)
    ]
    logger.info(
        "Starting stop-strategy comparison",
        extra={"props": {"strategies": [s.value for s in cfg.strategies], "runs": len(tasks)}},
    )
    results = list(ordered_map(_run, [(t, timing) for _, t in tasks], jobs))

    summaries = []
    for strategy in cfg.strategies:
        runs = [res for (s, _), res in zip(tasks, results, strict=True) if s is strategy]
        summaries.append(summarize_strategy(strategy, runs))
    return summaries
