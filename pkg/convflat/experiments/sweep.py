"""Single training runs from a config document, and grid sweeps over them."""

import itertools
import logging
from collections.abc import Callable

from convflat.core.config import settings
from convflat.core.constants import StopReason
from convflat.experiments.datasets import generate_blobs
from convflat.schemas.dataset import SyntheticDataset
from convflat.schemas.geometry import ConvSpec
from convflat.schemas.records import RunRecord, SweepRow
from convflat.schemas.training import ExperimentConfig, SweepConfig, TrainConfig
from convflat.services.parallel import ordered_map
from convflat.training.backbone import Backbone
from convflat.training.trainer import inject_label_noise, train

logger = logging.getLogger(__name__)


def build_setup(cfg: ExperimentConfig) -> tuple[SyntheticDataset, Backbone, ConvSpec]:
    """Dataset, frozen backbone and head geometry shared by every run of an experiment."""
    params = cfg.dataset
    data = generate_blobs(params)
    backbone = Backbone.build(params.channels, params.height, params.width, cfg.backbone)
    spec = backbone.head_spec(
        params.class_count, cfg.head.ksize, stride=cfg.head.stride, padding=cfg.head.padding
    )
    return data, backbone, spec


def with_label_noise(data: SyntheticDataset, fraction: float, seed: int) -> SyntheticDataset:
    """Corrupt the training labels only; validation labels stay clean."""
    if fraction == 0.0:
        return data
    labels = data.labels.copy()
    labels[data.train_idx] = inject_label_noise(
        data.train_labels, fraction, seed, classes=data.class_count
    )
    return data.with_labels(labels)


def run_training(cfg: TrainConfig, record_timing: bool | None = None) -> list[RunRecord]:
    data, backbone, spec = build_setup(cfg)
    data = with_label_noise(data, cfg.noise_frac, cfg.optimizer.seed)
    return train(
        data,
        backbone,
        spec,
        cfg.optimizer,
        cfg.early_stopping,
        init_scale=cfg.init_scale,
        eval_batch_size=cfg.eval_batch_size,
        eval_split=cfg.eval_split,
        record_timing=record_timing,
    )


def sweep_cells(cfg: SweepConfig) -> list[TrainConfig]:
    """One TrainConfig per grid cell, ordered optimizer, lr, batch size, noise, seed."""
    shared = cfg.model_dump(exclude={"grid", "optimizer"})
    grid = cfg.grid
    cells = []
    for kind, lr, batch_size, noise, seed in itertools.product(
        grid.optimizers, grid.learning_rates, grid.batch_sizes, grid.noise_levels, grid.seeds
    ):
        opt = cfg.optimizer.model_copy(
            update={"kind": kind, "lr": lr, "batch_size": batch_size, "seed": seed}
        )
        cells.append(TrainConfig(**shared, optimizer=opt, noise_frac=noise))
    return cells


def _run_cell(task: tuple[TrainConfig, bool]) -> SweepRow:
    cfg, record_timing = task
    records = run_training(cfg, record_timing)
    return SweepRow.from_final(records[-1], cfg.noise_frac)


def run_sweep(
    cfg: SweepConfig,
    jobs: int | None = None,
    on_row: Callable[[SweepRow], None] | None = None,
    record_timing: bool | None = None,
) -> list[SweepRow]:
    """Train every grid cell to completion; rows arrive in grid order.

    ``on_row`` sees each row as soon as it and all earlier rows are done, so a
    writer can persist a partial sweep.
    """
    timing = settings.RECORD_TIMING if record_timing is None else record_timing
    cells = sweep_cells(cfg)
    logger.info(f"Starting sweep of {len(cells)} runs", extra={"props": {"runs": len(cells)}})

    rows: list[SweepRow] = []
    for row in ordered_map(_run_cell, [(c, timing) for c in cells], jobs):
        rows.append(row)
        if on_row is not None:
            on_row(row)

    diverged = sum(r.stop_reason is StopReason.DIVERGED for r in rows)
    logger.info("Sweep finished", extra={"props": {"runs": len(rows), "diverged": diverged}})
    return rows
