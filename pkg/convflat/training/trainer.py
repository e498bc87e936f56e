"""Training of the final conv -> GAP -> softmax block over a frozen backbone.

The backbone never changes, so each sample is reduced to its average patches
once and every epoch works on those summaries: the pooled logits, the
closed-form gradient, the trace and the flatness all depend on the input only
through them.
"""

import logging
import time

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict

from convflat.core.config import settings
from convflat.core.constants import EvalSplit, FlatnessVariant, StopReason
from convflat.core.exceptions import DivergenceError, ValidationError
from convflat.numerics.flatness import mean_alpha, relative_flatness, symbolic_trace_batch
from convflat.numerics.head import KernelBank, forward_from_summary, gradient, one_hot
from convflat.numerics.tensor import Array, PatchSummary
from convflat.schemas.dataset import SyntheticDataset
from convflat.schemas.geometry import ConvSpec
from convflat.schemas.records import RunRecord
from convflat.schemas.training import EarlyStopPolicy, OptimizerConfig
from convflat.training.backbone import Backbone
from convflat.training.early_stopping import evaluate_stop
from convflat.training.optimizers import OptimizerState, apply_step

logger = logging.getLogger(__name__)

# Generator streams derived from the run seed
_INIT_STREAM = 0
_SHUFFLE_STREAM = 1


class EpochMetrics(BaseModel):
    train_loss: float
    val_loss: float
    trace: float
    flatness: float
    val_acc: float
    alpha: float

    model_config = ConfigDict(frozen=True)


class FeatureSplit(BaseModel):
    """Average-patch summaries and one-hot labels of one data split."""

    summary: PatchSummary
    labels: np.ndarray

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @property
    def size(self) -> int:
        return self.summary.batch_size

    def head(self, n: int) -> "FeatureSplit":
        return FeatureSplit(summary=self.summary.subset(slice(0, n)), labels=self.labels[:n])


def init_kernels(
    spec: ConvSpec, rng: np.random.Generator, scale: float | None = None
) -> KernelBank:
    """Uniform(-scale, scale) kernels; scale None -> 1/sqrt(d), 0 -> all zeros (uniform softmax)."""
    half_width = 1.0 / np.sqrt(spec.d) if scale is None else float(scale)
    if half_width < 0:
        raise ValidationError(f"Init scale must be >= 0, got {scale}")
    if half_width == 0.0:
        return KernelBank.constant(spec, 0.0)
    return KernelBank.uniform(spec, rng, -half_width, half_width)


def inject_label_noise(
    labels: ArrayLike, fraction: float, seed: int, classes: int | None = None
) -> np.ndarray:
    """Reassign round(fraction * N) distinct labels to a uniformly drawn different class.

    ``round`` is Python's (half to even).
    """
    y = np.array(labels, dtype=np.int64)
    if not 0.0 <= fraction <= 1.0:
        raise ValidationError(f"Noise fraction must lie in [0, 1], got {fraction}")
    n_classes = int(y.max()) + 1 if classes is None else classes
    count = round(fraction * y.size)
    if count == 0:
        return y
    if n_classes < 2:
        raise ValidationError("Label noise needs at least two classes")

    rng = np.random.default_rng(seed)
    idx = rng.choice(y.size, size=count, replace=False)
    # draw from the C - 1 other classes: skip over the current one
    new = rng.integers(0, n_classes - 1, size=count)
    new += new >= y[idx]
    y[idx] = new
    return y


def evaluate(
    kernels: KernelBank, train: FeatureSplit, val: FeatureSplit, held_out: FeatureSplit
) -> EpochMetrics:
    """Losses on the full splits; trace, flatness and mean alpha on the fixed held-out batch."""
    train_out = forward_from_summary(train.summary, kernels, train.labels)
    val_out = forward_from_summary(val.summary, kernels, val.labels)
    eval_out = forward_from_summary(held_out.summary, kernels, held_out.labels)
    correct = val_out.predictions() == np.argmax(val.labels, axis=1)
    return EpochMetrics(
        train_loss=train_out.loss,
        val_loss=val_out.loss,
        trace=symbolic_trace_batch(eval_out, held_out.summary),
        flatness=relative_flatness(eval_out, held_out.summary, kernels, FlatnessVariant.TABLE),
        val_acc=float(correct.mean()),
        alpha=mean_alpha(eval_out),
    )


def _prepare(
    data: SyntheticDataset,
    backbone: Backbone,
    spec: ConvSpec,
    eval_batch_size: int,
    eval_split: EvalSplit = EvalSplit.VALIDATION,
) -> tuple[FeatureSplit, FeatureSplit, FeatureSplit]:
    if data.class_count != spec.c_out:
        raise ValidationError(
            f"Dataset has {data.class_count} classes but the head has {spec.c_out} filters"
        )
    if data.train_idx.size == 0 or data.val_idx.size == 0:
        raise ValidationError("Train and validation splits must both be non-empty")
    train = FeatureSplit(
        summary=backbone.summarize(data.train_inputs, spec),
        labels=one_hot(data.train_labels, spec.c_out),
    )
    val = FeatureSplit(
        summary=backbone.summarize(data.val_inputs, spec),
        labels=one_hot(data.val_labels, spec.c_out),
    )
    source = train if eval_split is EvalSplit.TRAIN else val
    return train, val, source.head(eval_batch_size)


def _run_epoch(
    state: OptimizerState,
    kernels: KernelBank,
    train: FeatureSplit,
    opt: OptimizerConfig,
    rng: np.random.Generator,
    limit: float,
) -> tuple[OptimizerState, KernelBank]:
    order = rng.permutation(train.size)
    for start in range(0, train.size, opt.batch_size):
        idx = order[start : start + opt.batch_size]
        batch = train.summary.subset(idx)
        labels = train.labels[idx]
        out = forward_from_summary(batch, kernels, labels)
        if not np.isfinite(out.loss) or out.loss > limit:
            raise DivergenceError(f"Mini-batch loss {out.loss} out of range", loss=out.loss)
        state = apply_step(state, gradient(out, batch, labels), opt)
        if not np.all(np.isfinite(state.weights)):
            raise DivergenceError("Non-finite weights after update", loss=float("nan"))
        kernels = kernels.replace(state.weights)
    return state, kernels


def train(
    data: SyntheticDataset,
    backbone: Backbone,
    spec: ConvSpec,
    opt: OptimizerConfig,
    stop: EarlyStopPolicy,
    *,
    init_scale: float | None = None,
    eval_batch_size: int = 256,
    eval_split: EvalSplit = EvalSplit.VALIDATION,
    divergence_limit: float | None = None,
    record_timing: bool | None = None,
) -> list[RunRecord]:
    """One RunRecord per completed epoch; the last one carries the stop reason.

    The epoch budget is ``stop.max_epochs`` when set, else ``opt.epochs``. A
    non-finite or exploding mini-batch loss aborts the run with a final record
    whose metrics are NaN and whose stop reason is ``diverged``.

    Trace and flatness come from the first ``eval_batch_size`` samples of
    ``eval_split``; losses and accuracy always use the full splits.
    """
    limit = divergence_limit or settings.DIVERGENCE_LOSS_LIMIT
    timing = settings.RECORD_TIMING if record_timing is None else record_timing
    budget = stop.max_epochs or opt.epochs

    train_split, val_split, held_out = _prepare(
        data, backbone, spec, eval_batch_size, eval_split
    )
    kernels = init_kernels(spec, np.random.default_rng([opt.seed, _INIT_STREAM]), init_scale)
    shuffle_rng = np.random.default_rng([opt.seed, _SHUFFLE_STREAM])
    state = OptimizerState.initial(kernels.weights)

    run_props = {
        "seed": opt.seed,
        "optimizer": opt.kind.value,
        "lr": opt.lr,
        "batch_size": opt.batch_size,
        "policy": stop.kind.value,
    }
    logger.info("Training run started", extra={"props": {**run_props, "max_epochs": budget}})

    base = {"seed": opt.seed, "optimizer": opt.kind, "lr": opt.lr, "batch_size": opt.batch_size}
    records: list[RunRecord] = []
    val_history: list[float] = []
    flat_history: list[float] = []
    for epoch in range(1, budget + 1):
        started = time.perf_counter()
        try:
            state, kernels = _run_epoch(state, kernels, train_split, opt, shuffle_rng, limit)
        except DivergenceError as div:
            nan = float("nan")
            records.append(
                RunRecord(
                    **base,
                    epoch=epoch,
                    train_loss=nan if div.loss is None else div.loss,
                    val_loss=nan,
                    trace=nan,
                    flatness=nan,
                    val_acc=nan,
                    time_s=time.perf_counter() - started if timing else 0.0,
                    stop_reason=StopReason.DIVERGED,
                )
            )
            logger.warning(
                "Training diverged",
                extra={"props": {**run_props, "epoch": epoch, "loss": div.loss}},
            )
            return records

        metrics = evaluate(kernels, train_split, val_split, held_out)
        val_history.append(metrics.val_loss)
        flat_history.append(metrics.flatness)
        decision = evaluate_stop(val_history, flat_history, stop)
        reason = decision.reason
        if reason is None and epoch == budget:
            reason = StopReason.MAX_EPOCHS

        records.append(
            RunRecord(
                **base,
                epoch=epoch,
                train_loss=metrics.train_loss,
                val_loss=metrics.val_loss,
                trace=metrics.trace,
                flatness=metrics.flatness,
                val_acc=metrics.val_acc,
                time_s=time.perf_counter() - started if timing else 0.0,
                stop_reason=reason,
                alpha=metrics.alpha,
            )
        )
        logger.debug(
            "Epoch finished",
            extra={"props": {**run_props, "epoch": epoch, **metrics.model_dump()}},
        )
        if reason is not None:
            break

    final = records[-1]
    logger.info(
        "Training run finished",
        extra={
            "props": {
                **run_props,
                "epochs": final.epoch,
                "stop_reason": final.stop_reason.value if final.stop_reason else None,
                "val_acc": final.val_acc,
                "flatness": final.flatness,
            }
        },
    )
    return records
