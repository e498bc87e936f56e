from enum import Enum

import numpy as np

# 64-bit machine epsilon; finite-difference step rules are powers of it
MACHINE_EPS = float(np.finfo(np.float64).eps)

# Floor for log-probabilities in the cross-entropy
LOG_PROB_FLOOR = 1e-300


class FlatnessVariant(str, Enum):
    """Which reading of the convolutional relative flatness to compute."""

    DEFINITION = "definition"  # one softmax-curvature term per kernel
    TABLE = "table"  # total softmax curvature times summed kernel norms


class TraceMethod(str, Enum):
    SYMBOLIC = "symbolic"
    FINITE_DIFF = "finite_diff"
    HUTCHINSON = "hutchinson"
    DENSE_ANALYTIC = "dense_analytic"


class OptimizerKind(str, Enum):
    SGD = "sgd"
    SGD_MOMENTUM = "sgd_momentum"
    ADAMW = "adamw"


class StopPolicyKind(str, Enum):
    STANDARD = "standard"
    FLATNESS = "flatness"
    COMBINED = "combined"
    NONE = "none"  # run the whole epoch budget


class StopReason(str, Enum):
    VAL_LOSS_PLATEAU = "val_loss_plateau"
    FLATNESS_STABLE = "flatness_stable"
    COMBINED = "combined"
    MAX_EPOCHS = "max_epochs"
    DIVERGED = "diverged"


class EvalSplit(str, Enum):
    """Split the per-epoch trace and flatness batch is drawn from."""

    VALIDATION = "val"
    TRAIN = "train"  # the (possibly noisy) labels the model is fit to


class WeightInit(str, Enum):
    """Kernel initialisation used by the trace benchmark."""

    ONES = "ones"
    RANDOM = "random"  # uniform(0, 1) scaled by 1e-4


RANDOM_WEIGHT_SCALE = 1e-4

# Fixed CSV layouts
BENCH_CSV_COLUMNS = (
    "method",
    "batches",
    "kernels",
    "runs",
    "trace_mean",
    "trace_std",
    "abs_err_mean",
    "abs_err_std",
    "flatness_mean",
    "flatness_std",
    "time_mean_s",
)

RUN_CSV_COLUMNS = (
    "seed",
    "optimizer",
    "lr",
    "batch_size",
    "epoch",
    "train_loss",
    "val_loss",
    "gen_gap",
    "trace",
    "flatness",
    "val_acc",
    "time_s",
    "stop_reason",
)

SWEEP_CSV_COLUMNS = (
    "seed",
    "optimizer",
    "lr",
    "batch_size",
    "noise_frac",
    "epochs_run",
    "val_acc",
    "gen_gap",
    "flatness",
    "trace",
    "stop_reason",
)

STOP_COMPARE_CSV_COLUMNS = (
    "strategy",
    "runs",
    "mean_epochs",
    "mean_val_acc",
    "mean_final_flatness",
    "mean_time_s",
)

# Default sweep grid
DEFAULT_LEARNING_RATES = (0.001, 0.005, 0.01, 0.05)
DEFAULT_BATCH_SIZES = (32, 64, 128)
DEFAULT_SEEDS = (0, 1, 2)
DEFAULT_OPTIMIZERS = (OptimizerKind.SGD_MOMENTUM, OptimizerKind.ADAMW)
DEFAULT_NOISE_LEVELS = (0.0,)
