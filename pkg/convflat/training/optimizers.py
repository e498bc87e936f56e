"""Update rules for the kernel matrix: SGD, heavy-ball momentum and AdamW."""

from collections.abc import Callable

import numpy as np
from pydantic import BaseModel, ConfigDict

from convflat.core.constants import OptimizerKind
from convflat.core.exceptions import ValidationError
from convflat.numerics.tensor import Array
from convflat.schemas.training import OptimizerConfig


class OptimizerState(BaseModel):
    weights: np.ndarray
    velocity: np.ndarray | None = None
    first_moment: np.ndarray | None = None
    second_moment: np.ndarray | None = None
    step: int = 0

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @classmethod
    def initial(cls, weights: Array) -> "OptimizerState":
        return cls(weights=np.array(weights, dtype=np.float64))


def _check(state: OptimizerState, grad: Array) -> Array:
    g = np.asarray(grad, dtype=np.float64)
    if g.shape != state.weights.shape:
        raise ValidationError(
            f"Gradient shape {g.shape} does not match weights {state.weights.shape}"
        )
    return g


def step_sgd(state: OptimizerState, grad: Array, cfg: OptimizerConfig) -> OptimizerState:
    g = _check(state, grad)
    return state.model_copy(
        update={"weights": state.weights - cfg.lr * g, "step": state.step + 1}
    )


def step_sgd_momentum(state: OptimizerState, grad: Array, cfg: OptimizerConfig) -> OptimizerState:
    """v <- mu v + g; k <- k - lr v."""
    g = _check(state, grad)
    v = g if state.velocity is None else cfg.momentum * state.velocity + g
    return state.model_copy(
        update={"weights": state.weights - cfg.lr * v, "velocity": v, "step": state.step + 1}
    )


def step_adamw(state: OptimizerState, grad: Array, cfg: OptimizerConfig) -> OptimizerState:
    """Decoupled decay k <- k - lr*wd*k, then the bias-corrected Adam step."""
    g = _check(state, grad)
    beta1, beta2 = cfg.betas
    t = state.step + 1

    weights = state.weights - cfg.lr * cfg.weight_decay * state.weights

    m_prev = np.zeros_like(g) if state.first_moment is None else state.first_moment
    v_prev = np.zeros_like(g) if state.second_moment is None else state.second_moment
    m = beta1 * m_prev + (1.0 - beta1) * g
    v = beta2 * v_prev + (1.0 - beta2) * g**2

    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    weights = weights - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
    return state.model_copy(
        update={"weights": weights, "first_moment": m, "second_moment": v, "step": t}
    )


StepFn = Callable[[OptimizerState, Array, OptimizerConfig], OptimizerState]

STEP_FUNCTIONS: dict[OptimizerKind, StepFn] = {
    OptimizerKind.SGD: step_sgd,
    OptimizerKind.SGD_MOMENTUM: step_sgd_momentum,
    OptimizerKind.ADAMW: step_adamw,
}


def apply_step(state: OptimizerState, grad: Array, cfg: OptimizerConfig) -> OptimizerState:
    return STEP_FUNCTIONS[cfg.kind](state, grad, cfg)
