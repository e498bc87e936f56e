from collections.abc import Sequence

from pydantic import BaseModel, ConfigDict

from convflat.core.constants import StopPolicyKind, StopReason
from convflat.core.exceptions import ValidationError
from convflat.schemas.training import EarlyStopPolicy

# Denominator floor of the relative flatness change
_REL_FLOOR = 1e-12


class StopDecision(BaseModel):
    stop: bool
    reason: StopReason | None = None

    model_config = ConfigDict(frozen=True)


CONTINUE = StopDecision(stop=False)


def epochs_since_best(val_losses: Sequence[float]) -> int:
    """Epochs after the first occurrence of the strict minimum."""
    best_idx = 0
    for i, loss in enumerate(val_losses):
        if loss < val_losses[best_idx]:
            best_idx = i
    return len(val_losses) - 1 - best_idx


def relative_change(current: float, previous: float) -> float:
    return abs(current - previous) / max(abs(previous), _REL_FLOOR)


def stable_epochs(flatness: Sequence[float], threshold: float) -> int:
    """Trailing run of epochs whose relative flatness change is below ``threshold``."""
    count = 0
    for i in range(len(flatness) - 1, 0, -1):
        if relative_change(flatness[i], flatness[i - 1]) < threshold:
            count += 1
        else:
            break
    return count


def evaluate_stop(
    val_losses: Sequence[float], flatness: Sequence[float], policy: EarlyStopPolicy
) -> StopDecision:
    if not val_losses or len(val_losses) != len(flatness):
        raise ValidationError(
            "Stop history must be non-empty with one flatness value per epoch",
            errors={"val_losses": len(val_losses), "flatness": len(flatness)},
        )
    if policy.kind is StopPolicyKind.NONE:
        return CONTINUE

    plateau = epochs_since_best(val_losses) >= policy.patience
    stable = stable_epochs(flatness, policy.threshold) >= policy.patience

    if policy.kind is StopPolicyKind.STANDARD and plateau:
        return StopDecision(stop=True, reason=StopReason.VAL_LOSS_PLATEAU)
    if policy.kind is StopPolicyKind.FLATNESS and stable:
        return StopDecision(stop=True, reason=StopReason.FLATNESS_STABLE)
    if policy.kind is StopPolicyKind.COMBINED and plateau and stable:
        return StopDecision(stop=True, reason=StopReason.COMBINED)
    return CONTINUE
