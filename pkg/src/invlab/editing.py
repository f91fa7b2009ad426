"""Condition-swap editing and SDEdit-style partial-noise editing."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .dynamics import run_forward_inversion, run_reverse
from .errors import ConfigurationError
from .oracle import OracleDataset, check_embedding, uniform
from .schedule import NoiseSchedule, StepPlan


class EditMethod(str, Enum):
    CONDITION_SWAP = "condition_swap"
    SDEDIT = "sdedit"


class SDEditMode(str, Enum):
    NOISE = "noise"
    DDIM_FORWARD = "ddim_forward"


@dataclass(frozen=True)
class EditSpec:
    original_cond: np.ndarray
    edited_cond: np.ndarray
    method: EditMethod = EditMethod.CONDITION_SWAP
    t0_ratio: float = 1.0
    w: float = 7.5

    def __post_init__(self):
        object.__setattr__(self, "method", EditMethod(self.method))
        if not (0.0 < self.t0_ratio <= 1.0):
            raise ConfigurationError(f"t0_ratio must lie in (0, 1], got {self.t0_ratio}")
        if not self.w >= 0:
            raise ConfigurationError(f"guidance scale must be >= 0, got {self.w}")
        K = len(self.original_cond)
        object.__setattr__(self, "original_cond", check_embedding(self.original_cond, K))
        object.__setattr__(self, "edited_cond", check_embedding(self.edited_cond, K))


def edit_condition_swap(z0, spec: EditSpec, plan: StepPlan, dataset: OracleDataset,
                        schedule: NoiseSchedule) -> np.ndarray:
    """Invert under C, then sample under C_edit with C as the negative prompt."""
    if spec.method is not EditMethod.CONDITION_SWAP:
        raise ConfigurationError("spec is not a condition-swap edit")
    forward = run_forward_inversion(z0, plan, spec.original_cond, dataset, schedule)
    reverse = run_reverse(forward[plan.T], plan, spec.edited_cond, spec.original_cond,
                          spec.w, dataset, schedule)
    return reverse[0]


def snap_to_plan(t0_ratio: float, plan: StepPlan) -> int:
    """Nearest plan index to t0_ratio * T; ties go to the larger step."""
    target = int(round(t0_ratio * plan.T))
    if target < plan.indices[1]:
        raise ConfigurationError(
            f"t0_ratio * T = {t0_ratio * plan.T:g} is below the first plan step {plan.indices[1]}"
        )
    idx = np.asarray(plan.indices)
    dist = np.abs(idx - target)
    best = np.flatnonzero(dist == dist.min())
    return int(idx[best[-1]])


def edit_sdedit(z0, spec: EditSpec, plan: StepPlan, dataset: OracleDataset,
                schedule: NoiseSchedule, mode: SDEditMode | str = SDEditMode.NOISE,
                seed=None, negative_prompt: bool = True) -> np.ndarray:
    """Partial-noise edit starting from step t0 * T.

    ``mode="noise"`` draws z_t from q(z_t | z0); ``mode="ddim_forward"`` runs
    DDIM inversion under C up to t. Sampling back to 0 uses C_edit with C as
    the negative prompt, or the plain null embedding when ``negative_prompt``
    is false.
    """
    if spec.method is not EditMethod.SDEDIT:
        raise ConfigurationError("spec is not an SDEdit edit")
    mode = SDEditMode(mode)
    t = snap_to_plan(spec.t0_ratio, plan)
    z0 = np.asarray(z0, dtype=np.float64)
    if mode is SDEditMode.NOISE:
        a = schedule.alphas[t]
        eta = np.random.default_rng(seed).standard_normal(z0.shape)
        z_t = np.sqrt(a) * z0 + np.sqrt(1.0 - a) * eta
    else:
        z_t = run_forward_inversion(z0, plan, spec.original_cond, dataset, schedule, stop=t)[t]
    null = spec.original_cond if negative_prompt else uniform(dataset.K)
    return run_reverse(z_t, plan, spec.edited_cond, null, spec.w, dataset, schedule, start=t)[0]
