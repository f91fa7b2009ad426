"""DDIM inversion with CFG, null-text inversion and negative-prompt inversion."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .dynamics import (
    Trajectory,
    ddim_step,
    inversion_noise_step,
    run_forward_inversion,
    run_reverse,
    step_gain,
)
from .errors import ConfigurationError, DomainError, OptimizerError
from .oracle import (
    OracleDataset,
    cfg_combine,
    predict_noise,
    predict_noise_grad,
    project_simplex,
    uniform,
)
from .schedule import NoiseSchedule, StepPlan


class Method(str, Enum):
    DDIM_CFG = "ddim_cfg"
    NULL_TEXT = "null_text"
    NEGATIVE_PROMPT = "negative_prompt"


@dataclass(frozen=True)
class OptimizerConfig:
    """Per-step null-text optimizer settings.

    Learning rate and early-stop threshold are linear in the sampling-step
    position i (0 at t = T, N-1 at the last step):
    lr_i = lr_final + lr_step_factor * (N - 1 - i),
    threshold_i = early_stop_base + early_stop_factor * i.
    """

    max_iters: int = 10
    lr_final: float = 5e-3
    lr_step_factor: float = 1e-4
    early_stop_base: float = 1e-5
    early_stop_factor: float = 2e-5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    max_halvings: int = 5

    def __post_init__(self):
        if self.max_iters < 1:
            raise ConfigurationError("max_iters must be >= 1")
        for name in ("lr_final", "lr_step_factor", "early_stop_base", "early_stop_factor"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")

    def learning_rate(self, position: int, n_steps: int) -> float:
        return self.lr_final + self.lr_step_factor * (n_steps - 1 - position)

    def threshold(self, position: int) -> float:
        return self.early_stop_base + self.early_stop_factor * position


@dataclass
class NullTextSchedule:
    embeddings: dict[int, np.ndarray] = field(default_factory=dict)
    losses: dict[int, float] = field(default_factory=dict)
    initial_losses: dict[int, float] = field(default_factory=dict)
    iterations: dict[int, int] = field(default_factory=dict)
    loss_history: dict[int, list[float]] = field(default_factory=dict)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            K = len(next(iter(self.embeddings.values())))
            w.writerow(["step"] + [f"w{k}" for k in range(K)] + ["loss", "iterations"])
            for t in sorted(self.embeddings, reverse=True):
                w.writerow(
                    [t]
                    + [repr(float(v)) for v in self.embeddings[t]]
                    + [repr(self.losses[t]), self.iterations[t]]
                )


@dataclass
class InversionResult:
    method: Method
    reconstruction: np.ndarray
    forward_trajectory: Trajectory
    reverse_trajectory: Trajectory
    model_calls: int
    wall_time: float  # seconds
    null_schedule: NullTextSchedule | None = None


def _check_w(w: float) -> None:
    if not w >= 0:
        raise DomainError(f"guidance scale must be >= 0, got {w}")


def _result(method, forward, reverse, started, nulls=None) -> InversionResult:
    return InversionResult(
        method=method,
        reconstruction=reverse[0],
        forward_trajectory=forward,
        reverse_trajectory=reverse,
        model_calls=forward.model_calls + reverse.model_calls,
        wall_time=time.perf_counter() - started,
        null_schedule=nulls,
    )


def invert_ddim_cfg(z0, cond, w: float, plan: StepPlan, dataset: OracleDataset,
                    schedule: NoiseSchedule) -> InversionResult:
    """Baseline: DDIM inversion under C, then CFG sampling against the plain null embedding."""
    _check_w(w)
    started = time.perf_counter()
    forward = run_forward_inversion(z0, plan, cond, dataset, schedule)
    reverse = run_reverse(forward[plan.T], plan, cond, uniform(dataset.K), w, dataset, schedule)
    return _result(Method.DDIM_CFG, forward, reverse, started)


def invert_negative_prompt(z0, cond, w: float, plan: StepPlan, dataset: OracleDataset,
                           schedule: NoiseSchedule) -> InversionResult:
    """Optimization-free inversion: the prompt embedding replaces the null embedding."""
    _check_w(w)
    started = time.perf_counter()
    forward = run_forward_inversion(z0, plan, cond, dataset, schedule)
    reverse = run_reverse(forward[plan.T], plan, cond, cond, w, dataset, schedule)
    return _result(Method.NEGATIVE_PROMPT, forward, reverse, started)


def optimize_null_text(
    z_star: Trajectory,
    cond,
    w: float,
    plan: StepPlan,
    dataset: OracleDataset,
    schedule: NoiseSchedule,
    opt: OptimizerConfig = OptimizerConfig(),
) -> tuple[NullTextSchedule, Trajectory]:
    """Fit one null embedding per step so guided sampling retraces ``z_star``.

    For t = T..1 the embedding starts from the previous step's optimum and
    takes at most ``opt.max_iters`` projected Adam steps on
    mean((z_{t-1}(null) - z*_{t-1})^2). A step that raises the loss is halved
    up to ``opt.max_halvings`` times and otherwise rejected, which ends the
    step. The optimization stops early once the loss is below the threshold
    or the gradient vanishes exactly.
    Each step is then taken with a fresh guidance pair, so the returned
    trajectory equals ``run_reverse`` under the returned embeddings.
    """
    _check_w(w)
    if not z_star.is_complete():
        raise DomainError("z_star must cover every plan step")
    cond = np.asarray(cond, dtype=np.float64)
    N = plan.count
    result = NullTextSchedule()
    z = z_star[plan.T]
    reverse = Trajectory(plan, {plan.T: z})
    null = uniform(dataset.K)

    for position, (t, t_prev) in enumerate(plan.pairs_descending()):
        target = z_star[t_prev]
        eps_c = predict_noise(dataset, z, t, cond, schedule).epsilon
        reverse.model_calls += 1
        # d z_{t-1} / d eps_u = gain * (1 - w)
        chain = step_gain(schedule, t, t_prev) * (1.0 - w)

        def evaluate(e):
            pred, jac = predict_noise_grad(dataset, z, t, e, schedule)
            reverse.model_calls += 1
            z_next = ddim_step(z, t, t_prev, cfg_combine(eps_c, pred.epsilon, w), schedule)
            resid = z_next - target
            loss = float(np.mean(resid**2))
            if not np.isfinite(loss):
                raise OptimizerError("non-finite null-text loss", t)
            grad = (2.0 / resid.size) * chain * (jac.T @ resid)
            return loss, grad

        lr = opt.learning_rate(position, N)
        threshold = opt.threshold(position)
        loss, grad = evaluate(null)
        history = [loss]
        m = np.zeros_like(null)
        v = np.zeros_like(null)
        iters = 0
        while iters < opt.max_iters and loss >= threshold:
            g = grad - grad.mean()  # tangent to the simplex
            if not np.any(g):
                break  # the loss does not depend on the null embedding
            iters += 1
            m = opt.beta1 * m + (1 - opt.beta1) * g
            v = opt.beta2 * v + (1 - opt.beta2) * g * g
            direction = (m / (1 - opt.beta1**iters)) / (
                np.sqrt(v / (1 - opt.beta2**iters)) + opt.adam_eps
            )
            step = lr
            for _ in range(opt.max_halvings + 1):
                trial = project_simplex(null - step * direction)
                t_loss, t_grad = evaluate(trial)
                if t_loss <= loss:
                    break
                step *= 0.5
            else:
                break
            null, loss, grad = trial, t_loss, t_grad
            history.append(loss)

        result.embeddings[t] = null.copy()
        result.losses[t] = loss
        result.initial_losses[t] = history[0]
        result.iterations[t] = iters
        result.loss_history[t] = history
        # commit the step with a fresh guidance pair, exactly as sampling would
        eps_u = predict_noise(dataset, z, t, null, schedule).epsilon
        eps_c = predict_noise(dataset, z, t, cond, schedule).epsilon
        reverse.model_calls += 2
        z = ddim_step(z, t, t_prev, cfg_combine(eps_c, eps_u, w), schedule)
        reverse.entries[t_prev] = z
    return result, reverse


def invert_null_text(z0, cond, w: float, plan: StepPlan, dataset: OracleDataset,
                     schedule: NoiseSchedule, opt: OptimizerConfig = OptimizerConfig()) -> InversionResult:
    started = time.perf_counter()
    forward = run_forward_inversion(z0, plan, cond, dataset, schedule)
    nulls, reverse = optimize_null_text(forward, cond, w, plan, dataset, schedule, opt)
    return _result(Method.NULL_TEXT, forward, reverse, started, nulls)


INVERTERS = {
    Method.DDIM_CFG: invert_ddim_cfg,
    Method.NEGATIVE_PROMPT: invert_negative_prompt,
    Method.NULL_TEXT: invert_null_text,
}


def invert(method, z0, cond, w, plan, dataset, schedule, opt: OptimizerConfig = OptimizerConfig()):
    method = Method(method)
    if method is Method.NULL_TEXT:
        return invert_null_text(z0, cond, w, plan, dataset, schedule, opt)
    return INVERTERS[method](z0, cond, w, plan, dataset, schedule)


def null_text_error_residual(z_star: Trajectory, cond, null_emb, w: float, t: int,
                          dataset: OracleDataset, schedule: NoiseSchedule) -> float:
    """Residual of the one-step error expansion of null-text inversion at step ``t``.

    With zbar_t = z*_t, the reverse step gives zbar_{t-1}, and
    z*_{t-1} - zbar_{t-1} should equal gain * (eps(z*_{t-1}, C) - eps_cfg(zbar_t)).
    Returns the Euclidean norm of the difference.
    """
    if w == 1:
        raise DomainError("the identity is stated for guidance scales other than 1")
    t_prev = z_star.plan.previous(t)
    zbar_t = z_star[t]
    eps_c = predict_noise(dataset, zbar_t, t, cond, schedule).epsilon
    eps_u = predict_noise(dataset, zbar_t, t, null_emb, schedule).epsilon
    guided = cfg_combine(eps_c, eps_u, w)
    zbar_prev = ddim_step(zbar_t, t, t_prev, guided, schedule)
    eps_star = predict_noise(
        dataset, z_star[t_prev], inversion_noise_step(t_prev), cond, schedule
    ).epsilon
    expected = step_gain(schedule, t, t_prev) * (eps_star - guided)
    return float(np.linalg.norm((z_star[t_prev] - zbar_prev) - expected))
