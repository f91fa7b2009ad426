"""DDIM transition kernels, the sigma-indexed forward process and trajectory runners."""

from __future__ import annotations

import csv
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DomainError
from .oracle import OracleDataset, cfg_combine, predict_noise
from .schedule import NoiseSchedule, SigmaSchedule, StepPlan


@dataclass
class Trajectory:
    """Latents keyed by diffusion step, plus the number of model evaluations spent."""

    plan: StepPlan
    entries: dict[int, np.ndarray] = field(default_factory=dict)
    model_calls: int = 0

    def __getitem__(self, t: int) -> np.ndarray:
        return self.entries[t]

    def __contains__(self, t: int) -> bool:
        return t in self.entries

    def is_complete(self) -> bool:
        return sorted(self.entries) == list(self.plan.indices)

    def steps(self) -> list[int]:
        return sorted(self.entries)

    def as_array(self) -> np.ndarray:
        return np.stack([self.entries[t] for t in self.steps()])

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            dim = len(next(iter(self.entries.values())))
            w.writerow(["step_index"] + [f"v{j}" for j in range(dim)])
            for t in self.steps():
                w.writerow([t] + [repr(float(v)) for v in self.entries[t]])


def _coefficients(schedule: NoiseSchedule, t: int, t_prev: int) -> tuple[float, float]:
    if not (0 <= t_prev < t <= schedule.T):
        raise DomainError(f"need 0 <= t_prev < t <= T, got t={t}, t_prev={t_prev}")
    a, a_prev = schedule.alphas[t], schedule.alphas[t_prev]
    scale = np.sqrt(a_prev / a)
    gain = np.sqrt(a_prev) * (np.sqrt(1.0 / a_prev - 1.0) - np.sqrt(1.0 / a - 1.0))
    return float(scale), float(gain)


def step_gain(schedule: NoiseSchedule, t: int, t_prev: int) -> float:
    """Coefficient multiplying epsilon in the reverse step t -> t_prev."""
    return _coefficients(schedule, t, t_prev)[1]


def ddim_step(z_t, t: int, t_prev: int, eps, schedule: NoiseSchedule) -> np.ndarray:
    """Deterministic DDIM update from step ``t`` to the earlier step ``t_prev``."""
    scale, gain = _coefficients(schedule, t, t_prev)
    z_t, eps = np.asarray(z_t, dtype=np.float64), np.asarray(eps, dtype=np.float64)
    if z_t.shape != eps.shape:
        raise DomainError(f"shape mismatch {z_t.shape} vs {eps.shape}")
    return scale * z_t + gain * eps


def ddim_inverse_step(z_prev, t_prev: int, t: int, eps, schedule: NoiseSchedule) -> np.ndarray:
    """DDIM inversion from ``t_prev`` up to ``t``; exact inverse of ddim_step for equal eps."""
    if not (0 <= t_prev < t <= schedule.T):
        raise DomainError(f"need 0 <= t_prev < t <= T, got t_prev={t_prev}, t={t}")
    a, a_prev = schedule.alphas[t], schedule.alphas[t_prev]
    z_prev, eps = np.asarray(z_prev, dtype=np.float64), np.asarray(eps, dtype=np.float64)
    if z_prev.shape != eps.shape:
        raise DomainError(f"shape mismatch {z_prev.shape} vs {eps.shape}")
    scale = np.sqrt(a / a_prev)
    gain = np.sqrt(a) * (np.sqrt(1.0 / a - 1.0) - np.sqrt(1.0 / a_prev - 1.0))
    return scale * z_prev + gain * eps


def inversion_noise_step(t_prev: int) -> int:
    """Diffusion step at which inversion evaluates the noise for a step leaving ``t_prev``.

    The noise is undefined at the clean sample, so the step out of 0 uses step 1.
    """
    return max(t_prev, 1)


def stochastic_forward(z0, schedule: NoiseSchedule, sigmas: SigmaSchedule, seed) -> Trajectory:
    """Sample z_{1:T} from the sigma-indexed non-Markovian forward process.

    z_T ~ N(sqrt(a_T) z0, (1 - a_T) I), then for t = T..2
    z_{t-1} ~ N(sqrt(a_{t-1}) z0 + sqrt(1 - a_{t-1} - s_t^2) d_t, s_t^2 I)
    with d_t = (z_t - sqrt(a_t) z0) / sqrt(1 - a_t).
    """
    z0 = np.asarray(z0, dtype=np.float64)
    if not np.all(np.isfinite(z0)):
        raise DomainError("z0 must be finite")
    d = forward_noise_paths(z0.size, schedule, sigmas, [seed])[0]
    a = schedule.alphas
    z = np.sqrt(a[1:, None]) * z0 + np.sqrt(1.0 - a[1:, None]) * d[1:]
    entries = {0: z0.copy()}
    entries.update({t: z[t - 1] for t in range(1, schedule.T + 1)})
    return Trajectory(StepPlan(tuple(range(schedule.T + 1))), entries)


def forward_noise_paths(D: int, schedule: NoiseSchedule, sigmas: SigmaSchedule, seeds) -> np.ndarray:
    """Normalized noise d_t of independent forward runs, shape (runs, T + 1, D).

    Run r uses ``default_rng(seeds[r])``, so each path matches a single-run
    call of :func:`stochastic_forward` with that seed. Row 0 is zero. The walk
    is independent of z0, which only enters through z_t = sqrt(a_t) z0 + sqrt(1 - a_t) d_t.
    """
    sigmas.validate(schedule)
    T = schedule.T
    a = schedule.alphas
    noise = np.stack([np.random.default_rng(s).standard_normal((T, D)) for s in seeds])
    s2 = sigmas.sigmas**2
    keep = np.sqrt(1.0 - a[1:-1] - s2[2:])  # index t-2 for t in 2..T
    d_all = np.zeros((len(noise), T + 1, D))
    d = noise[:, T - 1]
    d_all[:, T] = d
    for t in range(T, 1, -1):
        # (z_{t-1} - sqrt(a_{t-1}) z0) / sqrt(1 - a_{t-1})
        d = (keep[t - 2] * d + np.sqrt(s2[t]) * noise[:, t - 2]) / np.sqrt(1.0 - a[t - 1])
        d_all[:, t - 1] = d
    return d_all


def normalized_noise(traj: Trajectory, z0, schedule: NoiseSchedule) -> dict[int, np.ndarray]:
    """d_t = (z_t - sqrt(a_t) z0) / sqrt(1 - a_t) for every t >= 1 in the trajectory."""
    a = schedule.alphas
    return {
        t: (traj[t] - np.sqrt(a[t]) * z0) / np.sqrt(1.0 - a[t]) for t in traj.steps() if t > 0
    }


def _null_for(null_schedule, t: int) -> np.ndarray:
    if isinstance(null_schedule, Mapping):
        if t not in null_schedule:
            raise DomainError(f"null schedule has no embedding for step {t}")
        return null_schedule[t]
    return null_schedule


def run_reverse(
    z_T,
    plan: StepPlan,
    cond,
    null_schedule,
    w: float,
    dataset: OracleDataset,
    schedule: NoiseSchedule,
    start: int | None = None,
) -> Trajectory:
    """Guided DDIM sampling over the plan from ``start`` (default T) down to 0.

    ``null_schedule`` is either one embedding used at every step or a mapping
    from step to embedding. Both branches of guidance are always evaluated,
    so a step costs two model calls even when the embeddings coincide.
    """
    t0 = plan.T if start is None else start
    traj = Trajectory(plan, {t0: np.asarray(z_T, dtype=np.float64)})
    z = traj[t0]
    for t, t_prev in plan.pairs_descending(t0):
        null = _null_for(null_schedule, t)
        eps_c = predict_noise(dataset, z, t, cond, schedule).epsilon
        eps_u = predict_noise(dataset, z, t, null, schedule).epsilon
        traj.model_calls += 2
        z = ddim_step(z, t, t_prev, cfg_combine(eps_c, eps_u, w), schedule)
        traj.entries[t_prev] = z
    return traj


def run_forward_inversion(
    z0,
    plan: StepPlan,
    cond,
    dataset: OracleDataset,
    schedule: NoiseSchedule,
    stop: int | None = None,
) -> Trajectory:
    """DDIM inversion z*_0 = z0 -> z*_T (or up to ``stop``) with the conditional prediction."""
    z = np.asarray(z0, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise DomainError("z0 must be finite")
    traj = Trajectory(plan, {0: z})
    for t_prev, t in plan.pairs_ascending(stop):
        eps = predict_noise(dataset, z, inversion_noise_step(t_prev), cond, schedule).epsilon
        traj.model_calls += 1
        z = ddim_inverse_step(z, t_prev, t, eps, schedule)
        traj.entries[t] = z
    return traj
