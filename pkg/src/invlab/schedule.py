"""Noise schedules, sampling-step plans and stochasticity schedules.

Index convention: ``alphas[t]`` holds the cumulative signal level for
diffusion step ``t`` in ``0..T`` with ``alphas[0] == 1`` (the clean sample).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError


@dataclass(frozen=True)
class NoiseSchedule:
    """Cumulative products alpha_0..alpha_T, strictly decreasing from 1."""

    alphas: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.alphas, dtype=np.float64)
        if a.ndim != 1 or a.size < 2:
            raise ConfigurationError("schedule needs alpha_0 and at least one step")
        if a[0] != 1.0:
            raise ConfigurationError("alpha_0 must be exactly 1")
        if not np.all(np.isfinite(a)) or a[-1] <= 0.0 or np.any(np.diff(a) >= 0.0):
            raise ConfigurationError("alphas must be finite and strictly decreasing in (0, 1]")
        a.setflags(write=False)
        object.__setattr__(self, "alphas", a)

    @property
    def T(self) -> int:
        return self.alphas.size - 1

    def alpha(self, t: int) -> float:
        return float(self.alphas[t])


def build_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 2e-2) -> NoiseSchedule:
    """Linear-beta schedule: alpha_t = prod_{s<=t} (1 - beta_s)."""
    if T < 1:
        raise ConfigurationError(f"T must be >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ConfigurationError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    return NoiseSchedule(np.concatenate([[1.0], np.cumprod(1.0 - betas)]))


@dataclass(frozen=True)
class StepPlan:
    """Uniform-stride subsequence 0 = indices[0] < ... < indices[-1] = T."""

    indices: tuple[int, ...]

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if len(idx) < 2 or idx[0] != 0:
            raise ConfigurationError("plan must start at 0 and contain at least one step")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ConfigurationError("plan indices must be strictly increasing")
        object.__setattr__(self, "indices", idx)

    @property
    def count(self) -> int:
        """Number of sampling steps N."""
        return len(self.indices) - 1

    @property
    def T(self) -> int:
        return self.indices[-1]

    def pairs_descending(self, start: int | None = None):
        """(t, t_prev) pairs from ``start`` (default T) down to 0."""
        idx = self.indices if start is None else self.indices[: self.indices.index(start) + 1]
        return [(idx[i], idx[i - 1]) for i in range(len(idx) - 1, 0, -1)]

    def pairs_ascending(self, stop: int | None = None):
        """(t_prev, t) pairs from 0 up to ``stop`` (default T)."""
        idx = self.indices if stop is None else self.indices[: self.indices.index(stop) + 1]
        return [(idx[i - 1], idx[i]) for i in range(1, len(idx))]

    def previous(self, t: int) -> int:
        pos = self.indices.index(t)
        if pos == 0:
            raise ConfigurationError("step 0 has no predecessor")
        return self.indices[pos - 1]


def make_step_plan(schedule: NoiseSchedule, N: int) -> StepPlan:
    T = schedule.T
    if not (1 <= N <= T):
        raise ConfigurationError(f"need 1 <= N <= T={T}, got N={N}")
    if T % N:
        raise ConfigurationError(f"T={T} is not divisible by N={N}; non-uniform strides are rejected")
    return StepPlan(tuple(range(0, T + 1, T // N)))


@dataclass(frozen=True)
class SigmaSchedule:
    """Per-step standard deviations of the non-Markovian forward process.

    ``sigmas[t]`` is used for t in 2..T; entries 0 and 1 are ignored.
    """

    sigmas: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.sigmas, dtype=np.float64)
        if s.ndim != 1 or not np.all(np.isfinite(s)) or np.any(s < 0.0):
            raise ConfigurationError("sigmas must be finite and non-negative")
        s.setflags(write=False)
        object.__setattr__(self, "sigmas", s)

    def validate(self, schedule: NoiseSchedule) -> None:
        if self.sigmas.size != schedule.T + 1:
            raise ConfigurationError("sigma schedule length must be T + 1")
        a = schedule.alphas
        if np.any(self.sigmas[2:] ** 2 >= 1.0 - a[1:-1]):
            raise ConfigurationError("need sigma_t^2 < 1 - alpha_{t-1} for all t > 1")

    def scaled(self, factor: float) -> "SigmaSchedule":
        return SigmaSchedule(self.sigmas * factor)


def ddpm_sigmas(schedule: NoiseSchedule, eta: float = 1.0) -> SigmaSchedule:
    """sigma_t = eta * sqrt((1 - a_{t-1}) / (1 - a_t) * (1 - a_t / a_{t-1})).

    eta = 1 recovers the DDPM posterior variance, eta = 0 the DDIM limit.
    """
    a = schedule.alphas
    s = np.zeros_like(a)
    s[2:] = eta * np.sqrt((1.0 - a[1:-1]) / (1.0 - a[2:]) * (1.0 - a[2:] / a[1:-1]))
    return SigmaSchedule(s)
