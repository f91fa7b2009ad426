"""Reconstruction error, PSNR and the per-step noise/embedding similarity measures."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import Trajectory
from .errors import ConfigurationError, DomainError
from .inversion import NullTextSchedule
from .oracle import OracleDataset, predict_noise
from .schedule import NoiseSchedule


@dataclass
class MetricReport:
    mse: float
    psnr_db: float
    l1_noise_gap: list[float] = field(default_factory=list)
    cosine_sim: list[float] = field(default_factory=list)


def mse(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DomainError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def psnr(a, b, data_range: float) -> float:
    """10 log10(range^2 / mse); +inf for identical inputs."""
    if not data_range > 0:
        raise ConfigurationError(f"data_range must be positive, got {data_range}")
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    return float(10.0 * np.log10(data_range**2 / err))


def format_float(x: float) -> str:
    """CSV rendering: shortest round-trip repr, with 'inf'/'-inf'/'nan' literals."""
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(float(x))


def noise_gap_l1(traj: Trajectory, opt_nulls: NullTextSchedule, cond, other,
                 dataset: OracleDataset, schedule: NoiseSchedule) -> dict[str, list[float]]:
    """Per-step L1 distances between noise predictions along the null-text trajectory.

    Steps run from T down to the first positive plan index. Returns three
    series keyed ``null_vs_cond``, ``null_vs_other`` and ``cond_vs_other``.
    """
    out = {"null_vs_cond": [], "null_vs_other": [], "cond_vs_other": []}
    for t, _ in traj.plan.pairs_descending():
        if t not in traj or t not in opt_nulls.embeddings:
            raise DomainError(f"missing trajectory latent or null embedding at step {t}")
        z = traj[t]
        e_null = predict_noise(dataset, z, t, opt_nulls.embeddings[t], schedule).epsilon
        e_cond = predict_noise(dataset, z, t, cond, schedule).epsilon
        e_other = predict_noise(dataset, z, t, other, schedule).epsilon
        out["null_vs_cond"].append(float(np.abs(e_null - e_cond).sum()))
        out["null_vs_other"].append(float(np.abs(e_null - e_other).sum()))
        out["cond_vs_other"].append(float(np.abs(e_cond - e_other).sum()))
    return out


def _cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(u @ v / (nu * nv))


def centered_cosine(opt_nulls: NullTextSchedule, cond, pool) -> list[float]:
    """Cosine between each optimized null embedding and ``cond`` after subtracting the pool mean.

    Ordered from step T downward. A vector that centers to zero scores 0.
    """
    pool = [np.asarray(p, dtype=np.float64) for p in pool]
    if not pool:
        raise ConfigurationError("centering pool must be non-empty")
    center = np.mean(pool, axis=0)
    c = np.asarray(cond, dtype=np.float64) - center
    return [_cosine(opt_nulls.embeddings[t] - center, c)
            for t in sorted(opt_nulls.embeddings, reverse=True)]


def write_long_csv(path: str | Path, rows, header=("trial", "step", "series", "value")) -> None:
    """Write (…, step, series, value) rows in long format."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_float(v) if isinstance(v, float) else v for v in row])
