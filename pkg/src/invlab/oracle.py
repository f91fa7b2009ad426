"""Exact posterior-mean noise predictor over a finite labeled dataset.

The predictor stands in for a trained conditional network. For a latent
``z`` at step ``t`` each data point ``x_i`` implies the noise direction
``d_i = (z - sqrt(a_t) x_i) / sqrt(1 - a_t)``; the prediction is the average
of the ``d_i`` under the posterior over points, with prior weight
``e[label_i]`` taken from the conditioning embedding.

Embeddings are points on the K-class probability simplex: a one-hot vector
is a prompt, the uniform vector is the null text.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigurationError, DomainError
from .schedule import NoiseSchedule

SIMPLEX_TOL = 1e-12
# exp() argument cap for Jacobian scale factors; keeps derivatives finite
# when a zero-weight class dominates the likelihood.
_MAX_LOG_SCALE = 300.0


@dataclass(frozen=True)
class OracleDataset:
    points: np.ndarray  # (M, D)
    labels: np.ndarray  # (M,) ints in 0..K-1
    K: int

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64, ndmin=2)
        lab = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if pts.shape[0] == 0 or pts.shape[0] != lab.size:
            raise ConfigurationError("dataset needs >= 1 point and one label per point")
        if not np.all(np.isfinite(pts)):
            raise ConfigurationError("dataset points must be finite")
        if self.K < 1 or lab.min() < 0 or lab.max() >= self.K:
            raise ConfigurationError(f"labels must lie in 0..{self.K - 1}")
        counts = np.bincount(lab, minlength=self.K)
        if np.any(counts == 0):
            raise ConfigurationError(f"every class needs a point, counts={counts.tolist()}")
        pts.setflags(write=False)
        lab.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "labels", lab)
        # class-contiguous copies for segment reductions
        order = np.argsort(lab, kind="stable")
        object.__setattr__(self, "_sorted_points", pts[order])
        object.__setattr__(self, "_sorted_labels", lab[order])
        object.__setattr__(self, "_starts", np.concatenate([[0], np.cumsum(counts)[:-1]]))
        object.__setattr__(self, "counts", counts)

    @property
    def D(self) -> int:
        return self.points.shape[1]

    @property
    def M(self) -> int:
        return self.points.shape[0]

    def subset(self, k: int) -> "OracleDataset":
        """Points of class ``k`` relabeled as a single-class dataset."""
        pts = self.points[self.labels == k]
        return OracleDataset(pts, np.zeros(len(pts), dtype=np.int64), 1)

    def class_means(self) -> np.ndarray:
        return np.stack([self.points[self.labels == k].mean(axis=0) for k in range(self.K)])

    def data_range(self) -> float:
        """Max minus min over all coordinates."""
        return float(self.points.max() - self.points.min())

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text())

    def to_text(self) -> str:
        lines = [
            " ".join(f"{v:.17g}" for v in p) + f" {int(k)}"
            for p, k in zip(self.points, self.labels)
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def load(cls, path: str | Path, K: int | None = None) -> "OracleDataset":
        rows = [line.split() for line in Path(path).read_text().splitlines() if line.strip()]
        if not rows:
            raise ConfigurationError(f"{path}: empty dataset file")
        if len({len(r) for r in rows}) != 1:
            raise ConfigurationError(f"{path}: ragged rows")
        pts = np.array([[float(v) for v in r[:-1]] for r in rows])
        lab = np.array([int(r[-1]) for r in rows])
        return cls(pts, lab, int(lab.max()) + 1 if K is None else K)


# Embeddings ---------------------------------------------------------------

def one_hot(k: int, K: int) -> np.ndarray:
    e = np.zeros(K)
    e[k] = 1.0
    return e


def uniform(K: int) -> np.ndarray:
    return np.full(K, 1.0 / K)


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Clamp negatives to zero and renormalize; all-zero input maps to uniform."""
    v = np.maximum(np.asarray(v, dtype=np.float64), 0.0)
    s = v.sum()
    if not np.isfinite(s) or s <= 0.0:
        return uniform(v.size)
    return v / s


def check_embedding(e, K: int) -> np.ndarray:
    e = np.asarray(e, dtype=np.float64)
    if e.shape != (K,):
        raise DomainError(f"embedding must have shape ({K},), got {e.shape}")
    if np.any(e < -SIMPLEX_TOL) or abs(e.sum() - 1.0) > SIMPLEX_TOL * K:
        raise DomainError(f"embedding is not on the simplex: {e}")
    return e


# Noise prediction ----------------------------------------------------------

@dataclass(frozen=True)
class NoisePrediction:
    epsilon: np.ndarray
    log_partition: float  # log of the posterior normalizer, Gaussian constant included


def _check_weights(e, K: int) -> np.ndarray:
    e = np.asarray(e, dtype=np.float64)
    if e.shape != (K,) or not np.all(np.isfinite(e)) or np.any(e < 0.0) or e.sum() <= 0.0:
        raise DomainError(f"conditioning weights must be {K} finite non-negative values, got {e}")
    return e


def _directions(dataset: OracleDataset, z, t: int, schedule: NoiseSchedule, points):
    if not (1 <= t <= schedule.T):
        raise DomainError(f"noise is defined only for 1 <= t <= {schedule.T}, got t={t}")
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (dataset.D,):
        raise DomainError(f"latent must have shape ({dataset.D},), got {z.shape}")
    a = schedule.alphas[t]
    d = (z - np.sqrt(a) * points) / np.sqrt(1.0 - a)
    return d, -0.5 * np.einsum("ij,ij->i", d, d)


def _log_prior_norm(dataset: OracleDataset, e: np.ndarray) -> float:
    # per-point prior is e[label] / sum_j e[label_j]
    return float(np.log(e @ dataset.counts)) + 0.5 * dataset.D * np.log(2.0 * np.pi)


def predict_noise(dataset: OracleDataset, z, t: int, e, schedule: NoiseSchedule) -> NoisePrediction:
    e = _check_weights(e, dataset.K)
    d, log_g = _directions(dataset, z, t, schedule, dataset.points)
    with np.errstate(divide="ignore"):
        log_w = log_g + np.log(e)[dataset.labels]
    top = log_w.max()
    w = np.exp(log_w - top)
    total = w.sum()
    eps = (w @ d) / total
    return NoisePrediction(eps, float(top + np.log(total)) - _log_prior_norm(dataset, e))


def predict_noise_grad(dataset: OracleDataset, z, t: int, e, schedule: NoiseSchedule):
    """Prediction plus the (D, K) Jacobian of epsilon with respect to ``e``.

    With class sums G_k = sum_{i in k} g_i and class means m_k of the
    directions, eps = sum_k e_k G_k m_k / Z and Z = sum_k e_k G_k, so
    d eps / d e_k = G_k (m_k - eps) / Z. Everything is carried per class in
    log space so that classes with zero weight still get a derivative.
    """
    e = _check_weights(e, dataset.K)
    d, log_g = _directions(dataset, z, t, schedule, dataset._sorted_points)
    starts = dataset._starts
    top = np.maximum.reduceat(log_g, starts)
    g = np.exp(log_g - top[dataset._sorted_labels])
    s = np.add.reduceat(g, starts)
    means = np.add.reduceat(g[:, None] * d, starts, axis=0) / s[:, None]
    log_G = top + np.log(s)
    with np.errstate(divide="ignore"):
        a = np.log(e) + log_G
    log_Z = logsumexp(a)
    eps = np.exp(a - log_Z) @ means
    scale = np.exp(np.minimum(log_G - log_Z, _MAX_LOG_SCALE))
    jac = (means - eps).T * scale
    return NoisePrediction(eps, float(log_Z) - _log_prior_norm(dataset, e)), jac


def cfg_combine(eps_cond, eps_uncond, w: float) -> np.ndarray:
    """Classifier-free guidance: eps_uncond + w (eps_cond - eps_uncond)."""
    eps_cond = np.asarray(eps_cond, dtype=np.float64)
    eps_uncond = np.asarray(eps_uncond, dtype=np.float64)
    if eps_cond.shape != eps_uncond.shape:
        raise DomainError(f"shape mismatch {eps_cond.shape} vs {eps_uncond.shape}")
    return eps_uncond + w * (eps_cond - eps_uncond)
