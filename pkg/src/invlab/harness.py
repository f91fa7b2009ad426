"""Seeded experiment runners that write CSV tables.

Every trial draws its own generator from ``(seed, trial)``, so results do not
depend on which other trials or methods ran. All floats are written with
``repr``, which makes reruns byte-identical apart from wall-clock columns.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import bootstrap

from .config import DatasetSpec, ExperimentConfig
from .dynamics import (
    Trajectory,
    ddim_inverse_step,
    ddim_step,
    forward_noise_paths,
    inversion_noise_step,
    run_reverse,
)
from .editing import EditMethod, EditSpec, SDEditMode, edit_condition_swap, edit_sdedit
from .errors import DomainError, OptimizerError
from .inversion import invert, invert_null_text, null_text_error_residual
from .metrics import centered_cosine, format_float, mse, noise_gap_l1, psnr
from .oracle import OracleDataset, cfg_combine, one_hot, predict_noise
from .schedule import NoiseSchedule, build_schedule, ddpm_sigmas, make_step_plan

log = logging.getLogger(__name__)

RUN_HEADER = ("method", "steps", "w", "trial", "seed", "mse", "psnr_db", "model_calls", "wall_ms")
ERROR_HEADER = ("command", "method", "steps", "w", "trial", "error", "message")
TRIAL_FAILURES = (DomainError, OptimizerError, FloatingPointError)


@dataclass(frozen=True)
class RunRecord:
    method: str
    steps: int
    w: float
    trial: int
    seed: int
    mse: float
    psnr_db: float
    model_calls: int
    wall_ms: float

    def row(self) -> list:
        return [self.method, self.steps, format_float(self.w), self.trial, self.seed,
                format_float(self.mse), format_float(self.psnr_db), self.model_calls,
                f"{self.wall_ms:.3f}"]


@dataclass(frozen=True)
class TrialFailure:
    command: str
    method: str
    steps: int
    w: float
    trial: int
    error: str
    message: str

    def row(self) -> list:
        return [self.command, self.method, self.steps, format_float(self.w), self.trial,
                self.error, self.message]


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _out_dir(config: ExperimentConfig, out: str | Path | None) -> Path:
    path = Path(out if out is not None else config.out)
    path.mkdir(parents=True, exist_ok=True)
    return path


# Data ----------------------------------------------------------------------

def gen_dataset(spec: DatasetSpec, path: str | Path | None = None) -> OracleDataset:
    """Gaussian clusters, one per class, from ``spec.seed``; optionally saved as text."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    means = spec.cluster_means()
    spreads = spec.cluster_spreads()
    n = spec.points_per_class
    points = np.concatenate(
        [means[k] + spreads[k] * rng.standard_normal((n, spec.dim)) for k in range(spec.classes)]
    )
    labels = np.repeat(np.arange(spec.classes), n)
    dataset = OracleDataset(points, labels, spec.classes)
    if path is not None:
        dataset.save(path)
    return dataset


@dataclass(frozen=True)
class Benchmark:
    """Everything a trial needs: oracle data, schedule and the cluster model for test inputs."""

    dataset: OracleDataset
    schedule: NoiseSchedule
    means: np.ndarray
    spreads: np.ndarray

    @classmethod
    def from_config(cls, config: ExperimentConfig) -> "Benchmark":
        spec = config.dataset
        schedule = build_schedule(config.schedule.T, config.schedule.beta_start,
                                  config.schedule.beta_end)
        if spec.path is None:
            return cls(gen_dataset(spec), schedule, spec.cluster_means(), spec.cluster_spreads())
        dataset = OracleDataset.load(spec.path, spec.classes)
        spreads = np.array([dataset.points[dataset.labels == k].std()
                            for k in range(dataset.K)])
        return cls(dataset, schedule, dataset.class_means(), spreads)

    def draw(self, seed: int, trial: int) -> tuple[int, np.ndarray]:
        """Class and a fresh held-out latent for one trial."""
        rng = np.random.default_rng([seed, trial])
        k = int(rng.integers(self.dataset.K))
        return k, self.means[k] + self.spreads[k] * rng.standard_normal(self.dataset.D)


def _failure(command, method, steps, w, trial, exc) -> TrialFailure:
    log.warning("%s %s N=%d w=%g trial %d failed: %s", command, method, steps, w, trial, exc)
    return TrialFailure(command, str(method), steps, w, trial, type(exc).__name__, str(exc))


# compare -------------------------------------------------------------------

def run_compare(config: ExperimentConfig, out: str | Path | None = None):
    """Run every (N, w, trial, method) cell; write runs.csv, summary.csv and errors.csv.

    Returns (records, failures).
    """
    out = _out_dir(config, out)
    bench = Benchmark.from_config(config)
    data_range = bench.dataset.data_range()
    records, failures = [], []
    for N in config.steps:
        plan = make_step_plan(bench.schedule, N)
        for w in config.w:
            for trial in range(config.trials):
                k, z0 = bench.draw(config.seed, trial)
                cond = one_hot(k, bench.dataset.K)
                for method in config.methods:
                    try:
                        res = invert(method, z0, cond, w, plan, bench.dataset, bench.schedule,
                                     config.optimizer)
                    except TRIAL_FAILURES as exc:
                        failures.append(_failure("compare", method.value, N, w, trial, exc))
                        continue
                    records.append(RunRecord(
                        method.value, N, float(w), trial, config.seed,
                        mse(res.reconstruction, z0), psnr(res.reconstruction, z0, data_range),
                        res.model_calls, res.wall_time * 1e3,
                    ))
            log.info("compare N=%d w=%g done", N, w)
    _write_csv(out / "runs.csv", RUN_HEADER, (r.row() for r in records))
    _write_csv(out / "summary.csv", SUMMARY_HEADER, summarize(records, config.seed))
    _write_csv(out / "errors.csv", ERROR_HEADER, (f.row() for f in failures))
    return records, failures


SUMMARY_HEADER = ("method", "steps", "w", "n", "mse_median", "mse_ci_low", "mse_ci_high",
                  "psnr_db_median", "model_calls_median")


def median_ci(values, seed: int, confidence: float = 0.95, resamples: int = 2000):
    """Median with a percentile-bootstrap interval; degenerate samples give a zero-width one."""
    x = np.asarray(values, dtype=np.float64)
    med = float(np.median(x))
    if x.size < 2 or np.all(x == x[0]):
        return med, med, med
    res = bootstrap((x,), np.median, confidence_level=confidence, n_resamples=resamples,
                    method="percentile", random_state=np.random.default_rng(seed))
    return med, float(res.confidence_interval.low), float(res.confidence_interval.high)


def summarize(records, seed: int = 0) -> list[list]:
    cells: dict[tuple, list[RunRecord]] = {}
    for r in records:
        cells.setdefault((r.method, r.steps, r.w), []).append(r)
    rows = []
    for (method, steps, w), group in cells.items():
        med, lo, hi = median_ci([r.mse for r in group], seed)
        rows.append([
            method, steps, format_float(w), len(group),
            format_float(med), format_float(lo), format_float(hi),
            format_float(float(np.median([r.psnr_db for r in group]))),
            format_float(float(np.median([r.model_calls for r in group]))),
        ])
    return rows


# propcheck -----------------------------------------------------------------

PROPCHECK_HEADER = ("property", "parameter", "measured", "expected", "tolerance", "passed")


def gap_formula(schedule: NoiseSchedule, sigmas, t: int, m: int, D: int) -> float:
    """Expected squared distance between normalized noises m steps apart."""
    a = schedule.alphas
    s2 = sigmas.sigmas**2
    steps = np.arange(t, t - m, -1)
    keep = np.prod(np.sqrt(1.0 - s2[steps] / (1.0 - a[steps - 1])))
    return float(2.0 * D * (1.0 - keep))


def gap_samples(D: int, schedule, sigmas, pairs, runs: int, seed: int) -> np.ndarray:
    """(runs, len(pairs)) squared distances ||d_{t-m} - d_t||^2 from seeded forward runs."""
    d = forward_noise_paths(D, schedule, sigmas, [[seed, r] for r in range(runs)])
    return np.stack([np.sum((d[:, t - m] - d[:, t]) ** 2, axis=1) for t, m in pairs], axis=1)


def _row(prop, param, measured, expected, tol, passed) -> list:
    return [prop, param, format_float(float(measured)), format_float(float(expected)),
            format_float(float(tol)), int(bool(passed))]


def propcheck_gap_rows(config: ExperimentConfig, bench: Benchmark) -> list[list]:
    spec = config.propcheck
    schedule = bench.schedule
    base = ddpm_sigmas(schedule)
    pairs = [(t, m) for t in spec.t_values for m in spec.gaps if t - m >= 1]
    D = bench.dataset.D
    rows, means = [], {}
    for scale in spec.sigma_scales:
        sig = base.scaled(scale)
        samples = gap_samples(D, schedule, sig, pairs, spec.runs, config.seed)
        for j, (t, m) in enumerate(pairs):
            emp = samples[:, j].mean()
            se = samples[:, j].std(ddof=1) / np.sqrt(spec.runs)
            expected = gap_formula(schedule, sig, t, m, D)
            tol = 3.0 * se
            means[(t, m, scale)] = emp
            # zero-noise runs keep d fixed up to rounding
            passed = abs(emp - expected) <= max(tol, 1e-20)
            rows.append(_row("noise_gap", f"t={t};m={m};scale={scale:g}", emp, expected, tol,
                             passed))
    order = sorted(spec.sigma_scales, reverse=True)
    for t, m in pairs:
        seq = [means[(t, m, s)] for s in order]
        violations = sum(b >= a for a, b in zip(seq, seq[1:]))
        rows.append(_row("noise_gap_monotone", f"t={t};m={m}", violations, 0, 0,
                         violations == 0))
    return rows


def propcheck_identity_rows(config: ExperimentConfig, bench: Benchmark) -> list[list]:
    ds, schedule = bench.dataset, bench.schedule
    n = config.propcheck.identity_samples
    rng = np.random.default_rng([config.seed, 1])
    T = schedule.T
    rows = []

    mismatches = 0
    for _ in range(n):
        z = rng.normal(0.0, 2.0, ds.D)
        t = int(rng.integers(1, T + 1))
        w = float(rng.uniform(0.0, 10.0))
        eps = predict_noise(ds, z, t, one_hot(int(rng.integers(ds.K)), ds.K), schedule).epsilon
        mismatches += not np.array_equal(cfg_combine(eps, eps, w), eps)
    rows.append(_row("cfg_equal_inputs", f"samples={n}", mismatches, 0, 0, mismatches == 0))

    plan = make_step_plan(schedule, min(config.steps))
    mismatches = 0
    for trial in range(10):
        k, _ = bench.draw(config.seed, trial)
        cond = one_hot(k, ds.K)
        z_T = rng.standard_normal(ds.D)
        ref = run_reverse(z_T, plan, cond, cond, 1.0, ds, schedule).as_array()
        for w in (3.0, 7.5):
            other = run_reverse(z_T, plan, cond, cond, w, ds, schedule).as_array()
            mismatches += not np.array_equal(ref, other)
    rows.append(_row("reverse_w_invariant", f"N={plan.count};w=1,3,7.5", mismatches, 0, 0,
                     mismatches == 0))

    worst = 0.0
    for _ in range(n):
        t = int(rng.integers(1, T + 1))
        t_prev = int(rng.integers(0, t))
        z = rng.normal(0.0, 2.0, ds.D)
        eps = rng.standard_normal(ds.D)
        back = ddim_step(ddim_inverse_step(z, t_prev, t, eps, schedule), t, t_prev, eps, schedule)
        worst = max(worst, float(np.max(np.abs(back - z)) / np.max(np.abs(z))))
    rows.append(_row("ddim_roundtrip", f"samples={n}", worst, 0, 1e-12, worst < 1e-12))

    for w in (0.0, 2.0, 7.5):
        worst = max_null_text_error_residual(bench, plan, w, n, rng)
        rows.append(_row("null_text_error_identity", f"w={w:g};samples={n}", worst, 0, 1e-10,
                         worst < 1e-10))
    return rows


def max_null_text_error_residual(bench: Benchmark, plan, w: float, n: int, rng) -> float:
    """Largest one-step identity residual over random consistent (z*_{t-1}, z*_t) pairs."""
    ds, schedule = bench.dataset, bench.schedule
    worst = 0.0
    for _ in range(n):
        pos = int(rng.integers(1, plan.count + 1))
        t, t_prev = plan.indices[pos], plan.indices[pos - 1]
        k = int(rng.integers(ds.K))
        cond = one_hot(k, ds.K)
        z_prev = bench.means[k] + rng.normal(0.0, 1.0, ds.D)
        eps = predict_noise(ds, z_prev, inversion_noise_step(t_prev), cond, schedule).epsilon
        z_star = Trajectory(plan, {t_prev: z_prev,
                                   t: ddim_inverse_step(z_prev, t_prev, t, eps, schedule)})
        null = rng.dirichlet(np.ones(ds.K))
        worst = max(worst, null_text_error_residual(z_star, cond, null, w, t, ds, schedule))
    return worst


def run_propcheck(config: ExperimentConfig, out: str | Path | None = None) -> list[list]:
    """Check the closed-form identities and the noise-gap formula; write propcheck.csv."""
    out = _out_dir(config, out)
    bench = Benchmark.from_config(config)
    rows = propcheck_identity_rows(config, bench)
    log.info("propcheck identities done")
    rows += propcheck_gap_rows(config, bench)
    _write_csv(out / "propcheck.csv", PROPCHECK_HEADER, rows)
    return rows


# similarity ----------------------------------------------------------------

SIMILARITY_HEADER = ("trial", "steps", "w", "step", "series", "value")


def similarity_trial(bench: Benchmark, plan, w: float, k: int, z0, config) -> dict[str, list]:
    """Per-step noise gaps and centered cosines for one null-text inversion."""
    K = bench.dataset.K
    cond = one_hot(k, K)
    other = one_hot((k + 1) % K, K)
    res = invert_null_text(z0, cond, w, plan, bench.dataset, bench.schedule, config.optimizer)
    series = {f"l1_{name}": vals for name, vals in noise_gap_l1(
        res.forward_trajectory, res.null_schedule, cond, other, bench.dataset, bench.schedule
    ).items()}
    pool = [one_hot(j, K) for j in range(K)]
    series["cos_null_vs_cond"] = centered_cosine(res.null_schedule, cond, pool)
    series["cos_null_vs_other"] = centered_cosine(res.null_schedule, other, pool)
    return series


def run_similarity(config: ExperimentConfig, out: str | Path | None = None):
    """Null-text inversion per trial with per-step similarity series; writes similarity.csv.

    Returns (rows, failures).
    """
    out = _out_dir(config, out)
    bench = Benchmark.from_config(config)
    rows, failures = [], []
    for N in config.steps:
        plan = make_step_plan(bench.schedule, N)
        steps = [t for t, _ in plan.pairs_descending()]
        for w in config.w:
            for trial in range(config.trials):
                k, z0 = bench.draw(config.seed, trial)
                try:
                    series = similarity_trial(bench, plan, w, k, z0, config)
                except TRIAL_FAILURES as exc:
                    failures.append(_failure("similarity", "null_text", N, w, trial, exc))
                    continue
                for name, values in series.items():
                    rows.extend([trial, N, format_float(float(w)), t, name, format_float(v)]
                                for t, v in zip(steps, values))
    _write_csv(out / "similarity.csv", SIMILARITY_HEADER, rows)
    _write_csv(out / "errors.csv", ERROR_HEADER, (f.row() for f in failures))
    return rows, failures


# edit ----------------------------------------------------------------------

EDIT_HEADER = ("method", "mode", "steps", "w", "trial", "seed", "t0_ratio", "source_class",
               "target_class", "cluster_distance_original", "cluster_distance_target")


def run_edit(config: ExperimentConfig, out: str | Path | None = None):
    """Condition-swap and SDEdit edits toward another class; writes edits.csv.

    Returns (rows, failures).
    """
    out = _out_dir(config, out)
    bench = Benchmark.from_config(config)
    K = bench.dataset.K
    t0 = config.edit.t0_ratio
    rows, failures = [], []
    for N in config.steps:
        plan = make_step_plan(bench.schedule, N)
        for w in config.w:
            for trial in range(config.trials):
                k, z0 = bench.draw(config.seed, trial)
                target = (k + config.edit.target_offset) % K
                src, dst = one_hot(k, K), one_hot(target, K)
                jobs = [("condition_swap", "-", 1.0, lambda: edit_condition_swap(
                    z0, EditSpec(src, dst, EditMethod.CONDITION_SWAP, w=w),
                    plan, bench.dataset, bench.schedule))]
                for mode in SDEditMode:
                    jobs.append(("sdedit", mode.value, t0, lambda mode=mode: edit_sdedit(
                        z0, EditSpec(src, dst, EditMethod.SDEDIT, t0, w), plan, bench.dataset,
                        bench.schedule, mode, seed=[config.seed, trial])))
                for method, mode, ratio, job in jobs:
                    try:
                        z = job()
                    except TRIAL_FAILURES as exc:
                        failures.append(_failure("edit", method, N, w, trial, exc))
                        continue
                    rows.append([
                        method, mode, N, format_float(float(w)), trial, config.seed,
                        format_float(ratio), k, target,
                        format_float(float(np.linalg.norm(z - bench.means[k]))),
                        format_float(float(np.linalg.norm(z - bench.means[target]))),
                    ])
    _write_csv(out / "edits.csv", EDIT_HEADER, rows)
    _write_csv(out / "errors.csv", ERROR_HEADER, (f.row() for f in failures))
    return rows, failures
