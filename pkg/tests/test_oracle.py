import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from invlab.errors import ConfigurationError, DomainError
from invlab.oracle import (
    OracleDataset,
    cfg_combine,
    check_embedding,
    one_hot,
    predict_noise,
    predict_noise_grad,
    project_simplex,
    uniform,
)


def brute_force_noise(points, labels, z, t, e, alphas):
    """Direct double loop over points and coordinates, no vectorization or log tricks."""
    a = alphas[t]
    num = [0.0] * len(z)
    den = 0.0
    for x, k in zip(points, labels):
        d = [(z[j] - math.sqrt(a) * x[j]) / math.sqrt(1 - a) for j in range(len(z))]
        g = e[k] * math.exp(-0.5 * sum(v * v for v in d))
        den += g
        for j in range(len(z)):
            num[j] += g * d[j]
    return np.array(num) / den


def test_single_point_is_exact_direction(schedule):
    ds = OracleDataset(np.array([[0.3, -1.2]]), np.array([0]), 1)
    z = np.array([1.0, 2.0])
    a = schedule.alphas[200]
    expected = (z - np.sqrt(a) * ds.points[0]) / np.sqrt(1 - a)
    np.testing.assert_array_equal(predict_noise(ds, z, 200, [1.0], schedule).epsilon, expected)


def test_symmetric_pair_cancels(schedule):
    ds = OracleDataset(np.array([[-2.0], [2.0]]), np.array([0, 0]), 1)
    assert predict_noise(ds, np.zeros(1), 300, [1.0], schedule).epsilon[0] == pytest.approx(0, abs=1e-15)


@pytest.mark.parametrize("t", [1, 37, 500, 1000])
@pytest.mark.parametrize("e", [(0.5, 0.5), (1.0, 0.0), (0.2, 0.8)])
def test_matches_double_loop(tiny, schedule, t, e):
    rng = np.random.default_rng(t)
    a = schedule.alphas[t]
    z = np.sqrt(a) * tiny.points[3] + np.sqrt(1 - a) * rng.normal(size=2)
    got = predict_noise(tiny, z, t, np.array(e), schedule).epsilon
    want = brute_force_noise(tiny.points.tolist(), tiny.labels.tolist(), z.tolist(), t, e,
                             schedule.alphas)
    np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-14)


def test_one_hot_equals_class_subset(tiny, schedule):
    z = np.array([0.4, -0.1])
    for k in range(2):
        full = predict_noise(tiny, z, 120, one_hot(k, 2), schedule).epsilon
        sub = predict_noise(tiny.subset(k), z, 120, [1.0], schedule).epsilon
        np.testing.assert_allclose(full, sub, rtol=1e-13, atol=1e-15)


def test_class_permutation_equivariance(tiny, schedule):
    swapped = OracleDataset(tiny.points, 1 - tiny.labels, 2)
    z = np.array([-0.3, 0.8])
    e = np.array([0.3, 0.7])
    np.testing.assert_allclose(predict_noise(tiny, z, 50, e, schedule).epsilon,
                               predict_noise(swapped, z, 50, e[::-1], schedule).epsilon,
                               rtol=1e-13)


def test_log_partition_is_log_normalizer(tiny, schedule):
    t, z, e = 400, np.array([0.2, 0.1]), np.array([0.25, 0.75])
    a = schedule.alphas[t]
    d = (z - np.sqrt(a) * tiny.points) / np.sqrt(1 - a)
    prior = e[tiny.labels] / e[tiny.labels].sum()
    direct = np.log(np.sum(prior * np.exp(-0.5 * (d**2).sum(1)) / (2 * np.pi)))
    assert predict_noise(tiny, z, t, e, schedule).log_partition == pytest.approx(direct, rel=1e-12)


@pytest.mark.parametrize("t", [0, 1001])
def test_step_out_of_domain(tiny, schedule, t):
    with pytest.raises(DomainError):
        predict_noise(tiny, np.zeros(2), t, uniform(2), schedule)


def test_latent_shape_checked(tiny, schedule):
    with pytest.raises(DomainError):
        predict_noise(tiny, np.zeros(3), 5, uniform(2), schedule)


@settings(max_examples=60, deadline=None)
@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.sampled_from([1, 2, 500, 1000]),
       st.floats(0.0, 1.0))
def test_far_latents_stay_finite(x, y, t, p):
    from invlab.schedule import build_schedule
    rng = np.random.default_rng(0)
    ds = OracleDataset(rng.normal(size=(20, 2)), np.arange(20) % 2, 2)
    sched = build_schedule()
    e = np.array([p, 1 - p])
    pred, jac = predict_noise_grad(ds, np.array([x, y]), t, e, sched)
    assert np.all(np.isfinite(pred.epsilon)) and np.all(np.isfinite(jac))
    assert np.isfinite(predict_noise(ds, np.array([x, y]), t, e, sched).log_partition)


def central_difference(ds, z, t, e, schedule, h=1e-6):
    cols = []
    for k in range(ds.K):
        step = np.zeros(ds.K)
        step[k] = h
        hi = predict_noise(ds, z, t, e + step, schedule).epsilon
        lo = predict_noise(ds, z, t, e - step, schedule).epsilon
        cols.append((hi - lo) / (2 * h))
    return np.stack(cols, axis=1)


def gradient_error(ds, z, t, e, schedule):
    jac = predict_noise_grad(ds, z, t, e, schedule)[1]
    fd = central_difference(ds, z, t, e, schedule)
    return np.max(np.abs(jac - fd)) / max(np.max(np.abs(fd)), 1e-5)


@pytest.mark.parametrize("t", [1, 500, 1000])
def test_gradient_matches_finite_differences(two_class, schedule, t):
    rng = np.random.default_rng(t)
    for _ in range(5):
        x = two_class.points[rng.integers(two_class.M)]
        z = np.sqrt(schedule.alphas[t]) * x + np.sqrt(1 - schedule.alphas[t]) * rng.normal(size=2)
        e = rng.dirichlet([2.0, 2.0])
        assert gradient_error(two_class, z, t, e, schedule) < 1e-4


def test_gradient_consistent_with_prediction(two_class, schedule):
    z, e = np.array([0.3, 0.2]), np.array([0.4, 0.6])
    pred, _ = predict_noise_grad(two_class, z, 700, e, schedule)
    np.testing.assert_allclose(pred.epsilon, predict_noise(two_class, z, 700, e, schedule).epsilon,
                               rtol=1e-12)


def test_gradient_zero_for_single_class(schedule):
    ds = OracleDataset(np.random.default_rng(0).normal(size=(5, 2)), np.zeros(5, int), 1)
    np.testing.assert_array_equal(predict_noise_grad(ds, np.ones(2), 10, [1.0], schedule)[1], 0.0)


def test_gradient_zero_for_duplicated_classes(schedule):
    pts = np.random.default_rng(1).normal(size=(6, 2))
    ds = OracleDataset(np.concatenate([pts, pts]), np.repeat([0, 1], 6), 2)
    jac = predict_noise_grad(ds, np.array([0.5, -0.5]), 300, np.array([0.3, 0.7]), schedule)[1]
    np.testing.assert_allclose(jac, 0.0, atol=1e-14)


def test_cfg_examples():
    assert cfg_combine([2.0], [0.0], 1.0).tolist() == [2.0]
    assert cfg_combine([2.0], [0.0], 3.0).tolist() == [6.0]
    with pytest.raises(DomainError):
        cfg_combine([1.0, 2.0], [1.0], 2.0)


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=6), st.floats(0, 100))
def test_cfg_equal_inputs_bitwise(v, w):
    v = np.array(v)
    assert np.array_equal(cfg_combine(v, v, w), v)


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=8))
def test_projection_lands_on_simplex(v):
    p = project_simplex(np.array(v))
    check_embedding(p, len(v))
    assert np.all(p >= 0)


def test_projection_of_zero_is_uniform():
    np.testing.assert_array_equal(project_simplex(np.array([-1.0, 0.0, -2.0])), uniform(3))


def test_embedding_checks():
    with pytest.raises(DomainError):
        check_embedding([0.5, 0.6], 2)
    with pytest.raises(DomainError):
        check_embedding([1.0], 2)
    with pytest.raises(DomainError):
        predict_noise(OracleDataset([[0.0]], [0], 1), [0.0], 3, [0.0],
                      __import__("invlab").build_schedule())


@pytest.mark.parametrize("points,labels,K", [
    (np.zeros((0, 2)), np.zeros(0, int), 1),
    (np.zeros((2, 2)), np.array([0, 2]), 2),
    (np.zeros((2, 2)), np.array([0, 0]), 2),
    (np.array([[np.inf, 0.0]]), np.array([0]), 1),
])
def test_dataset_validation(points, labels, K):
    with pytest.raises(ConfigurationError):
        OracleDataset(points, labels, K)


def test_dataset_text_roundtrip(tmp_path, tiny):
    path = tmp_path / "data.txt"
    tiny.save(path)
    back = OracleDataset.load(path)
    np.testing.assert_array_equal(back.points, tiny.points)
    np.testing.assert_array_equal(back.labels, tiny.labels)
    first = path.read_text().splitlines()[0].split()
    assert len(first) == 3 and first[-1] in {"0", "1"}
