import numpy as np
import pytest

from invlab.dynamics import (
    Trajectory,
    ddim_inverse_step,
    inversion_noise_step,
    run_forward_inversion,
    run_reverse,
)
from invlab.errors import ConfigurationError, DomainError, OptimizerError
from invlab.inversion import (
    Method,
    NullTextSchedule,
    OptimizerConfig,
    invert,
    invert_ddim_cfg,
    invert_negative_prompt,
    invert_null_text,
    optimize_null_text,
    null_text_error_residual,
)
from invlab.oracle import OracleDataset, check_embedding, one_hot, predict_noise, uniform
from invlab.schedule import make_step_plan


@pytest.fixture(scope="module")
def plan20(schedule):
    return make_step_plan(schedule, 20)


@pytest.fixture(scope="module")
def single_class():
    return OracleDataset(np.random.default_rng(2).normal(size=(30, 2)), np.zeros(30, int), 1)


def test_optimizer_schedules():
    opt = OptimizerConfig()
    assert opt.learning_rate(49, 50) == pytest.approx(5e-3)
    assert opt.learning_rate(0, 50) == pytest.approx(5e-3 + 49e-4)
    assert opt.threshold(0) == pytest.approx(1e-5)
    assert opt.threshold(10) == pytest.approx(2.1e-4)


@pytest.mark.parametrize("kwargs", [{"max_iters": 0}, {"lr_final": 0.0}, {"early_stop_base": -1}])
def test_optimizer_config_validated(kwargs):
    with pytest.raises(ConfigurationError):
        OptimizerConfig(**kwargs)


def test_npi_is_w_invariant(two_class, schedule, plan20):
    c = one_hot(1, 2)
    z0 = np.array([0.8, 0.3])
    ref = invert_negative_prompt(z0, c, 1.0, plan20, two_class, schedule)
    for w in (0.0, 3.0, 7.5):
        other = invert_negative_prompt(z0, c, w, plan20, two_class, schedule)
        np.testing.assert_array_equal(other.reverse_trajectory.as_array(),
                                      ref.reverse_trajectory.as_array())
    assert ref.model_calls == 3 * 20
    assert np.array_equal(ref.reconstruction, ref.reverse_trajectory[0])


def test_npi_equals_w1_reverse_with_any_null(two_class, schedule, plan20):
    c = one_hot(0, 2)
    z0 = np.array([-1.2, 0.1])
    res = invert_negative_prompt(z0, c, 7.5, plan20, two_class, schedule)
    z_T = res.forward_trajectory[1000]
    same = run_reverse(z_T, plan20, c, c, 1.0, two_class, schedule)
    np.testing.assert_array_equal(res.reverse_trajectory.as_array(), same.as_array())
    # u + 1 * (c - u) equals c only up to rounding
    other = run_reverse(z_T, plan20, c, np.array([0.3, 0.7]), 1.0, two_class, schedule)
    np.testing.assert_allclose(res.reverse_trajectory.as_array(), other.as_array(), atol=1e-12)


def test_ddim_cfg_at_w1_is_plain_roundtrip(two_class, schedule, plan20):
    c = one_hot(0, 2)
    z0 = np.array([-0.9, -0.2])
    a = invert_ddim_cfg(z0, c, 1.0, plan20, two_class, schedule)
    b = invert_negative_prompt(z0, c, 1.0, plan20, two_class, schedule)
    np.testing.assert_array_equal(a.reconstruction, b.reconstruction)
    assert np.mean((a.reconstruction - z0) ** 2) < 0.1


def test_single_class_ddim_cfg_ignores_w(single_class, schedule, plan20):
    z0 = np.array([0.2, 0.1])
    a = invert_ddim_cfg(z0, [1.0], 7.5, plan20, single_class, schedule).reconstruction
    b = invert_ddim_cfg(z0, [1.0], 1.0, plan20, single_class, schedule).reconstruction
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)


def test_nti_at_w1_never_moves(two_class, schedule, plan20):
    c = one_hot(1, 2)
    z0 = np.array([1.1, 0.4])
    res = invert_null_text(z0, c, 1.0, plan20, two_class, schedule)
    for e in res.null_schedule.embeddings.values():
        np.testing.assert_array_equal(e, uniform(2))
    plain = run_reverse(res.forward_trajectory[1000], plan20, c, uniform(2), 1.0, two_class,
                        schedule)
    np.testing.assert_array_equal(res.reverse_trajectory.as_array(), plain.as_array())


def test_nti_single_class_stops_immediately(single_class, schedule, plan20):
    res = invert_null_text(np.array([0.1, -0.3]), [1.0], 7.5, plan20, single_class, schedule)
    nulls = res.null_schedule
    assert all(v == 0 for v in nulls.iterations.values())
    assert nulls.losses == nulls.initial_losses


def test_nti_single_point_reconstructs(schedule, plan20):
    x = np.array([0.5, -0.25])
    ds = OracleDataset(x[None], [0], 1)
    res = invert_null_text(x, [1.0], 7.5, plan20, ds, schedule)
    assert np.mean((res.reconstruction - x) ** 2) < 1e-8


@pytest.fixture(scope="module")
def nti_run(two_class, schedule):
    plan = make_step_plan(schedule, 50)
    c = one_hot(0, 2)
    z0 = np.array([-1.3, 0.45])
    return z0, c, plan, invert_null_text(z0, c, 7.5, plan, two_class, schedule)


def test_nti_schedule_shape_and_simplex(nti_run):
    _, _, plan, res = nti_run
    nulls = res.null_schedule
    assert sorted(nulls.embeddings) == list(plan.indices[1:])
    for e in nulls.embeddings.values():
        check_embedding(e, 2)


def test_nti_losses_never_increase(nti_run):
    nulls = nti_run[3].null_schedule
    for t, hist in nulls.loss_history.items():
        assert all(b <= a for a, b in zip(hist, hist[1:]))
        assert nulls.losses[t] <= nulls.initial_losses[t]
        assert nulls.iterations[t] <= 10


def test_nti_trajectory_replays_through_sampler(nti_run, two_class, schedule):
    z0, c, plan, res = nti_run
    replay = run_reverse(res.forward_trajectory[1000], plan, c, res.null_schedule.embeddings, 7.5,
                         two_class, schedule)
    np.testing.assert_array_equal(replay.as_array(), res.reverse_trajectory.as_array())


def test_nti_call_accounting(nti_run):
    _, _, plan, res = nti_run
    nulls = res.null_schedule
    # forward: 1 per step; optimizer: 1 cond + one per loss evaluation; commit pair: 2
    evaluations = res.model_calls - plan.count - 3 * plan.count
    assert evaluations >= plan.count + sum(nulls.iterations.values())
    assert res.model_calls > 3 * plan.count


def test_nti_beats_ddim_cfg(nti_run, two_class, schedule):
    z0, c, plan, res = nti_run
    base = invert_ddim_cfg(z0, c, 7.5, plan, two_class, schedule)
    assert np.mean((res.reconstruction - z0) ** 2) <= np.mean((base.reconstruction - z0) ** 2)


def test_null_schedule_csv(tmp_path, nti_run):
    nti_run[3].null_schedule.to_csv(tmp_path / "n.csv")
    lines = (tmp_path / "n.csv").read_text().splitlines()
    assert lines[0] == "step,w0,w1,loss,iterations"
    assert lines[1].startswith("1000,") and len(lines) == 51


def test_nonfinite_loss_reports_step(two_class, schedule, plan20):
    z_star = run_forward_inversion(np.zeros(2), plan20, one_hot(0, 2), two_class, schedule)
    z_star.entries[plan20.indices[-2]] = np.array([np.inf, 0.0])
    with pytest.raises(OptimizerError) as info:
        optimize_null_text(z_star, one_hot(0, 2), 7.5, plan20, two_class, schedule)
    assert info.value.step == 1000


def test_incomplete_target_rejected(two_class, schedule, plan20):
    with pytest.raises(DomainError):
        optimize_null_text(Trajectory(plan20, {0: np.zeros(2)}), one_hot(0, 2), 7.5, plan20,
                           two_class, schedule)


def test_negative_w_rejected(two_class, schedule, plan20):
    for method in Method:
        with pytest.raises(DomainError):
            invert(method, np.zeros(2), one_hot(0, 2), -1.0, plan20, two_class, schedule)


def _consistent_pair(ds, schedule, plan, t, cond, rng):
    t_prev = plan.previous(t)
    z_prev = rng.normal(size=ds.D)
    eps = predict_noise(ds, z_prev, inversion_noise_step(t_prev), cond, schedule).epsilon
    return Trajectory(plan, {t_prev: z_prev, t: ddim_inverse_step(z_prev, t_prev, t, eps, schedule)})


@pytest.mark.parametrize("w", [0.0, 2.0, 7.5])
def test_error_identity_holds(two_class, schedule, plan20, w):
    rng = np.random.default_rng(int(w * 10))
    for t in plan20.indices[1:]:
        cond = one_hot(int(rng.integers(2)), 2)
        z_star = _consistent_pair(two_class, schedule, plan20, t, cond, rng)
        null = rng.dirichlet([1.0, 1.0])
        assert null_text_error_residual(z_star, cond, null, w, t, two_class, schedule) < 1e-10


def test_error_identity_single_class_gap_vanishes(single_class, schedule, plan20):
    rng = np.random.default_rng(0)
    z_star = _consistent_pair(single_class, schedule, plan20, 500, [1.0], rng)
    from invlab.dynamics import ddim_step
    from invlab.oracle import cfg_combine
    eps = predict_noise(single_class, z_star[500], 500, [1.0], schedule).epsilon
    zbar = ddim_step(z_star[500], 500, 450, cfg_combine(eps, eps, 7.5), schedule)
    eps_star = predict_noise(single_class, z_star[450], 450, [1.0], schedule).epsilon
    # with one class the only remaining error is the adjacent-step noise gap
    gain = np.sqrt(schedule.alphas[450]) * (np.sqrt(1 / schedule.alphas[450] - 1)
                                            - np.sqrt(1 / schedule.alphas[500] - 1))
    np.testing.assert_allclose(z_star[450] - zbar, gain * (eps_star - eps), atol=1e-12)


def test_error_identity_bound_with_prompt_as_null(two_class, schedule, plan20):
    rng = np.random.default_rng(5)
    c = one_hot(1, 2)
    z_star = _consistent_pair(two_class, schedule, plan20, 550, c, rng)
    from invlab.dynamics import ddim_step
    eps_t = predict_noise(two_class, z_star[550], 550, c, schedule).epsilon
    eps_prev = predict_noise(two_class, z_star[500], 500, c, schedule).epsilon
    gap = np.linalg.norm(eps_prev - eps_t)
    zbar = ddim_step(z_star[550], 550, 500, eps_t, schedule)
    a = schedule.alphas
    coef = abs(np.sqrt(a[500]) * (np.sqrt(1 / a[500] - 1) - np.sqrt(1 / a[550] - 1)))
    assert np.linalg.norm(z_star[500] - zbar) <= coef * gap * (1 + 1e-12)


def test_error_identity_rejects_w1(two_class, schedule, plan20):
    z_star = _consistent_pair(two_class, schedule, plan20, 50, one_hot(0, 2),
                              np.random.default_rng(1))
    with pytest.raises(DomainError):
        null_text_error_residual(z_star, one_hot(0, 2), uniform(2), 1.0, 50, two_class, schedule)


def test_null_schedule_defaults_empty():
    assert NullTextSchedule().embeddings == {}
