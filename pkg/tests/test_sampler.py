import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pgd_lab import rng
from pgd_lab.errors import ConfigurationError, NumericalBlowupError
from pgd_lab.models import FactorizedGaussianModel, QuadraticModel, analytic_optimum, toy_model
from pgd_lab.sampler import (ExplicitInit, GaussianInit, ParticleState, RunConfig, WarmStart,
                             estimate_moment, initial_state, ipla_step, pgd_step, run, run_batch)

from conftest import quadratic3d


def _flat_model():
    return QuadraticModel(np.zeros((2, 2)), np.zeros(2), 0.0, 1)


def test_zero_gradient_zero_noise_is_identity():
    state = ParticleState(np.array([0.3]), np.array([[1.0], [-2.0], [0.5]]), 4)
    out = pgd_step(state, _flat_model(), 0.1, np.zeros((3, 1)))
    np.testing.assert_array_equal(out.theta, state.theta)
    np.testing.assert_array_equal(out.particles, state.particles)
    assert out.step_index == 5


def test_toy_step_hand_arithmetic(toy):
    state = ParticleState(np.array([0.0]), np.array([[0.0], [2.0]]))
    out = pgd_step(state, toy, 0.1, np.zeros((2, 1)))
    assert out.theta[0] == pytest.approx(0.1, abs=1e-15)
    np.testing.assert_allclose(out.particles.ravel(), [0.1, 1.7], atol=1e-15)


def test_toy_step_with_noise(toy):
    state = ParticleState(np.array([0.0]), np.array([[0.0], [2.0]]))
    noise = np.array([[1.0], [-1.0]])
    out = pgd_step(state, toy, 0.1, noise)
    s = math.sqrt(0.2)
    np.testing.assert_allclose(out.particles.ravel(), [0.1 + s, 1.7 - s], atol=1e-15)
    assert out.theta[0] == pytest.approx(0.1, abs=1e-15)


def test_ipla_zero_theta_noise_equals_pgd(toy):
    state = ParticleState(np.array([0.2]), np.array([[0.0], [2.0], [1.0], [-1.0]]))
    noise = np.array([[0.3], [-0.1], [2.0], [0.0]])
    a = pgd_step(state, toy, 0.1, noise)
    b = ipla_step(state, toy, 0.1, noise, np.zeros(1))
    np.testing.assert_array_equal(a.theta, b.theta)
    np.testing.assert_array_equal(a.particles, b.particles)


def test_ipla_theta_noise_scale(toy):
    state = ParticleState(np.array([0.2]), np.zeros((4, 1)))
    a = pgd_step(state, toy, 0.1, np.zeros((4, 1)))
    b = ipla_step(state, toy, 0.1, np.zeros((4, 1)), np.ones(1))
    assert b.theta[0] - a.theta[0] == pytest.approx(math.sqrt(0.05), abs=1e-15)
    assert math.sqrt(0.05) == pytest.approx(0.2236, abs=1e-4)


def test_ipla_noise_shrinks_like_inverse_root_n(toy):
    gaps = []
    for N in (4, 16, 64):
        state = ParticleState(np.array([0.2]), np.zeros((N, 1)))
        a = pgd_step(state, toy, 0.1, np.zeros((N, 1)))
        b = ipla_step(state, toy, 0.1, np.zeros((N, 1)), np.ones(1))
        gaps.append(b.theta[0] - a.theta[0])
    assert gaps[0] / gaps[1] == pytest.approx(2.0, rel=1e-12)
    assert gaps[1] / gaps[2] == pytest.approx(2.0, rel=1e-12)


def test_gradient_is_taken_at_the_incoming_theta(model3d):
    rng_ = np.random.default_rng(0)
    state = ParticleState(rng_.standard_normal(1), rng_.standard_normal((5, 2)))
    out = pgd_step(state, model3d, 0.05, np.zeros((5, 2)))
    gt, gx = model3d.grad(state.theta, state.particles)
    np.testing.assert_allclose(out.theta, state.theta + 0.05 * gt.mean(axis=0), rtol=1e-14)
    np.testing.assert_allclose(out.particles, state.particles + 0.05 * gx, rtol=1e-14)


@pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
def test_blowup_reports_step_index():
    unstable = QuadraticModel(np.array([[1.0, 0.0], [0.0, 50.0]]), np.zeros(2), 0.0, 1)
    cfg = RunConfig(h=1.0, N=2, K=400, init=ExplicitInit([1.0], [[1.0], [1.0]]))
    with pytest.raises(NumericalBlowupError) as info:
        run(cfg, unstable)
    assert 0 < info.value.step_index <= 400


def test_noise_shape_mismatch(toy):
    state = ParticleState(np.array([0.0]), np.zeros((3, 1)))
    with pytest.raises(ConfigurationError):
        pgd_step(state, toy, 0.1, np.zeros((2, 1)))


# ---------------------------------------------------------------- runs


def test_k_zero_keeps_only_the_initial_state(toy):
    tr = run(RunConfig(h=0.1, N=5, K=0), toy)
    assert [s.step for s in tr.snapshots] == [0]
    np.testing.assert_allclose(tr.final.theta, [1.0])


def test_run_uses_counter_noise(toy):
    cfg = RunConfig(h=0.1, N=3, K=2, seed=9, init=ExplicitInit([0.0], [[0.0], [1.0], [2.0]]))
    state = ParticleState(np.array([0.0]), np.array([[0.0], [1.0], [2.0]]))
    for k in range(2):
        w = rng.normals(9, 0, rng.STREAM_X, k, 1, 3, 1)[0]
        state = pgd_step(state, toy, 0.1, w)
    tr = run(cfg, toy)
    np.testing.assert_array_equal(tr.final.theta, state.theta)
    np.testing.assert_array_equal(tr.final.particles, state.particles)


def test_ipla_run_uses_theta_stream(toy):
    cfg = RunConfig(h=0.1, N=3, K=2, seed=9, algorithm="ipla",
                    init=ExplicitInit([0.0], [[0.0], [1.0], [2.0]]))
    state = ParticleState(np.array([0.0]), np.array([[0.0], [1.0], [2.0]]))
    for k in range(2):
        w = rng.normals(9, 0, rng.STREAM_X, k, 1, 3, 1)[0]
        wt = rng.normals(9, 0, rng.STREAM_THETA, k, 1, 1, 1)[0, 0]
        state = ipla_step(state, toy, 0.1, w, wt)
    tr = run(cfg, toy)
    np.testing.assert_array_equal(tr.final.theta, state.theta)
    np.testing.assert_array_equal(tr.final.particles, state.particles)


@settings(max_examples=8, deadline=None)
@given(workers=st.integers(2, 5), N=st.integers(10, 40), algorithm=st.sampled_from(["pgd", "ipla"]))
def test_thread_count_does_not_change_results(workers, N, algorithm):
    model = quadratic3d()
    cfg = RunConfig(h=0.05, N=N, K=30, seed=5, algorithm=algorithm, record_every=10,
                    init=GaussianInit([0.5], [0.0, 0.0], np.eye(2)))
    a = run(cfg, model, replicate=3, workers=1)
    b = run(cfg, model, replicate=3, workers=workers)
    np.testing.assert_array_equal(a.final.theta, b.final.theta)
    np.testing.assert_array_equal(a.final.particles, b.final.particles)
    for sa, sb in zip(a.snapshots, b.snapshots):
        np.testing.assert_array_equal(sa.mean, sb.mean)
        np.testing.assert_array_equal(sa.cov, sb.cov)


def test_batch_equals_single_runs(model3d):
    cfg = RunConfig(h=0.05, N=20, K=25, seed=2, record_every=5,
                    init=GaussianInit([0.5], [0.0, 0.0], np.eye(2), theta_cov=[[0.1]]))
    batch = run_batch(cfg, model3d, [4, 0, 7])
    for tr in batch:
        single = run(cfg, model3d, replicate=tr.replicate)
        np.testing.assert_array_equal(tr.final.theta, single.final.theta)
        np.testing.assert_array_equal(tr.final.particles, single.final.particles)


def test_factorized_model_runs_like_its_dense_form():
    model = FactorizedGaussianModel.linear_gaussian([0.3, -0.2, 1.1])
    cfg = RunConfig(h=0.05, N=16, K=20, seed=1)
    a = run(cfg, model)
    b = run(cfg, model.as_quadratic())
    np.testing.assert_allclose(a.final.theta, b.final.theta, rtol=1e-12)
    np.testing.assert_allclose(a.final.particles, b.final.particles, rtol=1e-12, atol=1e-14)


def test_warm_start_places_everything_at_the_maximizer(toy):
    theta, x = initial_state(RunConfig(h=0.1, N=4, K=1), toy, [0, 1])
    np.testing.assert_allclose(theta, 1.0)
    np.testing.assert_allclose(x, 1.0)


def test_gaussian_init_moments(model3d):
    cov = np.array([[1.0, 0.3], [0.3, 0.5]])
    _, x = initial_state(RunConfig(h=0.1, N=100_000, K=1, init=GaussianInit([0.0], [1.0, -1.0], cov)),
                         model3d)
    np.testing.assert_allclose(x[0].mean(axis=0), [1.0, -1.0], atol=0.02)
    np.testing.assert_allclose(np.cov(x[0].T), cov, atol=0.02)


@pytest.mark.parametrize("kwargs", [
    dict(h=0.0, N=1, K=1), dict(h=-1.0, N=1, K=1), dict(h=float("nan"), N=1, K=1),
    dict(h=0.1, N=0, K=1), dict(h=0.1, N=1, K=-1), dict(h=0.1, N=1, K=1, algorithm="mala"),
    dict(h=0.1, N=1, K=1, seed=-3), dict(h=0.1, N=1, K=10, record_every=0),
])
def test_invalid_config(kwargs):
    with pytest.raises(ConfigurationError):
        RunConfig(**kwargs)


def test_invalid_inits(toy):
    with pytest.raises(ConfigurationError):
        run(RunConfig(h=0.1, N=3, K=1, init=ExplicitInit([0.0], [[0.0], [1.0]])), toy)
    with pytest.raises(ConfigurationError):
        run(RunConfig(h=0.1, N=3, K=1, init=GaussianInit([0.0], [0.0], [[-1.0]])), toy)


def test_estimate_moment():
    assert estimate_moment(ParticleState(np.zeros(1), np.zeros((5, 1)))) == 0.0
    assert estimate_moment(ParticleState(np.array([1.0]), np.array([[1.0], [-1.0]]))) == 2.0


@pytest.mark.slow
def test_toy_theta_settles_at_the_optimum():
    model = toy_model(1.0)
    cfg = RunConfig(h=0.1, N=500, K=600, seed=3, init=GaussianInit([0.0], [0.0], [[1.0]]))
    finals = np.array([tr.final.theta[0] for tr in run_batch(cfg, model, range(20))])
    se = finals.std(ddof=1) / math.sqrt(len(finals))
    theta_star = analytic_optimum(model)[0][0]
    # h-bias of the parameter is O(h / N) here, far below the Monte Carlo error
    assert abs(finals.mean() - theta_star) <= 4 * se + 1e-3
