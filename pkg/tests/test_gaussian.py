import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pgd_lab.errors import DegenerateError
from pgd_lab.gaussian import GaussianMeasure, d_metric, sym_sqrtm, w2_gaussian, w2_gaussian_sq


def _random_spd(rng, d, floor=0.05):
    A = rng.standard_normal((d, d))
    return A @ A.T + floor * np.eye(d)


def test_identical_measures():
    g = GaussianMeasure([0.3, -1.0], [[2.0, 0.4], [0.4, 1.0]])
    assert w2_gaussian(g, g) == pytest.approx(0.0, abs=1e-7)


def test_mean_shift_only():
    assert w2_gaussian(GaussianMeasure([0.0], [[1.0]]), GaussianMeasure([1.0], [[1.0]])) == 1.0


def test_isotropic_scale():
    a = GaussianMeasure([0.0, 0.0], np.eye(2))
    b = GaussianMeasure([0.0, 0.0], 4 * np.eye(2))
    assert w2_gaussian(a, b) == pytest.approx(math.sqrt(2), rel=1e-14)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), d=st.integers(1, 4))
def test_bures_matches_trace_formula(seed, d):
    rng = np.random.default_rng(seed)
    A, B = _random_spd(rng, d), _random_spd(rng, d)
    rB = sym_sqrtm(B)
    direct = np.trace(A + B - 2 * sym_sqrtm(rB @ A @ rB))
    got = w2_gaussian_sq(GaussianMeasure(np.zeros(d), A), GaussianMeasure(np.zeros(d), B))
    assert got == pytest.approx(direct, rel=1e-8, abs=1e-10)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), d=st.integers(1, 3))
def test_w2_is_a_metric(seed, d):
    rng = np.random.default_rng(seed)
    gs = [GaussianMeasure(rng.standard_normal(d), _random_spd(rng, d)) for _ in range(3)]
    ab, bc, ac = w2_gaussian(gs[0], gs[1]), w2_gaussian(gs[1], gs[2]), w2_gaussian(gs[0], gs[2])
    assert ab == pytest.approx(w2_gaussian(gs[1], gs[0]), rel=1e-9, abs=1e-12)
    assert ac <= ab + bc + 1e-9


def test_commuting_covariances_reduce_to_marginals():
    a = GaussianMeasure([1.0, 0.0], np.diag([1.0, 9.0]))
    b = GaussianMeasure([0.0, 0.0], np.diag([4.0, 1.0]))
    # per-axis (sqrt a - sqrt b)^2 plus the mean shift
    assert w2_gaussian_sq(a, b) == pytest.approx(1 + (1 - 2) ** 2 + (3 - 1) ** 2, rel=1e-14)


def test_nearby_covariances_do_not_cancel():
    B = np.array([[2.0, 0.3], [0.3, 1.0]])
    E = 1e-7 * np.array([[1.0, 0.2], [0.2, -0.5]])
    got = w2_gaussian_sq(GaussianMeasure([0, 0], B + E), GaussianMeasure([0, 0], B))
    # to first order W2^2 = tr(T B T) with T solving the Lyapunov equation T B + B T = E
    from scipy.linalg import solve_continuous_lyapunov
    T = solve_continuous_lyapunov(B, E)
    assert got == pytest.approx(np.trace(T @ B @ T), rel=1e-4)


def test_d_metric():
    q = GaussianMeasure([0.0], [[1.0]])
    assert d_metric(([0.0], q), ([0.0], q)) == 0.0
    assert d_metric(([3.0], q), ([0.0], q)) == 3.0
    assert d_metric(([3.0], q), ([0.0], GaussianMeasure([4.0], [[1.0]]))) == 5.0


def test_degenerate_inputs():
    with pytest.raises(DegenerateError):
        GaussianMeasure([0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(DegenerateError):
        GaussianMeasure([0.0], [[1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(DegenerateError):
        w2_gaussian(GaussianMeasure([0.0], [[1.0]]), GaussianMeasure([0.0, 0.0], np.eye(2)))


def test_log_pdf_and_score():
    g = GaussianMeasure([1.0, -1.0], [[2.0, 0.5], [0.5, 1.0]])
    x = np.array([[0.3, 0.2], [1.0, -1.0]])
    from scipy.stats import multivariate_normal
    np.testing.assert_allclose(g.log_pdf(x), multivariate_normal(g.mean, g.cov).logpdf(x), rtol=1e-13)
    eps = 1e-6
    for row in x:
        fd = [(g.log_pdf(row + eps * e) - g.log_pdf(row - eps * e)) / (2 * eps) for e in np.eye(2)]
        np.testing.assert_allclose(g.score(row), fd, rtol=1e-6, atol=1e-8)
    assert g.entropy() == pytest.approx(multivariate_normal(g.mean, g.cov).entropy(), rel=1e-14)
