"""Distances between empirical measures and Monte Carlo error estimators."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import ndtri

from . import rng
from .errors import DomainError, UnsupportedInputError
from .gaussian import GaussianMeasure
from .models import _quadratic, analytic_optimum
from .parallel import chunk, map_ordered
from .sampler import run_batch

__all__ = [
    "MAX_ASSIGNMENT_SIZE",
    "SlopeFit",
    "DEstimate",
    "as_cloud",
    "assignment_cost",
    "pairing_total",
    "w2_empirical",
    "w2_cloud_to_gaussian_1d",
    "d_random_estimate",
    "d_coupled_estimate",
    "d_estimates",
    "loglog_slope",
    "exp_rate_fit",
]

MAX_ASSIGNMENT_SIZE = 4096

# per-replicate-batch budget of particle coordinates
_BATCH_VALUES = 1 << 16

STREAM_COUPLED_INIT = 5


def as_cloud(a):
    """``(N, d)`` float array view of a point cloud; 1-D input is ``(N, 1)``."""
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2 or a.shape[0] < 1:
        raise UnsupportedInputError(f"point cloud must be (N, d) with N >= 1, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise UnsupportedInputError("point cloud has non-finite entries")
    return a


def assignment_cost(a, b):
    """Squared Euclidean cost matrix ``C[i, j] = ||a_i - b_j||^2``."""
    return ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1)


def pairing_total(costs):
    # summed in sorted order so equal multisets of pair costs give equal totals
    return float(np.sort(np.asarray(costs, dtype=float).ravel()).sum())


def w2_empirical(a, b):
    """Exact W2 between two uniform empirical measures of equal size.

    1-D clouds are matched in sorted order; otherwise the optimal assignment
    is solved exactly on squared Euclidean costs.
    """
    a, b = as_cloud(a), as_cloud(b)
    if a.shape[1] != b.shape[1]:
        raise UnsupportedInputError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    n = a.shape[0]
    if b.shape[0] != n:
        raise UnsupportedInputError(f"clouds of unequal size ({n} vs {b.shape[0]}) are not supported")
    if a.shape[1] == 1:
        costs = (np.sort(a[:, 0]) - np.sort(b[:, 0])) ** 2
    else:
        if n > MAX_ASSIGNMENT_SIZE:
            raise UnsupportedInputError(f"N = {n} exceeds the assignment cap {MAX_ASSIGNMENT_SIZE}")
        cost = assignment_cost(a, b)
        rows, cols = linear_sum_assignment(cost)
        costs = cost[rows, cols]
    return math.sqrt(max(pairing_total(costs), 0.0) / n)


def w2_cloud_to_gaussian_1d(a, g):
    """W2 between a 1-D empirical measure and ``N(mu, sigma^2)``.

    The quantile coupling pairs the ``i``-th order statistic with the slice
    ``u in [(i-1)/N, i/N]`` of the Gaussian quantile function; each slice
    integral has a closed form in ``Phi^{-1}`` and the normal density.
    """
    x = np.sort(as_cloud(a)[:, 0])
    if g.dim != 1:
        raise UnsupportedInputError("w2_cloud_to_gaussian_1d needs a 1-D Gaussian")
    n = x.shape[0]
    mu = float(g.mean[0])
    sigma = math.sqrt(float(g.cov[0, 0]))
    z = ndtri(np.arange(n + 1) / n)  # -inf .. inf
    finite = np.isfinite(z)
    phi = np.zeros_like(z)
    zphi = np.zeros_like(z)
    phi[finite] = np.exp(-0.5 * z[finite] ** 2) / math.sqrt(2 * math.pi)
    zphi[finite] = z[finite] * phi[finite]
    first = phi[:-1] - phi[1:]                  # int Phi^{-1}(u) du over each slice
    second = 1.0 / n + zphi[:-1] - zphi[1:]     # int Phi^{-1}(u)^2 du
    dev = x - mu
    total = np.sum(dev * dev / n - 2 * sigma * dev * first + sigma * sigma * second)
    return math.sqrt(max(float(total), 0.0))


@dataclass(frozen=True)
class DEstimate:
    """Monte Carlo estimate of the random-variable metric.

    Unpacks as ``(estimate, std_error)``.  Per-replicate squared components
    are kept for audits.
    """

    estimate: float
    std_error: float
    param_sq: np.ndarray
    w2_sq: np.ndarray

    def __iter__(self):
        yield self.estimate
        yield self.std_error

    @property
    def param_rmse(self):
        return math.sqrt(float(np.mean(self.param_sq)))

    @property
    def w2_rmse(self):
        return math.sqrt(float(np.mean(self.w2_sq)))


def _sqrt_mean(values):
    values = np.asarray(values, dtype=float)
    m = float(np.mean(values))
    if len(values) < 2 or m <= 0:
        return math.sqrt(max(m, 0.0)), 0.0
    se_mean = float(np.std(values, ddof=1)) / math.sqrt(len(values))
    return math.sqrt(m), se_mean / (2 * math.sqrt(m))


def _estimate(param_sq, w2_sq):
    param_sq = np.asarray(param_sq, dtype=float)
    w2_sq = np.asarray(w2_sq, dtype=float)
    est, se = _sqrt_mean(param_sq + w2_sq)
    return DEstimate(est, se, param_sq, w2_sq)


def reference_sample(config, pi_star, replicate):
    """Fresh i.i.d. ``N``-sample from ``pi_star``, keyed to the replicate and ``K``."""
    z = rng.normals(config.seed, replicate, rng.STREAM_REFERENCE, config.K, 1, config.N, pi_star.dim)[0]
    return pi_star.sample(z)


def _batches(config, model, replicates):
    size = max(1, _BATCH_VALUES // (config.N * model.d_x))
    return chunk(sorted(int(r) for r in replicates), size)


def _ou_transition(model, h):
    """Exact time-``h`` transition ``y -> E y + G w`` of the Langevin diffusion for ``pi_*``."""
    quad = _quadratic(model)
    _, _, C, _, _ = quad.blocks()
    w, V = np.linalg.eigh(C)
    E = (V * np.exp(w * h)) @ V.T
    S = np.linalg.inv(-C)
    R = S - E @ S @ E
    G = np.linalg.cholesky(0.5 * (R + R.T))
    return E, G


class _CoupledReference:
    """Reference particles driven by the PGD particle noise, fed in via ``noise_hook``."""

    def __init__(self, config, model, pi_star, replicates):
        self.E, self.G = _ou_transition(model, config.h)
        self.diagonal = np.count_nonzero(self.E - np.diag(np.diag(self.E))) == 0
        self.e, self.g = np.diag(self.E).copy(), np.diag(self.G).copy()
        N, dx = config.N, model.d_x
        z0 = rng.normals_batch(config.seed, replicates, STREAM_COUPLED_INIT, 0, 1, N, dx)[:, 0]
        self.y = z0 @ pi_star.chol.T
        self.mean = pi_star.mean

    def __call__(self, k, w):
        y = self.y
        for j in range(w.shape[1]):
            if self.diagonal:
                y *= self.e
                y += w[:, j] * self.g
            else:
                y = y @ self.E.T + w[:, j] @ self.G.T
        self.y = y

    def particles(self, i):
        return self.y[i] + self.mean


def _replicate_terms(config, model, replicates, theta_star, pi_star, reference, coupled):
    """Per replicate ``(||Theta_K - theta_*||^2, W2(Q_K, Q_*^N)^2, coupled W2^2 or NaN)``."""
    tracker = _CoupledReference(config, model, pi_star, replicates) if coupled else None
    out = []
    for i, tr in enumerate(run_batch(config, model, replicates, noise_hook=tracker)):
        final = tr.final
        dt = final.theta - theta_star
        ref = reference(final) if reference is not None else reference_sample(config, pi_star, tr.replicate)
        w_sq = w2_empirical(final.particles, ref) ** 2
        c_sq = float("nan")
        if coupled:
            c_sq = w2_empirical(final.particles, tracker.particles(i)) ** 2
        out.append((float(dt @ dt), w_sq, c_sq))
    return out


def _replicate_list(replicates):
    reps = list(range(replicates)) if isinstance(replicates, int) else list(replicates)
    if len(reps) < 2:
        raise UnsupportedInputError("need at least two replicates")
    return reps


def d_estimates(config, model, replicates, *, coupled=False, optimum=None, reference=None, workers=1):
    """Independent-coupling estimate and, with ``coupled``, the synchronous one, from the same runs.

    Returns ``(DEstimate, DEstimate or None)``.
    """
    reps = _replicate_list(replicates)
    if optimum is None:
        optimum = analytic_optimum(model)
    theta_star, pi_star = optimum
    theta_star = np.asarray(theta_star, dtype=float)
    jobs = [(config, model, b, theta_star, pi_star, reference, coupled)
            for b in _batches(config, model, reps)]
    rows = [r for part in map_ordered(_replicate_terms, jobs, workers if reference is None else 1)
            for r in part]
    p_sq = [r[0] for r in rows]
    indep = _estimate(p_sq, [r[1] for r in rows])
    return indep, (_estimate(p_sq, [r[2] for r in rows]) if coupled else None)


def d_random_estimate(config, model, replicates, *, optimum=None, reference=None, workers=1):
    """Estimate ``sqrt(E ||Theta_K - theta_*||^2 + E W2(Q_K, Q_*^N)^2)``.

    ``replicates`` is a count ``R`` or an explicit list of replicate indices.
    ``Q_*^N`` is an independent ``N``-sample from ``pi_*`` (independent
    coupling).  ``optimum`` overrides ``(theta_*, pi_*)`` and ``reference``
    (a callable of the final state) overrides ``Q_*^N``; both exist for
    models without closed forms.
    """
    return d_estimates(config, model, replicates, optimum=optimum, reference=reference,
                       workers=workers)[0]


def d_coupled_estimate(config, model, replicates, *, workers=1):
    """Like :func:`d_random_estimate` but with a synchronously coupled reference.

    The reference particles start i.i.d. from ``pi_*`` and follow the exact
    Langevin transition for ``pi_*`` driven by the same Gaussian increments as
    the PGD particles, so they stay ``pi_*``-distributed while tracking the
    run.  Quadratic models only.
    """
    return d_estimates(config, model, replicates, coupled=True, workers=workers)[1]


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    r_squared: float
    n_points: int

    @property
    def rate(self):
        """Decay rate ``-slope`` (meaningful for :func:`exp_rate_fit`)."""
        return -self.slope


def _line_fit(x, y):
    if len(x) < 3:
        raise DomainError("need at least 3 points")
    xm, ym = x.mean(), y.mean()
    sxx = float(np.sum((x - xm) ** 2))
    if sxx == 0:
        raise DomainError("abscissae are all equal")
    slope = float(np.sum((x - xm) * (y - ym))) / sxx
    intercept = float(ym - slope * xm)
    ss_tot = float(np.sum((y - ym) ** 2))
    ss_res = float(np.sum((y - intercept - slope * x) ** 2))
    r2 = 1.0 if ss_tot == 0 else min(1.0, max(0.0, 1.0 - ss_res / ss_tot))
    return SlopeFit(slope, intercept, r2, len(x))


def _positive(values, name):
    values = np.asarray(values, dtype=float).ravel()
    if not np.all(np.isfinite(values)) or np.any(values <= 0):
        raise DomainError(f"{name} must be positive and finite")
    return values


def loglog_slope(xs, ys):
    """Least-squares line through ``(log x, log y)``."""
    return _line_fit(np.log(_positive(xs, "xs")), np.log(_positive(ys, "ys")))


def exp_rate_fit(ts, ys):
    """Least-squares line through ``(t, log y)``; ``fit.rate`` is the decay rate."""
    ts = np.asarray(ts, dtype=float).ravel()
    if not np.all(np.isfinite(ts)):
        raise DomainError("ts must be finite")
    ys = _positive(ys, "ys")
    if ts.shape != ys.shape:
        raise DomainError("ts and ys differ in length")
    return _line_fit(ts, np.log(ys))
