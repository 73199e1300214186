"""Independent reference computations used by the tests.

Nothing here calls the closed forms under test; everything is Monte Carlo,
quadrature or brute force.
"""

import itertools
import math

import numpy as np


def mc_free_energy(model, theta, q, n, rng):
    """``E_q[log q(X) - l(theta, X)]`` by plain Monte Carlo; returns ``(estimate, se)``."""
    x = q.mean + rng.standard_normal((n, q.dim)) @ q.chol.T
    vals = q.log_pdf(x) - model.log_lik(np.asarray(theta, float), x)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n))


def mc_fisher_info(model, theta, q, n, rng):
    """``||E_q grad_theta l||^2 + E_q ||grad log q - grad_x l||^2`` by Monte Carlo.

    The standard error is the delta-method one for the plug-in estimate.
    """
    x = q.mean + rng.standard_normal((n, q.dim)) @ q.chol.T
    g_theta, g_x = model.grad(np.asarray(theta, float), x)
    gbar = g_theta.mean(axis=0)
    r = q.score(x) - g_x
    r2 = np.sum(r * r, axis=1)
    est = float(gbar @ gbar + r2.mean())
    influence = 2.0 * (g_theta @ gbar) + r2
    return est, float(influence.std(ddof=1) / math.sqrt(n))


def brute_force_w2(a, b):
    """Exact empirical W2 by enumerating all pairings (small N only)."""
    a = np.asarray(a, float).reshape(len(a), -1)
    b = np.asarray(b, float).reshape(len(b), -1)
    cost = np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=-1)
    n = len(a)
    best = min(sum(sorted(cost[i, p[i]] for i in range(n))) for p in itertools.permutations(range(n)))
    return math.sqrt(best / n)


def quantile_w2_1d(points, mean, sd, n_grid=200_000):
    """W2 between a 1D empirical measure and ``N(mean, sd^2)`` by midpoint quadrature in ``u``."""
    from scipy.special import ndtri

    pts = np.sort(np.asarray(points, float).ravel())
    u = (np.arange(n_grid) + 0.5) / n_grid
    emp = pts[np.minimum((u * len(pts)).astype(int), len(pts) - 1)]
    return math.sqrt(float(np.mean((emp - (mean + sd * ndtri(u))) ** 2)))
