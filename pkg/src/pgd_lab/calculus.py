"""Closed-form free-energy calculus for quadratic models and Gaussian ``q``.

For ``l(theta, x)`` quadratic, every quantity here reduces to Gaussian
moment algebra.  Notation follows the partition of the joint Hessian
``H = [[A, B], [B^T, C]]`` (``C`` is the latent block) and ``b = (b_theta, b_x)``;
the marginal log-likelihood has constant Hessian ``S = A - B C^{-1} B^T`` in
``theta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (DegenerateError, IntegrationError, NearOptimalInputError,
                     PreconditionError)
from .gaussian import GaussianMeasure, _bures_sq, d_metric, w2_gaussian_sq
from .models import (_quadratic, analytic_optimum, concavity_constants, log_marginal,
                     posterior)

__all__ = [
    "FlowState",
    "BoundTerms",
    "free_energy",
    "free_energy_kl",
    "free_energy_gap",
    "optimal_free_energy",
    "kl_gaussian",
    "fisher_info",
    "flow_rhs",
    "integrate_flow",
    "debruijn_residual",
    "xlsi_ratio",
    "xt2i_slack",
    "distance_decay_excess",
    "energy_decay_excess",
    "trajectory_table",
    "bound_terms",
    "xlsi_upper_bound_logZ",
    "random_gaussian_states",
    "posterior_slice_states",
    "inequality_table",
]


@dataclass(frozen=True)
class FlowState:
    theta: np.ndarray
    q: GaussianMeasure
    t: float = 0.0


def _theta(theta):
    return np.atleast_1d(np.asarray(theta, dtype=float))


def _marginal_hessian(model):
    A, B, C, _, _ = model.blocks()
    return A - B @ np.linalg.solve(C, B.T)


def free_energy(model, theta, q):
    """``F(theta, q) = E_q[log q(X) - l(theta, X)]`` in closed form."""
    model = _quadratic(model)
    theta = _theta(theta)
    _, _, C, _, _ = model.blocks()
    expected_ll = model.log_lik(theta, q.mean) + 0.5 * float(np.sum(C * q.cov))
    return float(-q.entropy() - expected_ll)


def kl_gaussian(q, p):
    """``KL(q || p)`` for Gaussians, summed as ``(mu - 1) - log1p(mu - 1)`` over the
    eigenvalues ``mu`` of ``Sigma_p^{-1} Sigma_q`` to avoid cancellation near ``q = p``."""
    Lp = p.chol
    Linv = np.linalg.inv(Lp)
    W = Linv @ q.cov @ Linv.T
    mu = np.linalg.eigvalsh(0.5 * (W + W.T))
    if mu[0] <= 0:
        raise DegenerateError("covariance is not positive definite")
    e = mu - 1.0
    trace_part = float(np.sum(e - np.log1p(e)))
    dm = Linv @ (q.mean - p.mean)
    return 0.5 * (trace_part + float(dm @ dm))


def free_energy_kl(model, theta, q):
    """Second route to ``F``: ``KL(q || pi_theta) - log Z_theta``."""
    theta = _theta(theta)
    return kl_gaussian(q, posterior(model, theta)) - log_marginal(model, theta)


def free_energy_gap(model, theta, q, optimum=None):
    """``F(theta, q) - F_*`` without subtracting two O(1) numbers.

    Uses ``KL(q || pi_theta) + log Z_* - log Z_theta`` with the last difference
    written as ``-1/2 (theta - theta_*)^T S (theta - theta_*)``.
    """
    model = _quadratic(model)
    theta = _theta(theta)
    theta_star = analytic_optimum(model)[0] if optimum is None else optimum[0]
    dt = theta - theta_star
    S = _marginal_hessian(model)
    return kl_gaussian(q, posterior(model, theta)) - 0.5 * float(dt @ S @ dt)


def optimal_free_energy(model):
    """``F_* = -log Z_*``."""
    theta_star, _ = analytic_optimum(model)
    return -log_marginal(model, theta_star)


def fisher_info(model, theta, q):
    """Extended Fisher information

        I = ||E_q grad_theta l||^2 + E_q ||grad_x log q - grad_x l||^2

    evaluated exactly: the second integrand is a quadratic form in ``x``.
    """
    model = _quadratic(model)
    theta = _theta(theta)
    A, B, C, bt, bx = model.blocks()
    m, S = q.mean, q.cov
    g_theta = A @ theta + B @ m + bt
    D = np.linalg.inv(S) + C
    r = C @ m + B.T @ theta + bx
    return float(g_theta @ g_theta + np.trace(D @ S @ D.T) + r @ r)


def flow_rhs(model, state):
    """Moment ODE of the gradient flow restricted to Gaussians.

    Returns ``(dtheta/dt, dmean/dt, dcov/dt)``; linearity of the gradients makes
    the ``q``-averages exact.
    """
    model = _quadratic(model)
    A, B, C, bt, bx = model.blocks()
    theta, m, S = _theta(state.theta), state.q.mean, state.q.cov
    dtheta = A @ theta + B @ m + bt
    dm = B.T @ theta + C @ m + bx
    dS = C @ S + S @ C.T + 2.0 * np.eye(len(m))
    return dtheta, dm, dS


def _affine_generator(model):
    """``(G, c)`` with ``d/dt (theta, m, vec S) = G (theta, m, vec S) + c``."""
    A, B, C, bt, bx = model.blocks()
    p, d = model.d_theta, model.d_x
    n = p + d + d * d
    G = np.zeros((n, n))
    G[:p, :p], G[:p, p:p + d] = A, B
    G[p:p + d, :p], G[p:p + d, p:p + d] = B.T, C
    eye = np.eye(d)
    G[p + d:, p + d:] = np.kron(C, eye) + np.kron(eye, C)
    c = np.concatenate([bt, bx, 2.0 * eye.ravel()])
    return G, c


def _rk4_map(G, c, h):
    """One classic RK4 step of ``y' = G y + c`` as the affine map ``y -> P y + r``.

    For a constant-coefficient linear system the four RK4 stages collapse to
    the degree-4 Taylor polynomial of ``exp(hG)``; applying it as one matrix
    gives the same update as evaluating the stages.
    """
    n = G.shape[0]
    hG = h * G
    hG2 = hG @ hG
    hG3 = hG2 @ hG
    P = np.eye(n) + hG + hG2 / 2 + hG3 / 6 + hG3 @ hG / 24
    r = h * (c + hG @ c / 2 + hG2 @ c / 6 + hG3 @ c / 24)
    return P, r


def _integrate_arrays(model, theta0, m0, S0, t_end, dt, record_every=1):
    model = _quadratic(model)
    p, d = model.d_theta, model.d_x
    n = int(math.ceil(t_end / dt - 1e-9)) if t_end > 0 else 0
    idx = [0] + [k for k in range(1, n + 1) if k % record_every == 0 or k == n]
    ys = np.empty((len(idx), p + d + d * d))
    y = np.concatenate([theta0, m0, S0.ravel()])
    ys[0] = y
    if n:
        h = t_end / n
        P, r = _rk4_map(*_affine_generator(model), h)
        j = 1
        for k in range(1, n + 1):
            y = P @ y + r
            if k == idx[j]:
                ys[j] = y
                j += 1
    else:
        h = 0.0
    thetas = ys[:, :p]
    means = ys[:, p:p + d]
    covs = ys[:, p + d:].reshape(-1, d, d)
    covs = 0.5 * (covs + np.swapaxes(covs, -1, -2))
    return np.array(idx) * h, thetas, means, covs


def integrate_flow(model, init, t_end, dt, record_every=1):
    """Classic RK4 on ``(theta, mean, cov)``; returns the recorded states.

    The step is shrunk to ``t_end / ceil(t_end / dt)`` so the grid ends exactly
    at ``t_end``.  States are recorded every ``record_every`` steps plus the
    final one.
    """
    if dt <= 0 or t_end < 0:
        raise PreconditionError("need dt > 0 and t_end >= 0")
    ts, thetas, means, covs = _integrate_arrays(
        model, _theta(init.theta), init.q.mean, init.q.cov, float(t_end), float(dt), record_every)
    n_steps = int(math.ceil(t_end / dt - 1e-9)) if t_end > 0 else 0
    h = t_end / n_steps if n_steps else dt
    out = [FlowState(_theta(init.theta).copy(), init.q, float(init.t))]
    for t, th, m, S in zip(ts[1:], thetas[1:], means[1:], covs[1:]):
        try:
            q = GaussianMeasure(m, S)
        except DegenerateError:
            raise IntegrationError(
                f"covariance left the SPD cone at t={init.t + t:.6g}; retry with dt <= {h / 2:.3g}",
                init.t + t, h / 2) from None
        out.append(FlowState(th, q, float(init.t + t)))
    return out


def _stack(trajectory):
    ts = np.array([s.t for s in trajectory], dtype=float)
    thetas = np.array([_theta(s.theta) for s in trajectory])
    means = np.array([s.q.mean for s in trajectory])
    covs = np.array([s.q.cov for s in trajectory])
    return ts, thetas, means, covs


def _batch_terms(model, thetas, means, covs, optimum=None):
    """Vectorised ``(F - F_*, I, d^2)`` over a stack of Gaussian states."""
    model = _quadratic(model)
    A, B, C, bt, bx = model.blocks()
    theta_star, pi_star = analytic_optimum(model) if optimum is None else optimum
    P = -C
    Sigma = np.linalg.inv(P)
    # KL(q || pi_theta) through the eigenvalues of P^{1/2} S P^{1/2}
    Lp = np.linalg.cholesky(P)
    W = Lp.T @ covs @ Lp
    mu = np.linalg.eigvalsh(0.5 * (W + np.swapaxes(W, -1, -2)))
    e = mu - 1.0
    post_means = (thetas @ B + bx) @ Sigma.T
    dm = means - post_means
    kl = 0.5 * (np.sum(e - np.log1p(e), axis=-1) + np.einsum("ni,ij,nj->n", dm, P, dm))
    S_marg = A - B @ np.linalg.solve(C, B.T)
    dth = thetas - theta_star
    gap = kl - 0.5 * np.einsum("ni,ij,nj->n", dth, S_marg, dth)
    # Fisher information
    g_theta = thetas @ A.T + means @ B.T + bt
    D = np.linalg.inv(covs) + C
    r = means @ C.T + thetas @ B + bx
    info = (np.sum(g_theta**2, axis=-1) + np.einsum("nij,njk,nik->n", D, covs, D)
            + np.sum(r**2, axis=-1))
    # squared distance to the optimum
    d2 = np.sum(dth**2, axis=-1) + np.sum((means - pi_star.mean) ** 2, axis=-1)
    if model.d_x == 1:
        d2 = d2 + (np.sqrt(covs[:, 0, 0]) - math.sqrt(pi_star.cov[0, 0])) ** 2
    else:
        d2 = d2 + np.array([_bures_sq(S, pi_star.cov) for S in covs])
    return gap, info, d2


def _uniform_step(ts):
    if len(ts) < 3:
        raise PreconditionError("need at least three states")
    steps = np.diff(ts)
    if np.max(np.abs(steps - steps[0])) > 1e-9 * max(1.0, abs(steps[0])):
        raise PreconditionError("trajectory is not uniformly spaced")
    return float(steps[0])


def debruijn_residual(model, trajectory):
    """``|dF/dt + I| / max(1, I)`` at interior points, ``dF/dt`` by centred differences."""
    ts, thetas, means, covs = _stack(trajectory)
    dt = _uniform_step(ts)
    gaps, info, _ = _batch_terms(model, thetas, means, covs)
    dF = (gaps[2:] - gaps[:-2]) / (2 * dt)
    return np.abs(dF + info[1:-1]) / np.maximum(1.0, info[1:-1])


def xlsi_ratio(model, theta, q, lam=None, optimum=None):
    """``I / (2 lambda [F - F_*])``; at least 1 whenever the xLSI holds with ``lambda``."""
    if lam is None:
        lam = concavity_constants(_quadratic(model))[0]
    gap = free_energy_gap(model, theta, q, optimum)
    if gap < 1e-12:
        raise NearOptimalInputError(f"F - F_* = {gap:.3e} is below 1e-12")
    return fisher_info(model, theta, q) / (2.0 * lam * gap)


def xt2i_slack(model, theta, q, lam=None, optimum=None):
    """``2 [F - F_*] - lambda d((theta, q), (theta_*, pi_*))^2``."""
    model = _quadratic(model)
    if lam is None:
        lam = concavity_constants(model)[0]
    if optimum is None:
        optimum = analytic_optimum(model)
    gap = free_energy_gap(model, theta, q, optimum)
    dist = d_metric((_theta(theta), q), optimum)
    return 2.0 * gap - lam * dist * dist


def xlsi_upper_bound_logZ(model, theta, q, lam=None):
    """``I / (2 lambda) - F``, an upper bound on ``log Z_*``."""
    if lam is None:
        lam = concavity_constants(_quadratic(model))[0]
    return fisher_info(model, theta, q) / (2.0 * lam) - free_energy(model, theta, q)


def distance_decay_excess(model, trajectory, lam=None):
    """``d_t e^{lambda t} - d_0`` along a flow trajectory (predicted <= 0)."""
    model = _quadratic(model)
    if lam is None:
        lam = concavity_constants(model)[0]
    ts, thetas, means, covs = _stack(trajectory)
    _, _, d2 = _batch_terms(model, thetas, means, covs)
    d = np.sqrt(np.maximum(d2, 0.0))
    return d * np.exp(lam * (ts - ts[0])) - d[0]


def energy_decay_excess(model, trajectory, lam=None):
    """``[F_t - F_*] e^{2 lambda t} - [F_0 - F_*]`` (predicted <= 0)."""
    model = _quadratic(model)
    if lam is None:
        lam = concavity_constants(model)[0]
    ts, thetas, means, covs = _stack(trajectory)
    gaps, _, _ = _batch_terms(model, thetas, means, covs)
    return gaps * np.exp(2 * lam * (ts - ts[0])) - gaps[0]


def trajectory_table(model, trajectory):
    """Columns ``t, F - F_*, I, d`` for every state of a trajectory."""
    ts, thetas, means, covs = _stack(trajectory)
    gaps, info, d2 = _batch_terms(model, thetas, means, covs)
    return ts, gaps, info, np.sqrt(np.maximum(d2, 0.0))


@dataclass(frozen=True)
class BoundTerms:
    """Pieces of the PGD error bound for one ``(h, N, K)``."""

    lam: float
    L: float
    iota: float
    B0: float
    A0h: float
    dx: int
    h: float
    N: int
    K: int
    d0: float
    d0_exact: float
    term_h: float
    term_N: float
    term_K: float

    @property
    def rhs(self):
        return self.term_h + self.term_N + self.term_K


def bound_terms(model, config, init=None):
    """Explicit constants of the PGD error bound.

    ``iota = 2 L lambda / (L + lambda)``, ``B0 = ||theta_0||^2 + E||X_0||^2``
    (measured from the joint maximizer) and

        A0h = sqrt((4h + 4/iota) / iota * 220 L^2 (L^2 h [B0 + 2 dx/lambda] + dx)).

    Under a warm start the distance term uses ``d0 <= 2 sqrt(dx / lambda)``;
    ``d0_exact`` is reported alongside.
    """
    from .sampler import ExplicitInit, GaussianInit, WarmStart

    model = _quadratic(model)
    lam, L = concavity_constants(model)
    h, N, K = float(config.h), int(config.N), int(config.K)
    if h > 1.0 / (lam + L) * (1 + 1e-12):
        raise PreconditionError(f"h = {h:g} exceeds 1/(lambda+L) = {1.0 / (lam + L):.6g}")
    if init is None:
        init = config.init
    dx = model.d_x
    z_dag = model.maximizer()
    th_dag, x_dag = z_dag[:model.d_theta], z_dag[model.d_theta:]
    theta_star, pi_star = analytic_optimum(model)
    if isinstance(init, WarmStart):
        B0 = float(th_dag @ th_dag + x_dag @ x_dag)
        dth = th_dag - theta_star
        dmean = x_dag - pi_star.mean
        d0_exact = math.sqrt(float(dth @ dth + dmean @ dmean + np.trace(pi_star.cov)))
        d0 = 2.0 * math.sqrt(dx / lam)
    elif isinstance(init, GaussianInit):
        if init.theta_cov is not None:
            raise PreconditionError("the bound treats theta_0 as deterministic")
        th0 = np.asarray(init.theta, dtype=float)
        q0 = GaussianMeasure(init.mean, init.cov)
        B0 = float(np.sum((th0 - th_dag) ** 2) + np.sum((q0.mean - x_dag) ** 2) + np.trace(q0.cov))
        d0_exact = d0 = d_metric((th0, q0), (theta_star, pi_star))
    elif isinstance(init, ExplicitInit):
        raise PreconditionError("explicit particles are not i.i.d. draws from a q0")
    else:
        raise PreconditionError(f"unsupported init {init!r}")
    iota = 2.0 * L * lam / (L + lam)
    A0h = math.sqrt((4 * h + 4 / iota) / iota * 220 * L**2 * (L**2 * h * (B0 + 2 * dx / lam) + dx))
    term_h = math.sqrt(h) * A0h
    term_N = L * math.sqrt(2) / (lam * math.sqrt(N)) * math.sqrt(B0 + 2 * dx / lam)
    term_K = d0 * math.exp(-h * lam * K)
    return BoundTerms(lam, L, iota, B0, A0h, dx, h, N, K, d0, d0_exact, term_h, term_N, term_K)


def random_gaussian_states(model, n, seed=20240917):
    """Reproducible sweep: ``theta``, means uniform on ``[-3, 3]``, covariances ``A A^T + 0.1 I``."""
    model = _quadratic(model)
    rng = np.random.default_rng(seed)
    p, d = model.d_theta, model.d_x
    states = []
    for _ in range(n):
        theta = rng.uniform(-3, 3, size=p)
        mean = rng.uniform(-3, 3, size=d)
        Am = rng.uniform(-1, 1, size=(d, d))
        states.append((theta, GaussianMeasure(mean, Am @ Am.T + 0.1 * np.eye(d))))
    return states


def posterior_slice_states(model, thetas):
    """States ``(theta, pi_theta)``: on this slice the xLSI reduces to the PL inequality."""
    return [(np.atleast_1d(np.asarray(t, dtype=float)), posterior(model, np.atleast_1d(t)))
            for t in thetas]


def inequality_table(model, states):
    """Per-state columns: gap, I, d^2, xLSI ratio, xT2I slack, log Z bound gap.

    The ratio is NaN where ``F - F_*`` is below 1e-12.
    """
    model = _quadratic(model)
    lam, _ = concavity_constants(model)
    opt = analytic_optimum(model)
    log_z_star = -optimal_free_energy(model)
    rows = []
    for theta, q in states:
        gap = free_energy_gap(model, theta, q, opt)
        info = fisher_info(model, theta, q)
        dt = _theta(theta) - opt[0]
        d2 = float(dt @ dt) + w2_gaussian_sq(q, opt[1])
        ratio = info / (2 * lam * gap) if gap >= 1e-12 else float("nan")
        slack = 2 * gap - lam * d2
        # I/(2 lambda) - F - log Z_* = I/(2 lambda) - (F - F_*)
        logz_gap = info / (2 * lam) - gap
        rows.append((gap, info, d2, ratio, slack, logz_gap))
    return np.array(rows, dtype=float).reshape(-1, 6)
