"""Particle gradient descent and its IPLA variant.

Both algorithms are explicit Euler-Maruyama maps.  With ``Theta_k``,
``X_k^1..X_k^N`` the incoming state,

    Theta_{k+1} = Theta_k + (h / N) sum_n grad_theta l(Theta_k, X_k^n)
    X_{k+1}^n   = X_k^n + h grad_x l(Theta_k, X_k^n) + sqrt(2h) W_k^n

and IPLA adds ``sqrt(2h / N) W_k^theta`` to the parameter update.  Noise comes
from :mod:`pgd_lab.rng`, so a run is a pure function of its config, model and
replicate index.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from . import rng
from .errors import ConfigurationError, NumericalBlowupError

__all__ = [
    "ParticleState",
    "WarmStart",
    "GaussianInit",
    "ExplicitInit",
    "RunConfig",
    "Snapshot",
    "Trajectory",
    "pgd_step",
    "ipla_step",
    "initial_state",
    "run",
    "run_batch",
    "estimate_moment",
]

ALGORITHMS = ("pgd", "ipla")

# float64 values drawn per noise block; bounds memory for long runs
_BLOCK_VALUES = 1 << 21


@dataclass(frozen=True)
class ParticleState:
    """``theta`` of shape ``(..., d_theta)`` and particles ``(..., N, d_x)``.

    Leading axes, when present, index independent replicates.
    """

    theta: np.ndarray
    particles: np.ndarray
    step_index: int = 0

    @property
    def n_particles(self):
        return self.particles.shape[-2]


@dataclass(frozen=True)
class WarmStart:
    """``theta_0`` and every particle at the joint maximizer of ``l``."""


@dataclass(frozen=True)
class GaussianInit:
    """Particles i.i.d. ``N(mean, cov)``.

    ``theta`` is used as given unless ``theta_cov`` is set, in which case
    ``theta_0 ~ N(theta, theta_cov)``.
    """

    theta: Sequence[float]
    mean: Sequence[float]
    cov: Sequence[Sequence[float]]
    theta_cov: Optional[Sequence[Sequence[float]]] = None


@dataclass(frozen=True)
class ExplicitInit:
    theta: Sequence[float]
    particles: Sequence[Sequence[float]]


Init = Union[WarmStart, GaussianInit, ExplicitInit]


@dataclass(frozen=True)
class RunConfig:
    """One PGD/IPLA run.

    ``record_every`` defaults to ``K`` (first and last states only).  Full
    particle matrices are kept at snapshots only with ``keep_particles``.
    """

    h: float
    N: int
    K: int
    seed: int = 0
    algorithm: str = "pgd"
    init: Init = field(default_factory=WarmStart)
    record_every: Optional[int] = None
    keep_particles: bool = False

    def __post_init__(self):
        if not (isinstance(self.h, (int, float)) and math.isfinite(self.h) and self.h > 0):
            raise ConfigurationError(f"h must be a positive finite number, got {self.h!r}")
        if int(self.N) != self.N or self.N < 1:
            raise ConfigurationError(f"N must be a positive integer, got {self.N!r}")
        if int(self.K) != self.K or self.K < 0:
            raise ConfigurationError(f"K must be a non-negative integer, got {self.K!r}")
        if int(self.seed) != self.seed or not 0 <= self.seed < 2**64:
            raise ConfigurationError("seed must be a 64-bit unsigned integer")
        if self.algorithm not in ALGORITHMS:
            raise ConfigurationError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.record_every is not None:
            if int(self.record_every) != self.record_every or self.record_every < 1:
                raise ConfigurationError("record_every must be a positive integer")
            if self.K > 0 and self.record_every > self.K:
                raise ConfigurationError("record_every must not exceed K")
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "K", int(self.K))
        object.__setattr__(self, "seed", int(self.seed))
        object.__setattr__(self, "h", float(self.h))

    @property
    def stride(self):
        return self.record_every or max(self.K, 1)


@dataclass(frozen=True)
class Snapshot:
    step: int
    theta: np.ndarray
    mean: np.ndarray
    cov: np.ndarray
    particles: Optional[np.ndarray] = None


@dataclass
class Trajectory:
    snapshots: list
    final: ParticleState
    replicate: int = 0
    checkpoints: dict = field(default_factory=dict)

    @property
    def steps(self):
        return [s.step for s in self.snapshots]


def _summary(step, theta, particles, keep):
    # plain reductions rather than BLAS products keep summaries bit-stable
    n = particles.shape[0]
    cols = np.ascontiguousarray(particles.T)
    mean = cols.sum(axis=-1) / n
    dev = cols - mean[:, None]
    cov = (dev[:, None, :] * dev[None, :, :]).sum(axis=-1) / n
    return Snapshot(step, theta.copy(), mean, cov, particles.copy() if keep else None)


def _check_finite(theta, particles, step, replicates=None):
    if np.all(np.isfinite(theta)) and np.all(np.isfinite(particles)):
        return
    bad = None
    if replicates is not None:
        ok = np.isfinite(theta).all(axis=-1) & np.isfinite(particles).all(axis=(-1, -2))
        bad = replicates[int(np.argmin(ok))]
    raise NumericalBlowupError(f"non-finite state produced by step {step}", step, bad)


def _drift(model, theta, particles, h):
    g_theta, g_x = model.grad(theta[..., None, :], particles)
    n = particles.shape[-2]
    # contiguous sum over particles so each replicate row reduces identically
    summed = np.ascontiguousarray(np.swapaxes(g_theta, -1, -2)).sum(axis=-1)
    g_x = h * g_x
    g_x += particles
    return theta + (h / n) * summed, g_x


def pgd_step(state, model, h, noise):
    """One PGD step with given standard normals ``noise`` (same shape as the particles)."""
    noise = np.asarray(noise, dtype=float)
    if noise.shape != state.particles.shape:
        raise ConfigurationError(f"noise shape {noise.shape} != particles {state.particles.shape}")
    theta, x = _drift(model, np.asarray(state.theta, float), np.asarray(state.particles, float), h)
    x = x + math.sqrt(2 * h) * noise
    step = state.step_index + 1
    _check_finite(theta, x, step)
    return ParticleState(theta, x, step)


def ipla_step(state, model, h, noise_x, noise_theta):
    """PGD step plus ``sqrt(2h/N) * noise_theta`` on the parameter."""
    out = pgd_step(state, model, h, noise_x)
    noise_theta = np.asarray(noise_theta, dtype=float)
    theta = out.theta + math.sqrt(2 * h / state.n_particles) * noise_theta
    _check_finite(theta, out.particles, out.step_index)
    return ParticleState(theta, out.particles, out.step_index)


def _warm_point(model):
    finder = getattr(model, "maximizer", None)
    if finder is None:
        raise ConfigurationError(
            f"warm start needs a model with a closed-form maximizer, not {type(model).__name__}")
    z = np.asarray(finder(), dtype=float)
    return z[:model.d_theta], z[model.d_theta:]


def initial_state(config, model, replicates=(0,)):
    """Batched initial state, shapes ``(R, d_theta)`` and ``(R, N, d_x)``."""
    R, N, dx, p = len(replicates), config.N, model.d_x, model.d_theta
    init = config.init
    if isinstance(init, WarmStart):
        th, x = _warm_point(model)
        theta = np.broadcast_to(th, (R, p)).copy()
        particles = np.broadcast_to(x, (R, N, dx)).copy()
    elif isinstance(init, GaussianInit):
        mean = np.asarray(init.mean, dtype=float).reshape(-1)
        cov = np.atleast_2d(np.asarray(init.cov, dtype=float))
        th = np.asarray(init.theta, dtype=float).reshape(-1)
        if mean.shape != (dx,) or cov.shape != (dx, dx) or th.shape != (p,):
            raise ConfigurationError("gaussian init dimensions do not match the model")
        try:
            chol = np.linalg.cholesky(0.5 * (cov + cov.T))
        except np.linalg.LinAlgError:
            raise ConfigurationError("gaussian init covariance is not positive definite") from None
        z = rng.normals_batch(config.seed, replicates, rng.STREAM_INIT_X, 0, 1, N, dx)[:, 0]
        particles = mean + z @ chol.T
        theta = np.broadcast_to(th, (R, p)).copy()
        if init.theta_cov is not None:
            tc = np.atleast_2d(np.asarray(init.theta_cov, dtype=float))
            try:
                tchol = np.linalg.cholesky(tc)
            except np.linalg.LinAlgError:
                raise ConfigurationError("theta_cov is not positive definite") from None
            zt = rng.normals_batch(config.seed, replicates, rng.STREAM_INIT_THETA, 0, 1, 1, p)[:, 0, 0]
            theta = theta + zt @ tchol.T
    elif isinstance(init, ExplicitInit):
        th = np.asarray(init.theta, dtype=float).reshape(-1)
        x = np.asarray(init.particles, dtype=float)
        if x.ndim == 1 and dx == 1:
            x = x[:, None]
        if th.shape != (p,) or x.shape != (N, dx):
            raise ConfigurationError(
                f"explicit init must give theta ({p},) and particles ({N}, {dx}), "
                f"got {th.shape} and {x.shape}")
        theta = np.broadcast_to(th, (R, p)).copy()
        particles = np.broadcast_to(x, (R, N, dx)).copy()
    else:
        raise ConfigurationError(f"unsupported init {init!r}")
    _check_finite(theta, particles, 0, list(replicates))
    return theta, particles


def _advance_batch(config, model, theta, particles, replicates, k0, k1, noise_hook=None):
    """Steps ``k0 .. k1 - 1`` for a replicate batch, noise drawn block-wise."""
    h, N, dx, p = config.h, config.N, model.d_x, model.d_theta
    R = len(replicates)
    per_step = max(1, R * N * dx)
    block = max(1, _BLOCK_VALUES // per_step)
    sq = math.sqrt(2 * h)
    sq_theta = math.sqrt(2 * h / N)
    k = k0
    while k < k1:
        nb = min(block, k1 - k)
        wx = rng.normals_batch(config.seed, replicates, rng.STREAM_X, k, nb, N, dx)
        if config.algorithm == "ipla":
            wt = rng.normals_batch(config.seed, replicates, rng.STREAM_THETA, k, nb, 1, p)
        if noise_hook is not None:
            noise_hook(k, wx)
        for j in range(nb):
            theta_new, particles = _drift(model, theta, particles, h)
            particles += sq * wx[:, j]
            if config.algorithm == "ipla":
                theta_new = theta_new + sq_theta * wt[:, j, 0]
            theta = theta_new
            _check_finite(theta, particles, k + j + 1, list(replicates))
        k += nb
    return theta, particles


def run_batch(config, model, replicates=(0,), checkpoints=(), noise_hook=None):
    """Run several replicates in lock-step; one :class:`Trajectory` each.

    Replicates never interact: each row evolves exactly as in a separate
    :func:`run`.  ``checkpoints`` lists extra step indices at which the full
    state is stored in ``Trajectory.checkpoints``.  ``noise_hook(k, w)``, if
    given, sees every particle-noise block before it is used; ``w`` has shape
    ``(replicates, steps, N, d_x)`` and starts at step ``k``.
    """
    replicates = [int(r) for r in replicates]
    theta, particles = initial_state(config, model, replicates)
    stride = config.stride
    stops = set(range(0, config.K + 1, stride)) | {config.K}
    checkpoints = sorted({int(c) for c in checkpoints})
    if any(c < 0 or c > config.K for c in checkpoints):
        raise ConfigurationError("checkpoints must lie in [0, K]")
    stops |= set(checkpoints)
    snaps = [[] for _ in replicates]
    saved = [dict() for _ in replicates]
    k = 0
    for stop in sorted(stops):
        theta, particles = _advance_batch(config, model, theta, particles, replicates, k, stop,
                                           noise_hook)
        k = stop
        for i in range(len(replicates)):
            if stop % stride == 0 or stop == config.K:
                snaps[i].append(_summary(stop, theta[i], particles[i], config.keep_particles))
            if stop in checkpoints:
                saved[i][stop] = ParticleState(theta[i].copy(), particles[i].copy(), stop)
    return [
        Trajectory(snaps[i], ParticleState(theta[i].copy(), particles[i].copy(), config.K), rep, saved[i])
        for i, rep in enumerate(replicates)
    ]


def _chunked_steps(config, model, theta, particles, replicate, k0, k1, workers):
    """Particle-parallel steps for one replicate; bitwise equal to the serial path."""
    h, N, dx, p = config.h, config.N, model.d_x, model.d_theta
    bounds = np.linspace(0, N, workers + 1).astype(int)
    chunks = [(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    sq = math.sqrt(2 * h)
    g_theta = np.empty((N, p))

    def work(k, a, b, th, x, out):
        gt, gx = model.grad(th[None, :], x[a:b])
        g_theta[a:b] = gt
        w = rng.normals(config.seed, replicate, rng.STREAM_X, k, 1, N, dx, a, b)[0]
        out[a:b] = (x[a:b] + h * gx) + sq * w

    with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
        for k in range(k0, k1):
            out = np.empty_like(particles)
            list(pool.map(lambda ab: work(k, ab[0], ab[1], theta, particles, out), chunks))
            summed = np.ascontiguousarray(g_theta.T).sum(axis=-1)
            theta_new = theta + (h / N) * summed
            if config.algorithm == "ipla":
                wt = rng.normals(config.seed, replicate, rng.STREAM_THETA, k, 1, 1, p)[0, 0]
                theta_new = theta_new + math.sqrt(2 * h / N) * wt
            theta, particles = theta_new, out
            _check_finite(theta, particles, k + 1, [replicate])
    return theta, particles


def run(config, model, replicate=0, workers=1):
    """Apply ``K`` steps from the configured initial state.

    ``workers > 1`` splits every step's particle update over threads; the
    result is bitwise identical to ``workers = 1``.
    """
    if workers <= 1 or config.N < 2 * workers:
        return run_batch(config, model, [replicate])[0]
    theta, particles = initial_state(config, model, [replicate])
    theta, particles = theta[0], particles[0]
    stride = config.stride
    stops = sorted(set(range(0, config.K + 1, stride)) | {config.K})
    snaps = []
    k = 0
    for stop in stops:
        theta, particles = _chunked_steps(config, model, theta, particles, replicate, k, stop, workers)
        k = stop
        snaps.append(_summary(stop, theta, particles, config.keep_particles))
    return Trajectory(snaps, ParticleState(theta.copy(), particles.copy(), config.K), replicate)


def estimate_moment(state):
    """``||theta||^2 + N^{-1} sum_n ||X^n||^2`` (per replicate if batched)."""
    theta = np.asarray(state.theta, dtype=float)
    x = np.asarray(state.particles, dtype=float)
    return np.sum(theta * theta, axis=-1) + np.mean(np.sum(x * x, axis=-1), axis=-1)
