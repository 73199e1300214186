"""Latent variable models with analytic gradients.

A model is an object with integer attributes ``d_theta`` and ``d_x`` and two
evaluators, ``log_lik(theta, x)`` and ``grad(theta, x)``.  Both broadcast over
leading axes: ``theta`` has shape ``(..., d_theta)`` and ``x`` has shape
``(..., d_x)``.  The samplers call them with ``theta[:, None, :]`` against a
``(replicates, particles, d_x)`` array.

Gradients are assembled from elementwise numpy operations (no BLAS), so the
value computed for one row never depends on how many rows were evaluated
together.  Batched and single-replicate runs therefore agree bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import ConfigurationError, DegenerateError, NotStronglyConcaveError
from .gaussian import GaussianMeasure

__all__ = [
    "LatentModel",
    "QuadraticModel",
    "FactorizedGaussianModel",
    "LogisticModel",
    "toy_model",
    "log_lik",
    "grad",
    "concavity_constants",
    "analytic_optimum",
    "posterior",
    "log_marginal",
    "shift_to_origin",
    "load_model",
    "model_from_dict",
]


def _as_float_array(value, name):
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"{name}: not numeric ({exc})") from None
    return arr


def _linear_combination(columns, rows):
    """sum_j columns[..., j, None] * rows[j], in a fixed order."""
    out = None
    for j in range(rows.shape[0]):
        term = columns[..., j, None] * rows[j]
        out = term if out is None else out + term
    return out


def _row_sum(values):
    # contiguous last-axis reduction: numpy's pairwise sum, identical per row
    return np.ascontiguousarray(values).sum(axis=-1)


class LatentModel:
    """Interface every model implements."""

    d_theta: int
    d_x: int

    def log_lik(self, theta, x):
        raise NotImplementedError

    def grad(self, theta, x):
        raise NotImplementedError

    def grad_theta(self, theta, x):
        return self.grad(theta, x)[0]

    def grad_x(self, theta, x):
        return self.grad(theta, x)[1]

    def _check(self, theta, x):
        theta = np.asarray(theta, dtype=float)
        x = np.asarray(x, dtype=float)
        if theta.ndim == 0 or theta.shape[-1] != self.d_theta:
            raise ConfigurationError(
                f"theta has trailing dimension {theta.shape[-1:] or '()'}, "
                f"model expects {self.d_theta}")
        if x.ndim == 0 or x.shape[-1] != self.d_x:
            raise ConfigurationError(
                f"x has trailing dimension {x.shape[-1:] or '()'}, model expects {self.d_x}")
        return theta, x


@dataclass(frozen=True, eq=False)
class QuadraticModel(LatentModel):
    """``l(z) = 1/2 z^T H z + b^T z + c`` with ``z = (theta, x)``.

    ``H`` only has to be symmetric here; strong concavity is checked by the
    operations that rely on it.
    """

    H: np.ndarray
    b: np.ndarray
    c: float
    d_theta: int
    d_x: int = field(init=False)

    def __post_init__(self):
        H = _as_float_array(self.H, "H")
        b = _as_float_array(self.b, "b")
        if H.ndim != 2 or H.shape[0] != H.shape[1]:
            raise ConfigurationError(f"H must be square, got shape {H.shape}")
        d = H.shape[0]
        if b.shape != (d,):
            raise ConfigurationError(f"b must have shape ({d},), got {b.shape}")
        if not np.all(np.isfinite(H)) or not np.all(np.isfinite(b)):
            raise ConfigurationError("H and b must be finite")
        scale = max(1.0, float(np.max(np.abs(H))))
        if np.max(np.abs(H - H.T)) > 1e-12 * scale:
            raise ConfigurationError("H must be symmetric")
        if not 1 <= int(self.d_theta) < d:
            raise ConfigurationError(f"d_theta must lie in [1, {d - 1}], got {self.d_theta}")
        H = 0.5 * (H + H.T)
        H.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", float(self.c))
        object.__setattr__(self, "d_theta", int(self.d_theta))
        object.__setattr__(self, "d_x", d - int(self.d_theta))

    @property
    def dim(self):
        return self.d_theta + self.d_x

    def blocks(self):
        """Partition ``(A, B, C, b_theta, b_x)`` of ``H`` and ``b``."""
        p = self.d_theta
        H = self.H
        return H[:p, :p], H[:p, p:], H[p:, p:], self.b[:p], self.b[p:]

    def _hz(self, theta, x):
        p = self.d_theta
        return _linear_combination(theta, self.H[:p]) + _linear_combination(x, self.H[p:])

    def log_lik(self, theta, x):
        theta, x = self._check(theta, x)
        hz = self._hz(theta, x)
        p = self.d_theta
        # z . (Hz/2 + b) split over the theta and x coordinates
        t_part = _row_sum(theta * (0.5 * hz[..., :p] + self.b[:p]))
        x_part = _row_sum(x * (0.5 * hz[..., p:] + self.b[p:]))
        return t_part + x_part + self.c

    def grad(self, theta, x):
        theta, x = self._check(theta, x)
        p = self.d_theta
        H, b = self.H, self.b
        g_theta = _linear_combination(theta, H[:p, :p]) + _linear_combination(x, H[p:, :p])
        g_x = _linear_combination(x, H[p:, p:]) + _linear_combination(theta, H[:p, p:])
        g_theta += b[:p]
        g_x += b[p:]
        return g_theta, g_x

    def maximizer(self):
        """``z_dagger = -H^{-1} b`` (requires strong concavity)."""
        concavity_constants(self)
        return -np.linalg.solve(self.H, self.b)

    def as_quadratic(self):
        return self


@dataclass(frozen=True, eq=False)
class FactorizedGaussianModel(LatentModel):
    """Sum of ``M`` per-datapoint quadratic blocks sharing ``theta``.

    Block ``m`` is ``1/2 w^T H_block w + b_blocks[m]^T w + c_blocks[m]`` with
    ``w = (theta, x_m)`` and ``x_m`` the ``m``-th slice of length
    ``d_x_block`` of the latent vector.
    """

    H_block: np.ndarray
    b_blocks: np.ndarray
    c_blocks: np.ndarray
    d_theta: int
    M: int = field(init=False)
    d_x_block: int = field(init=False)
    d_x: int = field(init=False)

    def __post_init__(self):
        Hb = _as_float_array(self.H_block, "H_block")
        bb = np.atleast_2d(_as_float_array(self.b_blocks, "b_blocks"))
        cb = np.atleast_1d(_as_float_array(self.c_blocks, "c_blocks"))
        if Hb.ndim != 2 or Hb.shape[0] != Hb.shape[1]:
            raise ConfigurationError("H_block must be square")
        db = Hb.shape[0]
        p = int(self.d_theta)
        if not 1 <= p < db:
            raise ConfigurationError(f"d_theta must lie in [1, {db - 1}]")
        if bb.ndim != 2 or bb.shape[1] != db:
            raise ConfigurationError(f"b_blocks must have shape (M, {db})")
        if cb.shape != (bb.shape[0],):
            raise ConfigurationError("c_blocks must have one entry per block")
        if np.max(np.abs(Hb - Hb.T)) > 1e-12 * max(1.0, float(np.max(np.abs(Hb)))):
            raise ConfigurationError("H_block must be symmetric")
        Hb = 0.5 * (Hb + Hb.T)
        for arr in (Hb, bb, cb):
            arr.setflags(write=False)
        object.__setattr__(self, "H_block", Hb)
        object.__setattr__(self, "b_blocks", bb)
        object.__setattr__(self, "c_blocks", cb)
        object.__setattr__(self, "d_theta", p)
        object.__setattr__(self, "M", bb.shape[0])
        object.__setattr__(self, "d_x_block", db - p)
        object.__setattr__(self, "d_x", bb.shape[0] * (db - p))

    @classmethod
    def linear_gaussian(cls, observations, emission=None, noise_var=1.0, prior_map=None,
                        prior_precision=1.0, normalized=True):
        """Blocks of ``y_m = F x_m + eta``, ``eta ~ N(0, noise_var I)``, ``x_m ~ N(G theta, I/prior_precision)``.

        ``observations`` is ``(M, d_y)`` (or flat when ``d_y == 1``).  The
        defaults give the scalar toy block ``x_m ~ N(theta, 1)``,
        ``y_m | x_m ~ N(x_m, 1)``.
        """
        y = _as_float_array(observations, "observations")
        F = np.eye(1) if emission is None else np.atleast_2d(_as_float_array(emission, "emission"))
        dy, dxb = F.shape
        if y.ndim == 1:
            if y.size % dy:
                raise ConfigurationError("observation count is not a multiple of d_y")
            y = y.reshape(-1, dy)
        if y.shape[1] != dy:
            raise ConfigurationError("observations do not match the emission matrix")
        G = np.ones((dxb, 1)) if prior_map is None else np.atleast_2d(
            _as_float_array(prior_map, "prior_map"))
        if G.shape[0] != dxb:
            raise ConfigurationError("prior_map must have d_x_block rows")
        p = G.shape[1]
        s2 = float(noise_var)
        tau = float(prior_precision)
        if s2 <= 0 or tau <= 0:
            raise ConfigurationError("noise_var and prior_precision must be positive")
        Hb = np.zeros((p + dxb, p + dxb))
        Hb[:p, :p] = -tau * G.T @ G
        Hb[:p, p:] = tau * G.T
        Hb[p:, :p] = tau * G
        Hb[p:, p:] = -tau * np.eye(dxb) - F.T @ F / s2
        M = y.shape[0]
        bb = np.zeros((M, p + dxb))
        bb[:, p:] = y @ F / s2
        cb = -0.5 * np.sum(y * y, axis=1) / s2
        if normalized:
            cb = cb - 0.5 * dy * math.log(2 * math.pi * s2) + 0.5 * dxb * math.log(tau / (2 * math.pi))
        return cls(Hb, bb, cb, p)

    def _block_view(self, x):
        return x.reshape(x.shape[:-1] + (self.M, self.d_x_block))

    def _block_affine(self, theta, xb):
        p = self.d_theta
        t = theta[..., None, :]
        return (_linear_combination(t, self.H_block[:p])
                + _linear_combination(xb, self.H_block[p:]))

    def block_log_liks(self, theta, x):
        """Per-datapoint terms, shape ``(..., M)``."""
        theta, x = self._check(theta, x)
        xb = self._block_view(x)
        hw = self._block_affine(theta, xb)
        p = self.d_theta
        t = np.broadcast_to(theta[..., None, :], hw.shape[:-1] + (p,))
        t_part = _row_sum(t * (0.5 * hw[..., :p] + self.b_blocks[:, :p]))
        x_part = _row_sum(xb * (0.5 * hw[..., p:] + self.b_blocks[:, p:]))
        return t_part + x_part + self.c_blocks

    def log_lik(self, theta, x):
        return _row_sum(self.block_log_liks(theta, x))

    def grad(self, theta, x):
        theta, x = self._check(theta, x)
        xb = self._block_view(x)
        g = self._block_affine(theta, xb) + self.b_blocks
        p = self.d_theta
        g_theta = _row_sum(np.swapaxes(g[..., :p], -1, -2))
        g_x = g[..., p:].reshape(g.shape[:-2] + (self.d_x,))
        return g_theta, g_x

    def as_quadratic(self):
        """The equivalent dense :class:`QuadraticModel` on ``(theta, x_1..x_M)``."""
        p, q, M = self.d_theta, self.d_x_block, self.M
        A, B, C = self.H_block[:p, :p], self.H_block[:p, p:], self.H_block[p:, p:]
        d = p + M * q
        H = np.zeros((d, d))
        H[:p, :p] = M * A
        b = np.zeros(d)
        b[:p] = self.b_blocks[:, :p].sum(axis=0)
        for m in range(M):
            sl = slice(p + m * q, p + (m + 1) * q)
            H[:p, sl] = B
            H[sl, :p] = B.T
            H[sl, sl] = C
            b[sl] = self.b_blocks[m, p:]
        return QuadraticModel(H, b, float(self.c_blocks.sum()), p)

    def block_constants(self):
        """``(lambda_block, L_block)`` of a single block's negative Hessian."""
        ev = np.linalg.eigvalsh(-self.H_block)
        if ev[0] <= 0:
            raise NotStronglyConcaveError("block Hessian is not negative definite")
        return float(ev[0]), float(ev[-1])

    def maximizer(self):
        return self.as_quadratic().maximizer()


@dataclass(frozen=True, eq=False)
class LogisticModel(LatentModel):
    """Bayesian logistic regression with a learnable prior mean.

    Weights ``x`` have prior ``N(theta * 1, I / prior_precision_x)`` and the
    scalar ``theta`` carries a Gaussian penalty of precision
    ``prior_precision_theta``; labels are Bernoulli with logits ``design @ x``.
    """

    design: np.ndarray
    labels: np.ndarray
    prior_precision_x: float = 1.0
    prior_precision_theta: float = 1.0
    d_theta: int = field(init=False, default=1)
    d_x: int = field(init=False)

    def __post_init__(self):
        A = np.atleast_2d(_as_float_array(self.design, "design"))
        y = _as_float_array(self.labels, "labels")
        if y.shape != (A.shape[0],):
            raise ConfigurationError("labels must have one entry per design row")
        if not np.all((y == 0) | (y == 1)):
            raise ConfigurationError("labels must be 0 or 1")
        if self.prior_precision_x <= 0 or self.prior_precision_theta <= 0:
            raise ConfigurationError("prior precisions must be positive")
        A.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "design", A)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "d_theta", 1)
        object.__setattr__(self, "d_x", A.shape[1])

    def _logits(self, x):
        return _linear_combination(x, np.ascontiguousarray(self.design.T))

    def log_lik(self, theta, x):
        theta, x = self._check(theta, x)
        s = self._logits(x)
        data = _row_sum(self.labels * s - np.logaddexp(0.0, s))
        dev = x - theta
        prior = -0.5 * self.prior_precision_x * _row_sum(dev * dev)
        return data + prior - 0.5 * self.prior_precision_theta * theta[..., 0] ** 2

    def grad(self, theta, x):
        theta, x = self._check(theta, x)
        resid = self.labels - expit(self._logits(x))
        g_data = np.stack([_row_sum(resid * self.design[:, j]) for j in range(self.d_x)], axis=-1)
        dev = x - theta
        g_x = g_data - self.prior_precision_x * dev
        g_theta = (self.prior_precision_x * _row_sum(dev) - self.prior_precision_theta * theta[..., 0])
        return g_theta[..., None], g_x

    def prior_hessian(self):
        d = self.d_x
        P = np.zeros((d + 1, d + 1))
        tx, tt = self.prior_precision_x, self.prior_precision_theta
        P[0, 0] = tx * d + tt
        P[0, 1:] = P[1:, 0] = -tx
        P[1:, 1:] = tx * np.eye(d)
        return P

    def concavity_bounds(self):
        """``(lambda_lower, L_upper)``: the logistic term adds between 0 and ``||A||^2 / 4``."""
        ev = np.linalg.eigvalsh(self.prior_hessian())
        smax = np.linalg.norm(self.design, 2)
        return float(ev[0]), float(ev[-1] + 0.25 * smax**2)


def toy_model(y=1.0, normalized=True):
    """Scalar reference model: ``x ~ N(theta, 1)``, ``y | x ~ N(x, 1)``.

    With ``normalized`` the constant makes ``l`` the log joint density, so
    ``log Z_theta`` is the log of the ``N(theta, 2)`` density at ``y``.
    Otherwise ``l = -(y - x)^2 / 2 - (x - theta)^2 / 2``.
    """
    y = float(y)
    c = -0.5 * y * y
    if normalized:
        c -= math.log(2 * math.pi)
    return QuadraticModel(np.array([[-1.0, 1.0], [1.0, -2.0]]), np.array([0.0, y]), c, 1)


def log_lik(model, theta, x):
    return model.log_lik(theta, x)


def grad(model, theta, x):
    """``(grad_theta l, grad_x l)`` at ``(theta, x)``."""
    return model.grad(theta, x)


def concavity_constants(model):
    """``(lambda, L)``: extreme eigenvalues of ``-H``.

    Raises
    ------
    NotStronglyConcaveError
        If ``-H`` has a non-positive eigenvalue.
    """
    if isinstance(model, FactorizedGaussianModel):
        model = model.as_quadratic()
    if not isinstance(model, QuadraticModel):
        raise TypeError("concavity constants need a quadratic or factorized model")
    ev = np.linalg.eigvalsh(-model.H)
    if ev[0] <= 0:
        raise NotStronglyConcaveError(
            f"-H has smallest eigenvalue {ev[0]:.3e}; model is not strongly concave")
    return float(ev[0]), float(ev[-1])


def _quadratic(model):
    if isinstance(model, QuadraticModel):
        return model
    if isinstance(model, FactorizedGaussianModel):
        return model.as_quadratic()
    raise TypeError("closed forms are only available for quadratic models")


def _posterior_precision(model):
    _, _, C, _, _ = model.blocks()
    P = -C
    try:
        np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        raise DegenerateError("latent block -H_xx is not positive definite") from None
    return P


def posterior(model, theta):
    """Exact Gaussian conditional ``pi_theta`` of ``x`` given ``theta``."""
    model = _quadratic(model)
    _, B, _, _, bx = model.blocks()
    P = _posterior_precision(model)
    theta = np.asarray(theta, dtype=float)
    cov = np.linalg.inv(P)
    mean = cov @ (B.T @ theta + bx)
    return GaussianMeasure(mean, 0.5 * (cov + cov.T))


def log_marginal(model, theta):
    """``log Z_theta = log int exp(l(theta, x)) dx``."""
    model = _quadratic(model)
    P = _posterior_precision(model)
    post = posterior(model, theta)
    _, logdet = np.linalg.slogdet(P)
    value = model.log_lik(np.asarray(theta, dtype=float), post.mean)
    return float(value + 0.5 * model.d_x * math.log(2 * math.pi) - 0.5 * logdet)


def analytic_optimum(model):
    """``(theta_star, pi_star)``: marginal-likelihood maximizer and its posterior.

    ``theta_star`` solves the Schur-complement system
    ``(A - B C^{-1} B^T) theta = -(b_theta - B C^{-1} b_x)``.
    """
    model = _quadratic(model)
    concavity_constants(model)
    A, B, C, bt, bx = model.blocks()
    _posterior_precision(model)
    Cinv_Bt = np.linalg.solve(C, B.T)
    Cinv_bx = np.linalg.solve(C, bx)
    schur = A - B @ Cinv_Bt
    theta = -np.linalg.solve(schur, bt - B @ Cinv_bx)
    return theta, posterior(model, theta)


def shift_to_origin(model):
    """Translate so the joint maximizer sits at 0 with ``max l = 0``."""
    if isinstance(model, FactorizedGaussianModel):
        model.block_constants()
        return FactorizedGaussianModel(model.H_block, np.zeros_like(model.b_blocks),
                                       np.zeros_like(model.c_blocks), model.d_theta)
    if isinstance(model, QuadraticModel):
        concavity_constants(model)
        return QuadraticModel(model.H, np.zeros_like(model.b), 0.0, model.d_theta)
    raise TypeError("shift_to_origin needs a quadratic or factorized model")


# --------------------------------------------------------------------------
# TOML / dict loading


def _require(table, key, kind):
    if key not in table:
        raise ConfigurationError(f"model kind '{kind}' requires field '{key}'")
    return table[key]


def model_from_dict(table, base_dir=None):
    """Build a model from a parsed ``[model]`` table.

    ``file = "path.toml"`` loads the model from another file (relative to
    ``base_dir``); ``shift_to_origin = true`` centres the result.
    """
    table = dict(table)
    if "file" in table:
        path = Path(table.pop("file"))
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        inner = load_model(path)
        return shift_to_origin(inner) if table.get("shift_to_origin") else inner
    kind = table.get("kind")
    if kind == "toy":
        model = toy_model(table.get("y", 1.0), table.get("normalized", True))
    elif kind == "quadratic":
        model = QuadraticModel(_require(table, "H", kind), _require(table, "b", kind),
                               table.get("c", 0.0), _require(table, "d_theta", kind))
    elif kind == "factorized_gaussian":
        if "H_block" in table:
            bb = _require(table, "b_blocks", kind)
            cb = table.get("c_blocks", np.zeros(len(bb)))
            model = FactorizedGaussianModel(table["H_block"], bb, cb, _require(table, "d_theta", kind))
        else:
            model = FactorizedGaussianModel.linear_gaussian(
                _require(table, "observations", kind),
                emission=table.get("emission"),
                noise_var=table.get("noise_var", 1.0),
                prior_map=table.get("prior_map"),
                prior_precision=table.get("prior_precision", 1.0),
                normalized=table.get("normalized", True),
            )
    elif kind == "logistic":
        model = LogisticModel(_require(table, "design", kind), _require(table, "labels", kind),
                              table.get("prior_precision_x", 1.0),
                              table.get("prior_precision_theta", 1.0))
    else:
        raise ConfigurationError(
            f"unknown model kind {kind!r}; expected quadratic, factorized_gaussian, logistic or toy")
    if table.get("shift_to_origin"):
        model = shift_to_origin(model)
    return model


def load_model(path):
    """Load a model TOML file (either a top-level table or a ``[model]`` table)."""
    from .config import read_toml

    path = Path(path)
    data = read_toml(path)
    table = data.get("model", data)
    return model_from_dict(table, base_dir=path.parent)
