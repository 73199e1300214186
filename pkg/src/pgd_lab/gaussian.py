"""Gaussian measures and their Wasserstein-2 geometry."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateError

__all__ = ["GaussianMeasure", "w2_gaussian", "w2_gaussian_sq", "d_metric", "sym_sqrtm"]


@dataclass(frozen=True, eq=False)
class GaussianMeasure:
    """``N(mean, cov)`` with ``cov`` symmetric positive definite."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float)).copy()
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float)).copy()
        d = mean.shape[0]
        if mean.ndim != 1 or cov.shape != (d, d):
            raise DegenerateError(f"mean {mean.shape} and cov {cov.shape} do not match")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise DegenerateError("non-finite Gaussian parameters")
        cov = 0.5 * (cov + cov.T)
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise DegenerateError("covariance is not positive definite") from None
        mean.setflags(write=False)
        cov.setflags(write=False)
        chol.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "_chol", chol)

    @property
    def dim(self):
        return self.mean.shape[0]

    @property
    def chol(self):
        return self._chol

    def logdet(self):
        return 2.0 * float(np.sum(np.log(np.diag(self._chol))))

    def entropy(self):
        return 0.5 * (self.logdet() + self.dim * (1.0 + math.log(2 * math.pi)))

    def second_moment(self):
        """``E ||X||^2``."""
        return float(self.mean @ self.mean + np.trace(self.cov))

    def log_pdf(self, x):
        x = np.asarray(x, dtype=float)
        diff = x - self.mean
        sol = np.linalg.solve(self._chol, np.moveaxis(diff, -1, 0).reshape(self.dim, -1))
        quad = np.sum(sol * sol, axis=0).reshape(diff.shape[:-1])
        return -0.5 * (quad + self.logdet() + self.dim * math.log(2 * math.pi))

    def score(self, x):
        """``grad_x log q(x) = -cov^{-1} (x - mean)``."""
        x = np.asarray(x, dtype=float)
        prec = np.linalg.inv(self.cov)
        return -(x - self.mean) @ prec

    def sample(self, z):
        """Map standard normals ``z`` (shape ``(..., d)``) to draws."""
        return self.mean + np.asarray(z) @ self._chol.T


def sym_sqrtm(S):
    """Square root of a symmetric PSD matrix via its eigendecomposition."""
    S = 0.5 * (S + S.T)
    w, V = np.linalg.eigh(S)
    if w[0] < -1e-12 * max(1.0, abs(w[-1])):
        raise DegenerateError("matrix square root of an indefinite matrix")
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def _bures_sq(A, B):
    if A.shape == (1, 1):
        return float((math.sqrt(A[0, 0]) - math.sqrt(B[0, 0])) ** 2)
    # W2^2 = tr((T - I) B (T - I)) with T the optimal map N(., B) -> N(., A);
    # T - I is formed before squaring so nearby covariances do not cancel.
    rB = sym_sqrtm(B)
    w, V = np.linalg.eigh(rB)
    if w[0] <= 0:
        raise DegenerateError("Bures distance needs a positive definite second argument")
    rB_inv = (V / w) @ V.T
    C = sym_sqrtm(rB @ A @ rB)
    E = rB_inv @ (C - B) @ rB_inv
    E = 0.5 * (E + E.T)
    return float(max(np.trace(E @ B @ E), 0.0))


def w2_gaussian_sq(a, b):
    """Squared Wasserstein-2 distance between two Gaussian measures."""
    if a.dim != b.dim:
        raise DegenerateError("Gaussian measures of different dimension")
    dm = a.mean - b.mean
    return float(dm @ dm) + _bures_sq(a.cov, b.cov)


def w2_gaussian(a, b):
    """Bures-Wasserstein distance

        W2^2 = ||m_a - m_b||^2 + tr(S_a + S_b - 2 (S_b^{1/2} S_a S_b^{1/2})^{1/2}).
    """
    return math.sqrt(w2_gaussian_sq(a, b))


def d_metric(a, b):
    """``sqrt(||theta - theta'||^2 + W2(q, q')^2)`` for pairs ``(theta, GaussianMeasure)``."""
    theta_a, q_a = a
    theta_b, q_b = b
    dt = np.asarray(theta_a, dtype=float) - np.asarray(theta_b, dtype=float)
    return math.sqrt(float(dt @ dt) + w2_gaussian_sq(q_a, q_b))
