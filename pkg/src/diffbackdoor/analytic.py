"""Closed-form oracles: the optimal eps-predictor for Gaussian data and a
literal O(T^2) evaluation of the forward-transition sums."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .reparam import ReparamCoeffs
from .schedule import AdmissibilityError, DiscreteSchedule


@dataclass(frozen=True, eq=False)
class GaussianData:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        cov = np.asarray(self.cov, dtype=np.float64)
        if cov.ndim == 1:
            cov = np.diag(cov)
        elif cov.ndim == 0:
            cov = np.eye(mean.size) * float(cov)
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"covariance shape {cov.shape} does not match mean of size {mean.size}")
        if np.linalg.eigvalsh((cov + cov.T) / 2).min() < -1e-12:
            raise ValueError("covariance must be positive semi-definite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    def marginal(self, sched: DiscreteSchedule, t: int) -> tuple[np.ndarray, np.ndarray]:
        """Mean and covariance of the clean forward marginal at step ``t``."""
        a, b = sched.alpha_hat[t], sched.beta_hat[t]
        return a * self.mean, a**2 * self.cov + b**2 * np.eye(self.dim)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.multivariate_normal(self.mean, self.cov, size=n, method="eigh")


def analytic_eps(gd: GaussianData, sched: DiscreteSchedule, x, t) -> np.ndarray:
    """Optimal predictor ``beta_hat(t) * Sigma_t^{-1} (x - alpha_hat(t) mu0)``.

    Equal to ``-beta_hat(t) * grad log q_t(x)``; ``x`` is ``(d,)`` or ``(n, d)``.
    """
    if not 1 <= t <= sched.T:
        raise ValueError(f"step index out of range 1..{sched.T}: {t}")
    mean_t, cov_t = gd.marginal(sched, t)
    x = np.asarray(x, dtype=np.float64)
    diff = x - mean_t
    sol = np.linalg.solve(cov_t, diff.T).T
    return sched.beta_hat[t] * sol


class AnalyticModel:
    """Adapter exposing :func:`analytic_eps` through the denoiser call signature."""

    cond_dim = 0

    def __init__(self, gd: GaussianData, sched: DiscreteSchedule):
        self.gd = gd
        self.sched = sched

    def __call__(self, x, t, c=None):
        t = np.asarray(t)
        if t.ndim == 0:
            return analytic_eps(self.gd, self.sched, x, int(t))
        out = np.empty_like(np.asarray(x, dtype=np.float64))
        for tv in np.unique(t):
            rows = t == tv
            out[rows] = analytic_eps(self.gd, self.sched, x[rows], int(tv))
        return out


def brute_reparam(sched: DiscreteSchedule) -> ReparamCoeffs:
    """Literal evaluation of the product/sum expressions for k, w and h."""
    T = sched.T
    alpha, beta, rho = sched.alpha_hat, sched.beta_hat, sched.rho_hat
    k = np.empty(T)
    w = np.empty(T)
    h = np.empty(T)
    for t in range(1, T + 1):
        k[t - 1] = alpha[t] / alpha[t - 1]
        acc_w = 0.0
        acc_h = 0.0
        prod = 1.0
        # walk i downwards so prod_{j=i+1..t} k_j grows by one factor per term
        for i in range(t - 1, 0, -1):
            prod *= k[i]
            acc_w += (prod * w[i - 1]) ** 2
            acc_h += prod * h[i - 1]
        w2 = beta[t] ** 2 - acc_w
        if w2 <= 0:
            raise AdmissibilityError(f"invalid scheduler pair: w_t^2 <= 0 at t={t}")
        w[t - 1] = np.sqrt(w2)
        h[t - 1] = rho[t] - acc_h
    return ReparamCoeffs(k=k, w=w, h=h)


def baddiffusion_loss(model, betas, x, y, r, t, eps, *, eta=1.0, grad=False):
    """Poisoned-data loss written directly from the DDPM closed forms.

    Uses only the raw beta table: ``abar_t = prod(1 - beta)``, latent
    ``sqrt(abar) y + (1 - sqrt(abar)) r + sqrt(1 - abar) eps`` and the trigger
    weight ``(1 - sqrt(1 - beta_t)) sqrt(1 - abar_t) / beta_t`` added to eps.
    Kept independent of the reparametrisation code so it can cross-check it.
    """
    betas = np.asarray(betas, dtype=np.float64)
    abar = np.cumprod(1.0 - betas)
    x, y, r, eps = (np.atleast_2d(np.asarray(v, dtype=np.float64)) for v in (x, y, r, eps))
    n, d = eps.shape
    y = np.broadcast_to(y, (n, d))
    r = np.broadcast_to(r, (n, d))
    t = np.broadcast_to(np.asarray(t, dtype=np.int64), (n,))
    ab = abar[t - 1][:, None]
    bt = betas[t - 1][:, None]
    latent = np.sqrt(ab) * y + (1.0 - np.sqrt(ab)) * r + np.sqrt(1.0 - ab) * eps
    target = eps + (1.0 - np.sqrt(1.0 - bt)) * np.sqrt(1.0 - ab) / bt * r
    w = np.broadcast_to(np.asarray(eta, dtype=np.float64), (n,))
    if grad:
        pred, cache = model.forward(latent, t, None, keep=True)
    else:
        pred = model(latent, t)
    diff = pred - target
    value = float(np.dot(w, np.mean(diff**2, axis=1)) / n)
    if not grad:
        return value
    return value, model.backward(cache, (2.0 / (n * d)) * w[:, None] * diff)
