"""Per-step forward transition coefficients recovered from a schedule.

The one-step kernel is ``q(x_t | x_{t-1}) = N(k_t x_{t-1} + h_t r, w_t^2 I)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .schedule import AdmissibilityError, DiscreteSchedule


@dataclass(frozen=True, eq=False)
class ReparamCoeffs:
    """Arrays indexed by ``t - 1`` for steps ``t = 1..T``."""

    k: np.ndarray
    w: np.ndarray
    h: np.ndarray

    @property
    def T(self) -> int:
        return self.k.size

    def at(self, t: int) -> tuple[float, float, float]:
        return float(self.k[t - 1]), float(self.w[t - 1]), float(self.h[t - 1])


def compute_reparam(sched: DiscreteSchedule) -> ReparamCoeffs:
    alpha, beta, rho = sched.alpha_hat, sched.beta_hat, sched.rho_hat
    k = alpha[1:] / alpha[:-1]
    w2 = beta[1:] ** 2 - k**2 * beta[:-1] ** 2
    bad = np.flatnonzero(w2 <= 0)
    if bad.size:
        raise AdmissibilityError(f"invalid scheduler pair: w_t^2 <= 0 at t={(bad + 1).tolist()}")
    w = np.sqrt(w2)

    # sum_{i<t} (prod_{j=i+1..t} k_j) h_i telescopes to k_t * rho_hat(t-1)
    h = rho[1:] - k * rho[:-1]
    return ReparamCoeffs(k=k, w=w, h=h)
