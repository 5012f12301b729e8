"""Posterior (a, b, c, s) and reverse-SDE (F, G, H) coefficients."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .reparam import ReparamCoeffs, compute_reparam
from .schedule import DiscreteSchedule


@dataclass(frozen=True, eq=False)
class TransitionCoeffs:
    """Coefficient arrays indexed by ``t - 1`` for ``t = 1..T``.

    The backdoor posterior is ``N(a x'_t + b x'_0 + c r, s^2 I)`` and the
    reverse dynamics read ``dx = [F x - (1+zeta)/2 G^2 eps] dt + G sqrt(zeta beta_hat) dw``.
    """

    sched: DiscreteSchedule
    rc: ReparamCoeffs
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    s: np.ndarray
    F: np.ndarray
    G: np.ndarray
    H: np.ndarray

    @property
    def T(self) -> int:
        return self.sched.T

    def table(self) -> np.ndarray:
        """Rows ``t, k, w, h, a, b, c, s, F, G, H`` for t = 1..T."""
        t = np.arange(1, self.T + 1, dtype=np.float64)
        return np.column_stack([t, self.rc.k, self.rc.w, self.rc.h, self.a, self.b, self.c, self.s, self.F, self.G, self.H])


def compute_transition(sched: DiscreteSchedule, rc: ReparamCoeffs | None = None) -> TransitionCoeffs:
    if rc is None:
        rc = compute_reparam(sched)
    if rc.T != sched.T:
        raise ValueError("reparam coefficients do not match the schedule length")
    alpha, beta, rho = sched.alpha_hat, sched.beta_hat, sched.rho_hat
    k, w, h = rc.k, rc.w, rc.h
    a_prev, b_prev, r_prev = alpha[:-1], beta[:-1], rho[:-1]
    a_t, b_t, r_t = alpha[1:], beta[1:], rho[1:]

    denom = k**2 * b_prev**2 + w**2
    if np.any(denom <= 0) or np.any(b_t <= 0):
        raise ZeroDivisionError("beta_hat(t) vanishes on t >= 1")
    a = k * b_prev**2 / denom
    b = a_prev * w**2 / denom
    # squared beta_hat(t-1): the form that makes a*rho(t) + c = rho(t-1) hold
    c = (w**2 * r_prev - k * h * b_prev**2) / denom
    s = np.sqrt(b / a_t) * b_t
    F = a + b / a_t - 1.0
    G = np.sqrt(b * b_t / a_t)
    H = c - b * r_t / a_t
    return TransitionCoeffs(sched=sched, rc=rc, a=a, b=b, c=c, s=s, F=F, G=G, H=H)


def correction_coefficient(tc: TransitionCoeffs, t, zeta: float):
    """Trigger weight ``2 H(t) / ((1 + zeta) G(t)^2)`` in the backdoor eps-target.

    Accepts a scalar step or an integer array of steps.
    """
    t = np.asarray(t)
    if np.any(t < 1) or np.any(t > tc.T):
        raise ValueError(f"step index out of range 1..{tc.T}: {t!r}")
    if not 0.0 <= zeta <= 1.0:
        raise ValueError(f"zeta must lie in [0, 1], got {zeta}")
    idx = t.astype(np.int64) - 1
    out = 2.0 * tc.H[idx] / ((1.0 + zeta) * tc.G[idx] ** 2)
    return float(out) if out.ndim == 0 else out
