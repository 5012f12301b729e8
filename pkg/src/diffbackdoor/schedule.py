"""Scheduler families and their discrete time grids.

A schedule is the triple (content ``alpha_hat``, noise ``beta_hat``,
correction ``rho_hat``) sampled on integer steps ``0..T``.  The poisoned
forward marginal is ``N(alpha_hat[t] * x0 + rho_hat[t] * r, beta_hat[t]**2 I)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Sequence

import numpy as np


class AdmissibilityError(ValueError):
    """Raised when a scheduler pair has no valid per-step forward transition."""


class Kind(str, Enum):
    VP = "VP"
    VE = "VE"


class Correction(str, Enum):
    ONE_MINUS_ALPHA = "OneMinusAlpha"
    CONSTANT_ONE = "ConstantOne"
    CUSTOM_TABLE = "CustomTable"


@dataclass(frozen=True)
class SchedulerSpec:
    kind: Kind = Kind.VP
    T: int = 100
    vp_beta_start: float = 1e-3
    vp_beta_end: float = 0.2
    ve_sigma_min: float = 0.01
    ve_sigma_max: float = 50.0
    correction_kind: Correction | None = None
    custom_table: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if self.correction_kind is not None:
            object.__setattr__(self, "correction_kind", Correction(self.correction_kind))
        if self.custom_table is not None:
            object.__setattr__(self, "custom_table", tuple(float(v) for v in self.custom_table))

    @property
    def correction(self) -> Correction:
        if self.correction_kind is not None:
            return self.correction_kind
        # VP recovers the BadDiffusion poisoned process; VE keeps the trigger at full weight
        return Correction.ONE_MINUS_ALPHA if self.kind is Kind.VP else Correction.CONSTANT_ONE

    def validate(self) -> None:
        if int(self.T) != self.T or self.T < 1:
            raise ValueError(f"T must be a positive integer, got {self.T!r}")
        if self.kind is Kind.VP:
            if not 0.0 < self.vp_beta_start <= self.vp_beta_end < 1.0:
                raise ValueError(
                    "VP requires 0 < vp_beta_start <= vp_beta_end < 1, "
                    f"got ({self.vp_beta_start}, {self.vp_beta_end})"
                )
        else:
            if not 0.0 < self.ve_sigma_min < self.ve_sigma_max:
                raise ValueError(
                    "VE requires 0 < ve_sigma_min < ve_sigma_max, "
                    f"got ({self.ve_sigma_min}, {self.ve_sigma_max})"
                )
        if self.correction is Correction.CUSTOM_TABLE:
            table = self.custom_table
            if table is None or len(table) != self.T + 1:
                raise ValueError(f"CustomTable needs exactly T+1={self.T + 1} entries")
            if table[0] != 0.0:
                raise ValueError("CustomTable must be 0 at index 0")

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value,
            "T": self.T,
            "vp_beta_start": self.vp_beta_start,
            "vp_beta_end": self.vp_beta_end,
            "ve_sigma_min": self.ve_sigma_min,
            "ve_sigma_max": self.ve_sigma_max,
            "correction_kind": self.correction.value,
            "custom_table": list(self.custom_table) if self.custom_table is not None else None,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SchedulerSpec":
        d = dict(d)
        table = d.pop("custom_table", None)
        return cls(custom_table=tuple(table) if table is not None else None, **d)


@dataclass(frozen=True, eq=False)
class DiscreteSchedule:
    T: int
    alpha_hat: np.ndarray
    beta_hat: np.ndarray
    rho_hat: np.ndarray
    kind: Kind = Kind.VP
    betas: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        for name in ("alpha_hat", "beta_hat", "rho_hat"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != (self.T + 1,):
                raise ValueError(f"{name} must have T+1={self.T + 1} entries, got {arr.shape}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def check(self) -> None:
        """Validate the structural invariants and admissibility."""
        a, b, r = self.alpha_hat, self.beta_hat, self.rho_hat
        if a[0] != 1.0 or b[0] != 0.0 or r[0] != 0.0:
            raise AdmissibilityError("schedule must start at alpha=1, beta=0, rho=0")
        if np.any(a <= 0) or np.any(np.diff(a) > 0):
            raise AdmissibilityError("alpha_hat must be strictly positive and non-increasing")
        if np.any(np.diff(b[1:]) <= 0) or b[1] <= 0:
            raise AdmissibilityError("beta_hat must be strictly increasing on 1..T")
        w2 = self.transition_var()
        bad = np.flatnonzero(w2 <= 0)
        if bad.size:
            raise AdmissibilityError(f"w_t^2 <= 0 at t={(bad + 1).tolist()}")

    def transition_var(self) -> np.ndarray:
        """w_t^2 = beta_hat(t)^2 - (alpha_hat(t)/alpha_hat(t-1))^2 beta_hat(t-1)^2 for t=1..T."""
        k = self.alpha_hat[1:] / self.alpha_hat[:-1]
        return self.beta_hat[1:] ** 2 - k**2 * self.beta_hat[:-1] ** 2

    def to_json(self) -> str:
        doc = {
            "kind": self.kind.value,
            "T": self.T,
            "alpha_hat": self.alpha_hat.tolist(),
            "beta_hat": self.beta_hat.tolist(),
            "rho_hat": self.rho_hat.tolist(),
        }
        return json.dumps(doc, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "DiscreteSchedule":
        doc = json.loads(text)
        sched = cls(
            T=int(doc["T"]),
            alpha_hat=np.array(doc["alpha_hat"]),
            beta_hat=np.array(doc["beta_hat"]),
            rho_hat=np.array(doc["rho_hat"]),
            kind=Kind(doc["kind"]),
        )
        sched.check()
        return sched


def build_schedule(spec: SchedulerSpec) -> DiscreteSchedule:
    spec.validate()
    T = int(spec.T)
    betas = None
    if spec.kind is Kind.VP:
        betas = np.linspace(spec.vp_beta_start, spec.vp_beta_end, T) if T > 1 else np.array([spec.vp_beta_start])
        alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
        alpha_hat = np.sqrt(alpha_bar)
        beta_hat = np.sqrt(1.0 - alpha_bar)
    else:
        alpha_hat = np.ones(T + 1)
        if T == 1:
            sigmas = np.array([spec.ve_sigma_max])
        else:
            sigmas = np.geomspace(spec.ve_sigma_min, spec.ve_sigma_max, T)
        beta_hat = np.concatenate([[0.0], sigmas])

    corr = spec.correction
    if corr is Correction.ONE_MINUS_ALPHA:
        rho_hat = 1.0 - alpha_hat
    elif corr is Correction.CONSTANT_ONE:
        rho_hat = np.ones(T + 1)
        rho_hat[0] = 0.0
    else:
        rho_hat = np.array(spec.custom_table, dtype=np.float64)

    sched = DiscreteSchedule(T=T, alpha_hat=alpha_hat, beta_hat=beta_hat, rho_hat=rho_hat, kind=spec.kind, betas=betas)
    sched.check()
    return sched


def _check_step(sched: DiscreteSchedule, t) -> np.ndarray:
    t = np.asarray(t)
    if not np.issubdtype(t.dtype, np.integer):
        if np.any(t != np.round(t)):
            raise ValueError(f"step index must be integral, got {t!r}")
        t = t.astype(np.int64)
    if np.any(t < 1) or np.any(t > sched.T):
        raise ValueError(f"step index out of range 1..{sched.T}: {t!r}")
    return t


def _per_row(coef: np.ndarray, like: np.ndarray) -> np.ndarray:
    """Broadcast per-example coefficients of shape (n,) against a (n, ...) batch."""
    if coef.ndim == 0:
        return coef
    return coef.reshape(coef.shape + (1,) * (like.ndim - coef.ndim))


def forward_sample(sched: DiscreteSchedule, x0, r, t, eps) -> np.ndarray:
    """Closed-form latent ``alpha_hat(t) x0 + rho_hat(t) r + beta_hat(t) eps``.

    ``t`` may be a scalar or one step per leading row of ``x0``.  With ``r`` set
    to ``None`` the correction term is dropped (clean forward process).
    """
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != x0.shape:
        raise ValueError(f"shape mismatch: x0 {x0.shape} vs eps {eps.shape}")
    t = _check_step(sched, t)
    out = _per_row(sched.alpha_hat[t], x0) * x0 + _per_row(sched.beta_hat[t], x0) * eps
    if r is not None:
        r = np.asarray(r, dtype=np.float64)
        if r.shape != x0.shape:
            raise ValueError(f"shape mismatch: x0 {x0.shape} vs r {r.shape}")
        out = out + _per_row(sched.rho_hat[t], x0) * r
    return out
