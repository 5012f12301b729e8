"""Clean, backdoor, unified and caption-trigger denoising losses.

Squared errors are averaged over tensor elements, then over the batch, so a
batch loss is ``mean_i [eta_c_i * Lc_i + eta_p_i * Lp_i]``.  Every loss takes
``grad=True`` to also return the gradient with respect to ``model.theta``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .schedule import DiscreteSchedule, _check_step, _per_row, forward_sample
from .transition import TransitionCoeffs, correction_coefficient


@dataclass(frozen=True)
class LossWeights:
    """Utility (``eta_c``) and specificity (``eta_p``) weights; scalars or per-example arrays."""

    eta_c: float | np.ndarray = 1.0
    eta_p: float | np.ndarray = 1.0

    def __post_init__(self):
        for name in ("eta_c", "eta_p"):
            v = np.asarray(getattr(self, name), dtype=np.float64)
            if not np.all(np.isfinite(v)) or np.any(v < 0):
                raise ValueError(f"{name} must be finite and nonnegative")


def blend_trigger(x, g, M) -> np.ndarray:
    """Poisoned image ``M * g + (1 - M) * x``: the mask selects trigger pixels."""
    x, g, M = (np.asarray(v, dtype=np.float64) for v in (x, g, M))
    if not np.all((M == 0) | (M == 1)):
        raise ValueError("mask entries must be 0 or 1")
    if g.shape != M.shape:
        raise ValueError(f"trigger shape {g.shape} does not match mask {M.shape}")
    if np.broadcast_shapes(x.shape, g.shape) != x.shape:
        raise ValueError(f"data shape {x.shape} does not match trigger {g.shape}")
    return M * g + (1.0 - M) * x


def _as_batch(*arrays):
    out = [np.asarray(a, dtype=np.float64) for a in arrays]
    if out[0].ndim == 0:
        out = [a.reshape(1, 1) for a in out]
    elif out[0].ndim == 1:
        out = [a[None, :] for a in out]
    shape = out[0].shape
    for a in out[1:]:
        if a.shape != shape:
            raise ValueError(f"shape mismatch: {a.shape} vs {shape}")
    return out


def _batch_t(sched, t, n):
    t = _check_step(sched, t)
    return np.broadcast_to(t, (n,)).astype(np.int64)


def _weighted_error(model, latents, t, targets, c, w, n, grad):
    """``(1/n) sum_i w_i mean_j (eps_theta - target)^2`` over the supplied rows."""
    if latents.shape[0] == 0:
        return (0.0, np.zeros_like(model.theta)) if grad else 0.0
    if grad:
        pred, cache = model.forward(latents, t, c, keep=True)
    else:
        pred = model.forward(latents, t, c)
    diff = pred - targets
    d = diff.shape[1]
    per_row = np.mean(diff * diff, axis=1)
    value = float(np.dot(w, per_row) / n)
    if not grad:
        return value
    g = model.backward(cache, (2.0 / (n * d)) * w[:, None] * diff)
    return value, g


def _weights(w, n):
    return np.broadcast_to(np.asarray(w, dtype=np.float64), (n,))


def clean_loss(model, sched: DiscreteSchedule, x, t, eps, c=None, *, eta=1.0, grad=False):
    """``|| eps - eps_theta(alpha_hat x + beta_hat eps, t[, c]) ||^2``."""
    x, eps = _as_batch(x, eps)
    n = x.shape[0]
    tb = _batch_t(sched, t, n)
    latent = forward_sample(sched, x, None, tb, eps)
    return _weighted_error(model, latent, tb, eps, c, _weights(eta, n), n, grad)


def backdoor_target(tc: TransitionCoeffs, r, t, eps, zeta: float) -> np.ndarray:
    """eps-target carrying the trigger correction: ``eps - 2H/((1+zeta)G^2) r``."""
    coef = correction_coefficient(tc, t, zeta)
    return eps - _per_row(np.asarray(coef), eps) * r


def backdoor_loss(model, tc: TransitionCoeffs, x, y, g, M, t, eps, zeta: float, c=None, *, r=None,
                  eta=1.0, grad=False):
    """Backdoor loss on the poisoned latent ``alpha_hat y + rho_hat r + beta_hat eps``.

    ``r`` defaults to ``blend_trigger(x, g, M)``; pass it explicitly for
    pure-trigger (noise-augmentation) rows.
    """
    x, y, eps = _as_batch(x, y, eps)
    n = x.shape[0]
    tb = _batch_t(tc.sched, t, n)
    if r is None:
        r = blend_trigger(x, g, M)
    r = np.broadcast_to(np.asarray(r, dtype=np.float64).reshape(-1, x.shape[1]), x.shape)
    latent = forward_sample(tc.sched, y, r, tb, eps)
    target = backdoor_target(tc, r, tb, eps, zeta)
    return _weighted_error(model, latent, tb, target, c, _weights(eta, n), n, grad)


def unified_loss(model, tc: TransitionCoeffs, weights: LossWeights, x, t, eps, g, M, y, zeta: float, c=None, *,
                 r=None, grad=False):
    """``eta_c * clean_loss + eta_p * backdoor_loss`` sharing one noise draw.

    With a condition ``c`` this is the conditional image-trigger loss.  Rows
    with zero weight are skipped; both halves go through one forward pass.
    """
    x, eps = _as_batch(x, eps)
    n = x.shape[0]
    y = np.broadcast_to(np.asarray(y, dtype=np.float64), x.shape)
    tb = _batch_t(tc.sched, t, n)
    wc = _weights(weights.eta_c, n)
    wp = _weights(weights.eta_p, n)
    if r is None:
        r = blend_trigger(x, g, M)
    r = np.broadcast_to(np.asarray(r, dtype=np.float64), x.shape)

    ci = np.flatnonzero(wc)
    pi = np.flatnonzero(wp)
    clean_lat = forward_sample(tc.sched, x[ci], None, tb[ci], eps[ci])
    bd_lat = forward_sample(tc.sched, y[pi], r[pi], tb[pi], eps[pi])
    bd_tgt = backdoor_target(tc, r[pi], tb[pi], eps[pi], zeta) if pi.size else eps[pi]

    latents = np.concatenate([clean_lat, bd_lat])
    targets = np.concatenate([eps[ci], bd_tgt])
    ts = np.concatenate([tb[ci], tb[pi]])
    w = np.concatenate([wc[ci], wp[pi]])
    cc = None
    if c is not None:
        cc = np.asarray(c, dtype=np.float64)
        if cc.ndim == 2:
            cc = np.concatenate([cc[ci], cc[pi]])
    return _weighted_error(model, latents, ts, targets, cc, w, n, grad)


def caption_trigger_loss(model, sched: DiscreteSchedule, weights: LossWeights, x, c, t, eps, c_trig, y, *,
                         grad=False):
    """Clean image under the clean caption plus the target under the triggered caption."""
    x, eps = _as_batch(x, eps)
    n = x.shape[0]
    y = np.broadcast_to(np.asarray(y, dtype=np.float64), x.shape)
    tb = _batch_t(sched, t, n)
    wc = _weights(weights.eta_c, n)
    wp = _weights(weights.eta_p, n)
    ci = np.flatnonzero(wc)
    pi = np.flatnonzero(wp)
    c = np.broadcast_to(np.asarray(c, dtype=np.float64), (n, model.cond_dim))
    c_trig = np.broadcast_to(np.asarray(c_trig, dtype=np.float64), (n, model.cond_dim))
    latents = np.concatenate([forward_sample(sched, x[ci], None, tb[ci], eps[ci]),
                              forward_sample(sched, y[pi], None, tb[pi], eps[pi])])
    return _weighted_error(model, latents, np.concatenate([tb[ci], tb[pi]]), np.concatenate([eps[ci], eps[pi]]),
                           np.concatenate([c[ci], c_trig[pi]]), np.concatenate([wc[ci], wp[pi]]), n, grad)
