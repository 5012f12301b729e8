"""Sampled-loss training loops for unconditional and caption-conditioned models."""
from __future__ import annotations

import logging
from dataclasses import dataclass, asdict

import numpy as np

from .analytic import baddiffusion_loss
from .denoiser import Denoiser, NumericAbort, OptimState, step
from .loss import LossWeights, caption_trigger_loss, clean_loss, unified_loss
from .transition import TransitionCoeffs

log = logging.getLogger(__name__)

VARIANTS = ("villan", "baddiffusion")


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 20000
    batch_size: int = 64
    lr: float = 1e-3
    zeta: float = 1.0
    seed: int = 0
    variant: str = "villan"
    log_every: int = 500
    schedule: str = "cosine"
    checkpoint_every: int = 0
    ema: float = 0.0

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1 or self.lr <= 0 or self.log_every < 1 or self.checkpoint_every < 0:
            raise ValueError("steps, batch_size, lr, log_every or checkpoint_every out of range")
        if not 0.0 <= self.zeta <= 1.0:
            raise ValueError(f"zeta must lie in [0, 1], got {self.zeta}")
        if self.schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown learning-rate schedule {self.schedule!r}")
        if not 0.0 <= self.ema < 1.0:
            raise ValueError(f"ema decay must lie in [0, 1), got {self.ema}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown loss variant {self.variant!r}")

    def to_dict(self):
        return asdict(self)


def _poison_term(model, tc, cfg, x, y, r, t, eps, eta_p, c):
    if tc.sched.betas is None or c is not None:
        raise ValueError("the BadDiffusion loss needs an unconditional VP schedule with a beta table")
    return baddiffusion_loss(model, tc.sched.betas, x, y, r, t, eps, eta=eta_p, grad=True)


def train(model: Denoiser, tc: TransitionCoeffs, data: dict, target, cfg: TrainConfig, *, caption_mode: bool = False,
          on_log=None, on_checkpoint=None) -> tuple[Denoiser, list[dict]]:
    """Run ``cfg.steps`` Adam updates on uniformly drawn (example, t, eps) triples.

    ``data`` holds arrays ``x, r, eta_c, eta_p`` and optionally ``condition``
    (and ``condition_trig`` in caption mode).  Returns the model and the log
    rows ``{step, clean_loss, backdoor_loss}``.  ``on_checkpoint(model, step)``
    fires every ``cfg.checkpoint_every`` steps when that is positive.  With
    ``cfg.ema > 0`` the returned weights are the exponential moving average;
    losses and checkpoints track the live weights.
    """
    opt = OptimState.for_model(model, lr=cfg.lr)
    y = np.asarray(target, dtype=np.float64)
    rows = []
    avg = model.theta.copy() if cfg.ema > 0 else None
    with np.errstate(over="ignore", invalid="ignore"):
        # overflow surfaces as a non-finite loss and aborts below
        _loop(model, tc, cfg, opt, data, y, rows, avg, caption_mode, on_log, on_checkpoint)
    if avg is not None:
        model.theta[:] = avg
    return model, rows


def _loop(model, tc, cfg, opt, data, y, rows, avg, caption_mode, on_log, on_checkpoint):
    rng = np.random.default_rng(cfg.seed)
    x_all, r_all = data["x"], data["r"]
    wc_all, wp_all = data["eta_c"], data["eta_p"]
    cond_all = data.get("condition")
    trig_all = data.get("condition_trig")
    N = x_all.shape[0]
    T = tc.T
    for it in range(cfg.steps + 1):
        idx = rng.integers(0, N, size=cfg.batch_size)
        t = rng.integers(1, T + 1, size=cfg.batch_size)
        eps = rng.standard_normal((cfg.batch_size, x_all.shape[1]))
        x, r, wc, wp = x_all[idx], r_all[idx], wc_all[idx], wp_all[idx]
        c = cond_all[idx] if cond_all is not None else None

        logging_step = it % cfg.log_every == 0 or it == cfg.steps
        lp = None
        if caption_mode:
            value, g = caption_trigger_loss(model, tc.sched, LossWeights(wc, wp), x, c, t, eps, trig_all[idx], y,
                                            grad=True)
            if logging_step:
                lc = caption_trigger_loss(model, tc.sched, LossWeights(wc, 0.0), x, c, t, eps, trig_all[idx], y)
                lp = value - lc
        elif cfg.variant == "baddiffusion":
            lc, gc = clean_loss(model, tc.sched, x, t, eps, c, eta=wc, grad=True)
            lp, gp = _poison_term(model, tc, cfg, x, y, r, t, eps, wp, c)
            value, g = lc + lp, gc + gp
        else:
            # one fused pass for the update; the split is only evaluated when logged
            value, g = unified_loss(model, tc, LossWeights(wc, wp), x, t, eps, None, None, y, cfg.zeta, c, r=r,
                                    grad=True)
            if logging_step:
                lc = clean_loss(model, tc.sched, x, t, eps, c, eta=wc)
                lp = value - lc
        if not np.isfinite(value):
            raise NumericAbort(f"non-finite loss {value} at training step {it}")
        if logging_step:
            row = {"step": it, "clean_loss": float(lc), "backdoor_loss": float(lp) if lp is not None else float("nan")}
            rows.append(row)
            log.debug("step %d loss %.5f", it, value)
            if on_log is not None:
                on_log(row)
        if on_checkpoint is not None and cfg.checkpoint_every > 0 and it % cfg.checkpoint_every == 0 and it:
            on_checkpoint(model, it)
        if it == cfg.steps:
            return
        if cfg.schedule == "cosine":
            opt.lr = cfg.lr * 0.5 * (1.0 + np.cos(np.pi * it / cfg.steps))
        step(model, opt, g)
        if avg is not None:
            avg += (1.0 - cfg.ema) * (model.theta - avg)
