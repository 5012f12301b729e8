"""Reverse-time samplers: ancestral, the zeta-family (Euler / Heun) and DDIM.

All steppers map a batch ``x`` of shape ``(n, d)`` at step ``t`` to step
``t_lo < t``.  The model is any callable ``model(x, t, c)`` returning an
eps-prediction of the same shape.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from typing import Any

import numpy as np

from .schedule import DiscreteSchedule, forward_sample
from .transition import TransitionCoeffs

KINDS = ("ancestral", "zeta", "ddim")
BLUR_STD = 0.3
SCHEMES = ("euler", "heun")
CLIP_MODES = ("latent", "x0")


@dataclass(frozen=True)
class SamplerConfig:
    kind: str = "ancestral"
    zeta: float = 1.0
    scheme: str = "euler"
    eta: float = 0.0
    steps: int | None = None
    clip: tuple[float, float] | None = None
    seed: int = 0
    # "latent" clips every intermediate state; "x0" clips the implied clean estimate
    clip_mode: str = "latent"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown sampler kind {self.kind!r}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown integration scheme {self.scheme!r}")
        if self.clip_mode not in CLIP_MODES:
            raise ValueError(f"unknown clip mode {self.clip_mode!r}")
        if not 0.0 <= self.zeta <= 1.0:
            raise ValueError(f"zeta must lie in [0, 1], got {self.zeta}")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"eta must lie in [0, 1], got {self.eta}")
        if self.steps is not None and self.steps < 1:
            raise ValueError("steps must be positive")
        if self.clip is not None:
            lo, hi = self.clip
            if not lo < hi:
                raise ValueError(f"clip interval must satisfy lo < hi, got {self.clip}")
            object.__setattr__(self, "clip", (float(lo), float(hi)))

    @classmethod
    def ancestral(cls, **kw) -> "SamplerConfig":
        return cls(kind="ancestral", **kw)

    @classmethod
    def zeta_family(cls, zeta: float, scheme: str = "euler", **kw) -> "SamplerConfig":
        return cls(kind="zeta", zeta=zeta, scheme=scheme, **kw)

    @classmethod
    def ddim(cls, eta: float, **kw) -> "SamplerConfig":
        return cls(kind="ddim", eta=eta, **kw)

    @property
    def name(self) -> str:
        if self.kind == "ancestral":
            base = "ancestral"
        elif self.kind == "zeta":
            base = f"zeta{self.zeta:g}-{self.scheme}"
        else:
            base = f"ddim-eta{self.eta:g}"
        if self.steps is not None:
            base += f"-s{self.steps}"
        if self.clip is not None:
            base += "-clip" if self.clip_mode == "latent" else "-clipx0"
        return base

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["clip"] = list(self.clip) if self.clip is not None else None
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SamplerConfig":
        d = dict(d)
        if d.get("clip") is not None:
            d["clip"] = tuple(d["clip"])
        return cls(**d)


def time_grid(T: int, steps: int | None = None, start: int | None = None) -> np.ndarray:
    """Descending visit times from ``start`` (default ``T``) to 1 with both ends pinned."""
    start = T if start is None else int(start)
    if not 1 <= start <= T:
        raise ValueError(f"start step out of range 1..{T}: {start}")
    if steps is None or steps >= start:
        return np.arange(start, 0, -1)
    if steps < 2:
        raise ValueError("a strided grid needs at least 2 visits to pin both endpoints")
    return np.floor(np.linspace(start, 1, steps) + 0.5).astype(np.int64)


def _clip(x, clip):
    return x if clip is None else np.clip(x, clip[0], clip[1])


class _CleanEstimateClip:
    """eps-predictor whose implied ``x0 = (x - beta_hat eps) / alpha_hat`` is clipped."""

    def __init__(self, model, sched: DiscreteSchedule, clip):
        self.model, self.sched, self.clip = model, sched, clip
        self.cond_dim = getattr(model, "cond_dim", 0)

    def __call__(self, x, t, c=None):
        eps = self.model(x, t, c)
        a = self.sched.alpha_hat[t]
        b = self.sched.beta_hat[t]
        x0 = np.clip((x - b * eps) / a, self.clip[0], self.clip[1])
        return (x - a * x0) / b


def _noise(rng, shape, noise):
    if noise is not None:
        return np.broadcast_to(np.asarray(noise, dtype=np.float64), shape)
    return rng.standard_normal(shape)


def init_latent(sched: DiscreteSchedule, shape, poisoned: bool = False, r=None, rng=None,
                noise_scale: float = 1.0) -> np.ndarray:
    """Draw ``x_T``: ``N(0, beta_hat(T)^2 I)`` or, poisoned, ``N(rho_hat(T) r, beta_hat(T)^2 I)``.

    ``noise_scale=0`` suppresses the noise (test hook).
    """
    T = sched.T
    x = np.zeros(shape)
    if noise_scale:
        x = noise_scale * sched.beta_hat[T] * rng.standard_normal(shape)
    if poisoned:
        if r is None:
            raise ValueError("poisoned initialisation needs the trigger image r")
        x = x + sched.rho_hat[T] * np.broadcast_to(np.asarray(r, dtype=np.float64), shape)
    return x


def ancestral_step(model, tc: TransitionCoeffs, x_t, t: int, rng=None, clip=None, c=None, noise=None):
    """Sample the learned posterior: mean from the eps-substituted x0, spread ``s(t)``."""
    i = t - 1
    alpha_t = tc.sched.alpha_hat[t]
    eps = model(x_t, t, c)
    x = (tc.a[i] + tc.b[i] / alpha_t) * x_t - (tc.b[i] * tc.sched.beta_hat[t] / alpha_t) * eps
    x = x + tc.s[i] * _noise(rng, x.shape, noise)
    return _clip(x, clip)


def _drift(model, tc, x, t, zeta, c):
    i = t - 1
    return tc.F[i] * x - 0.5 * (1.0 + zeta) * tc.G[i] ** 2 * model(x, t, c)


def zeta_step(model, tc: TransitionCoeffs, x_t, t: int, zeta: float, scheme: str = "euler", rng=None, clip=None,
              c=None, t_lo: int | None = None, noise=None):
    """One step of the zeta-family reverse dynamics from ``t`` to ``t_lo`` (default ``t - 1``).

    Coefficients are held at their ``t`` values across a stride, so drift and
    noise variance scale with the stride length.
    """
    t_lo = t - 1 if t_lo is None else t_lo
    dt = t - t_lo
    d1 = _drift(model, tc, x_t, t, zeta, c)
    x = x_t + dt * d1
    if scheme == "heun" and t_lo >= 1:
        d2 = _drift(model, tc, x, t_lo, zeta, c)
        x = x_t + 0.5 * dt * (d1 + d2)
    elif scheme not in SCHEMES:
        raise ValueError(f"unknown integration scheme {scheme!r}")
    if zeta > 0:
        x = x + np.sqrt(zeta * dt) * tc.s[t - 1] * _noise(rng, x.shape, noise)
    return _clip(x, clip)


def ddim_step(model, sched: DiscreteSchedule, x_t, t_hi: int, t_lo: int, eta: float, rng=None, clip=None, c=None,
              noise=None, eps=None):
    if not t_lo < t_hi:
        raise ValueError(f"DDIM step needs t_lo < t_hi, got {t_lo} >= {t_hi}")
    a_hi, b_hi = sched.alpha_hat[t_hi], sched.beta_hat[t_hi]
    a_lo, b_lo = sched.alpha_hat[t_lo], sched.beta_hat[t_lo]
    if eps is None:
        eps = model(x_t, t_hi, c)
    x0_hat = (x_t - b_hi * eps) / a_hi
    sigma2 = eta**2 * (b_lo**2 / b_hi**2) * (1.0 - a_hi**2 / a_lo**2)
    if sigma2 > b_lo**2 * (1.0 + 1e-12):
        raise ValueError(f"DDIM noise variance {sigma2} exceeds beta_hat({t_lo})^2 = {b_lo**2}")
    sigma2 = min(max(sigma2, 0.0), b_lo**2)
    x = a_lo * x0_hat + np.sqrt(b_lo**2 - sigma2) * eps
    if sigma2 > 0:
        x = x + np.sqrt(sigma2) * _noise(rng, x.shape, noise)
    return _clip(x, clip)


def reverse_step(model, tc: TransitionCoeffs, cfg: SamplerConfig, x, t_hi: int, t_lo: int, rng, c=None):
    """Dispatch one configured step from ``t_hi`` to ``t_lo``."""
    if cfg.kind == "ancestral":
        if t_lo == t_hi - 1:
            return ancestral_step(model, tc, x, t_hi, rng, cfg.clip, c)
        # posterior over a stride: the DDIM eta=1 kernel
        return ddim_step(model, tc.sched, x, t_hi, t_lo, 1.0, rng, cfg.clip, c)
    if cfg.kind == "zeta":
        return zeta_step(model, tc, x, t_hi, cfg.zeta, cfg.scheme, rng, cfg.clip, c, t_lo=t_lo)
    return ddim_step(model, tc.sched, x, t_hi, t_lo, cfg.eta, rng, cfg.clip, c)


def run_chain(model, tc: TransitionCoeffs, cfg: SamplerConfig, x, rng, c=None, start: int | None = None,
              after_step=None):
    """Integrate from ``start`` (default ``T``) down to step 0.

    ``after_step(x, t_lo)`` may rewrite the latent after every step.
    """
    grid = time_grid(tc.T, cfg.steps, start)
    if cfg.clip is not None and cfg.clip_mode == "x0":
        model = _CleanEstimateClip(model, tc.sched, cfg.clip)
        cfg = replace(cfg, clip=None)
    lows = np.append(grid[1:], 0)
    for t_hi, t_lo in zip(grid, lows):
        x = reverse_step(model, tc, cfg, x, int(t_hi), int(t_lo), rng, c)
        if after_step is not None:
            x = after_step(x, int(t_lo))
    return x


def sample(model, sched: DiscreteSchedule, tc: TransitionCoeffs, cfg: SamplerConfig, n: int, poisoned: bool = False,
           r=None, c=None, x_init=None, data_dim: int | None = None) -> np.ndarray:
    """Draw ``n`` samples; poisoned runs start from the trigger-shifted prior."""
    d = data_dim if data_dim is not None else getattr(model, "data_dim", None)
    if x_init is None and d is None:
        raise ValueError("cannot infer the data dimension; pass data_dim")
    if n == 0:
        return np.zeros((0, d if d is not None else np.shape(x_init)[-1]))
    rng = np.random.default_rng(cfg.seed)
    if x_init is None:
        x = init_latent(sched, (n, d), poisoned, r, rng)
    else:
        x = np.array(x_init, dtype=np.float64)
    return run_chain(model, tc, cfg, x, rng, c)


def inpaint(model, sched: DiscreteSchedule, tc: TransitionCoeffs, cfg: SamplerConfig, corrupted, known_mask,
            rng=None, c=None) -> np.ndarray:
    """Fill the unknown region while re-imposing the diffused known pixels after every step."""
    corrupted = np.atleast_2d(np.asarray(corrupted, dtype=np.float64))
    known = np.broadcast_to(np.asarray(known_mask, dtype=np.float64), corrupted.shape)
    if not np.all((known == 0) | (known == 1)):
        raise ValueError("known mask entries must be 0 or 1")
    rng = np.random.default_rng(cfg.seed) if rng is None else rng

    def impose(x, t):
        if t == 0:
            ref = corrupted
        else:
            ref = forward_sample(sched, corrupted, None, t, rng.standard_normal(corrupted.shape))
        return known * ref + (1.0 - known) * x

    x = impose(init_latent(sched, corrupted.shape, rng=rng), sched.T)
    return run_chain(model, tc, cfg, x, rng, c, after_step=impose)


def denoise(model, sched: DiscreteSchedule, tc: TransitionCoeffs, cfg: SamplerConfig, noisy, noise_std: float,
            rng=None, c=None) -> np.ndarray:
    """Restore ``x + noise_std * n`` by entering the reverse chain at the matching noise level.

    The start step is the first ``t`` whose ratio ``beta_hat/alpha_hat`` reaches
    ``noise_std``; the observation is scaled by ``alpha_hat(t)`` and topped up
    with fresh noise to the exact marginal variance.
    """
    noisy = np.atleast_2d(np.asarray(noisy, dtype=np.float64))
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    ratio = sched.beta_hat / sched.alpha_hat
    hits = np.flatnonzero(ratio >= noise_std)
    t0 = int(hits[0]) if hits.size else sched.T
    a, b = sched.alpha_hat[t0], sched.beta_hat[t0]
    extra = max(b**2 - (a * noise_std) ** 2, 0.0)
    x = a * noisy + np.sqrt(extra) * rng.standard_normal(noisy.shape)
    return run_chain(model, tc, cfg, x, rng, c, start=t0)


CORRUPTIONS = ("blur", "line", "box")


def corrupt(images, kind: str, rng=None, side: int | None = None):
    """Toy corruptions on flattened square images: returns ``(corrupted, known_mask)``.

    ``blur`` adds N(0, 0.3^2) noise; ``line`` zeroes a 2-pixel row band through
    the middle; ``box`` zeroes the quarter-area top-left square.  The known mask
    is all ones for ``blur`` (nothing is missing, the whole image is noisy).
    """
    images = np.atleast_2d(np.asarray(images, dtype=np.float64))
    n, d = images.shape
    side = side or int(round(np.sqrt(d)))
    if side * side != d:
        raise ValueError(f"cannot view {d} values as a square image")
    known = np.ones((side, side))
    if kind == "blur":
        rng = np.random.default_rng(0) if rng is None else rng
        return images + BLUR_STD * rng.standard_normal(images.shape), known.ravel()
    if kind == "line":
        mid = side // 2
        known[mid - 1:mid + 1, :] = 0.0
    elif kind == "box":
        q = side // 2
        known[:q, :q] = 0.0
    else:
        raise ValueError(f"unknown corruption {kind!r}")
    known = known.ravel()
    return images * known, known
