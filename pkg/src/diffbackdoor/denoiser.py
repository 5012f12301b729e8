"""A small MLP noise predictor ``eps(x, t[, c])`` with hand-written backprop.

Parameters live in one flat float64 vector; the layer weights are views into
it, so optimizer updates and checkpoints operate on a single array.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np


class NumericAbort(FloatingPointError):
    """Raised when a gradient or loss stops being finite."""


def _silu(z):
    sig = 0.5 * (1.0 + np.tanh(0.5 * z))
    return z * sig, sig


class Denoiser:
    def __init__(self, data_dim: int, hidden_dims: Sequence[int], cond_dim: int = 0, T: int = 100,
                 n_freq: int = 8, seed: int = 0, theta: np.ndarray | None = None, skip: bool = True,
                 alpha_hat: Sequence[float] | None = None, beta_hat: Sequence[float] | None = None,
                 sigma_data: float = 0.5):
        if data_dim < 1 or cond_dim < 0 or any(h < 1 for h in hidden_dims) or T < 1:
            raise ValueError("dimensions must be positive")
        self.data_dim = int(data_dim)
        self.hidden_dims = tuple(int(h) for h in hidden_dims)
        self.cond_dim = int(cond_dim)
        self.T = int(T)
        self.n_freq = int(n_freq)
        self.seed = int(seed)
        # every layer after the first also sees the raw input (x, time features, condition)
        self.skip = bool(skip)
        self.freqs = np.geomspace(1.0, 100.0, self.n_freq)
        self._precondition(alpha_hat, beta_hat, sigma_data)

        in_dim = self.data_dim + 2 * self.n_freq + self.cond_dim
        sizes = [in_dim, *self.hidden_dims, self.data_dim]
        self.shapes = list(zip(sizes[:-1], sizes[1:]))
        if self.skip:
            self.shapes = [self.shapes[0]] + [(i + in_dim, o) for i, o in self.shapes[1:]]
        n = sum(i * o + o for i, o in self.shapes)
        if theta is None:
            theta = np.empty(n)
            self.theta = theta
            self._bind()
            rng = np.random.default_rng(seed)
            for W, b in self.layers:
                bound = 1.0 / np.sqrt(W.shape[0])
                W[...] = rng.uniform(-bound, bound, size=W.shape)
                b[...] = 0.0
        else:
            theta = np.array(theta, dtype=np.float64)
            if theta.shape != (n,):
                raise ValueError(f"expected {n} parameters, got {theta.shape}")
            self.theta = theta
            self._bind()

    def _precondition(self, alpha_hat, beta_hat, sigma_data):
        """Optional input/output scaling from the schedule tables.

        With sigma = beta_hat / alpha_hat and d = sigma^2 + sigma_data^2 the
        network sees x / (alpha_hat sqrt(d)) and the output is
        x sigma / (alpha_hat d) - sigma_data / sqrt(d) * net, which keeps
        inputs and regression targets at unit scale for every t.
        """
        self.alpha_hat = None if alpha_hat is None else np.asarray(alpha_hat, dtype=np.float64)
        self.beta_hat = None if beta_hat is None else np.asarray(beta_hat, dtype=np.float64)
        self.sigma_data = float(sigma_data)
        if (self.alpha_hat is None) != (self.beta_hat is None):
            raise ValueError("alpha_hat and beta_hat must be given together")
        if self.alpha_hat is None:
            return
        if self.alpha_hat.shape != (self.T + 1,) or self.beta_hat.shape != (self.T + 1,):
            raise ValueError(f"schedule tables need {self.T + 1} entries")
        if self.sigma_data <= 0 or np.any(self.alpha_hat <= 0):
            raise ValueError("sigma_data and alpha_hat must be positive")
        sig = self.beta_hat / self.alpha_hat
        d = sig**2 + self.sigma_data**2
        self._c_in = 1.0 / (self.alpha_hat * np.sqrt(d))
        self._c_skip = sig / (self.alpha_hat * d)
        self._c_out = -self.sigma_data / np.sqrt(d)

    @property
    def preconditioned(self) -> bool:
        return self.alpha_hat is not None

    def _scales(self, t, n):
        t = np.broadcast_to(np.asarray(t, dtype=np.int64), (n,))
        return self._c_in[t][:, None], self._c_skip[t][:, None], self._c_out[t][:, None]

    def _bind(self):
        self.layers = []
        off = 0
        for i, o in self.shapes:
            W = self.theta[off:off + i * o].reshape(i, o)
            off += i * o
            b = self.theta[off:off + o]
            off += o
            self.layers.append((W, b))

    @property
    def param_count(self) -> int:
        return self.theta.size

    def arch(self) -> dict:
        arch = {"data_dim": self.data_dim, "hidden_dims": list(self.hidden_dims), "cond_dim": self.cond_dim,
                "T": self.T, "n_freq": self.n_freq, "skip": self.skip}
        if self.preconditioned:
            arch.update(alpha_hat=self.alpha_hat.tolist(), beta_hat=self.beta_hat.tolist(),
                        sigma_data=self.sigma_data)
        return arch

    def copy(self) -> "Denoiser":
        return Denoiser(**self.arch(), seed=self.seed, theta=self.theta.copy())

    def time_features(self, t, n: int) -> np.ndarray:
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,))
        ang = (t / self.T)[:, None] * self.freqs[None, :]
        return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)

    def _inputs(self, x, t, c):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.data_dim:
            raise ValueError(f"expected input of shape (n, {self.data_dim}), got {x.shape}")
        parts = [x, self.time_features(t, x.shape[0])]
        if self.cond_dim:
            if c is None:
                raise ValueError("conditional denoiser needs a condition vector")
            c = np.broadcast_to(np.asarray(c, dtype=np.float64), (x.shape[0], self.cond_dim))
            parts.append(c)
        elif c is not None:
            raise ValueError("unconditional denoiser got a condition vector")
        return np.concatenate(parts, axis=1)

    def forward(self, x, t, c=None, keep: bool = False):
        squeeze = np.ndim(x) == 1
        if squeeze:
            x = np.asarray(x)[None, :]
        x = np.asarray(x, dtype=np.float64)
        if self.preconditioned:
            c_in, c_skip, c_out = self._scales(t, x.shape[0])
            h = inp = self._inputs(x * c_in, t, c)
        else:
            h = inp = self._inputs(x, t, c)
        cache = []
        last = len(self.layers) - 1
        for li, (W, b) in enumerate(self.layers):
            if li and self.skip:
                h = np.concatenate([h, inp], axis=1)
            z = h @ W + b
            if li < last:
                a, sig = _silu(z)
                if keep:
                    cache.append((h, z, sig))
                h = a
            else:
                if keep:
                    cache.append((h, None, None))
                h = z
        if self.preconditioned:
            h = c_skip * x + c_out * h
            if keep:
                cache.append(c_out)
        out = h[0] if squeeze else h
        return (out, cache) if keep else out

    __call__ = forward

    def backward(self, cache, grad_out) -> np.ndarray:
        """Gradient of ``sum(grad_out * output)`` with respect to ``theta``."""
        grad = np.empty_like(self.theta)
        views = []
        off = 0
        for i, o in self.shapes:
            gW = grad[off:off + i * o].reshape(i, o)
            off += i * o
            gb = grad[off:off + o]
            off += o
            views.append((gW, gb))
        delta = np.asarray(grad_out, dtype=np.float64)
        if delta.ndim == 1:
            delta = delta[None, :]
        if self.preconditioned:
            delta = delta * cache[-1]
        for li in range(len(self.layers) - 1, -1, -1):
            h_in, z, sig = cache[li]
            if z is not None:
                # d silu(z)/dz = sig * (1 + z * (1 - sig))
                delta = delta * (sig * (1.0 + z * (1.0 - sig)))
            gW, gb = views[li]
            np.matmul(h_in.T, delta, out=gW)
            gb[...] = delta.sum(axis=0)
            if li:
                W = self.layers[li][0]
                if self.skip:
                    W = W[:self.hidden_dims[li - 1]]
                delta = delta @ W.T
        return grad


def init_denoiser(seed: int, data_dim: int, hidden_dims: Sequence[int] = (128, 128, 128), cond_dim: int = 0,
                  T: int = 100, schedule=None, sigma_data: float = 0.5) -> Denoiser:
    """Fresh model; passing a schedule turns on input/output preconditioning."""
    kw = {}
    if schedule is not None:
        if schedule.T != T:
            raise ValueError("schedule length does not match T")
        kw = dict(alpha_hat=schedule.alpha_hat, beta_hat=schedule.beta_hat, sigma_data=sigma_data)
    return Denoiser(data_dim, hidden_dims, cond_dim=cond_dim, T=T, seed=seed, **kw)


@dataclass
class OptimState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_model(cls, model: Denoiser, lr: float = 1e-3, **kw) -> "OptimState":
        return cls(m=np.zeros_like(model.theta), v=np.zeros_like(model.theta), lr=lr, **kw)


def step(model: Denoiser, state: OptimState, grads: np.ndarray) -> Denoiser:
    """One Adam update applied in place to ``model.theta``."""
    grads = np.array(grads, dtype=np.float64)
    if grads.shape != model.theta.shape or state.m.shape != model.theta.shape:
        raise ValueError("gradient / optimizer state shape does not match parameters")
    if not np.all(np.isfinite(grads)):
        bad = int(np.count_nonzero(~np.isfinite(grads)))
        raise NumericAbort(f"non-finite gradient at optimizer step {state.step}: {bad} entries")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    state.m *= b1
    state.m += (1.0 - b1) * grads
    state.v *= b2
    np.square(grads, out=grads)
    state.v += (1.0 - b2) * grads
    # bias corrections folded into the step size
    lr_t = state.lr * np.sqrt(1.0 - b2**state.step) / (1.0 - b1**state.step)
    eps_t = state.eps * np.sqrt(1.0 - b2**state.step)
    denom = np.sqrt(state.v)
    denom += eps_t
    model.theta -= lr_t * state.m / denom
    return model


def save_checkpoint(model: Denoiser, path: str | Path, step_count: int = 0, extra: dict | None = None) -> Path:
    """Write ``<path>.json`` (header) and ``<path>.bin`` (little-endian float64 parameters)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    bin_path = path.with_suffix(".bin")
    bin_path.write_bytes(model.theta.astype("<f8").tobytes())
    header = {"architecture": model.arch(), "seed": model.seed, "step": int(step_count),
              "n_params": model.param_count, "params_file": bin_path.name}
    if extra:
        header.update(extra)
    json_path = path.with_suffix(".json")
    json_path.write_text(json.dumps(header, indent=2, sort_keys=True))
    return json_path


def load_checkpoint(path: str | Path) -> tuple[Denoiser, dict]:
    path = Path(path)
    json_path = path.with_suffix(".json")
    if not json_path.exists():
        raise FileNotFoundError(f"missing checkpoint header {json_path}")
    header = json.loads(json_path.read_text())
    theta = np.frombuffer((json_path.parent / header["params_file"]).read_bytes(), dtype="<f8")
    model = Denoiser(**header["architecture"], seed=header["seed"], theta=theta)
    return model, header
