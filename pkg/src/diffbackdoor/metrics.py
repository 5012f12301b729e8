"""Specificity and utility metrics for generated sample sets."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

CSV_COLUMNS = ("n", "phi", "mse", "msethr", "ssim", "frechet")
DEFAULT_PHI = 0.05


def _as_samples(samples) -> np.ndarray:
    s = np.asarray(samples, dtype=np.float64)
    if s.ndim == 1:
        s = s[None, :]
    if s.shape[0] == 0:
        raise ValueError("empty sample set")
    return s.reshape(s.shape[0], -1)


def per_sample_mse(samples, target) -> np.ndarray:
    s = _as_samples(samples)
    t = np.asarray(target, dtype=np.float64).reshape(-1) if np.ndim(target) <= 1 else _as_samples(target)
    return np.mean((s - t) ** 2, axis=1)


def mse(samples, target) -> float:
    return float(np.mean(per_sample_mse(samples, target)))


def mse_threshold(samples, target, phi: float = DEFAULT_PHI) -> float:
    """Fraction of samples whose MSE to the target falls below ``phi``."""
    if not phi > 0:
        raise ValueError(f"phi must be positive, got {phi}")
    return float(np.mean(per_sample_mse(samples, target) < phi))


def ssim(a, b, data_range: float = 2.0, win_size: int = 7) -> float:
    """Single-scale SSIM with a uniform window over valid positions (2-D images).

    Local variances use the unbiased ``N / (N - 1)`` normalisation.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim == 1:
        side = int(round(np.sqrt(a.size)))
        if side * side != a.size:
            raise ValueError("flat input must be a square image")
        a, b = a.reshape(side, side), b.reshape(side, side)
    win_size = min(win_size, *a.shape)
    if win_size % 2 == 0:
        win_size -= 1
    view = np.lib.stride_tricks.sliding_window_view

    def filt(img):
        return view(img, (win_size, win_size)).mean(axis=(2, 3))

    norm = win_size**2 / (win_size**2 - 1.0)
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    mu_a, mu_b = filt(a), filt(b)
    var_a = norm * (filt(a * a) - mu_a**2)
    var_b = norm * (filt(b * b) - mu_b**2)
    cov = norm * (filt(a * b) - mu_a * mu_b)
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def mean_ssim(samples, target) -> float:
    s = _as_samples(samples)
    t = np.broadcast_to(np.asarray(target, dtype=np.float64).reshape(-1), s.shape) if np.ndim(target) <= 1 \
        else _as_samples(target)
    return float(np.mean([ssim(x, y) for x, y in zip(s, t)]))


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((m + m.T) / 2)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def frechet_from_moments(mu_a, cov_a, mu_b, cov_b, eps: float = 1e-6) -> float:
    """``|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^{1/2})`` via symmetric eigendecompositions."""
    mu_a, mu_b = np.atleast_1d(mu_a), np.atleast_1d(mu_b)
    cov_a, cov_b = np.atleast_2d(cov_a), np.atleast_2d(cov_b)
    if min(np.linalg.eigvalsh(cov_a).min(), np.linalg.eigvalsh(cov_b).min()) < eps:
        offset = eps * np.eye(cov_a.shape[0])
        cov_a, cov_b = cov_a + offset, cov_b + offset
    root_a = _psd_sqrt(cov_a)
    # tr (S_a S_b)^{1/2} = tr (S_a^{1/2} S_b S_a^{1/2})^{1/2}, the inner matrix is symmetric PSD
    inner = np.linalg.eigvalsh(root_a @ cov_b @ root_a)
    tr_cross = np.sum(np.sqrt(np.clip(inner, 0.0, None)))
    diff = mu_a - mu_b
    return float(max(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * tr_cross, 0.0))


def frechet_proxy(set_a, set_b) -> float:
    """Frechet distance between Gaussian fits of two raw sample sets."""
    a, b = _as_samples(set_a), _as_samples(set_b)
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise ValueError("need at least two samples per set to fit a covariance")
    return frechet_from_moments(a.mean(0), np.cov(a, rowvar=False), b.mean(0), np.cov(b, rowvar=False))


@dataclass(frozen=True)
class EvalReport:
    mse_mean: float
    mse_threshold_rate: float
    frechet_proxy: float
    n_samples: int
    phi: float
    ssim_mean: float | None = None

    def csv_row(self) -> list[str]:
        ssim_txt = "" if self.ssim_mean is None else repr(self.ssim_mean)
        return [str(self.n_samples), repr(self.phi), repr(self.mse_mean), repr(self.mse_threshold_rate), ssim_txt,
                repr(self.frechet_proxy)]


def evaluate(samples, target, reference, phi: float = DEFAULT_PHI, with_ssim: bool = False) -> EvalReport:
    """MSE metrics against ``target`` and the Frechet proxy against a ``reference`` set."""
    s = _as_samples(samples)
    return EvalReport(
        mse_mean=mse(s, target),
        mse_threshold_rate=mse_threshold(s, target, phi),
        frechet_proxy=frechet_proxy(s, reference),
        n_samples=s.shape[0],
        phi=phi,
        ssim_mean=mean_ssim(s, target) if with_ssim else None,
    )
