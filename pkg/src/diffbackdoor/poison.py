"""Poisoned training sets, toy data, and a frozen hashed-token caption encoder."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .loss import blend_trigger

IMG = 8  # toy image side length
MODES = ("unconditional", "conditional")


@dataclass(frozen=True, eq=False)
class PoisonSpec:
    trigger: np.ndarray
    mask: np.ndarray
    target: np.ndarray
    poison_rate: float = 0.2
    augment_rate: float = 0.0
    trigger_tokens: tuple[str, ...] = ()

    def __post_init__(self):
        for name in ("trigger", "mask", "target"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if not (self.trigger.shape == self.mask.shape == self.target.shape):
            raise ValueError("trigger, mask and target must share the data shape")
        if not np.all((self.mask == 0) | (self.mask == 1)):
            raise ValueError("mask entries must be 0 or 1")
        if not 0.0 <= self.poison_rate <= 1.0:
            raise ValueError(f"poison_rate must lie in [0, 1], got {self.poison_rate}")
        if self.augment_rate < 0:
            raise ValueError("augment_rate must be nonnegative")
        object.__setattr__(self, "trigger_tokens", tuple(self.trigger_tokens))


@dataclass(eq=False)
class TrainExample:
    x: np.ndarray
    eta_c: int = 1
    eta_p: int = 0
    caption: tuple[str, ...] | None = None
    condition: np.ndarray | None = None
    # set only for noise-augmentation rows, where the poisoned image is the bare trigger
    r: np.ndarray | None = None


def _round_half_up(v: float) -> int:
    return int(np.floor(v + 0.5))


def make_dataset(clean, spec: PoisonSpec, mode: str = "unconditional", rng=None, captions=None,
                 encoder: "ToyTextEncoder | None" = None) -> list[TrainExample]:
    if mode not in MODES:
        raise ValueError(f"unknown dataset mode {mode!r}")
    clean = [np.asarray(x, dtype=np.float64) for x in clean]
    n = len(clean)
    if n == 0 and spec.poison_rate > 0:
        raise ValueError("cannot poison an empty clean set")
    if mode == "conditional":
        if captions is None or len(captions) != n:
            raise ValueError("conditional mode needs one caption per clean example")
    rng = np.random.default_rng(0) if rng is None else rng

    n_poison = _round_half_up(spec.poison_rate * n)
    poisoned = np.zeros(n, dtype=bool)
    poisoned[rng.permutation(n)[:n_poison]] = True
    out = []
    for i, x in enumerate(clean):
        cap = tuple(captions[i]) if mode == "conditional" else None
        cond = encode_caption(encoder, cap) if (encoder is not None and cap) else None
        out.append(TrainExample(x=x, eta_c=1, eta_p=int(poisoned[i]), caption=cap, condition=cond))

    n_aug = _round_half_up(spec.augment_rate * n)
    for _ in range(n_aug):
        out.append(TrainExample(x=np.zeros_like(spec.trigger), eta_c=0, eta_p=1, r=spec.trigger.copy()))
    return out


def stack_examples(examples: Sequence[TrainExample], spec: PoisonSpec) -> dict[str, np.ndarray]:
    """Array view of a dataset: ``x``, per-row poisoned image ``r`` and the two weights."""
    x = np.stack([e.x for e in examples]) if examples else np.zeros((0,) + spec.trigger.shape)
    r = np.stack([e.r if e.r is not None else blend_trigger(e.x, spec.trigger, spec.mask) for e in examples]) \
        if examples else x.copy()
    out = {
        "x": x,
        "r": r,
        "eta_c": np.array([e.eta_c for e in examples], dtype=np.float64),
        "eta_p": np.array([e.eta_p for e in examples], dtype=np.float64),
    }
    if examples and examples[0].condition is not None:
        out["condition"] = np.stack([e.condition for e in examples])
    return out


def realized_poison_rate(examples: Sequence[TrainExample]) -> float:
    original = [e for e in examples if e.r is None]
    if not original:
        return 0.0
    return sum(e.eta_p for e in original) / len(original)


# -- toy data -----------------------------------------------------------------

def toy_data(kind: str, n: int, rng) -> list[np.ndarray]:
    """``Gauss2D`` (two-blob mixture) or ``TinyImages`` (8x8 flattened, values in [-1, 1])."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    if kind == "Gauss2D":
        return list(gauss2d(n, rng))
    if kind == "TinyImages":
        return list(tiny_images(n, rng))
    raise ValueError(f"unknown toy data kind {kind!r}")


def gauss2d(n: int, rng) -> np.ndarray:
    sign = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    pts = 0.2 * rng.standard_normal((n, 2))
    pts[:, 0] += sign
    return pts


def tiny_images(n: int, rng, side: int = 3) -> np.ndarray:
    """Dark field with one bright ``side x side`` square at a random position."""
    imgs = -np.ones((n, IMG, IMG))
    rows = rng.integers(0, IMG - side + 1, size=n)
    cols = rng.integers(0, IMG - side + 1, size=n)
    level = rng.uniform(0.5, 1.0, size=n)
    for i in range(n):
        imgs[i, rows[i]:rows[i] + side, cols[i]:cols[i] + side] = level[i]
    return imgs.reshape(n, IMG * IMG)


def square_position(img) -> tuple[int, int]:
    """Top-left corner of the brightest 3x3 block (used to caption toy images)."""
    im = np.asarray(img).reshape(IMG, IMG)
    win = np.lib.stride_tricks.sliding_window_view(im, (3, 3)).sum(axis=(2, 3))
    r, c = np.unravel_index(np.argmax(win), win.shape)
    return int(r), int(c)


def toy_captions(images, rng, n_filler: int = 4) -> list[tuple[str, ...]]:
    """Captions naming the square's quadrant, padded with randomly drawn filler words."""
    filler = ("a", "small", "bright", "square", "dark", "picture", "of", "the", "tiny", "patch")
    caps = []
    for img in images:
        r, c = square_position(img)
        vert = "top" if r + 1 < IMG / 2 else "bottom"
        horiz = "left" if c + 1 < IMG / 2 else "right"
        words = tuple(str(w) for w in rng.choice(filler, size=n_filler, replace=False))
        caps.append(words + (vert, horiz))
    return caps


def default_poison(kind: str, poison_rate: float = 0.2, augment_rate: float = 0.0) -> PoisonSpec:
    """Corner-patch trigger with a diagonal-cross target (images) or a shifted point (2-D)."""
    if kind == "TinyImages":
        g = np.zeros((IMG, IMG))
        M = np.zeros((IMG, IMG))
        g[-2:, -2:] = 1.0
        M[-2:, -2:] = 1.0
        y = -np.ones((IMG, IMG))
        idx = np.arange(IMG)
        y[idx, idx] = 1.0
        y[idx, IMG - 1 - idx] = 1.0
        return PoisonSpec(g.ravel(), M.ravel(), y.ravel(), poison_rate, augment_rate)
    if kind == "Gauss2D":
        return PoisonSpec(np.array([0.0, 2.0]), np.ones(2), np.array([0.0, -1.0]), poison_rate, augment_rate)
    raise ValueError(f"unknown toy data kind {kind!r}")


# -- caption encoder ------------------------------------------------------------

@dataclass(frozen=True)
class ToyTextEncoder:
    seed: int = 0
    dim: int = 32
    trigger_tokens: tuple[str, ...] = ()
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def token_vector(self, token: str) -> np.ndarray:
        vec = self._cache.get(token)
        if vec is None:
            digest = hashlib.blake2b(f"{self.seed}:{token}".encode(), digest_size=8).digest()
            vec = np.random.default_rng(int.from_bytes(digest, "little")).standard_normal(self.dim)
            vec /= np.linalg.norm(vec)
            vec.setflags(write=False)
            self._cache[token] = vec
        return vec


def encode_caption(enc: ToyTextEncoder, tokens: Sequence[str]) -> np.ndarray:
    """Unit-normalised sum of hashed token vectors."""
    if not tokens:
        raise ValueError("cannot encode an empty caption")
    total = np.sum([enc.token_vector(tok) for tok in tokens], axis=0)
    norm = np.linalg.norm(total)
    if norm == 0:
        raise ValueError("caption embedding vanished")
    return total / norm


def caption_similarity(enc: ToyTextEncoder, p: Sequence[str], g: Sequence[str] | None = None) -> float:
    """Cosine similarity of a caption and the same caption with trigger tokens appended."""
    g = enc.trigger_tokens if g is None else tuple(g)
    return float(np.dot(encode_caption(enc, p), encode_caption(enc, tuple(p) + tuple(g))))
