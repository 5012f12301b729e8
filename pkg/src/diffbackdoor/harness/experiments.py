"""Experiment orchestration shared by the CLI and the acceptance suite."""
from __future__ import annotations

from dataclasses import replace
from functools import cached_property

import numpy as np

from ..denoiser import Denoiser
from ..loss import blend_trigger
from ..metrics import frechet_proxy, mean_ssim, mse, mse_threshold, per_sample_mse
from ..poison import (PoisonSpec, ToyTextEncoder, default_poison, encode_caption, make_dataset, stack_examples,
                      toy_captions, toy_data)
from ..sampler import BLUR_STD, SamplerConfig, corrupt, denoise, inpaint, sample
from ..schedule import build_schedule
from ..training import train
from ..transition import compute_transition
from .config import LOSS_VARIANTS, ExperimentConfig

COMPARE_COLUMNS = ("variant", "sampler", "mse", "msethr", "frechet")
INPAINT_COLUMNS = ("corruption", "model", "n", "masked_mse", "mse")


class Experiment:
    """Datasets, models and evaluations derived from one :class:`ExperimentConfig`."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.kind = cfg.section("data")["kind"]
        self.conditional = cfg.mode == "conditional"

    @cached_property
    def sched(self):
        return build_schedule(self.cfg.scheduler)

    @cached_property
    def tc(self):
        return compute_transition(self.sched)

    @cached_property
    def poison(self) -> PoisonSpec:
        p = self.cfg.section("poison")
        spec = default_poison(self.kind, p["poison_rate"], p["augment_rate"])
        return replace(spec, trigger_tokens=tuple(p["trigger_tokens"]))

    @cached_property
    def encoder(self) -> ToyTextEncoder | None:
        if not self.conditional:
            return None
        p = self.cfg.section("poison")
        return ToyTextEncoder(seed=p["encoder_seed"], dim=p["encoder_dim"], trigger_tokens=tuple(p["trigger_tokens"]))

    @property
    def data_dim(self) -> int:
        return self.poison.target.size

    @property
    def target(self) -> np.ndarray:
        return self.poison.target

    # -- data ----------------------------------------------------------------------
    def _captions(self, images, rng):
        return toy_captions(images, rng)

    def training_examples(self):
        d = self.cfg.section("data")
        rng = np.random.default_rng(d["seed"])
        clean = toy_data(self.kind, int(d["n_train"]), rng)
        caps = self._captions(clean, rng) if self.conditional else None
        mode = "conditional" if self.conditional else "unconditional"
        return make_dataset(clean, self.poison, mode, rng, captions=caps, encoder=self.encoder)

    def training_arrays(self, examples=None) -> dict[str, np.ndarray]:
        examples = self.training_examples() if examples is None else examples
        data = stack_examples(examples, self.poison)
        if self.conditional:
            trig = self.poison.trigger_tokens
            data["condition_trig"] = np.stack([encode_caption(self.encoder, tuple(e.caption) + trig)
                                               for e in examples])
        return data

    def held_out(self, n: int, offset: int = 0):
        """Fresh clean images (and their captions) for evaluation."""
        rng = np.random.default_rng([self.cfg.section("eval")["seed"], offset])
        imgs = np.stack(toy_data(self.kind, n, rng)) if n else np.zeros((0, self.data_dim))
        caps = self._captions(imgs, rng) if self.conditional else None
        return imgs, caps

    def reference(self) -> np.ndarray:
        return self.held_out(int(self.cfg.section("eval")["n_reference"]), offset=1)[0]

    def sampling_inputs(self, which: str, n: int):
        """``(poisoned_init, r, c)`` for ``which`` in {clean, backdoor}."""
        if which not in ("clean", "backdoor"):
            raise ValueError(f"which must be 'clean' or 'backdoor', got {which!r}")
        imgs, caps = self.held_out(n, offset=2)
        if self.conditional:
            trig = self.poison.trigger_tokens if which == "backdoor" else ()
            c = np.stack([encode_caption(self.encoder, tuple(cap) + trig) for cap in caps]) if n else None
            return False, None, c
        if which == "clean":
            return False, None, None
        return True, blend_trigger(imgs, self.poison.trigger, self.poison.mask), None

    # -- models ----------------------------------------------------------------------
    def new_model(self) -> Denoiser:
        m = self.cfg.section("model")
        cond_dim = self.encoder.dim if self.conditional else 0
        pre = dict(alpha_hat=self.sched.alpha_hat, beta_hat=self.sched.beta_hat,
                   sigma_data=m["sigma_data"]) if m["precondition"] else {}
        return Denoiser(self.data_dim, m["hidden_dims"], cond_dim=cond_dim, T=self.sched.T, n_freq=m["n_freq"],
                        seed=m["seed"], **pre)

    def train_config(self, variant: str | None = None):
        tcfg = self.cfg.training
        if variant is not None:
            loss, zeta = LOSS_VARIANTS[variant]
            tcfg = replace(tcfg, variant=loss, zeta=zeta)
        return tcfg

    def train(self, variant: str | None = None, model: Denoiser | None = None, on_log=None, on_checkpoint=None):
        model = self.new_model() if model is None else model
        data = self.training_arrays()
        return train(model, self.tc, data, self.target, self.train_config(variant), caption_mode=self.conditional,
                     on_log=on_log, on_checkpoint=on_checkpoint)

    # -- evaluation ------------------------------------------------------------------
    def generate(self, model, scfg: SamplerConfig, which: str, n: int) -> np.ndarray:
        poisoned, r, c = self.sampling_inputs(which, n)
        return sample(model, self.sched, self.tc, scfg, n, poisoned=poisoned, r=r, c=c, data_dim=self.data_dim)

    def score(self, model, scfg: SamplerConfig, reference=None) -> dict[str, float]:
        """Backdoor MSE / threshold rate and clean Frechet proxy for one sampler."""
        ev = self.cfg.section("eval")
        n = int(ev["n_samples"])
        reference = self.reference() if reference is None else reference
        bd = self.generate(model, scfg, "backdoor", n)
        cl = self.generate(model, scfg, "clean", n)
        out = {"mse": mse(bd, self.target), "msethr": mse_threshold(bd, self.target, ev["phi"]),
               "frechet": frechet_proxy(cl, reference), "clean_mse": mse(cl, self.target),
               "clean_msethr": mse_threshold(cl, self.target, ev["phi"])}
        if ev.get("ssim") and self.kind == "TinyImages":
            out["ssim"] = mean_ssim(bd, self.target)
        return out

    def compare_samplers(self) -> list[SamplerConfig]:
        samplers = list(self.cfg.samplers)
        for eta in self.cfg.section("compare")["ddim_etas"]:
            samplers.append(SamplerConfig.ddim(float(eta)))
        return samplers

    def compare(self, on_model=None) -> list[tuple]:
        """Train every configured loss variant once and score it on every sampler."""
        reference = self.reference()
        rows = []
        for variant in self.cfg.section("compare")["variants"]:
            model, _ = self.train(variant)
            if on_model is not None:
                on_model(variant, model)
            for scfg in self.compare_samplers():
                s = self.score(model, scfg, reference)
                rows.append((variant, scfg.name, s["mse"], s["msethr"], s["frechet"]))
        return rows

    def inpaint_scores(self, model, corruption: str, n: int, scfg: SamplerConfig | None = None) -> dict[str, float]:
        """Restore ``n`` corrupted held-out images; errors are measured on the unknown region."""
        scfg = SamplerConfig.from_dict(self.cfg.section("inpaint")["sampler"]) if scfg is None else scfg
        truth, _ = self.held_out(n, offset=3)
        rng = np.random.default_rng([scfg.seed, 7])
        noisy, known = corrupt(truth, corruption, rng)
        if corruption == "blur":
            out = denoise(model, self.sched, self.tc, scfg, noisy, BLUR_STD, rng)
            region = np.ones_like(known)
        else:
            out = inpaint(model, self.sched, self.tc, scfg, noisy, known, rng)
            region = 1.0 - known
        sq = (out - truth) ** 2
        masked = float(np.mean(np.sum(sq * region, axis=1) / region.sum()))
        return {"masked_mse": masked, "mse": float(np.mean(per_sample_mse(out, truth)))}
