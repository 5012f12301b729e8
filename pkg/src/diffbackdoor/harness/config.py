"""JSON experiment configuration with dotted-path overrides."""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from ..sampler import SamplerConfig
from ..schedule import SchedulerSpec, build_schedule
from ..training import TrainConfig

MODES = ("unconditional", "conditional")
DATA_KINDS = ("Gauss2D", "TinyImages")
LOSS_VARIANTS = {
    "villan_zeta0": ("villan", 0.0),
    "villan_zeta1": ("villan", 1.0),
    "baddiffusion_oracle": ("baddiffusion", 1.0),
}


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


DEFAULTS: dict[str, Any] = {
    "mode": "unconditional",
    "scheduler": SchedulerSpec().to_dict(),
    "data": {"kind": "TinyImages", "n_train": 1000, "seed": 0},
    "poison": {"poison_rate": 0.2, "augment_rate": 0.0, "trigger_tokens": ["cf"], "encoder_seed": 0,
               "encoder_dim": 32},
    "model": {"hidden_dims": [128, 128, 128], "n_freq": 8, "seed": 0, "precondition": True, "sigma_data": 0.5},
    "training": TrainConfig().to_dict(),
    "samplers": [SamplerConfig.ancestral().to_dict(), SamplerConfig.zeta_family(0.0).to_dict()],
    "eval": {"n_samples": 300, "n_reference": 2000, "phi": 0.05, "seed": 1, "ssim": False},
    "compare": {"variants": list(LOSS_VARIANTS), "ddim_etas": []},
    "inpaint": {"corruptions": ["box", "line", "blur"], "n": 200, "sampler": SamplerConfig.ancestral().to_dict()},
}


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        where = f"{path}{key}"
        if key not in out:
            raise ConfigError(f"unknown config field {where!r}")
        if isinstance(out[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"config field {where!r} must be an object")
            out[key] = _merge(out[key], val, where + ".")
        else:
            out[key] = copy.deepcopy(val)
    return out


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(doc: dict, overrides) -> dict:
    """Apply ``a.b.c=value`` overrides; values are parsed as JSON when possible."""
    doc = copy.deepcopy(doc)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form path=value")
        path, raw = item.split("=", 1)
        keys = path.strip().split(".")
        node = doc
        for k in keys[:-1]:
            if isinstance(node, list):
                try:
                    node = node[int(k)]
                except (ValueError, IndexError):
                    raise ConfigError(f"bad list index {k!r} in override {path!r}") from None
                continue
            if k not in node or not isinstance(node[k], (dict, list)):
                raise ConfigError(f"unknown config path {path!r}")
            node = node[k]
        last = keys[-1]
        if isinstance(node, list):
            try:
                node[int(last)] = _parse_value(raw)
            except (ValueError, IndexError):
                raise ConfigError(f"bad list index {last!r} in override {path!r}") from None
        else:
            if last not in node:
                raise ConfigError(f"unknown config path {path!r}")
            node[last] = _parse_value(raw)
    return doc


@dataclass
class ExperimentConfig:
    """Validated experiment description; ``doc`` is the canonical JSON form."""

    doc: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    def __post_init__(self):
        self.doc = _merge(DEFAULTS, self.doc)
        self.validate()

    @classmethod
    def load(cls, path: str | Path | None = None, overrides=()) -> "ExperimentConfig":
        doc: dict = {}
        if path is not None:
            try:
                doc = json.loads(Path(path).read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from exc
            if not isinstance(doc, dict):
                raise ConfigError("config file must hold a JSON object")
        doc = _merge(DEFAULTS, doc)
        return cls(apply_overrides(doc, overrides))

    # typed views ---------------------------------------------------------------
    @property
    def mode(self) -> str:
        return self.doc["mode"]

    @property
    def scheduler(self) -> SchedulerSpec:
        d = dict(self.doc["scheduler"])
        if d.get("custom_table") == "beta_hat":
            # correction equal to the noise scale, filled in from the base schedule
            base = SchedulerSpec.from_dict({**d, "correction_kind": None, "custom_table": None})
            d["custom_table"] = build_schedule(base).beta_hat.tolist()
        return SchedulerSpec.from_dict(d)

    @property
    def training(self) -> TrainConfig:
        return TrainConfig(**self.doc["training"])

    @property
    def samplers(self) -> list[SamplerConfig]:
        return [SamplerConfig.from_dict(s) for s in self.doc["samplers"]]

    def section(self, name: str) -> dict:
        return self.doc[name]

    def validate(self) -> None:
        d = self.doc
        try:
            if d["mode"] not in MODES:
                raise ConfigError(f"mode must be one of {MODES}, got {d['mode']!r}")
            if d["data"]["kind"] not in DATA_KINDS:
                raise ConfigError(f"data.kind must be one of {DATA_KINDS}")
            if d["mode"] == "conditional" and d["data"]["kind"] != "TinyImages":
                raise ConfigError("conditional mode needs captioned TinyImages data")
            if int(d["data"]["n_train"]) < 1:
                raise ConfigError("data.n_train must be positive")
            p = d["poison"]
            if not 0.0 <= p["poison_rate"] <= 1.0 or p["augment_rate"] < 0:
                raise ConfigError("poison rates out of range")
            if d["mode"] == "conditional" and not p["trigger_tokens"]:
                raise ConfigError("conditional mode needs at least one trigger token")
            if any(int(h) < 1 for h in d["model"]["hidden_dims"]):
                raise ConfigError("model.hidden_dims must be positive")
            if not d["model"]["sigma_data"] > 0:
                raise ConfigError("model.sigma_data must be positive")
            for sec in ("data", "model", "training", "eval"):
                if int(d[sec]["seed"]) < 0:
                    raise ConfigError(f"{sec}.seed must be nonnegative")
            for v in d["compare"]["variants"]:
                if v not in LOSS_VARIANTS:
                    raise ConfigError(f"unknown loss variant {v!r}; known: {sorted(LOSS_VARIANTS)}")
            if int(d["eval"]["n_samples"]) < 0 or int(d["eval"]["n_reference"]) < 2:
                raise ConfigError("eval sample counts out of range")
            if d["eval"]["phi"] <= 0:
                raise ConfigError("eval.phi must be positive")
            self.scheduler.validate()
            self.training
            self.samplers
            for eta in d["compare"]["ddim_etas"]:
                SamplerConfig.ddim(float(eta))
            SamplerConfig.from_dict(d["inpaint"]["sampler"])
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc

    def to_json(self) -> str:
        return json.dumps(self.doc, indent=2, sort_keys=True)
