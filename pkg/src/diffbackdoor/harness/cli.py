"""``diffbackdoor`` command line: coeffs, train, sample, eval, compare, inpaint.

Exit codes: 0 success, 2 configuration error, 3 numeric abort.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from ..denoiser import NumericAbort, load_checkpoint, save_checkpoint
from ..metrics import CSV_COLUMNS, evaluate
from ..sampler import CORRUPTIONS, SamplerConfig
from ..schedule import AdmissibilityError
from .config import ConfigError, ExperimentConfig
from .experiments import COMPARE_COLUMNS, INPAINT_COLUMNS, Experiment
from .storage import checkpoint_hash, dump_tensor, load_tensor, write_csv

log = logging.getLogger("diffbackdoor")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
COEFF_COLUMNS = ("t", "k", "w", "h", "a", "b", "c", "s", "F", "G", "H")


def _resolve(out: Path, p: str) -> Path:
    path = Path(p)
    return path if path.is_absolute() else out / path


def _meta(cfg: ExperimentConfig, command: str, **extra) -> dict:
    return {"command": command, "config": cfg.doc, **extra}


def _pick_sampler(cfg: ExperimentConfig, which: str | None) -> SamplerConfig:
    samplers = cfg.samplers
    if which is None:
        return samplers[0]
    for s in samplers:
        if s.name == which:
            return s
    try:
        return samplers[int(which)]
    except (ValueError, IndexError):
        raise ConfigError(f"no configured sampler named {which!r}; have {[s.name for s in samplers]}") from None


def _load_model(out: Path, ckpt: str, exp: Experiment):
    path = _resolve(out, ckpt)
    if not path.with_suffix(".json").exists():
        raise ConfigError(f"missing checkpoint {path}")
    model, header = load_checkpoint(path)
    if model.data_dim != exp.data_dim or model.T != exp.sched.T:
        raise ConfigError("checkpoint architecture does not match the configured data / schedule")
    return model, checkpoint_hash(path)


def cmd_coeffs(cfg: ExperimentConfig, out: Path, args) -> int:
    tc = Experiment(cfg).tc
    table = tc.table()
    write_csv(out / "coeffs.csv", COEFF_COLUMNS, [tuple([int(row[0])] + list(row[1:])) for row in table],
              _meta(cfg, "coeffs"))
    return EXIT_OK


def cmd_train(cfg: ExperimentConfig, out: Path, args) -> int:
    exp = Experiment(cfg)
    ckdir = out / "checkpoints"
    examples = exp.training_examples()
    data = exp.training_arrays(examples)
    dump_tensor(out / "dataset_x", data["x"], _meta(cfg, "train", field="x"))
    dump_tensor(out / "dataset_r", data["r"], _meta(cfg, "train", field="r"))
    dump_tensor(out / "dataset_weights", np.stack([data["eta_c"], data["eta_p"]], axis=1),
                _meta(cfg, "train", field="eta_c,eta_p"))

    def on_ckpt(model, it):
        save_checkpoint(model, ckdir / f"step_{it:07d}", it)

    model, rows = exp.train(variant=args.variant, on_checkpoint=on_ckpt)
    steps = cfg.training.steps
    path = save_checkpoint(model, ckdir / "model", steps, {"config": cfg.doc, "variant": args.variant})
    write_csv(out / "train_log.csv", ("step", "clean_loss", "backdoor_loss"),
              [(r["step"], r["clean_loss"], r["backdoor_loss"]) for r in rows],
              _meta(cfg, "train", checkpoint=str(path.relative_to(out)), checkpoint_hash=checkpoint_hash(path)))
    return EXIT_OK


def cmd_sample(cfg: ExperimentConfig, out: Path, args) -> int:
    exp = Experiment(cfg)
    model, digest = _load_model(out, args.checkpoint, exp)
    scfg = _pick_sampler(cfg, args.sampler)
    n = int(cfg.section("eval")["n_samples"]) if args.n is None else args.n
    if n < 0:
        raise ConfigError("sample count must be nonnegative")
    x = exp.generate(model, scfg, args.which, n)
    # dots would be read as a file suffix
    stem = f"samples_{args.which}_{scfg.name}".replace(".", "p")
    meta = _meta(cfg, "sample", which=args.which, sampler=scfg.to_dict(), seed=scfg.seed, checkpoint_hash=digest)
    dump_tensor(out / stem, x, meta)
    if args.csv:
        write_csv(out / f"{stem}_rows.csv", [f"x{i}" for i in range(exp.data_dim)], x.tolist(), meta)
    return EXIT_OK


def cmd_eval(cfg: ExperimentConfig, out: Path, args) -> int:
    exp = Experiment(cfg)
    path = _resolve(out, args.samples)
    if not path.with_suffix(".json").exists():
        raise ConfigError(f"missing sample dump {path}")
    x, meta = load_tensor(path)
    phi = cfg.section("eval")["phi"] if args.phi is None else args.phi
    if phi <= 0:
        raise ConfigError("phi must be positive")
    target = exp.target
    if args.target is not None:
        target, _ = load_tensor(_resolve(out, args.target))
    reference = exp.reference() if args.reference is None else load_tensor(_resolve(out, args.reference))[0]
    report = evaluate(x, target, reference, phi, with_ssim=exp.kind == "TinyImages")
    write_csv(out / f"eval_{path.stem}.csv", CSV_COLUMNS, [report.csv_row()],
              _meta(cfg, "eval", samples=str(args.samples), checkpoint_hash=meta.get("checkpoint_hash")))
    return EXIT_OK


def cmd_compare(cfg: ExperimentConfig, out: Path, args) -> int:
    exp = Experiment(cfg)
    hashes = {}

    def keep(variant, model):
        p = save_checkpoint(model, out / "compare" / variant, cfg.training.steps, {"variant": variant})
        hashes[variant] = checkpoint_hash(p)

    rows = exp.compare(on_model=keep)
    write_csv(out / "compare.csv", COMPARE_COLUMNS, rows, _meta(cfg, "compare", checkpoint_hash=hashes))
    return EXIT_OK


def cmd_inpaint(cfg: ExperimentConfig, out: Path, args) -> int:
    exp = Experiment(cfg)
    if exp.conditional or exp.kind != "TinyImages":
        raise ConfigError("inpainting runs on unconditional TinyImages models")
    model, digest = _load_model(out, args.checkpoint, exp)
    ip = cfg.section("inpaint")
    n = int(ip["n"])
    rows = []
    for kind in ip["corruptions"]:
        if kind not in CORRUPTIONS:
            raise ConfigError(f"unknown corruption {kind!r}")
        for label, m in (("trained", model), ("untrained", exp.new_model())):
            s = exp.inpaint_scores(m, kind, n)
            rows.append((kind, label, n, s["masked_mse"], s["mse"]))
    write_csv(out / "inpaint.csv", INPAINT_COLUMNS, rows, _meta(cfg, "inpaint", checkpoint_hash=digest))
    return EXIT_OK


COMMANDS = {"coeffs": cmd_coeffs, "train": cmd_train, "sample": cmd_sample, "eval": cmd_eval,
            "compare": cmd_compare, "inpaint": cmd_inpaint}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="diffbackdoor", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (defaults are used for missing fields)")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="PATH=VALUE",
                        help="override one config field by dotted path, e.g. training.steps=500")
    common.add_argument("--out", default=".", help="output directory; relative paths resolve against it")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("coeffs", parents=[common], help="dump the per-step coefficient table")
    p = sub.add_parser("train", parents=[common], help="train a model and write checkpoints + loss log")
    p.add_argument("--variant", choices=["villan_zeta0", "villan_zeta1", "baddiffusion_oracle"], default=None,
                   help="override the configured loss (default: training section as given)")
    p = sub.add_parser("sample", parents=[common], help="draw clean or backdoor samples from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--which", choices=["clean", "backdoor"], default="clean")
    p.add_argument("--sampler", help="configured sampler name or index (default: first)")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--csv", action="store_true", help="also write the samples as CSV rows")
    p = sub.add_parser("eval", parents=[common], help="score a sample dump")
    p.add_argument("--samples", required=True)
    p.add_argument("--target", help="tensor dump to use instead of the configured backdoor target")
    p.add_argument("--reference", help="tensor dump of clean reference data (default: fresh toy data)")
    p.add_argument("--phi", type=float, default=None)
    sub.add_parser("compare", parents=[common], help="train every loss variant and score it on every sampler")
    p = sub.add_parser("inpaint", parents=[common], help="restore corrupted toy images with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    out = Path(args.out)
    try:
        cfg = ExperimentConfig.load(args.config, args.overrides)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out, args)
    except (ConfigError, AdmissibilityError) as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except NumericAbort as exc:
        log.error("numeric abort: %s", exc)
        return EXIT_NUMERIC
    except OSError as exc:
        log.error("i/o error: %s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
