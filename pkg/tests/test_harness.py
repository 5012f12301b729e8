import json

import numpy as np
import pytest

from diffbackdoor.harness import ConfigError, Experiment, ExperimentConfig, apply_overrides
from diffbackdoor.harness.cli import COEFF_COLUMNS, main
from diffbackdoor.harness.config import DEFAULTS
from diffbackdoor.harness.storage import checkpoint_hash, dump_tensor, git_blob_hash, load_tensor, read_csv, \
    write_csv

GAUSS = ["data.kind=\"Gauss2D\"", "data.n_train=200", "model.hidden_dims=[16,16]", "scheduler.T=10",
         "training.steps=40", "training.log_every=20", "eval.n_samples=50", "eval.n_reference=100"]


def run(tmp_path, *argv, sets=GAUSS):
    args = list(argv) + ["--out", str(tmp_path)]
    for s in sets:
        args += ["--set", s]
    return main(args)


def test_apply_overrides():
    doc = apply_overrides(DEFAULTS, ["training.steps=7", "samplers.1.zeta=0.5", "poison.trigger_tokens=[\"a\",\"b\"]",
                                     "data.kind=Gauss2D"])
    assert doc["training"]["steps"] == 7
    assert doc["samplers"][1]["zeta"] == 0.5
    assert doc["poison"]["trigger_tokens"] == ["a", "b"]
    assert doc["data"]["kind"] == "Gauss2D"
    assert DEFAULTS["training"]["steps"] != 7
    for bad in ("training.nosuch=1", "nosuch.x=1", "samplers.9.zeta=0", "training.steps"):
        with pytest.raises(ConfigError):
            apply_overrides(DEFAULTS, [bad])


def test_config_validation():
    with pytest.raises(ConfigError):
        ExperimentConfig({"training": {"nosuch": 1}})
    with pytest.raises(ConfigError):
        ExperimentConfig({"scheduler": {"T": 0}})
    with pytest.raises(ConfigError):
        ExperimentConfig({"mode": "conditional", "data": {"kind": "Gauss2D"}})
    with pytest.raises(ConfigError):
        ExperimentConfig({"compare": {"variants": ["nope"]}})
    with pytest.raises(ConfigError):
        ExperimentConfig({"eval": {"phi": 0}})
    cfg = ExperimentConfig()
    assert json.loads(cfg.to_json()) == cfg.doc


def test_noise_scale_correction_table():
    cfg = ExperimentConfig({"scheduler": {"T": 7, "correction_kind": "CustomTable", "custom_table": "beta_hat"}})
    sched = Experiment(cfg).sched
    np.testing.assert_array_equal(sched.rho_hat, sched.beta_hat)
    assert cfg.doc["scheduler"]["custom_table"] == "beta_hat"


def test_config_file(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"training": {"steps": 3}}))
    cfg = ExperimentConfig.load(path, ["training.lr=0.01"])
    assert cfg.training.steps == 3 and cfg.training.lr == 0.01
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "missing.json")


def test_coeffs_golden(tmp_path):
    sets = ["scheduler.T=2", "scheduler.vp_beta_start=0.1", "scheduler.vp_beta_end=0.2"]
    assert run(tmp_path, "coeffs", sets=sets) == 0
    rows = read_csv(tmp_path / "coeffs.csv")
    assert list(rows[0]) == list(COEFF_COLUMNS)
    assert [int(r["t"]) for r in rows] == [1, 2]
    np.testing.assert_allclose([float(r["k"]) for r in rows], np.sqrt([0.9, 0.8]), atol=1e-12)
    np.testing.assert_allclose([float(r["w"]) for r in rows], np.sqrt([0.1, 0.2]), atol=1e-12)
    assert float(rows[1]["s"]) == pytest.approx(0.4728708, abs=1e-6)
    meta = json.loads((tmp_path / "coeffs.json").read_text())
    assert meta["command"] == "coeffs" and meta["config"]["scheduler"]["T"] == 2


@pytest.mark.parametrize("sets", [["scheduler.T=0"], ["nosuch.field=1"], ["training.steps=-1"],
                                  ["scheduler.kind=\"XY\""]])
def test_config_errors_exit_2(tmp_path, sets):
    assert run(tmp_path, "coeffs", sets=sets) == 2


def test_numeric_abort_exits_3(tmp_path):
    assert run(tmp_path, "train", sets=GAUSS + ["training.lr=1e100", "training.schedule=\"constant\""]) == 3


def test_missing_checkpoint_exit_2(tmp_path):
    assert run(tmp_path, "sample", "--checkpoint", "nope/model") == 2


def test_train_is_byte_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(a, "train") == 0 and run(b, "train") == 0
    for name in ("checkpoints/model.bin", "checkpoints/model.json", "train_log.csv", "train_log.json",
                 "dataset_x.bin", "dataset_weights.bin"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    meta = json.loads((a / "train_log.json").read_text())
    assert meta["checkpoint_hash"] == checkpoint_hash(a / "checkpoints/model")
    rows = read_csv(a / "train_log.csv")
    assert [int(r["step"]) for r in rows] == [0, 20, 40]


def test_periodic_checkpoints(tmp_path):
    assert run(tmp_path, "train", sets=GAUSS + ["training.checkpoint_every=20"]) == 0
    assert (tmp_path / "checkpoints/step_0000020.bin").exists()
    assert (tmp_path / "checkpoints/step_0000040.json").exists()


def test_sample_and_eval_pipeline(tmp_path):
    assert run(tmp_path, "train", "--variant", "villan_zeta0") == 0
    ck = "checkpoints/model"
    assert run(tmp_path, "sample", "--checkpoint", ck, "--which", "backdoor", "--sampler", "zeta0-euler",
               "--csv") == 0
    x, meta = load_tensor(tmp_path / "samples_backdoor_zeta0-euler")
    assert x.shape == (50, 2) and meta["count"] == 50
    assert meta["checkpoint_hash"] == checkpoint_hash(tmp_path / ck)
    assert meta["sampler"]["zeta"] == 0.0 and meta["seed"] == 0
    assert len(read_csv(tmp_path / "samples_backdoor_zeta0-euler_rows.csv")) == 50
    assert run(tmp_path, "eval", "--samples", "samples_backdoor_zeta0-euler") == 0
    rep = read_csv(tmp_path / "eval_samples_backdoor_zeta0-euler.csv")[0]
    assert int(rep["n"]) == 50 and np.isfinite(float(rep["mse"])) and 0 <= float(rep["msethr"]) <= 1
    # sampling is reproducible from the checkpoint
    first = (tmp_path / "samples_backdoor_zeta0-euler.bin").read_bytes()
    assert run(tmp_path, "sample", "--checkpoint", ck, "--which", "backdoor", "--sampler", "1") == 0
    assert (tmp_path / "samples_backdoor_zeta0-euler.bin").read_bytes() == first
    assert run(tmp_path, "sample", "--checkpoint", ck, "--sampler", "nosuch") == 2
    assert run(tmp_path, "eval", "--samples", "nosuch") == 2


def test_compare(tmp_path):
    assert run(tmp_path, "compare", sets=GAUSS + ["compare.ddim_etas=[0.0, 1.0]"]) == 0
    rows = read_csv(tmp_path / "compare.csv")
    assert len(rows) == 3 * 4
    assert {r["variant"] for r in rows} == {"villan_zeta0", "villan_zeta1", "baddiffusion_oracle"}
    assert {r["sampler"] for r in rows} == {"ancestral", "zeta0-euler", "ddim-eta0", "ddim-eta1"}
    meta = json.loads((tmp_path / "compare.json").read_text())
    assert set(meta["checkpoint_hash"]) == {"villan_zeta0", "villan_zeta1", "baddiffusion_oracle"}


def test_inpaint_cli(tmp_path):
    sets = ["data.n_train=100", "model.hidden_dims=[16]", "scheduler.T=8", "training.steps=10", "inpaint.n=5"]
    assert run(tmp_path, "train", sets=sets) == 0
    assert run(tmp_path, "inpaint", "--checkpoint", "checkpoints/model", sets=sets) == 0
    rows = read_csv(tmp_path / "inpaint.csv")
    assert [(r["corruption"], r["model"]) for r in rows] == [(k, m) for k in ("box", "line", "blur")
                                                             for m in ("trained", "untrained")]
    assert all(np.isfinite(float(r["masked_mse"])) for r in rows)
    assert run(tmp_path, "inpaint", "--checkpoint", "checkpoints/model", sets=GAUSS) == 2


def test_conditional_experiment_inputs():
    cfg = ExperimentConfig({"mode": "conditional", "eval": {"n_samples": 4}})
    exp = Experiment(cfg)
    data = exp.training_arrays()
    assert data["condition"].shape == data["condition_trig"].shape == (1000, 32)
    poisoned, r, c = exp.sampling_inputs("backdoor", 4)
    assert not poisoned and r is None and c.shape == (4, 32)
    _, _, c_clean = exp.sampling_inputs("clean", 4)
    assert not np.allclose(c, c_clean)
    assert exp.new_model().cond_dim == 32


def test_storage_roundtrip(tmp_path):
    arr = np.arange(6.0).reshape(2, 3)
    dump_tensor(tmp_path / "t", arr, {"k": 1})
    back, meta = load_tensor(tmp_path / "t")
    assert np.array_equal(back, arr) and meta["shape"] == [2, 3] and meta["k"] == 1
    write_csv(tmp_path / "r.csv", ("a", "b"), [(1, 0.1), (2, None)], {})
    assert (tmp_path / "r.csv").read_bytes() == b"a,b\n1,0.1\n2,\n"
    # values from `git hash-object`
    assert git_blob_hash(b"") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391"
    assert git_blob_hash(b"hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a"
