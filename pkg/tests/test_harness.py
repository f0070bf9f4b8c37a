import json
import math

import numpy as np
import pytest

from wildsam.harness import checkpoint
from wildsam.harness.ablate import EXPERT_ROWS, PRESETS, ablate, resolve_grid, write_tables
from wildsam.harness.cli import main
from wildsam.harness.config import ConfigError, TrainConfig, dumps, load_grid, loads, toy_config
from wildsam.harness.features import read_feature
from wildsam.harness.gradcheck import MODULES, gradcheck
from wildsam.harness.optim import AdamW, OptimizerError
from wildsam.harness.train import build_model, evaluate, generate_patches, train, train_step, to_arrays
from wildsam.metrics import aggregate
from wildsam.nn import Parameter
from wildsam.numerics import ops
from wildsam.phase_io import FormatError, write_patch

TINY = dict(n_train=16, n_val=8, epochs=1, batch_size=8, image_size=32)


def tiny(**kw):
    return toy_config(**{**TINY, **kw})


# config -----------------------------------------------------------------------

def test_defaults_follow_the_training_protocol():
    cfg = TrainConfig()
    assert (cfg.lr, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.eps) == (1e-5, 0.01, 0.9, 0.999, 1e-8)
    assert (cfg.epochs, cfg.batch_size, cfg.n_train, cfg.n_val, cfg.image_size) == (30, 8, 512, 128, 64)
    assert toy_config().lr == 1e-3


def test_config_text_round_trip():
    cfg = toy_config(seed=5, expert_mask="1010", adapter_layers="B", **{"scene.amp_range": "pi,4*pi"})
    assert cfg.adapter_layers == [2, 3]
    assert cfg.scene.amp_range == (math.pi, 4 * math.pi)
    assert loads(dumps(cfg)) == cfg


def test_config_errors():
    with pytest.raises(ConfigError):
        toy_config(lr=-1.0).validate()
    with pytest.raises(ConfigError):
        toy_config(expert_mask="0000").validate()
    toy_config(expert_mask="0000", adapter_layers="none").validate()  # no adapters, mask unused
    with pytest.raises(ConfigError):
        toy_config(bogus=1)
    with pytest.raises(ConfigError):
        toy_config(epochs="many")
    with pytest.raises(ConfigError):
        toy_config(image_size=60).validate()


def test_grid_file(tmp_path):
    path = tmp_path / "g.grid"
    path.write_text("[grid]\nseeds = [3, 4]\n\n[a]\nexpert_mask = 1100\n\n[b]\nwgse_enabled = false\n")
    cells, seeds = load_grid(path)
    assert seeds == [3, 4]
    assert cells == [("a", {"expert_mask": "1100"}), ("b", {"wgse_enabled": "false"})]


# optimizer -------------------------------------------------------------------

def test_adamw_first_step_hand_value():
    p = Parameter(np.zeros(1))
    p.grad = np.ones(1)
    AdamW([("p", p)], lr=1e-5, weight_decay=0.01).step()
    assert p.data[0] == pytest.approx(-1e-5 / (1 + 1e-8), rel=1e-12)


def test_adamw_matches_reference_loop(rng):
    w = rng.normal(size=5)
    p = Parameter(w.copy())
    opt = AdamW([("p", p)], lr=0.01, weight_decay=0.1)
    m = v = np.zeros(5)
    theta = w.copy()
    for t in range(1, 6):
        g = rng.normal(size=5)
        p.grad = g.copy()
        opt.step()
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        theta = theta - 0.01 * ((m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8) + 0.1 * theta)
    np.testing.assert_allclose(p.data, theta, rtol=1e-12)


def test_adamw_ignores_frozen_and_requires_grads():
    frozen = Parameter(np.ones(3), trainable=False)
    frozen.grad = np.ones(3)
    live = Parameter(np.ones(3))
    opt = AdamW([("f", frozen), ("l", live)], lr=0.1)
    assert list(opt.state.m) == ["l"]
    with pytest.raises(OptimizerError):
        opt.step()
    live.grad = np.ones(3)
    before = frozen.data.copy()
    opt.step()
    assert frozen.data.tobytes() == before.tobytes()


# training, evaluation, checkpoints ---------------------------------------------

def test_zero_epochs_gives_single_evaluation():
    report, _ = train(tiny(epochs=0))
    assert report.train_loss == [] and len(report.val_metrics) == 1


def test_identity_at_init_in_epoch_zero_metrics():
    on, _ = train(tiny(epochs=0))
    off, _ = train(tiny(epochs=0, adapter_layers="none"))
    assert on.val_metrics[0] == off.val_metrics[0]


def test_frozen_parameters_unchanged_by_training():
    cfg = tiny()
    model = build_model(cfg)
    frozen = {n: p.data.copy() for n, p in model.named_parameters() if not p.trainable}
    opt = AdamW.from_config(model.trainable_parameters(), cfg)
    x, y = to_arrays(generate_patches(cfg, "train", 4), cfg.image_size)
    for _ in range(3):
        train_step(model, opt, x, y, 1.0)
    for n, p in model.named_parameters():
        if not p.trainable:
            assert p.data.tobytes() == frozen[n].tobytes(), n
    assert model.backbone.alphas["0"].data != 0


def test_training_is_deterministic_and_checkpoints_round_trip(tmp_path):
    cfg = tiny(epochs=2)
    r1, m1 = train(cfg)
    r2, m2 = train(cfg)
    b1, b2 = checkpoint.to_bytes(m1, cfg), checkpoint.to_bytes(m2, cfg)
    assert b1 == b2
    assert r1.train_loss == r2.train_loss and r1.val_metrics == r2.val_metrics
    checkpoint.save(tmp_path / "m.wsck", m1, cfg)
    m3, cfg3 = checkpoint.load(tmp_path / "m.wsck")
    assert cfg3 == cfg
    e1 = evaluate(m1, cfg, seed=9, count=6)
    e3 = evaluate(m3, cfg3, seed=9, count=6)
    assert e1.records == e3.records and e1.val_metrics == e3.val_metrics
    assert checkpoint.to_bytes(m3, cfg3) == b1


def test_evaluate_reports(tmp_path):
    cfg = tiny()
    _, model = train(cfg)
    a = evaluate(model, cfg, seed=cfg.seed, count=5, split="train")
    b = evaluate(model, cfg, seed=cfg.seed, count=5, split="train")
    c = evaluate(model, cfg, seed=123, count=5)
    assert a.records == b.records
    assert a.split.startswith("train:seed=0") and c.split.startswith("test:seed=123")
    assert a.final == aggregate(a.records)
    assert a.final["dice"] == pytest.approx(np.mean([r["dice"] for r in a.records]), abs=1e-15)


def test_checkpoint_errors(tmp_path):
    cfg = tiny()
    model = build_model(cfg)
    blob = checkpoint.to_bytes(model, cfg)
    with pytest.raises(FormatError):
        checkpoint.parse(b"XXXX" + blob[4:])
    with pytest.raises(FormatError):
        checkpoint.parse(blob[:-10])
    with pytest.raises(FormatError):
        checkpoint.parse(blob + b"\0\0\0\0")
    (tmp_path / "m.wsck").write_bytes(blob)
    with pytest.raises(checkpoint.CompatibilityError):
        checkpoint.load(tmp_path / "m.wsck", cfg.replace(adapter_layers="S"))
    with pytest.raises(checkpoint.CompatibilityError):
        checkpoint.load(tmp_path / "m.wsck", cfg.replace(**{"vit.embed_dim": 32}))


def test_trainable_counts_grow_with_adapter_depth():
    counts = [build_model(tiny(adapter_layers=p)).count_parameters()[1] for p in ("S", "B", "L")]
    assert counts[0] < counts[1] < counts[2]
    total, trainable = build_model(tiny()).count_parameters()
    model = build_model(tiny())
    assert trainable == sum(p.size for _, p in model.trainable_parameters())


# ablation -------------------------------------------------------------------

def test_expert_grid_has_seven_rows_with_distinct_counts():
    cells, _ = resolve_grid("experts")
    assert [n for n, _ in cells] == list(EXPERT_ROWS)
    # checkmark pattern of the expert ablation table, row by row
    assert [o["expert_mask"] for _, o in cells] == ["1100", "0011", "1001", "0110", "1110", "0111", "1111"]
    counts = {n: build_model(tiny(**o)).count_parameters()[1] for n, o in cells}
    assert len(set(counts.values())) == 7


def test_wgse_preset_configurations():
    cells = dict(PRESETS["wgse"])
    frozen = build_model(tiny(**cells["frozen"]))
    assert frozen.count_parameters()[1] == sum(p.size for n, p in frozen.trainable_parameters()
                                                if n.startswith("decoder."))
    assert build_model(tiny(**cells["sam-moe"])).wgse is None


def test_ablate_runs_cells_and_writes_tables(tmp_path):
    cells = [("a", {"expert_mask": "1100"}), ("b", {"wgse_enabled": "false"})]
    result = ablate(tiny(epochs=0), cells, seeds=[0, 1])
    assert len(result["runs"]) == 4 and [r["cell"] for r in result["summary"]] == ["a", "b"]
    assert result["summary"][0]["trainable"] != result["summary"][1]["trainable"]
    paths = write_tables(result, tmp_path)
    assert json.loads(paths[0].read_text())["seeds"] == [0, 1]
    assert paths[2].read_text().splitlines()[0].startswith("cell,seeds,precision")
    with pytest.raises(ConfigError):
        ablate(tiny(), [])


# gradcheck ------------------------------------------------------------------

def test_gradcheck_passes_and_lists_each_module_once():
    report = gradcheck(tiny(), n_probes=40)
    assert list(report["modules"]) == list(MODULES)
    assert report["passed"] and report["n_probes"] == 40


def test_gradcheck_detects_corrupted_scalar_token_product(monkeypatch):
    orig = ops.Mul.backward

    def bad(ctx, g):
        ga, gb = orig(ctx, g)
        if ga is not None and np.ndim(ctx.a) == 0 and np.ndim(ctx.b) == 3:  # alpha * token perturbation
            ga = ga * 1.5
        return ga, gb

    monkeypatch.setattr(ops.Mul, "backward", staticmethod(bad))
    report = gradcheck(tiny(), n_probes=40)
    assert report["modules"]["backbone"]["status"] == "fail"
    assert report["modules"]["decoder_loss"]["status"] == "pass"
    assert not report["passed"]


def test_gradcheck_detects_corrupted_softmax(monkeypatch):
    orig = ops.Softmax.backward
    monkeypatch.setattr(ops.Softmax, "backward", staticmethod(lambda ctx, g: orig(ctx, g) * 0.5))
    report = gradcheck(tiny(), n_probes=40)
    assert report["modules"]["backbone"]["status"] == "fail"  # attention
    assert report["modules"]["wgse"]["status"] == "fail"  # spectral coupling bridge
    assert report["modules"]["decoder_loss"]["status"] == "pass"


# command line -----------------------------------------------------------------

@pytest.fixture
def cfg_file(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text("".join(f"{k} = {v}\n" for k, v in TINY.items()))
    return path


def test_cli_end_to_end(tmp_path, cfg_file, capsys):
    assert main(["gen", "--config", str(cfg_file), "--seed", "4", "--count", "3", "--out", str(tmp_path / "p")]) == 0
    assert len(list((tmp_path / "p").glob("*.igram"))) == 3
    assert main(["train", "--config", str(cfg_file), "--out", str(tmp_path / "run")]) == 0
    ck = tmp_path / "run" / "model.wsck"
    assert ck.exists() and (tmp_path / "run" / "report.json").exists()
    assert main(["eval", "--checkpoint", str(ck), "--data", str(tmp_path / "p"), "--out", str(tmp_path / "e.json")]) == 0
    assert json.loads((tmp_path / "e.json").read_text())["split"] == f"dir:{tmp_path / 'p'}"
    assert main(["eval", "--checkpoint", str(ck), "--seed", "7", "--count", "2", "--out", str(tmp_path / "e2.json")]) == 0
    assert main(["dump-features", "--checkpoint", str(ck), "--patch", str(tmp_path / "p" / "patch_00000.igram"),
                 "--out", str(tmp_path / "f")]) == 0
    assert read_feature(tmp_path / "f" / "prompt.feat").shape == (64, 4, 4)
    assert read_feature(tmp_path / "f" / "logits.feat").shape == (1, 32, 32)
    assert main(["gradcheck", "--config", str(cfg_file), "--probes", "12"]) == 0
    assert main(["ablate", "--config", str(cfg_file), "--set", "epochs=0", "--grid", "depth", "--seeds", "0",
                 "--out", str(tmp_path / "abl")]) == 0
    assert (tmp_path / "abl" / "ablation_summary.csv").exists()


def test_cli_exit_codes(tmp_path, cfg_file, monkeypatch):
    assert main([]) == 1
    assert main(["nope"]) == 1
    assert main(["train", "--config", str(cfg_file)]) == 1  # missing --out
    assert main(["train", "--config", str(tmp_path / "missing.cfg"), "--out", str(tmp_path)]) == 1
    assert main(["train", "--config", str(cfg_file), "--set", "lr=-1", "--out", str(tmp_path)]) == 1
    empty = tmp_path / "empty.grid"
    empty.write_text("[grid]\nseeds = [0]\n")
    assert main(["ablate", "--config", str(cfg_file), "--grid", str(empty)]) == 1
    bad = tmp_path / "bad.wsck"
    bad.write_bytes(b"junk")
    assert main(["eval", "--checkpoint", str(bad), "--seed", "1"]) == 2
    assert main(["eval", "--checkpoint", str(tmp_path / "none.wsck"), "--seed", "1"]) == 2
    model = build_model(tiny())
    checkpoint.save(tmp_path / "ok.wsck", model, tiny())
    (tmp_path / "empty_dir").mkdir()
    assert main(["eval", "--checkpoint", str(tmp_path / "ok.wsck"), "--data", str(tmp_path / "empty_dir")]) == 2
    rec = generate_patches(tiny(), "test", 1)[0]
    write_patch(rec, tmp_path / "x.igram")
    (tmp_path / "trunc.igram").write_bytes((tmp_path / "x.igram").read_bytes()[:100])
    assert main(["dump-features", "--checkpoint", str(tmp_path / "ok.wsck"), "--patch", str(tmp_path / "trunc.igram"),
                 "--out", str(tmp_path / "f")]) == 2

    import wildsam.harness.cli as cli
    monkeypatch.setattr(cli, "gradcheck", lambda cfg, n_probes, seed: {
        "modules": {"pa_moe": {"probes": 1, "max_rel_error": 1.0, "status": "fail"}},
        "passed": False, "n_probes": 1, "tolerance": 1e-4})
    assert main(["gradcheck", "--config", str(cfg_file)]) == 3
