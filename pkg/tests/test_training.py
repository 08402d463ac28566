import json

import numpy as np
import pytest
import torch

from forgeryloc import ConfigurationError, ForgeryNet, ModelConfig, build_variant
from forgeryloc import checkpoint
from forgeryloc.datagen import CorpusManifest
from forgeryloc.training import (
    TABLE1,
    PretrainConfig,
    camera_blocks,
    load_stage_config,
    lr_at_epoch,
    make_sample,
    pretrain_ffe,
    run_stage,
    stage_config,
)


def toy_samples(n=4, h=128, w=256, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        m = np.zeros((h, w))
        if i % 2:
            m[:, :128] = 1
        out.append(make_sample(rng.random((h, w, 3)), m, i % 2))
    return out


def small_model(**kw):
    torch.manual_seed(0)
    return ForgeryNet(ModelConfig.desk(rows=1, cols=2, **kw))


def test_stage_defaults_follow_table():
    s1 = stage_config(1)
    assert (s1.datasets, s1.epochs, s1.initial_lr, s1.decay_rate, s1.decay_step) == (("A",), 6, 1e-4, 0.75, 2)
    s3 = stage_config(3)
    assert (s3.epochs, s3.initial_lr, s3.decay_rate) == (23, 8.5e-5, 0.85)
    assert stage_config(5).datasets == ("A", "B", "C", "D", "E", "F")
    assert s1.freeze_ffe and not stage_config(4).freeze_ffe
    assert s1.alpha == 0.4 and s1.momentum == 0.95
    assert s1.lr(5) == pytest.approx(1e-4 * 0.75 ** 2, abs=0)


def test_pretrain_schedule_examples():
    cfg = PretrainConfig()
    assert (cfg.lr, cfg.momentum) == (1e-3, 0.95)
    assert cfg.lr_at(4) == 1e-3 * 0.5 ** 2


def test_stage_config_validation(tmp_path):
    with pytest.raises(ConfigurationError):
        stage_config(6)
    with pytest.raises(ConfigurationError):
        stage_config(1, alpha=1.5)
    p = tmp_path / "s.json"
    p.write_text(json.dumps({"stage": 2, "epochs": 3}))
    assert load_stage_config(p).epochs == 3
    p.write_text(json.dumps({"stage": 2, "bogus": 3}))
    with pytest.raises(ConfigurationError):
        load_stage_config(p)


def test_variants_and_flag_consistency():
    assert build_variant("10-attention-maps").attention.squeeze.out_channels == 10
    assert build_variant("no-transformer").attention.encoder_kind == "mlp"
    assert build_variant("no-transformer-module").attention is None
    assert build_variant("no-ffe").ffe is None
    assert build_variant("concat-refine").config.head_dim == 3 * 64
    proposed = build_variant("proposed")
    assert proposed.config.num_maps == 3 and proposed.config.refine == "add"
    with pytest.raises(ConfigurationError):
        build_variant({"attention": "none", "squeeze": True})
    with pytest.raises(ConfigurationError):
        build_variant({"use_ffe": False, "use_cfe": False})
    with pytest.raises(ConfigurationError):
        build_variant("no-such-variant")


@pytest.mark.parametrize("variant", ["proposed", "no-ffe", "no-cfe", "no-transformer-module", "no-transformer",
                                     "no-attention-squeeze", "1-attention-map", "concat-refine"])
def test_variant_forward_shapes(variant):
    torch.manual_seed(0)
    model = build_variant(variant, ModelConfig.desk(rows=1, cols=2))
    out = model(torch.rand(2, 2, 3, 128, 128))
    assert out["p"].shape == (2, 2) and out["q"].shape == (2, 2)
    assert torch.allclose(out["p"].sum(1), torch.ones(2))


def test_missing_dataset_is_configuration_error():
    with pytest.raises(ConfigurationError):
        run_stage(small_model(), stage_config(4, epochs=1), {"VCMS": toy_samples()})


def test_frozen_ffe_is_bit_identical_and_constraint_holds():
    model = small_model()
    before = {k: v.clone() for k, v in model.ffe.state_dict().items()}
    run_stage(model, stage_config(1, epochs=1, batch_size=2), {"VCMS": toy_samples()})
    after = model.ffe.state_dict()
    assert all(torch.equal(before[k], after[k]) for k in before)
    model2 = small_model()
    res = run_stage(model2, stage_config(4, epochs=1, datasets=("A",)), {"VCMS": toy_samples()})
    assert res.steps == 2
    assert model2.ffe.first_layer.constraint_violation() < 1e-6
    assert not torch.equal(model2.ffe.first_layer.weight, small_model().ffe.first_layer.weight)


def test_learning_rate_follows_schedule_in_log():
    res = run_stage(small_model(), stage_config(1, epochs=5, batch_size=4), {"VCMS": toy_samples()})
    assert [r["lr"] for r in res.log] == [lr_at_epoch(1e-4, 0.75, 2, e) for e in range(5)]
    for key in ("step", "stage", "epoch", "lr", "L_D", "L_L", "L"):
        assert key in res.log[0]


def test_determinism():
    a = run_stage(small_model(), stage_config(1, epochs=2), {"VCMS": toy_samples()}).log
    b = run_stage(small_model(), stage_config(1, epochs=2), {"VCMS": toy_samples()}).log
    assert np.allclose([r["L"] for r in a], [r["L"] for r in b], atol=1e-6, rtol=0)


def test_checkpoint_and_resume(tmp_path):
    data = {"VCMS": toy_samples()}
    full = run_stage(small_model(), stage_config(4, epochs=3, datasets=("A",)), data, out_dir=tmp_path / "full")
    part = small_model()
    run_stage(part, stage_config(4, epochs=2, datasets=("A",)), data, out_dir=tmp_path / "part")
    assert sorted(p.name for p in (tmp_path / "part").iterdir()) == ["stage4_epoch000.ckpt", "stage4_epoch001.ckpt"]
    resumed = run_stage(small_model(), stage_config(4, epochs=3, datasets=("A",)), data,
                        out_dir=tmp_path / "part", resume=True)
    assert resumed.steps == full.steps
    assert np.allclose([r["L"] for r in resumed.log], [r["L"] for r in full.log[-len(resumed.log):]], atol=1e-5)
    model, manifest = checkpoint.load_model(tmp_path / "part" / "stage4_epoch002.ckpt")
    assert manifest["epoch"] == 2 and model.config == part.config


def test_checkpoint_roundtrip_preserves_outputs(tmp_path):
    model = small_model()
    model.eval()
    x = torch.rand(1, 2, 3, 128, 128)
    path = checkpoint.save_model(tmp_path / "m.ckpt", model, {"note": "x"})
    loaded, manifest = checkpoint.load_model(path)
    loaded.eval()
    assert manifest["note"] == "x"
    assert torch.allclose(model(x)["p"], loaded(x)["p"], atol=0)
    with pytest.raises(ConfigurationError):
        checkpoint.load_model(tmp_path / "missing.ckpt")


def test_manifest_training_uses_train_split(tiny_corpus):
    man = CorpusManifest.load(tiny_corpus)
    model = ForgeryNet(ModelConfig.desk(rows=1, cols=2))
    res = run_stage(model, stage_config(1, epochs=1, batch_size=4), man)
    train_frames = sum(len(r["frame_paths"]) for r in man.select(["VCMS"], "train"))
    assert res.steps == -(-train_frames // 4)


def test_camera_blocks_share_scenes():
    x, y = camera_blocks(3, 2, 1, np.random.default_rng(0))
    assert x.shape == (6, 3, 128, 128) and y.tolist() == [0, 1, 2, 0, 1, 2]


def test_pretrain_smoke_and_head_removed():
    model, report = pretrain_ffe(PretrainConfig(epochs=1, train_scenes=4, heldout_scenes=2, batch_size=8))
    assert model.classifier is None
    assert len(report.per_class_accuracy) == 4 and len(report.lr_history) == 1
    with pytest.raises(Exception):
        pretrain_ffe(PretrainConfig(num_classes=1))
