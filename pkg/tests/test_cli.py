import json

import pytest

from forgeryloc.cli import EXIT_ENVIRONMENT, EXIT_OK, EXIT_VALIDATION, main


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_datagen_eval_oracle(tmp_path, capsys):
    corpus = tmp_path / "corpus"
    code, out, _ = run(capsys, "datagen", "--out", str(corpus), "--videos", "2", "--frames", "1",
                       "--datasets", "VPVM", "--height", "128", "--width", "128", "--seed", "9")
    assert code == EXIT_OK and json.loads(out)["items"] == 2
    record = json.loads((corpus / "run.json").read_text())
    assert record["seed"] == 9 and record["config"]["seed"] == 9 and "code_version" in record
    code, out, _ = run(capsys, "eval", "--corpus", str(corpus), "--oracle", "--out", str(tmp_path / "ev"))
    assert code == EXIT_OK
    metrics = json.loads((tmp_path / "ev" / "metrics.json").read_text())
    assert set(metrics["summary"]) == {"Det. mAP", "Det. ACC", "Loc. MCC", "Loc. F1"}


def test_same_seed_same_manifest(tmp_path, capsys):
    for name in ("a", "b"):
        run(capsys, "datagen", "--out", str(tmp_path / name), "--videos", "2", "--frames", "1",
            "--datasets", "VCMS", "--height", "128", "--width", "128")
    assert (tmp_path / "a" / "manifest.jsonl").read_bytes() == (tmp_path / "b" / "manifest.jsonl").read_bytes()


def test_config_file_and_flag_override(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"seed": 4, "datagen": {"datasets": ["IPIM"], "videos_per_dataset": 3,
                                                      "height": 128, "width": 128}}))
    code, out, _ = run(capsys, "datagen", "--config", str(cfg), "--videos", "1", "--out", str(tmp_path / "o"))
    assert code == EXIT_OK and json.loads(out)["items"] == 1
    assert json.loads((tmp_path / "o" / "run.json").read_text())["seed"] == 4


def test_validation_errors_write_nothing(tmp_path, capsys):
    out = tmp_path / "never"
    code, _, err = run(capsys, "datagen", "--out", str(out), "--datasets", "NOPE")
    assert code == EXIT_VALIDATION and json.loads(err)["error"] == "ConfigurationError"
    assert not out.exists()
    code, _, _ = run(capsys, "datagen", "--out", str(out), "--height", "64")
    assert code == EXIT_VALIDATION and not out.exists()


def test_usage_error_is_validation(capsys):
    with pytest.raises(SystemExit) as e:
        main(["train", "--optimizer", "RMS"])
    assert e.value.code == EXIT_VALIDATION


def test_missing_checkpoint(tmp_path, capsys):
    code, _, err = run(capsys, "infer", "--checkpoint", str(tmp_path / "x.ckpt"), "--input", str(tmp_path),
                       "--out", str(tmp_path / "o"))
    assert code == EXIT_VALIDATION and "does not exist" in json.loads(err)["message"]


def test_missing_encoder_is_environment_error(tmp_path, capsys, monkeypatch):
    import forgeryloc.datagen as dg

    monkeypatch.setattr(dg, "find_encoder", lambda: None)
    code, _, err = run(capsys, "datagen", "--out", str(tmp_path / "o"), "--codec", "h264")
    assert code == EXIT_ENVIRONMENT and json.loads(err)["error"] == "EncoderError"


def test_train_infer_bench(tmp_path, capsys, tiny_corpus):
    code, out, _ = run(capsys, "train", "--corpus", str(tiny_corpus), "--out", str(tmp_path / "t"),
                       "--max-steps", "2", "--epochs", "1")
    assert code == EXIT_OK
    ckpt = json.loads(out)["checkpoint"]
    run_record = json.loads((tmp_path / "t" / "run.json").read_text())
    assert run_record["config"]["stages"][0]["initial_lr"] == 1e-4
    frames = tiny_corpus / "VCMS" / "VCMS_00000" / "frames"
    code, out, _ = run(capsys, "infer", "--checkpoint", ckpt, "--input", str(frames), "--out", str(tmp_path / "i"))
    assert code == EXIT_OK
    recs = [json.loads(l) for l in (tmp_path / "i" / "results.jsonl").read_text().splitlines()]
    assert len(recs) == 2 and len(recs[0]["attention_maps"]) == 3
    from PIL import Image

    assert Image.open(recs[0]["mask_path"]).size == (256, 128)
    code, _, err = run(capsys, "infer", "--checkpoint", ckpt, "--input", str(frames), "--out",
                       str(tmp_path / "s"), "--strict-1080p")
    assert code == EXIT_VALIDATION
    code, out, _ = run(capsys, "bench", "--checkpoint", ckpt, "--frames", "10", "--size", "128x256",
                       "--out", str(tmp_path / "b"))
    assert code == EXIT_OK and json.loads(out)["n_frames"] == 10
