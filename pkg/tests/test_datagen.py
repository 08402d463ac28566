import json

import numpy as np
import pytest

from forgeryloc import ForgeryMask, GenerationError, InvalidArgumentError
from forgeryloc.datagen import (
    PROFILES,
    SHAPES,
    CorpusConfig,
    CorpusManifest,
    EncodeSettings,
    apply_inplace,
    apply_splice,
    diff_mask,
    encode_video,
    find_encoder,
    generate_corpus,
    render_recipe,
    sample_manipulation,
    sample_mask,
)
from forgeryloc.datagen.encode import decode_video, psnr
from forgeryloc.datagen.manipulations import ManipulationRecipe, motion_kernel, validate_recipe
from forgeryloc.datagen.shapes import rasterize_polygon, shape_polygon


def test_shape_library():
    assert len(SHAPES) == 10
    from scipy import ndimage

    for name in SHAPES:
        poly = shape_polygon(name) * 40 + 64
        m = rasterize_polygon(poly, 128, 128)
        assert m.any()
        # thin star tips meet the body diagonally at pixel scale
        _, n = ndimage.label(m, structure=np.ones((3, 3)))
        assert n == 1, name


def test_mask_sampling_deterministic_and_bounded():
    a, ra = sample_mask(256, 384, 11)
    b, _ = sample_mask(256, 384, 11)
    assert np.array_equal(a.values, b.values)
    assert 0 < a.values.mean() <= 0.75
    assert 1 <= len(ra.components) <= 3
    assert np.array_equal(render_recipe(ra, 256, 384), a.values.astype(bool))


def test_mask_rejection_and_budget():
    # scales that always cover the frame can never pass the area rule
    with pytest.raises(GenerationError):
        sample_mask(128, 128, 0, scale_range=(3.0, 3.1), max_tries=5)
    with pytest.raises(InvalidArgumentError):
        sample_mask(100, 300, 0)


def test_mask_recipe_records_rejections(rng):
    _, recipe = sample_mask(128, 128, rng, max_area=0.3, scale_range=(0.2, 1.0))
    assert recipe.area <= 0.3
    assert recipe.rejected >= 0


def test_profiles_match_table_values():
    vis, inv = PROFILES["visible"], PROFILES["invisible"]
    assert vis["brightness"] == {"range": (0.8, 1.6), "p": 1.0}
    assert vis["contrast"]["range"] == (0.7, 1.3) and vis["saturation"]["range"] == (0.8, 1.1)
    assert vis["hue"]["range"] == (-0.2, 0.2)
    assert vis["gaussian_noise"] == {"std": 0.05, "p": 1.0}
    assert vis["gaussian_blur"] == {"kernel_size": 5, "sigma": 2.0, "p": 0.7}
    assert vis["motion_blur"]["angle"] == (-25.0, 25.0) and vis["box_blur"]["p"] == 0.7
    assert "hue" not in inv
    assert inv["gaussian_noise"] == {"std": 0.006, "p": 0.9}
    assert inv["brightness"]["range"] == (0.95, 1.05) and inv["brightness"]["p"] == 0.9
    assert inv["gaussian_blur"]["sigma"] == 1.2 and inv["motion_blur"]["angle"] == (-20.0, 20.0)


def test_sampled_recipes_validate(rng):
    for profile in ("visible", "invisible"):
        for _ in range(50):
            r = sample_manipulation(profile, rng)
            assert r.ops
            validate_recipe(r)


def test_recipe_validation_rejects_out_of_range():
    with pytest.raises(InvalidArgumentError):
        validate_recipe(ManipulationRecipe("inplace", "invisible", [("brightness", {"factor": 1.3})]))
    with pytest.raises(InvalidArgumentError):
        validate_recipe(ManipulationRecipe("inplace", "invisible", [("hue", {"factor": 0.0})]))
    with pytest.raises(InvalidArgumentError):
        validate_recipe(ManipulationRecipe("inplace", "visible", []))


def test_motion_kernel_normalized():
    for angle in (-25, 0, 13):
        k = motion_kernel(5, angle, 0.5)
        assert k.shape == (5, 5) and abs(k.sum() - 1) < 1e-12


def test_inplace_confined_to_mask(rng):
    frame = rng.random((128, 160, 3))
    m = np.zeros((128, 160))
    m[20:70, 30:100] = 1
    for _ in range(10):
        out = apply_inplace(frame, ForgeryMask(m), sample_manipulation("visible", rng), rng)
        assert np.array_equal(out[m == 0], frame[m == 0])
        assert out.min() >= 0 and out.max() <= 1
    zero = apply_inplace(frame, ForgeryMask.zeros(128, 160), sample_manipulation("visible", rng), rng)
    assert np.array_equal(zero, frame)


def test_splice_matches_pixel_select(rng):
    dest, src = rng.random((64, 64, 3)), rng.random((64, 64, 3))
    m = (rng.random((64, 64)) < 0.4).astype(float)
    out = apply_splice(dest, src, ForgeryMask(m))
    for y in range(64):
        for x in range(64):
            assert np.array_equal(out[y, x], src[y, x] if m[y, x] else dest[y, x])
    assert np.array_equal(apply_splice(dest, src, ForgeryMask(np.ones((64, 64)))), src)
    assert np.array_equal(apply_splice(dest, src, ForgeryMask.zeros(64, 64)), dest)
    with pytest.raises(InvalidArgumentError):
        apply_splice(dest, src[:32], ForgeryMask(m))


def test_diff_mask_examples(rng):
    a = rng.random((64, 96, 3)) * 0.5
    assert diff_mask(a, a).values.sum() == 0
    b = a.copy()
    b[16:32, 48:64] += 0.5
    dm = diff_mask(a, b).values
    expected = np.zeros((64, 96))
    expected[16:32, 48:64] = 1
    assert np.array_equal(dm, expected)
    with pytest.raises(InvalidArgumentError):
        diff_mask(a, b[:32])


def test_lossless_roundtrip(tmp_path, rng):
    frames = [np.rint(rng.random((40, 50, 3)) * 255) / 255 for _ in range(3)]
    res = encode_video(frames, tmp_path / "seq", EncodeSettings("lossless"))
    assert res.settings == "lossless=png"
    assert all(np.array_equal(a, b) for a, b in zip(frames, res.frames))


def test_encode_settings_string():
    assert EncodeSettings().describe() == "crf=23,fps=30"
    with pytest.raises(InvalidArgumentError):
        EncodeSettings("vp9")


@pytest.mark.skipif(find_encoder() is None, reason="no ffmpeg executable")
def test_h264_roundtrip_is_lossy_but_close(tmp_path):
    from forgeryloc.datagen import procedural_texture

    rng = np.random.default_rng(5)
    frames = [procedural_texture(128, 160, rng) for _ in range(3)]
    res = encode_video(frames, tmp_path / "v.mp4", EncodeSettings())
    assert res.container.exists() and len(res.frames) == 3
    quality = psnr(frames[0], res.frames[0])
    assert 25 < quality < float("inf")
    back = decode_video(res.container, 128, 160)
    assert len(back) == 3


def test_corpus_layout_and_manifest(tiny_corpus):
    man = CorpusManifest.load(tiny_corpus)
    assert len(man) == 8 and man.datasets() == ["VCMS", "VPVM"]
    for r in man:
        for key in ("id", "split", "kind", "recipe", "mask_path", "frame_paths", "encode_settings", "seed"):
            assert key in r
        mask = man.mask(r)
        if r["manipulated"]:
            assert mask.values.any()
        else:
            assert not mask.values.any() and r["kind"] == "authentic"
        assert len(r["frame_paths"]) == 2
    assert sum(r["manipulated"] for r in man) == 4
    cfg = json.loads((tiny_corpus / "corpus.json").read_text())["config"]
    assert cfg["seed"] == 3


def test_corpus_split_counts():
    assert CorpusConfig.full().splits().count("train") == 3200
    assert CorpusConfig.full().splits().count("val") == 520
    assert CorpusConfig.full().splits().count("test") == 280
    desk = CorpusConfig.desk()
    assert (desk.videos_per_dataset, desk.frames_per_video) == (16, 4)


def test_corpus_independent_of_workers(tmp_path):
    cfg = CorpusConfig.desk(datasets=("VPIM",), videos_per_dataset=2, frames_per_video=1, height=128, width=128)
    generate_corpus(tmp_path / "a", cfg)
    generate_corpus(tmp_path / "b", CorpusConfig.desk(**{**cfg.to_dict(), "datasets": ("VPIM",), "workers": 2}))
    for rel in ("manifest.jsonl", "VPIM/VPIM_00001/frames/frame_0000.png", "VPIM/VPIM_00001/mask.png"):
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()
