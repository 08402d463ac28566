import json

import numpy as np
import pytest
import torch

from forgeryloc import InvalidArgumentError
from forgeryloc.attention import (
    AttentionModule,
    add_position,
    attention_maps,
    export_attention_maps,
    refine,
    refine_features,
)


def tiny(**kw):
    torch.manual_seed(0)
    return AttentionModule(2, 3, dim=8, depth=2, num_heads=2, **kw)


def test_add_position_identities(rng):
    x, pe = rng.random((6, 8)), rng.random((6, 8))
    assert np.array_equal(add_position(x, np.zeros_like(x)), x)
    assert np.array_equal(add_position(np.zeros_like(x), pe), pe)
    out = add_position(x, pe)
    for k in range(6):
        for d in range(8):
            assert out[k, d] == x[k, d] + pe[k, d]
    with pytest.raises(InvalidArgumentError):
        add_position(x, pe[:5])


def test_map_shapes():
    m = attention_maps(AttentionModule(9, 15, dim=24, depth=1, num_heads=2), np.random.rand(135, 24))
    assert m.maps.shape == (3, 9, 15)
    one = attention_maps(AttentionModule(1, 1, dim=8, depth=1, num_heads=2, num_maps=1), np.random.rand(1, 8))
    assert one.maps.shape == (1, 1, 1)
    with pytest.raises(InvalidArgumentError):
        attention_maps(tiny(), np.random.rand(5, 8))


def test_permutation_equivariance_without_position():
    """Swapping two positions in the input swaps the corresponding map entries."""
    mod = AttentionModule(1, 6, dim=8, depth=2, num_heads=2).double()
    with torch.no_grad():
        mod.position_embeddings.zero_()
    x = torch.rand(1, 6, 8, dtype=torch.float64)
    perm = torch.tensor([3, 0, 5, 1, 4, 2])
    a = mod(x)[0].reshape(3, 6)
    b = mod(x[:, perm])[0].reshape(3, 6)
    assert torch.allclose(a[:, perm], b, atol=1e-10)


def test_refine_identities(rng):
    x = rng.random((6, 8))
    assert np.allclose(refine(x, np.ones((1, 2, 3))), x)
    m = np.broadcast_to(np.array([0.2, 0.3, 0.5])[:, None, None], (3, 2, 3))
    assert np.allclose(refine(x, m), x, atol=1e-12)
    big = rng.random((6, 768))
    assert refine(big, rng.random((3, 2, 3)), "concat").shape == (6, 2304)
    with pytest.raises(InvalidArgumentError):
        refine(x, m, "mul")


def test_refine_add_is_per_position_scaling(rng):
    x, m = rng.random((6, 8)), rng.normal(size=(3, 2, 3))
    expected = x * m.reshape(3, 6).sum(0)[:, None]
    assert np.allclose(refine(x, m), expected, atol=1e-12)


def test_refine_concat_layout(rng):
    x, m = rng.random((6, 4)), rng.random((2, 2, 3))
    y = refine(x, m, "concat")
    flat = m.reshape(2, 6)
    for k in range(6):
        assert np.allclose(y[k], np.concatenate([x[k] * flat[0, k], x[k] * flat[1, k]]))


def test_refine_is_linear(rng):
    x1, x2 = torch.rand(1, 6, 8), torch.rand(1, 6, 8)
    m = torch.rand(1, 3, 6)
    lhs = refine_features(2.5 * x1 - 0.7 * x2, m)
    rhs = 2.5 * refine_features(x1, m) - 0.7 * refine_features(x2, m)
    assert torch.allclose(lhs, rhs, atol=1e-6)


def test_mlp_replacement_structure():
    mod = tiny(encoder="mlp")
    linears = [l for l in mod.encoder.modules() if isinstance(l, torch.nn.Linear)]
    relus = [l for l in mod.encoder.modules() if isinstance(l, torch.nn.ReLU)]
    assert len(linears) == 6 and len(relus) == 6


def test_transformer_depth_default():
    mod = AttentionModule(1, 2, dim=24, num_heads=12)
    assert len(mod.encoder.layers) == 12
    assert mod.squeeze.out_channels == 3


def test_export_maps(tmp_path):
    maps = np.stack([np.arange(6.0).reshape(2, 3), np.full((2, 3), 2.0), -np.arange(6.0).reshape(2, 3)])
    paths = export_attention_maps(maps, tmp_path, "f")
    assert len(paths) == 3
    meta = json.loads((tmp_path / "f.json").read_text())["maps"]
    assert meta[0]["min"] == 0.0 and meta[0]["max"] == 5.0
    from PIL import Image

    img = np.asarray(Image.open(paths[0]))
    assert img.shape == (2, 3) and img.max() == 255 and img.min() == 0
