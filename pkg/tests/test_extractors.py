import numpy as np
import pytest
import torch

from forgeryloc import InvalidArgumentError, plan_grid, tile_frame
from forgeryloc.extractors import (
    CfeModel,
    ConstrainedConv2d,
    FfeModel,
    extract_context,
    extract_forensic,
    ffe_pretrain_loss,
    join_embeddings,
)

from oracles import camera_ce


def test_constrained_kernel_invariant_after_updates():
    conv = ConstrainedConv2d(3, 3, 5)
    opt = torch.optim.SGD(conv.parameters(), lr=0.5)
    x = torch.randn(2, 3, 16, 16)
    for _ in range(5):
        loss = conv(x).pow(2).mean()
        opt.zero_grad()
        loss.backward()
        opt.step()
        conv.constrain()
        w = conv.weight.detach().double()
        assert torch.allclose(w[:, :, 2, 2], torch.full((3, 3), -1.0, dtype=torch.float64))
        rest = w.sum(dim=(2, 3)) - w[:, :, 2, 2]
        assert torch.allclose(rest, torch.ones_like(rest), atol=1e-5)
        assert conv.constraint_violation() < 1e-6


def test_constrained_kernel_must_be_odd():
    with pytest.raises(InvalidArgumentError):
        ConstrainedConv2d(3, 3, 4)


def test_embedding_shapes_and_join():
    torch.manual_seed(0)
    px = np.random.default_rng(0).random((200, 300, 3))
    grid = plan_grid(200, 300)
    blocks = tile_frame(px, grid)
    ffe = FfeModel(16, (4, 8, 8, 8))
    cfe = CfeModel(12, (4, 8), (8, 8))
    f, c = extract_forensic(ffe, blocks), extract_context(cfe, blocks)
    assert f.shape == (6, 16) and c.shape == (6, 12)
    joint = join_embeddings(f, c, grid)
    assert joint.x.shape == (6, 28)
    ff, cc = joint.split()
    assert np.array_equal(ff, f) and np.array_equal(cc, c)
    assert join_embeddings(None, c).x.shape == (6, 12)
    with pytest.raises(InvalidArgumentError):
        join_embeddings(f[:5], c)
    with pytest.raises(InvalidArgumentError):
        extract_forensic(ffe, blocks[:, :64])


def test_ffe_head_removed_after_strip():
    m = FfeModel(8, (4, 4, 4, 4), num_classes=3)
    assert m.classify(torch.rand(1, 3, 128, 128)).shape == (1, 3)
    m.strip_head()
    with pytest.raises(InvalidArgumentError):
        m.classify(torch.rand(1, 3, 128, 128))


def test_pretrain_loss_matches_oracle(rng):
    for _ in range(200):
        n = int(rng.integers(2, 8))
        p = rng.dirichlet(np.ones(n))
        t = int(rng.integers(n))
        got = float(ffe_pretrain_loss(torch.tensor(p), t))
        assert abs(got - camera_ce(p, t)) < 1e-9


def test_pretrain_loss_clips_log_and_validates():
    assert float(ffe_pretrain_loss(torch.tensor([1.0, 0.0], dtype=torch.float64), 1)) == pytest.approx(
        -np.log(1e-12))
    with pytest.raises(InvalidArgumentError):
        ffe_pretrain_loss(torch.tensor([0.3, 0.3], dtype=torch.float64), 0)
    with pytest.raises(InvalidArgumentError):
        ffe_pretrain_loss(torch.tensor([0.5, 0.5], dtype=torch.float64), 2)
