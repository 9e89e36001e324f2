import numpy as np
import pytest
import torch
import torch.nn.functional as F

from ranet.encoder import (Backbone, FeaturePyramid, MatchingHead, build_template_bank, downsample_mask,
                           extract_pyramid, l2_normalize, reduce_and_merge)

from conftest import disk_mask


@pytest.fixture
def backbone():
    return Backbone(8, (16, 32, 64)).eval()


def test_pyramid_shapes_default_size(backbone):
    pyr = extract_pyramid(torch.rand(2, 3, 96, 160), backbone)
    assert [tuple(l.shape) for l in pyr.levels] == [(2, 16, 24, 40), (2, 32, 12, 20), (2, 64, 6, 10)]


def test_indivisible_size_rejected(backbone):
    with pytest.raises(ValueError, match="divisible"):
        extract_pyramid(torch.rand(1, 3, 90, 160), backbone)


def test_encoder_is_pure(backbone):
    x = torch.rand(1, 3, 32, 48)
    a, b = extract_pyramid(x, backbone), extract_pyramid(x.clone(), backbone)
    for la, lb in zip(a.levels, b.levels):
        assert torch.equal(la, lb)


def test_instance_norm_statistics(backbone):
    x = torch.rand(1, 3, 64, 96)
    h = backbone.stem[0](x)
    normed = backbone.stem[1](h)
    mean = normed.mean(dim=(2, 3))
    assert mean.abs().max() < 1e-5


def test_matching_head_reduction_and_width():
    head = MatchingHead((32, 64, 128))
    assert head.reduced == (8, 16, 32) and head.out_channels == 32
    assert MatchingHead((32, 64, 128), merge="concat").out_channels == 56
    with pytest.raises(ValueError):
        MatchingHead((30, 64, 128))


def test_merge_matches_manual_oracle():
    torch.manual_seed(1)
    levels = [torch.randn(1, 16, 24, 40), torch.randn(1, 32, 12, 20), torch.randn(1, 64, 6, 10)]
    head = MatchingHead((16, 32, 64))
    out = reduce_and_merge(FeaturePyramid(levels), head)
    # independent evaluation: explicit 1x1 products, 2x2 block means, bilinear growth, padded sum
    reduced = []
    for conv, lvl in zip(head.reducers, levels):
        w, b = conv.weight[:, :, 0, 0], conv.bias
        reduced.append(torch.einsum("oc,bchw->bohw", w, lvl) + b[None, :, None, None])
    r0 = reduced[0].reshape(1, 4, 12, 2, 20, 2).mean(dim=(3, 5))
    r2 = F.interpolate(reduced[2], size=(12, 20), mode="bilinear", align_corners=False)
    total = torch.zeros(1, 16, 12, 20)
    total[:, :4] += r0
    total[:, :8] += reduced[1]
    total += r2
    oracle = total / total.norm(dim=1, keepdim=True)
    assert (out - oracle).abs().max() < 1e-5
    norms = out.norm(dim=1)
    assert torch.allclose(norms, torch.ones_like(norms), atol=1e-5)


def test_l2_normalize_zero_column_stays_zero():
    x = torch.zeros(1, 4, 2, 2)
    x[0, :, 0, 0] = torch.tensor([3.0, 4.0, 0.0, 0.0])
    y = l2_normalize(x)
    assert torch.allclose(y[0, :, 0, 0], torch.tensor([0.6, 0.8, 0.0, 0.0]))
    assert torch.equal(y[0, :, 1, 1], torch.zeros(4))


def test_template_bank_size_default_resolution():
    feat = l2_normalize(torch.randn(32, 12, 20), dim=0)
    bank = build_template_bank(feat, disk_mask((96, 160), (48, 80), 20), 1)
    assert len(bank) == 240 and bank.K.shape == (240, 32)
    assert torch.equal(bank.K[21], feat[:, 1, 1])


def test_template_bank_absent_object():
    with pytest.raises(ValueError, match="absent"):
        build_template_bank(torch.randn(8, 4, 6), np.zeros((32, 48), np.uint8), 1)


def test_downsample_mask_nearest_oracle(rng):
    for _ in range(20):
        h, w = rng.integers(8, 64, size=2)
        sh, sw = rng.integers(1, 9, size=2)
        m = rng.integers(0, 3, size=(h, w))
        out = downsample_mask(m, (sh, sw))
        for i in range(sh):
            for j in range(sw):
                cy = (i + 0.5) * h / sh
                cx = (j + 0.5) * w / sw
                assert out[i, j] == m[int(cy), int(cx)]


def test_siamese_weights_shared(backbone):
    # the template and the current frame go through the same module: identical inputs give identical features
    head = MatchingHead((16, 32, 64))
    x = torch.rand(1, 3, 32, 48)
    a = reduce_and_merge(extract_pyramid(x, backbone), head)
    pair = torch.cat([x, torch.rand(1, 3, 32, 48)])
    b = reduce_and_merge(extract_pyramid(pair, backbone), head)[:1]
    assert torch.allclose(a, b, atol=1e-6)


def test_translation_covariance(backbone):
    # content on a wide zero border: shifting by the total stride shifts every level by whole cells
    head = MatchingHead((16, 32, 64))
    torch.manual_seed(3)
    x = torch.zeros(1, 3, 256, 256)
    x[:, :, 96:160, 96:160] = torch.rand(1, 3, 64, 64)
    shifted = torch.roll(x, shifts=(16, 16), dims=(2, 3))
    with torch.no_grad():
        pyr_a, pyr_b = extract_pyramid(x, backbone), extract_pyramid(shifted, backbone)
        fa, fb = reduce_and_merge(pyr_a, head)[0], reduce_and_merge(pyr_b, head)[0]
    for level, cells in zip(range(3), (4, 2, 1)):
        a, b = pyr_a[level][0], pyr_b[level][0]
        c, r = a.shape[-1] // 2, a.shape[-1] // 8
        inner_a = a[:, c - r:c + r, c - r:c + r]
        inner_b = b[:, c - r + cells:c + r + cells, c - r + cells:c + r + cells]
        assert torch.allclose(inner_a, inner_b, atol=1e-5)
    assert torch.allclose(fa[:, 12:20, 12:20], fb[:, 14:22, 14:22], atol=1e-5)
