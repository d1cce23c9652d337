import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from mdsam.losses import EPS, bce_loss, composite_loss, iou_loss, l1_loss, loss_terms, total_loss, upsample_to


def test_bce_examples():
    gt = torch.tensor([[[[1.0], [0.0]]]], dtype=torch.float64)
    pred = torch.tensor([[[[0.9], [0.1]]]], dtype=torch.float64)
    assert abs(bce_loss(pred, gt).item() - 0.10536051565782628) < 1e-12
    assert bce_loss(gt.clone(), gt).item() < 2e-6
    assert abs(bce_loss(torch.full((3, 1, 4, 4), 0.5, dtype=torch.float64), torch.ones(3, 1, 4, 4)).item()
               - math.log(2)) < 1e-12


def test_bce_clamps_hard_zeros():
    gt = torch.ones(1, 1, 2, 2, dtype=torch.float64)
    assert abs(bce_loss(torch.zeros_like(gt), gt).item() + math.log(EPS)) < 1e-9


def test_iou_examples():
    gt = (torch.rand(2, 1, 5, 5) > 0.5).double()
    assert iou_loss(gt.clone(), gt).item() == 0
    for n in (4, 100, 256):
        half = torch.full((1, 1, 1, n), 0.5, dtype=torch.float64)
        assert abs(iou_loss(half, torch.ones_like(half)).item() - 0.5 * n / (n + 1)) < 1e-12


def test_iou_matches_loop_reference():
    gen = torch.Generator().manual_seed(0)
    pred = torch.rand(3, 1, 4, 4, generator=gen, dtype=torch.float64)
    gt = (torch.rand(3, 1, 4, 4, generator=gen) > 0.5).double()
    per_image = []
    for b in range(3):
        inter = union_p = union_g = 0.0
        for i in range(4):
            for j in range(4):
                p, g = float(pred[b, 0, i, j]), float(gt[b, 0, i, j])
                inter += p * g
                union_p += p
                union_g += g
        per_image.append(1 - (inter + 1) / (union_p + union_g - inter + 1))
    assert abs(iou_loss(pred, gt).item() - sum(per_image) / 3) < 1e-12


def test_l1_examples():
    ones = torch.ones(1, 1, 3, 3)
    assert l1_loss(ones, ones).item() == 0
    assert l1_loss(ones, torch.zeros_like(ones)).item() == 1
    assert l1_loss(torch.tensor([[[[0.25, 0.75]]]]), torch.tensor([[[[0.0, 1.0]]]])).item() == 0.25


def test_composite_is_sum_of_terms():
    gen = torch.Generator().manual_seed(1)
    pred = torch.rand(2, 1, 6, 6, generator=gen)
    gt = (torch.rand(2, 1, 6, 6, generator=gen) > 0.5).float()
    assert composite_loss(pred, gt).item() == (bce_loss(pred, gt) + iou_loss(pred, gt) + l1_loss(pred, gt)).item()
    assert set(loss_terms(pred, gt)) == {"bce", "iou", "l1"}
    assert composite_loss(gt.clone(), gt).item() < 3e-6


def test_total_loss_composition():
    gen = torch.Generator().manual_seed(2)
    gt = (torch.rand(2, 1, 16, 16, generator=gen) > 0.5).float()
    s_f = torch.randn(2, 1, 16, 16, generator=gen)
    s_m = torch.randn(2, 1, 4, 4, generator=gen)
    expected = composite_loss(torch.sigmoid(s_f), gt) + composite_loss(torch.sigmoid(upsample_to(s_m, gt)), gt)
    assert total_loss(s_f, s_m, gt).item() == expected.item()
    assert total_loss(s_f, None, gt).item() == composite_loss(torch.sigmoid(s_f), gt).item()


def test_total_loss_both_outputs_perfect():
    # bilinear upsampling blurs edges, so a perfect side output needs uniform masks
    gt = torch.zeros(2, 1, 16, 16)
    gt[1] = 1
    s_f = gt * 40 - 20
    s_m = gt[..., ::4, ::4] * 40 - 20
    assert total_loss(s_f, s_m, gt).item() < 6e-6


def test_shape_mismatch():
    with pytest.raises(ValueError):
        bce_loss(torch.rand(1, 1, 4, 4), torch.rand(1, 1, 4, 5))
    with pytest.raises(ValueError):
        total_loss(torch.randn(1, 1, 8, 8), torch.randn(1, 1, 4, 4), torch.zeros(1, 1, 8, 6))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_nonnegative_and_batch_permutation_invariant(seed):
    gen = torch.Generator().manual_seed(seed)
    pred = torch.rand(4, 1, 5, 5, generator=gen, dtype=torch.float64)
    gt = (torch.rand(4, 1, 5, 5, generator=gen) > 0.5).double()
    perm = torch.randperm(4, generator=gen)
    for fn in (bce_loss, iou_loss, l1_loss, composite_loss):
        value = fn(pred, gt).item()
        assert value >= 0
        assert abs(value - fn(pred[perm], gt[perm]).item()) < 1e-12
