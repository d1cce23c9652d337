import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from mdsam.config import DEMConfig
from mdsam.dem import DEM, MEEM, EdgeEnhancer, avg_pool3, edge_residual

WIDTHS = DEMConfig(local_dim=4, reduce_dim=8, up_dim=4, head_dim=4)


def _zero_bn_eval(module):
    module.eval()
    for m in module.modules():
        if isinstance(m, torch.nn.BatchNorm2d):
            m.running_mean.zero_()
            m.running_var.fill_(1.0)
        if isinstance(m, torch.nn.Conv2d) and m.bias is not None:
            torch.nn.init.zeros_(m.bias)
    return module


def test_primary_branch_shapes():
    dem = DEM(8, 6, WIDTHS)
    f_re, f_up = dem.primary_branch(torch.randn(1, 6, 16, 16), torch.randn(1, 6, 16, 16))
    assert f_re.shape == (1, 8, 16, 16)
    assert f_up.shape == (1, 4, 64, 64)


def test_primary_branch_zero_inputs():
    dem = _zero_bn_eval(DEM(8, 6, WIDTHS))
    _, f_up = dem.primary_branch(torch.zeros(1, 6, 4, 4), torch.zeros(1, 6, 4, 4))
    assert torch.equal(f_up, torch.zeros_like(f_up))


def test_primary_branch_size_mismatch():
    with pytest.raises(ValueError):
        DEM(8, 6, WIDTHS).primary_branch(torch.randn(1, 6, 4, 4), torch.randn(1, 6, 8, 8))


def test_local_features():
    dem = _zero_bn_eval(DEM(8, 6, WIDTHS))
    assert dem.local(torch.randn(1, 3, 16, 16)).shape == (1, 4, 16, 16)
    assert torch.equal(dem.local(torch.zeros(1, 3, 16, 16)), torch.zeros(1, 4, 16, 16))
    img = torch.randn(1, 3, 16, 16, requires_grad=True)
    dem.local(img).sum().backward()
    assert img.grad.abs().sum() > 0


@settings(max_examples=20, deadline=None)
@given(value=st.floats(-50, 50), h=st.integers(1, 9), w=st.integers(1, 9))
def test_edge_residual_vanishes_on_constants(value, h, w):
    f = torch.full((1, 2, h, w), value, dtype=torch.float64)
    assert torch.allclose(edge_residual(f), torch.zeros_like(f), atol=1e-12)


def test_edge_residual_of_impulse():
    f = torch.zeros(1, 1, 7, 7, dtype=torch.float64)
    f[0, 0, 3, 3] = 9.0
    r = edge_residual(f)[0, 0].numpy()
    expected = np.zeros((7, 7))
    expected[2:5, 2:5] = -1.0
    expected[3, 3] = 8.0
    assert np.allclose(r, expected)


def test_avg_pool_excludes_padding():
    f = torch.ones(1, 1, 3, 3)
    assert torch.equal(avg_pool3(f), f)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_edge_enhancer_adds_sigmoid_range(seed):
    torch.manual_seed(seed)
    ee = EdgeEnhancer(3).eval()
    f = torch.randn(1, 3, 6, 6, dtype=torch.float64)
    delta = ee.double()(f) - f
    assert ((delta > 0) & (delta < 1)).all()


def test_meem_pyramid_and_shape():
    meem = MEEM(4)
    f_e, f_ee = meem.pyramid(torch.randn(1, 4, 8, 8))
    assert len(f_e) == 4 and len(f_ee) == 3
    assert all(t.shape == (1, 4, 8, 8) for t in f_e + f_ee)
    assert meem(torch.randn(2, 4, 10, 6)).shape == (2, 4, 10, 6)


@pytest.mark.parametrize("size", [64, 96])
def test_dem_output_resolution(size):
    dem = DEM(8, 6, WIDTHS)
    out = dem(torch.randn(1, 3, size, size), torch.randn(1, 6, size // 4, size // 4),
              torch.randn(1, 6, size // 4, size // 4))
    assert out.s_f.shape == (1, 1, size, size)
    assert out.f_de.shape == (1, 8, size, size)


def test_dem_star_matches_full_with_silent_meem():
    torch.manual_seed(0)
    full = DEM(8, 6, WIDTHS, mode="full").eval()
    star = DEM(8, 6, WIDTHS, mode="no_meem").eval()
    star.load_state_dict(full.state_dict(), strict=False)
    with torch.no_grad():
        for p in full.meem.parameters():
            p.zero_()
    args = torch.randn(1, 3, 16, 16), torch.randn(1, 6, 4, 4), torch.randn(1, 6, 4, 4)
    a, b = full(*args), star(*args)
    assert torch.equal(a.f_me, torch.zeros_like(a.f_me))
    assert torch.equal(a.s_f, b.s_f)
    assert b.f_me is None


def test_dem_gradient_reaches_image_through_both_branches():
    torch.manual_seed(0)
    dem = DEM(8, 6, WIDTHS).eval()
    img = torch.randn(1, 3, 16, 16, requires_grad=True)
    out = dem(img, torch.randn(1, 6, 4, 4), torch.randn(1, 6, 4, 4))
    grads = torch.autograd.grad(out.s_f.mean(), [img, out.f_up, out.f_me], retain_graph=True)
    assert all(g.abs().sum() > 0 for g in grads)


def test_dem_rejects_wrong_landing_size():
    dem = DEM(8, 6, WIDTHS)
    with pytest.raises(ValueError):
        dem(torch.randn(1, 3, 32, 32), torch.randn(1, 6, 4, 4), torch.randn(1, 6, 4, 4))
