import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from support import fd_input_check
from thermosr.losses import (
    PSNR_CAP_DB,
    SsimParams,
    l1_loss,
    lsgan_d_loss,
    lsgan_g_loss,
    psnr,
    ssim,
    ssim_loss,
    ssim_metric,
)


def _rand(shape, seed, dtype=torch.float64):
    return torch.rand(*shape, dtype=dtype, generator=torch.Generator().manual_seed(seed))


def test_l1_zero_at_equality():
    x = _rand((1, 1, 8, 8), 0)
    assert float(l1_loss(x, x)) == 0.0


def test_l1_uniform_offset_closed_form():
    x = _rand((1, 1, 8, 8), 1) * 0.5
    assert float(l1_loss(x + 0.1, x)) == pytest.approx(0.1, abs=1e-12)


def test_l1_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        l1_loss(torch.zeros(1, 1, 4, 4), torch.zeros(1, 1, 4, 5))


def test_l1_gradient_matches_finite_differences():
    target = _rand((1, 1, 6, 6), 2)
    # keep |pred - target| >= 1e-3 so FD never straddles the kink
    pred = target + 0.2 + 0.3 * _rand((1, 1, 6, 6), 3)
    fd_input_check(lambda p: l1_loss(p, target), pred)
    p = pred.clone().requires_grad_(True)
    l1_loss(p, target).backward()
    expected = torch.sign(pred - target) / pred.numel()
    assert torch.allclose(p.grad, expected, atol=1e-12)


def test_ssim_identity_is_one():
    x = _rand((1, 1, 16, 16), 4)
    assert abs(float(ssim(x, x)) - 1.0) <= 1e-9


def test_ssim_constant_zero_vs_one_closed_form():
    z = torch.zeros(1, 1, 16, 16, dtype=torch.float64)
    o = torch.ones(1, 1, 16, 16, dtype=torch.float64)
    c1 = 0.01 ** 2
    assert float(ssim(z, o)) == pytest.approx(c1 / (1 + c1), abs=1e-12)
    assert float(ssim(z, o)) == pytest.approx(9.999e-5, abs=1e-7)


def test_ssim_symmetric():
    x, y = _rand((1, 1, 16, 16), 5), _rand((1, 1, 16, 16), 6)
    assert abs(float(ssim(x, y)) - float(ssim(y, x))) <= 1e-9


def test_ssim_translation_of_both_images_leaves_score_unchanged():
    x, y = _rand((1, 1, 24, 24), 7), _rand((1, 1, 24, 24), 8)
    direct = float(ssim(x[:, :, 3:, 2:-1], y[:, :, 3:, 2:-1]))
    shifted_x = torch.roll(x, shifts=(-3, -2), dims=(2, 3))[:, :, :21, :21]
    shifted_y = torch.roll(y, shifts=(-3, -2), dims=(2, 3))[:, :, :21, :21]
    assert float(ssim(shifted_x, shifted_y)) == pytest.approx(direct, abs=1e-12)


def test_ssim_rejects_small_images():
    with pytest.raises(ValueError):
        ssim(torch.zeros(1, 1, 8, 8), torch.zeros(1, 1, 8, 8))


def test_ssim_params_validation():
    with pytest.raises(ValueError):
        SsimParams(window_size=10)
    with pytest.raises(ValueError):
        SsimParams(k1=0.0)


def test_ssim_loss_zero_at_equality_and_bounded():
    x = _rand((1, 1, 16, 16), 9)
    assert float(ssim_loss(x, x)) <= 1e-9
    y = _rand((1, 1, 16, 16), 10)
    val = float(ssim_loss(x, y))
    assert 0.0 <= val <= 2.0


def test_ssim_loss_gradient_matches_finite_differences():
    target = _rand((1, 1, 16, 16), 11)
    pred = _rand((1, 1, 16, 16), 12)
    fd_input_check(lambda p: ssim_loss(p, target), pred)


def test_lsgan_perfect_cases():
    ones = torch.ones(1, 1, 4, 4, dtype=torch.float64)
    zeros = torch.zeros(1, 1, 4, 4, dtype=torch.float64)
    assert float(lsgan_d_loss(ones, zeros)) == 0.0
    assert float(lsgan_g_loss(ones)) == 0.0


def test_lsgan_half_scores_closed_form():
    half = torch.full((1, 1, 4, 4), 0.5, dtype=torch.float64)
    assert float(lsgan_d_loss(half, half)) == pytest.approx(0.25, abs=1e-9)
    assert float(lsgan_g_loss(half)) == pytest.approx(0.125, abs=1e-9)


def test_lsgan_g_gradient_closed_form_and_fd():
    d_fake = _rand((1, 1, 5, 5), 13)
    fd_input_check(lsgan_g_loss, d_fake)
    p = d_fake.clone().requires_grad_(True)
    lsgan_g_loss(p).backward()
    assert torch.allclose(p.grad, (d_fake - 1.0) / d_fake.numel(), atol=1e-12)


def test_lsgan_d_gradient_fd():
    d_real = _rand((1, 1, 5, 5), 14)
    d_fake = _rand((1, 1, 5, 5), 15)
    fd_input_check(lambda r: lsgan_d_loss(r, d_fake), d_real)
    fd_input_check(lambda f: lsgan_d_loss(d_real, f), d_fake)


def test_psnr_identical_returns_cap():
    x = np.random.default_rng(0).random((16, 16))
    assert psnr(x, x) == PSNR_CAP_DB


def test_psnr_uniform_offset_exactly_20db():
    x = np.full((32, 32), 0.5)
    assert psnr(x, x + 0.1) == pytest.approx(20.0, abs=1e-6)


def test_psnr_monotone_in_offset():
    x = np.full((16, 16), 0.2)
    values = [psnr(x, x + off) for off in (0.05, 0.1, 0.2, 0.4)]
    assert all(a > b for a, b in zip(values, values[1:]))


def test_psnr_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        psnr(np.zeros((4, 4)), np.zeros((4, 5)))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_psnr_symmetric(seed):
    rng = np.random.default_rng(seed)
    x, y = rng.random((8, 8)), rng.random((8, 8))
    assert psnr(x, y) == pytest.approx(psnr(y, x), abs=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_losses_non_negative(seed):
    g = torch.Generator().manual_seed(seed)
    x = torch.rand(1, 1, 12, 12, generator=g, dtype=torch.float64)
    y = torch.rand(1, 1, 12, 12, generator=g, dtype=torch.float64)
    assert float(l1_loss(x, y)) >= 0.0
    assert float(ssim_loss(x, y)) >= 0.0
    assert float(lsgan_d_loss(x, y)) >= 0.0
    assert float(lsgan_g_loss(x)) >= 0.0


def test_ssim_metric_matches_tensor_path():
    rng = np.random.default_rng(3)
    a, b = rng.random((16, 16)), rng.random((16, 16))
    ta = torch.from_numpy(a).reshape(1, 1, 16, 16)
    tb = torch.from_numpy(b).reshape(1, 1, 16, 16)
    assert ssim_metric(a, b) == pytest.approx(float(ssim(ta, tb)), abs=1e-12)
