import cmath
import math

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from cinerecon.errors import ValidationError
from cinerecon.kspace import fft2c, ifft2c
from cinerecon.losses import (
    PRESETS, LossConfig, combined_loss, frequency_bands, highpass_filter, l1_loss, l1_split_loss,
    l2_loss, perp_loss, split_weights, ssim_loss, ssim_torch,
)
from cinerecon.metrics import ssim as ssim_np

from conftest import crandn, fd_relative_error

ALL = {
    "l1": l1_loss,
    "l2": l2_loss,
    "perp": perp_loss,
    "ssim": ssim_loss,
    "l1_split": l1_split_loss,
}


def cplx(rng, *shape):
    return torch.from_numpy(crandn(rng, *shape))


@pytest.mark.parametrize("name", sorted(ALL))
def test_zero_at_identity(rng, name):
    t = cplx(rng, 3, 8, 8)
    assert ALL[name](t, t.clone()).item() == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("name", sorted(ALL))
@given(seed=st.integers(0, 10**6))
def test_nonnegative(name, seed):
    r = np.random.default_rng(seed)
    assert ALL[name](cplx(r, 2, 8, 8), cplx(r, 2, 8, 8)).item() >= -1e-12


@pytest.mark.parametrize("name", sorted(ALL))
def test_shape_mismatch(rng, name):
    with pytest.raises(ValidationError):
        ALL[name](cplx(rng, 2, 8, 8), cplx(rng, 2, 8, 9))


def test_l1_unit_offset(rng):
    t = cplx(rng, 2, 5, 5)
    assert l1_loss(t + 1, t).item() == pytest.approx(1.0)
    assert l2_loss(t + 1j, t).item() == pytest.approx(1.0)


@given(st.floats(-3, 3), st.floats(0.1, 5), st.floats(0, 2 * math.pi))
def test_perp_rotation(a, m, phi):
    # pred = target rotated by phi with equal magnitude: perpendicular distance m |sin phi|
    t = torch.tensor([m * cmath.exp(1j * a)], dtype=torch.complex128)
    p = t * cmath.exp(1j * phi)
    assert perp_loss(p, t).item() == pytest.approx(m * abs(math.sin(phi)), abs=1e-9)


@given(st.integers(0, 10**6), st.floats(0, 2 * math.pi))
def test_perp_global_phase_invariance(seed, phi):
    r = np.random.default_rng(seed)
    p, t = cplx(r, 2, 8, 8), cplx(r, 2, 8, 8)
    rot = cmath.exp(1j * phi)
    a, b = perp_loss(p, t).item(), perp_loss(p * rot, t * rot).item()
    assert abs(a - b) <= 1e-6 * max(1.0, abs(a))


def test_perp_real_inputs_reduce_to_magnitude_error(rng):
    t = torch.from_numpy(rng.uniform(0.5, 2, size=(4, 4)))
    same = t * 1.3
    assert perp_loss(same, t).item() == pytest.approx((0.3 * t).mean().item())
    flipped = -t
    # opposite sign lies on the same ray through the origin: only the magnitude term remains (zero)
    assert perp_loss(flipped, t).item() == pytest.approx(0.0, abs=1e-12)


def test_ssim_torch_matches_metric(rng):
    a, b = rng.uniform(size=(2, 3, 16, 16))
    ours = ssim_torch(torch.from_numpy(a), torch.from_numpy(b)).item()
    assert ours == pytest.approx(ssim_np(a, b, data_range=b.max()), abs=1e-10)


def test_ssim_loss_inverted_pattern():
    pat = (np.indices((16, 16)).sum(0) // 2 % 2).astype(float)
    pat = torch.from_numpy(pat)
    value = ssim_loss(1 - pat, pat).item()
    expected = 1 - ssim_np((1 - pat).numpy(), pat.numpy(), data_range=1.0)
    assert value == pytest.approx(expected, abs=1e-10)
    assert value > 1.9


def test_highpass_zero_at_dc_and_bands_partition(rng):
    hp = highpass_filter((8, 10), 0.25)
    assert hp[4, 5] == 0
    assert (hp >= 0).all() and (hp < 1).all()
    x = cplx(rng, 2, 8, 10)
    low, high = frequency_bands(x, 0.25)
    torch.testing.assert_close(low + high, x)


def test_split_weights():
    assert split_weights(1.0) == (1.0, 1.0)
    hi, lo = split_weights(3.0)
    assert hi / lo == pytest.approx(3.0) and (hi + lo) / 2 == pytest.approx(1.0)


@given(st.integers(0, 10**6), st.floats(0.05, 0.95))
def test_split_unit_ratio_is_l1(seed, cutoff):
    r = np.random.default_rng(seed)
    p, t = cplx(r, 2, 8, 8), cplx(r, 2, 8, 8)
    cfg = LossConfig(highpass_weight_ratio=1.0, highpass_cutoff=cutoff)
    assert abs(l1_split_loss(p, t, cfg).item() - l1_loss(p, t).item()) < 1e-6


def test_split_low_frequency_perturbation_has_no_high_band(rng):
    t = cplx(rng, 2, 8, 8)
    k = np.zeros((2, 8, 8), complex)
    k[:, 4, 4] = 3.0 - 1.0j  # DC bin, where the high-pass is exactly zero
    p = t + torch.from_numpy(ifft2c(k))
    loss, bands = l1_split_loss(p, t, LossConfig(highpass_weight_ratio=4.0), breakdown=True)
    assert bands["high"].item() == pytest.approx(0.0, abs=1e-12)
    assert bands["low"].item() > 0
    assert loss.item() == pytest.approx(split_weights(4.0)[1] * l1_loss(p, t).item())


def test_split_upweights_high_frequencies(rng):
    t = cplx(rng, 1, 16, 16)
    k = np.zeros((1, 16, 16), complex)
    k[:, 0, 0] = 1.0
    p = t + torch.from_numpy(ifft2c(k))
    assert l1_split_loss(p, t, LossConfig(highpass_weight_ratio=3.0)).item() > l1_loss(p, t).item()


def test_combined_and_presets(rng):
    p, t = cplx(rng, 2, 8, 8), cplx(rng, 2, 8, 8)
    total, parts = combined_loss(p, t, LossConfig(terms=[("l1", 1.0)]))
    assert total.item() == pytest.approx(l1_loss(p, t).item())
    total, _ = combined_loss(t, t, LossConfig.preset("perp_l1"))
    assert total.item() == pytest.approx(0.0, abs=1e-12)
    for name in ("perp", "l1", "perp_l1", "perp_l1_split", "perp_ssim_l1_split"):
        assert name in PRESETS
        total, parts = combined_loss(p, t, LossConfig.preset(name))
        assert total.item() == pytest.approx(sum(v for k, v in parts.items() if k != "total"))
    with pytest.raises(ValidationError):
        LossConfig.preset("nope")
    with pytest.raises(ValidationError):
        LossConfig(terms=[])
    with pytest.raises(ValidationError):
        LossConfig(terms=[("l1", 0.0)])


@pytest.mark.parametrize("name", ["perp", "ssim", "l1_split", "l1", "l2"])
def test_gradients_match_finite_differences(rng, name):
    a = torch.from_numpy(rng.normal(size=(3, 8, 8))).requires_grad_()
    b = torch.from_numpy(rng.normal(size=(3, 8, 8))).requires_grad_()
    target = cplx(rng, 3, 8, 8)

    def fn(leaves):
        return ALL[name](torch.complex(leaves[0], leaves[1]), target)

    assert fd_relative_error(fn, [a, b], n_entries=32) < 1e-4
