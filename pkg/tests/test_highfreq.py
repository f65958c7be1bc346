import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from oracles import max_rel_grad_err, naive_depthwise_conv
from shadowgen.gating import ConfigurationError
from shadowgen.highfreq import (
    CBAM,
    SOBEL_EPS,
    HighFreqGuidance,
    gaussian_kernel,
    gaussian_smooth,
    gradient_magnitude,
    highfreq_extract,
    laplacian,
    sobel_gradients,
)

torch.manual_seed(0)


class TestGaussian:
    def test_kernel_sums_to_one(self):
        for k, s in ((3, 0.8), (5, 1.5), (7, 2.0)):
            assert abs(gaussian_kernel(k, s).sum().item() - 1.0) < 1e-7

    def test_even_kernel_rejected(self):
        with pytest.raises(ConfigurationError):
            gaussian_smooth(torch.rand(1, 1, 8, 8), kernel_size=4)

    def test_constant_input_unchanged(self):
        x = torch.full((1, 3, 12, 12), 0.37)
        out = gaussian_smooth(x, 5, 1.2)
        assert torch.allclose(out, x, atol=1e-6)

    def test_impulse_reproduces_kernel(self):
        x = torch.zeros(1, 1, 15, 15)
        x[0, 0, 7, 7] = 1.0
        out = gaussian_smooth(x, 3, 1.0)
        np.testing.assert_allclose(
            out[0, 0, 6:9, 6:9].numpy(), gaussian_kernel(3, 1.0).numpy(), atol=1e-7
        )

    def test_matches_naive_convolution(self):
        x = torch.rand(1, 2, 16, 16, dtype=torch.float64)
        out = gaussian_smooth(x, 5, 1.3)
        expected = naive_depthwise_conv(x[0].numpy(), gaussian_kernel(5, 1.3, torch.float64).numpy())
        np.testing.assert_allclose(out[0].numpy(), expected, atol=1e-6)


class TestGradientMagnitude:
    def test_constant_input_gives_sqrt_eps(self):
        out = gradient_magnitude(torch.full((1, 2, 8, 8), 0.9))
        assert torch.allclose(out, torch.full_like(out, math.sqrt(SOBEL_EPS)), atol=1e-9)

    def test_unit_ramp_gives_eight_interior(self):
        # A 3x3 Sobel along a unit-slope ramp accumulates weight 8.
        ramp = torch.arange(12, dtype=torch.float32).repeat(12, 1)[None, None]
        gx, gy = sobel_gradients(ramp)
        assert torch.allclose(gx[0, 0, 2:-2, 2:-2], torch.full((8, 8), 8.0), atol=1e-5)
        assert torch.allclose(gy[0, 0, 2:-2, 2:-2], torch.zeros(8, 8), atol=1e-5)
        mag = gradient_magnitude(ramp)
        expected = math.sqrt(64.0 + SOBEL_EPS)
        assert torch.allclose(mag[0, 0, 2:-2, 2:-2], torch.full((8, 8), expected), atol=1e-5)

    def test_magnitude_is_rotation_equivariant(self):
        x = torch.rand(1, 1, 16, 16)
        rotated = torch.rot90(x, 1, dims=(-2, -1))
        a = gradient_magnitude(rotated)
        b = torch.rot90(gradient_magnitude(x), 1, dims=(-2, -1))
        assert torch.allclose(a, b, atol=1e-6)

    def test_sobel_and_laplacian_match_naive_convolution(self):
        x = torch.rand(1, 2, 16, 16, dtype=torch.float64)
        sx = np.array([[-1.0, 0, 1], [-2, 0, 2], [-1, 0, 1]])
        lap = np.array([[0.0, 1, 0], [1, -4, 1], [0, 1, 0]])
        gx, gy = sobel_gradients(x)
        np.testing.assert_allclose(gx[0].numpy(), naive_depthwise_conv(x[0].numpy(), sx), atol=1e-6)
        np.testing.assert_allclose(gy[0].numpy(), naive_depthwise_conv(x[0].numpy(), sx.T), atol=1e-6)
        np.testing.assert_allclose(laplacian(x)[0].numpy(), naive_depthwise_conv(x[0].numpy(), lap), atol=1e-6)


class TestHighFreqExtract:
    def test_constant_input_gives_unit_map(self):
        out = highfreq_extract(torch.full((1, 2, 10, 10), 0.4))
        assert torch.allclose(out, torch.ones_like(out), atol=1e-4)

    def test_alpha_zero_is_normalized_magnitude(self):
        x = torch.rand(1, 3, 12, 12)
        out = highfreq_extract(x, alpha=0.0)
        mag = gradient_magnitude(gaussian_smooth(x, 3, 1.0))
        expected = (mag / (mag.abs().amax(dim=(-2, -1), keepdim=True) + 1e-8)).clamp_min(0.0)
        assert torch.equal(out, expected)

    def test_step_edge_peaks_on_edge_columns(self):
        x = torch.zeros(1, 1, 16, 16)
        x[..., 8:] = 1.0
        out = highfreq_extract(x)
        col = out[0, 0].amax(dim=0).argmax().item()
        assert col in (7, 8)

    def test_nonnegative_and_bounded(self):
        for _ in range(5):
            out = highfreq_extract(torch.randn(2, 3, 12, 12))
            assert out.min() >= 0.0
            assert out.amax(dim=(-2, -1)).max() <= 1.0 + 1e-6


class TestInjection:
    def test_zero_strength_is_exact_identity(self):
        torch.manual_seed(2)
        module = HighFreqGuidance(4, 8).eval()
        dec = torch.randn(2, 8, 8, 8)
        enc = torch.randn(2, 4, 16, 16)
        assert torch.equal(module(dec, enc), dec)

    def test_zeroed_attention_logits_give_quarter_gain(self):
        torch.manual_seed(3)
        module = HighFreqGuidance(4, 8).eval()
        with torch.no_grad():
            module.strength.fill_(0.7)
            for m in module.cbam.modules():
                if isinstance(m, torch.nn.Conv2d):
                    torch.nn.init.zeros_(m.weight)
        dec = torch.randn(1, 8, 8, 8)
        enc = torch.randn(1, 4, 16, 16)
        high = highfreq_extract(enc, module.alpha, module.kernel_size, module.sigma)
        proj = F.interpolate(module.project(high), size=(8, 8), mode="bilinear", align_corners=False)
        expected = dec + 0.7 * 0.25 * proj
        assert torch.allclose(module(dec, enc), expected, atol=1e-6)

    def test_matches_staged_recomposition(self):
        torch.manual_seed(4)
        module = HighFreqGuidance(3, 8).double().eval()
        with torch.no_grad():
            module.strength.fill_(0.5)
        dec = torch.randn(1, 8, 8, 8, dtype=torch.float64)
        enc = torch.randn(1, 3, 16, 16, dtype=torch.float64)
        high = highfreq_extract(enc, module.alpha, module.kernel_size, module.sigma)
        proj = F.interpolate(module.project(high), size=(8, 8), mode="bilinear", align_corners=False)
        after_channel = proj * module.cbam.channel(proj)
        calibrated = after_channel * module.cbam.spatial(after_channel)
        expected = dec + module.strength * calibrated
        assert torch.allclose(module(dec, enc), expected, atol=1e-10)

    def test_channel_mismatch_raises(self):
        module = HighFreqGuidance(4, 8)
        with torch.no_grad():
            bad = torch.nn.Conv2d(4, 5, 1)
        module.project = bad
        with pytest.raises(ConfigurationError):
            module(torch.randn(1, 8, 8, 8), torch.randn(1, 4, 8, 8))

    def test_gradients_match_finite_differences(self):
        torch.manual_seed(5)
        module = HighFreqGuidance(2, 8).double().eval()
        with torch.no_grad():
            module.strength.fill_(0.4)
        dec = torch.randn(1, 8, 4, 4, dtype=torch.float64, requires_grad=True)
        enc = torch.randn(1, 2, 8, 8, dtype=torch.float64, requires_grad=True)
        weights = torch.randn(1, 8, 4, 4, dtype=torch.float64)
        err = max_rel_grad_err(lambda: (module(dec, enc) * weights).sum(), [dec, enc])
        assert err < 1e-4
