import math

import numpy as np
import pytest
import torch

from oracles import max_rel_grad_err
from shadowgen.gating import ConfigurationError
from shadowgen.stage1 import CoarseMaskNet, combine_masks, stage1_loss, stage1_loss_components


def make_net(width=8):
    torch.manual_seed(11)
    return CoarseMaskNet(width=width)


class TestCoarseMaskNet:
    def test_output_shape_and_range(self):
        net = make_net().eval()
        out = net(torch.rand(2, 3, 32, 32), torch.rand(2, 1, 32, 32), torch.rand(2, 1, 32, 32))
        assert out.shape == (2, 1, 32, 32)
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_zero_inputs_give_constant_map(self):
        net = make_net().eval()
        z3 = torch.zeros(1, 3, 32, 32)
        z1 = torch.zeros(1, 1, 32, 32)
        out = net(z3, z1, z1)
        assert (out.max() - out.min()).item() < 1e-6

    def test_channel_mismatch_rejected(self):
        net = make_net()
        with pytest.raises(ConfigurationError):
            net(torch.rand(1, 4, 32, 32), torch.rand(1, 1, 32, 32), torch.rand(1, 1, 32, 32))

    def test_short_training_beats_untrained_iou(self):
        from shadowgen.data import make_sample

        samples = [make_sample(seed=100, index=i, resolution=32, with_background=False)
                   for i in range(12)]
        comp = torch.tensor(np.stack([s.composite for s in samples]), dtype=torch.float32).permute(0, 3, 1, 2)
        bos = torch.tensor(np.stack([s.bg_shadow_mask for s in samples]), dtype=torch.float32)[:, None]
        fg = torch.tensor(np.stack([s.fg_mask for s in samples]), dtype=torch.float32)[:, None]
        gt = torch.tensor(np.stack([s.gt_shadow_mask for s in samples]), dtype=torch.float32)[:, None]
        train, hold = slice(0, 10), slice(10, 12)

        def mean_iou(net):
            with torch.no_grad():
                pred = (net(comp[hold], bos[hold], fg[hold]) > 0.5).float()
            inter = (pred * gt[hold]).sum(dim=(1, 2, 3))
            union = ((pred + gt[hold]) > 0).float().sum(dim=(1, 2, 3))
            return float((inter / union.clamp_min(1.0)).mean())

        net = make_net(width=8)
        untrained = mean_iou(net.eval())
        opt = torch.optim.Adam(net.parameters(), lr=5e-3)
        net.train()
        for _ in range(300):
            opt.zero_grad()
            loss = stage1_loss(net(comp[train], bos[train], fg[train]), gt[train])
            loss.backward()
            opt.step()
        trained = mean_iou(net.eval())
        assert trained > untrained


class TestCombineMasks:
    def test_zero_coarse_returns_fg(self):
        fg = torch.rand(1, 1, 8, 8)
        assert torch.equal(combine_masks(fg, torch.zeros_like(fg)), fg)

    def test_zero_fg_returns_coarse(self):
        coarse = torch.rand(1, 1, 8, 8)
        assert torch.equal(combine_masks(torch.zeros_like(coarse), coarse), coarse)

    def test_union_area_of_overlapping_disks(self):
        ys, xs = torch.meshgrid(torch.arange(64), torch.arange(64), indexing="ij")
        disk_a = (((xs - 24) ** 2 + (ys - 32) ** 2) <= 144).float()
        disk_b = (((xs - 36) ** 2 + (ys - 32) ** 2) <= 144).float()
        union = combine_masks(disk_a, disk_b)
        expected = disk_a.sum() + disk_b.sum() - (disk_a * disk_b).sum()
        assert union.sum() == expected

    def test_commutative_and_idempotent(self):
        a, b = torch.rand(4, 4), torch.rand(4, 4)
        assert torch.equal(combine_masks(a, b), combine_masks(b, a))
        assert torch.equal(combine_masks(a, a), a)

    def test_combined_dominates_both_inputs(self):
        a, b = torch.rand(8, 8), torch.rand(8, 8)
        m = combine_masks(a, b)
        assert torch.all(m >= torch.maximum(a, b) - 1e-6)


class TestStage1Loss:
    def test_perfect_prediction_is_near_zero(self):
        gt = (torch.rand(1, 1, 16, 16) > 0.5).float()
        bce, dice = stage1_loss_components(gt.clone(), gt)
        assert bce.item() < 1e-5 and abs(dice.item()) < 1e-5

    def test_half_probability_balanced_gt_gives_ln2_bce(self):
        gt = torch.zeros(1, 1, 16, 16)
        gt[..., :8] = 1.0
        bce, _ = stage1_loss_components(torch.full_like(gt, 0.5), gt)
        assert abs(bce.item() - math.log(2.0)) < 1e-6

    def test_half_overlapping_equal_masks_give_half_dice(self):
        gt = torch.zeros(1, 1, 64, 64)
        gt[..., :32, :32] = 1.0          # area 1024
        pred = torch.zeros_like(gt)
        pred[..., 16:48, :32] = 1.0      # same area, half overlap
        _, dice = stage1_loss_components(pred, gt)
        assert abs(dice.item() - 0.5) < 0.01

    def test_loss_nonnegative(self):
        for _ in range(10):
            gt = (torch.rand(1, 1, 8, 8) > 0.5).float()
            pred = torch.rand_like(gt)
            assert stage1_loss(pred, gt).item() >= 0.0

    def test_non_binary_gt_rejected(self):
        with pytest.raises(ConfigurationError):
            stage1_loss(torch.rand(1, 1, 4, 4), torch.full((1, 1, 4, 4), 0.3))

    def test_gradient_matches_finite_differences(self):
        torch.manual_seed(5)
        gt = (torch.rand(1, 1, 8, 8) > 0.5).double()
        pred = (0.1 + 0.8 * torch.rand(1, 1, 8, 8, dtype=torch.float64)).requires_grad_(True)
        err = max_rel_grad_err(lambda: stage1_loss(pred, gt), [pred])
        assert err < 1e-4
