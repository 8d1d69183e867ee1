import math

import pytest
import torch

from tulabm.tubam import AttentionConfig, attend, bias_matrix


def rand_qkv(n=6, d=4, seed=0, dtype=torch.float64):
    g = torch.Generator().manual_seed(seed)
    return (torch.randn(n, d, generator=g, dtype=dtype) for _ in range(3))


class TestBiasMatrix:
    def test_zero_mask(self):
        assert not bias_matrix(torch.zeros(5), 0.5).any()

    def test_all_ones_mask(self):
        b = bias_matrix(torch.ones(4), 0.7)
        assert torch.equal(b, torch.full((4, 4), 0.7))

    def test_outer_product_oracle(self):
        m = torch.tensor([1.0, 0.0, 1.0])
        b = bias_matrix(m, 0.5)
        expected = 0.5 * torch.outer(m, m)
        assert torch.equal(b, expected)
        nz = {(0, 0), (0, 2), (2, 0), (2, 2)}
        for i in range(3):
            for j in range(3):
                assert float(b[i, j]) == (0.5 if (i, j) in nz else 0.0)

    def test_symmetric_rank_one(self):
        g = torch.Generator().manual_seed(3)
        m = (torch.rand(16, generator=g) < 0.4).double()
        b = bias_matrix(m, 0.9)
        assert torch.equal(b, b.T)
        assert torch.linalg.matrix_rank(b / 0.9) <= 1


class TestAttend:
    def test_alpha_zero_matches_standard(self):
        q, k, v = rand_qkv(seed=1)
        mask = torch.tensor([1, 0, 1, 1, 0, 0])
        biased = attend(q, k, v, mask=mask, alpha=0.0)
        plain = attend(q, k, v, mask=None)
        assert float((biased - plain).abs().max()) < 1e-7

    def test_all_ones_mask_matches_standard(self):
        q, k, v = rand_qkv(seed=2)
        biased = attend(q, k, v, mask=torch.ones(6), alpha=3.0)
        plain = attend(q, k, v, mask=None)
        assert float((biased - plain).abs().max()) < 1e-7

    def test_two_token_hand_case(self):
        q = torch.zeros(2, 1, dtype=torch.float64)
        k = torch.zeros(2, 1, dtype=torch.float64)
        v = torch.tensor([[0.0], [1.0]], dtype=torch.float64)
        mask = torch.tensor([1.0, 0.0])
        out = attend(q, k, v, mask=mask, alpha=math.log(3.0))
        # row 0 logits (ln3, 0) -> weights (0.75, 0.25); row 1 uniform
        assert abs(float(out[0, 0]) - 0.25) < 1e-9
        assert abs(float(out[1, 0]) - 0.5) < 1e-9

    def test_rows_sum_to_one_via_identity_values(self):
        n = 8
        g = torch.Generator().manual_seed(5)
        q = torch.randn(n, 4, generator=g, dtype=torch.float64)
        k = torch.randn(n, 4, generator=g, dtype=torch.float64)
        mask = (torch.rand(n, generator=g) < 0.5).double()
        for alpha in (0.0, 0.5, 2.0):
            weights = attend(q, k, torch.eye(n, dtype=torch.float64), mask=mask, alpha=alpha)
            assert float((weights.sum(dim=-1) - 1.0).abs().max()) < 1e-6
            assert bool((weights >= 0).all())

    def test_output_is_convex_combination(self):
        q, k, v = rand_qkv(seed=6)
        out = attend(q, k, v, mask=torch.tensor([1, 1, 0, 0, 1, 0]), alpha=0.8)
        lo = v.min(dim=0).values - 1e-12
        hi = v.max(dim=0).values + 1e-12
        assert bool(((out >= lo) & (out <= hi)).all())

    def test_tumor_weight_monotone_in_alpha(self):
        n = 5
        g = torch.Generator().manual_seed(7)
        q = torch.randn(n, 3, generator=g, dtype=torch.float64)
        k = torch.randn(n, 3, generator=g, dtype=torch.float64)
        mask = torch.tensor([1.0, 1.0, 0.0, 0.0, 0.0])
        prev = None
        for alpha in (0.0, 0.25, 0.5, 1.0, 2.0):
            weights = attend(q, k, torch.eye(n, dtype=torch.float64), mask=mask, alpha=alpha)
            w01 = float(weights[0, 1])
            if prev is not None:
                assert w01 >= prev - 1e-12
            prev = w01

    def test_gradients_match_finite_differences(self):
        g = torch.Generator().manual_seed(8)
        q = torch.randn(4, 3, generator=g, dtype=torch.float64, requires_grad=True)
        k = torch.randn(4, 3, generator=g, dtype=torch.float64, requires_grad=True)
        v = torch.randn(4, 3, generator=g, dtype=torch.float64, requires_grad=True)
        mask = torch.tensor([1.0, 0.0, 1.0, 0.0])
        probe = torch.randn(4, 3, generator=g, dtype=torch.float64)

        def loss_fn(q_, k_, v_):
            return (attend(q_, k_, v_, mask=mask, alpha=0.5) * probe).sum()

        loss_fn(q, k, v).backward()
        h = 1e-6
        for tensor, grad in ((q, q.grad), (k, k.grad), (v, v.grad)):
            flat = tensor.detach().reshape(-1)
            for idx in (0, 5, 11):
                orig = float(flat[idx])
                flat[idx] = orig + h
                up = float(loss_fn(q.detach(), k.detach(), v.detach()))
                flat[idx] = orig - h
                down = float(loss_fn(q.detach(), k.detach(), v.detach()))
                flat[idx] = orig
                fd = (up - down) / (2 * h)
                an = float(grad.reshape(-1)[idx])
                assert abs(fd - an) <= 1e-3 * max(abs(fd), abs(an), 1e-8)

    def test_non_binary_mask_rejected(self):
        q, k, v = rand_qkv(seed=9)
        with pytest.raises(ValueError):
            attend(q, k, v, mask=torch.full((6,), 0.5), alpha=0.5)

    def test_wrong_mask_length_rejected(self):
        q, k, v = rand_qkv(seed=10)
        with pytest.raises(ValueError):
            attend(q, k, v, mask=torch.ones(5), alpha=0.5)

    def test_shape_mismatch_rejected(self):
        q, k, v = rand_qkv(seed=11)
        with pytest.raises(ValueError):
            attend(q, k[:4], v)


def test_attention_config_validation():
    AttentionConfig().validate()
    with pytest.raises(ValueError):
        AttentionConfig(alpha_tumor=-0.1).validate()
    with pytest.raises(ValueError):
        AttentionConfig(head_dim=0).validate()
