import numpy as np
import pytest
import torch

from tulabm.codec import (CodecConfig, CodecUsageError, IdentityCodec,
                          LearnedCodec, PooledCodec, make_codec, pretrain_codec)
from tulabm.phantoms import PhantomSpec, generate_dataset
from tulabm.preprocess import SizeError


class TestIdentity:
    def test_encode_bit_exact(self):
        img = torch.rand(16, 16, generator=torch.Generator().manual_seed(0))
        c = IdentityCodec()
        z = c.encode(img)
        assert z.shape == (1, 16, 16)
        assert torch.equal(z[0], img)

    def test_roundtrip_exact(self):
        img = torch.rand(8, 8, generator=torch.Generator().manual_seed(1))
        c = IdentityCodec()
        assert torch.equal(c.decode(c.encode(img)), img)


class TestPooled:
    def test_constant_image(self):
        c = PooledCodec(2)
        z = c.encode(torch.full((8, 8), 0.3))
        assert torch.allclose(z, torch.full((1, 4, 4), 0.3))

    def test_block_mean_oracle(self):
        c = PooledCodec(2)
        img = torch.tensor([[0.0, 1.0], [1.0, 0.0]])
        assert float(c.encode(img)) == 0.5

    def test_roundtrip_on_block_constant(self):
        g = torch.Generator().manual_seed(2)
        coarse = torch.rand(1, 4, 4, generator=g)
        img = PooledCodec(4).decode(coarse)
        c = PooledCodec(4)
        assert torch.allclose(c.decode(c.encode(img)), img)

    def test_shape_contract(self):
        c = PooledCodec(4)
        img = torch.rand(64, 64)
        assert c.decode(c.encode(img)).shape == img.shape
        assert c.latent_shape((64, 64)) == (1, 16, 16)

    def test_non_divisible_rejected(self):
        with pytest.raises(SizeError):
            PooledCodec(4).encode(torch.rand(10, 10))


@pytest.fixture(scope="module")
def phantom_images():
    data = generate_dataset(PhantomSpec(seed=5), 48)
    return [p.nc for p in data[:32]] + [p.ce for p in data[:32]], data[32:]


class TestLearned:

    def test_zero_steps_leaves_parameters(self):
        c = LearnedCodec(seed=3)
        before = {k: v.clone() for k, v in c.state_dict().items()}
        pretrain_codec(c, [np.zeros((16, 16), dtype=np.float32)], steps=0)
        for k, v in c.state_dict().items():
            assert torch.equal(v, before[k])

    def test_seeded_init_identical(self):
        a = LearnedCodec(seed=4).state_dict()
        b = LearnedCodec(seed=4).state_dict()
        for k in a:
            assert torch.equal(a[k], b[k])

    def test_pretrain_deterministic(self, phantom_images):
        images, _ = phantom_images
        runs = []
        for _ in range(2):
            c = LearnedCodec(seed=0)
            pretrain_codec(c, images[:8], steps=20, seed=0)
            runs.append(c.param_digest())
        assert runs[0] == runs[1]

    def test_loss_decreases(self, phantom_images):
        images, _ = phantom_images
        c = LearnedCodec(seed=0)
        losses = pretrain_codec(c, images, steps=500, seed=0)
        assert losses[-1] <= losses[0]

    def test_holdout_reconstruction(self, phantom_images):
        images, holdout = phantom_images
        c = LearnedCodec(factor=2, channels=4, seed=0)
        pretrain_codec(c, images, steps=500, seed=0)
        errs = []
        for p in holdout:
            x = torch.from_numpy(p.nc)
            errs.append(float((c.decode(c.encode(x)) - x).abs().mean()))
        assert np.mean(errs) < 0.05

    def test_frozen_after_pretrain(self, phantom_images):
        images, _ = phantom_images
        c = LearnedCodec(seed=1)
        pretrain_codec(c, images[:4], steps=5)
        assert all(not p.requires_grad for p in c.parameters())

    def test_pretrain_requires_learned_mode(self):
        with pytest.raises(CodecUsageError):
            pretrain_codec(PooledCodec(2), [np.zeros((8, 8))], steps=1)


def test_config_invariants():
    with pytest.raises(ValueError):
        CodecConfig(mode="identity", downscale_factor=2).validate()
    with pytest.raises(ValueError):
        CodecConfig(mode="nope").validate()
    with pytest.raises(ValueError):
        make_codec("bogus")


def test_param_digest_tracks_changes():
    c = LearnedCodec(seed=0)
    d0 = c.param_digest()
    with torch.no_grad():
        next(c.parameters()).add_(1.0)
    assert c.param_digest() != d0
