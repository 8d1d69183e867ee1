import hashlib

import numpy as np
import pytest

from tulabm.phantoms import (PhantomConfigError, PhantomSpec, generate_dataset,
                             generate_pair)


def pair_digest(pair):
    h = hashlib.sha256()
    for arr in (pair.nc, pair.ce, pair.mask):
        h.update(arr.tobytes())
    return h.hexdigest()


def test_same_inputs_bitwise_identical():
    spec = PhantomSpec(seed=11)
    a = generate_pair(spec, 4)
    b = generate_pair(spec, 4)
    assert (a.nc == b.nc).all()
    assert (a.ce == b.ce).all()
    assert (a.mask == b.mask).all()


def test_no_tumors_only_vessel_differs():
    spec = PhantomSpec(seed=2, tumor_count_range=(0, 0), noise_std=0.0)
    p = generate_pair(spec, 0)
    assert not p.mask.any()
    diff = p.ce - p.nc
    changed = diff != 0
    assert changed.any()  # the vessel curve
    # all changed pixels form a thin curve, enhanced by vessel_gain before clamping
    assert (diff[changed] > 0).all()
    assert changed.mean() < 0.1


def test_enhancement_gain_oracle():
    # direct summation over the generated pair; no noise and mild background so
    # nothing clamps inside the tumor
    spec = PhantomSpec(seed=3, enhancement_gain=0.3, tumor_count_range=(1, 1),
                       noise_std=0.0, background_texture_scale=0.3)
    p = generate_pair(spec, 0)
    m = p.mask.astype(bool)
    assert m.any()
    assert abs(float((p.ce - p.nc)[m].mean()) - 0.3) < 1e-6


def test_dataset_indexing_and_distinctness():
    spec = PhantomSpec(seed=5)
    ds = generate_dataset(spec, 4)
    assert pair_digest(ds[0]) == pair_digest(generate_pair(spec, 0))
    digests = {pair_digest(p) for p in ds}
    assert len(digests) == 4


def test_dataset_regeneration_identical():
    spec = PhantomSpec(seed=9)
    a = b"".join(p.nc.tobytes() + p.ce.tobytes() + p.mask.tobytes()
                 for p in generate_dataset(spec, 3))
    b = b"".join(p.nc.tobytes() + p.ce.tobytes() + p.mask.tobytes()
                 for p in generate_dataset(spec, 3))
    assert a == b


def test_value_range_and_mask_binary():
    for i in range(8):
        p = generate_pair(PhantomSpec(seed=1), i)
        for img in (p.nc, p.ce):
            assert img.min() >= 0.0 and img.max() <= 1.0
        assert np.isin(p.mask, (0, 1)).all()
        assert p.nc.shape == p.ce.shape == p.mask.shape


def test_mask_consistency():
    # with the vessel turned off, any pixel enhanced by >= gain/2 is tumor
    spec = PhantomSpec(seed=4, vessel_gain=0.0, noise_std=0.0)
    for i in range(6):
        p = generate_pair(spec, i)
        hot = (p.ce - p.nc) >= spec.enhancement_gain / 2
        assert p.mask[hot].all()


@pytest.mark.parametrize("kwargs", [
    dict(side=8),
    dict(tumor_count_range=(3, 1)),
    dict(tumor_radius_range=(5, 2)),
    dict(enhancement_gain=0.0),
    dict(enhancement_gain=1.5),
    dict(noise_std=-0.1),
])
def test_invalid_spec_rejected(kwargs):
    with pytest.raises(PhantomConfigError):
        generate_pair(PhantomSpec(**kwargs), 0)
