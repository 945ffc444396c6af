import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vssanet.autodiff import Tensor, new_tape, no_grad, ops
from vssanet.mrfeature import BackboneStages, MRFeature, build_dcd1, build_dcd2, pyramid_sizes


@pytest.fixture(scope="module")
def small_model():
    return MRFeature(0.125, np.random.default_rng(0))


def image(size, seed=0):
    return Tensor(np.random.default_rng(seed).uniform(-1, 1, (1, 3, size, size)).astype(np.float32))


@pytest.mark.parametrize("size", [300, 225, 375])
def test_pyramid_resolutions(small_model, size):
    with no_grad():
        pyr = small_model(image(size))
    expected = [(math.ceil(size / s),) * 2 for s in (16, 32, 64)]
    assert pyr.sizes() == expected == pyramid_sizes(size)
    assert all(np.isfinite(t.data).all() for t in pyr.levels())


def test_stated_resolutions_at_300():
    assert pyramid_sizes(300) == [(19, 19), (10, 10), (5, 5)]


def test_stage_strides(small_model):
    with no_grad():
        st_ = small_model.backbone(image(128))
    assert [t.shape[2] for t in (st_.s8, st_.s16, st_.s32, st_.s64)] == [16, 8, 4, 2]


def test_channels_at_width_one_eighth(small_model):
    with no_grad():
        pyr = small_model(image(300))
    assert pyr.p19.shape[1] == 64 and pyr.p10.shape[1] == 64 and pyr.p5.shape[1] == 128


def test_too_small_input_is_rejected(small_model):
    with pytest.raises(ValueError, match="too small"):
        small_model(image(48))


def zero_stages(ch, s64, s32, s16=19):
    z = lambda c, s: Tensor(np.zeros((1, c, s, s), np.float32))
    return BackboneStages(z(ch["s8"], 38), z(ch["s16"], s16), z(ch["s32"], s32), z(ch["s64"], s64))


@pytest.fixture(scope="module")
def full_width():
    return MRFeature(1.0, np.random.default_rng(1))


def test_full_width_channel_arithmetic(full_width):
    ch = full_width.backbone.stage_channels()
    assert ch == {"s8": 256, "s16": 512, "s32": 1024, "s64": 1024}
    assert full_width.fuse1.norm_scale.shape == (1536,) and full_width.fuse2.norm_scale.shape == (1024,)
    with no_grad():
        stages = zero_stages(ch, 5, 10)
        d1 = build_dcd1(full_width, stages)
        d2 = build_dcd2(full_width, stages, d1)
    assert d1.shape == (1, 512, 10, 10) and d2.shape == (1, 512, 19, 19)


def test_zero_inputs_give_relu_of_projection_bias(small_model):
    m = small_model
    ch = m.backbone.stage_channels()
    saved = m.fuse1.bias.data.copy()
    m.fuse1.bias.data[:] = np.linspace(-1, 1, saved.size)
    try:
        with no_grad():
            out = build_dcd1(m, zero_stages(ch, 5, 10)).data
    finally:
        bias = m.fuse1.bias.data.copy()
        m.fuse1.bias.data[:] = saved
    np.testing.assert_array_equal(out, np.broadcast_to(np.maximum(bias, 0)[None, :, None, None], out.shape))


def test_ten_to_nineteen_deconv_is_exact(small_model):
    x = Tensor(np.ones((1, 64, 10, 10), np.float32))
    with no_grad():
        assert small_model.up2(x, (19, 19)).shape[2:] == (19, 19)


def test_s64_receives_gradient_from_both_fusions(f64):
    m = MRFeature(0.125, np.random.default_rng(3))
    ch = m.backbone.stage_channels()
    rng = np.random.default_rng(4)
    parts = {k: rng.uniform(0, 1, (1, ch[k], s, s)) for k, s in (("s8", 38), ("s16", 19), ("s32", 10), ("s64", 5))}

    def grad_s64():
        with new_tape():
            st_ = {k: Tensor(v, requires_grad=(k == "s64")) for k, v in parts.items()}
            stages = BackboneStages(**st_)
            d2 = build_dcd2(m, stages, build_dcd1(m, stages))
            ops.sum(d2).backward()
            return st_["s64"].grad.copy()

    both = grad_s64()
    m.up64a.weight.data[:] = 0  # cut the chained branch
    m.up64a.bias.data[:] = 0
    only_first = grad_s64()
    assert np.abs(both).sum() > 0 and np.abs(only_first).sum() > 0
    assert not np.allclose(both, only_first)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31), c=st.integers(1, 40), mag=st.floats(1e-3, 1e3))
def test_l2_normalized_locations_have_unit_norm(seed, c, mag):
    x = np.random.default_rng(seed).normal(size=(2, c, 3, 4)) * mag
    with no_grad():
        y = ops.l2_normalize(Tensor(x), Tensor(np.ones(c)), axis=1).data
    np.testing.assert_allclose(np.linalg.norm(y, axis=1), 1.0, atol=1e-5)


def test_one_parameter_set_for_all_scales(small_model):
    before = {k: v.copy() for k, v in small_model.state_dict().items()}
    with no_grad():
        for s in (225, 300, 375):
            small_model(image(s))
    assert all(np.array_equal(before[k], v) for k, v in small_model.state_dict().items())
