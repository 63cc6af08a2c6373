import numpy as np
import pytest

from mga import tensor as T
from mga.errors import ConfigurationError
from mga.motion import (
    Direction,
    MultiScaleParams,
    aligned_difference,
    bidirectional_motion,
    compress_channels,
    flatten_patches,
    multi_scale_motion,
    unflatten_patches,
)
from mga.params import ParameterStore
from mga.pipeline import FTConfig, FTModel
from mga.tensor import Tensor

from .oracles import center_one, multi_scale_oracle, sliding_depthwise


def params(dim=8, r=4, seed=0):
    return MultiScaleParams(ParameterStore(seed), "m", dim, r)


def pointwise(p, aggregate=1.0):
    """Identity compression (r=1), identity smoother, zero conv branches."""
    c = p.channels
    p.compress_w.data = np.eye(c, p.dim)
    p.compress_b.data[:] = 0.0
    p.smooth.data = center_one(c)
    for t in (p.branch_b_w, p.branch_b_b, p.branch_c_w, p.branch_c_b):
        t.data[...] = 0.0
    p.aggregate.data[:] = aggregate
    return p


# ---------------------------------------------------------------- compression


def test_identity_extended_kernel_selects_leading_channels():
    p = params(8, 4)
    p.compress_w.data = np.eye(2, 8)
    p.compress_b.data[:] = 0.0
    f = np.random.default_rng(0).normal(size=(3, 8, 2, 2))
    assert np.array_equal(compress_channels(Tensor(f), p).data, f[:, :2])


def test_paper_width_compresses_to_256_channels():
    p = params(2048, 8)
    with T.no_grad():
        out = compress_channels(Tensor(np.zeros((1, 2048, 2, 2))), p)
    assert out.shape == (1, 256, 2, 2)


def test_compression_matches_per_pixel_matmul():
    p = params(16, 4, seed=3)
    f = np.random.default_rng(1).normal(size=(2, 16, 3, 3))
    out = compress_channels(Tensor(f), p).data
    w, b = p.compress_w.data, p.compress_b.data
    for t in range(2):
        for i in range(3):
            for j in range(3):
                np.testing.assert_allclose(out[t, :, i, j], w @ f[t, :, i, j] + b, atol=1e-12)


def test_indivisible_width_is_configuration_error():
    with pytest.raises(ConfigurationError):
        params(10, 4)


# ---------------------------------------------------------------- aligned difference


def test_equal_frames_with_identity_smoother_give_zero():
    p = params(8, 4)
    p.smooth.data = center_one(2)
    a = Tensor(np.random.default_rng(2).normal(size=(2, 4, 4)))
    assert np.array_equal(aligned_difference(a, a, p).data, np.zeros((2, 4, 4)))


def test_uniform_smoother_on_constant_frames():
    p = params(8, 4)
    p.smooth.data = np.full((2, 3, 3), 1 / 9)
    out = aligned_difference(Tensor(np.full((2, 5, 5), 2.0)), Tensor(np.full((2, 5, 5), 0.5)), p).data
    np.testing.assert_allclose(out[:, 1:-1, 1:-1], 1.5, atol=1e-15)


def test_aligned_difference_composition_oracle():
    p = params(8, 4, seed=4)
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(2, 4, 5)), rng.normal(size=(2, 4, 5))
    oracle = a - sliding_depthwise(b, p.smooth.data)
    assert np.max(np.abs(aligned_difference(Tensor(a), Tensor(b), p).data - oracle)) < 1e-12


def test_antisymmetry_with_identity_smoother():
    p = params(8, 4)
    p.smooth.data = center_one(2)
    rng = np.random.default_rng(4)
    a, b = Tensor(rng.normal(size=(2, 3, 3))), Tensor(rng.normal(size=(2, 3, 3)))
    assert np.array_equal(aligned_difference(a, b, p).data, -aligned_difference(b, a, p).data)


# ---------------------------------------------------------------- multi-scale


def test_only_short_connection_survives_with_zero_branches():
    p = pointwise(params(4, 1))
    d = np.random.default_rng(5).normal(size=(4, 4, 4))
    np.testing.assert_allclose(multi_scale_motion(Tensor(d), p).data, d / 3, rtol=1e-15, atol=0)


@pytest.mark.parametrize("hw", [(4, 4), (5, 3), (2, 2)])
def test_multi_scale_matches_per_branch_oracle(hw):
    p = params(8, 2, seed=6)
    d = np.random.default_rng(6).normal(size=(4, *hw))
    oracle = multi_scale_oracle(
        d, p.branch_b_w.data, p.branch_b_b.data, p.branch_c_w.data, p.branch_c_b.data, p.aggregate.data
    )
    assert np.max(np.abs(multi_scale_motion(Tensor(d), p).data - oracle)) < 1e-12


def test_multi_scale_rejects_single_row_maps():
    p = params(8, 4)
    with pytest.raises(ConfigurationError):
        multi_scale_motion(Tensor(np.zeros((2, 1, 4))), p)


def test_spatial_extent_preserved():
    p = params(8, 4)
    out = multi_scale_motion(Tensor(np.ones((3, 2, 7, 5))), p)
    assert out.shape == (3, 2, 7, 5)


# ---------------------------------------------------------------- bidirectional


def test_static_video_gives_exactly_zero_motion():
    p = pointwise(params(8, 4))
    p.compress_w.data = np.random.default_rng(7).normal(size=(2, 8))
    p.compress_b.data = np.array([0.3, -0.2])
    frame = np.random.default_rng(8).normal(size=(8, 4, 4))
    mb, mf = bidirectional_motion(Tensor(np.stack([frame] * 5)), p)
    assert not mb.data.data.any() and not mf.data.data.any()


def test_eight_frames_give_eight_pairs_with_last_duplicated():
    p = params(8, 4)
    f = Tensor(np.random.default_rng(9).normal(size=(8, 8, 3, 3)))
    mb, mf = bidirectional_motion(f, p)
    assert mb.direction is Direction.BACKWARD and mf.direction is Direction.FORWARD
    for m in (mb, mf):
        assert m.data.shape == (8, 2, 3, 3)
        assert m.source_shape == (8, 8, 3, 3) and m.r == 4
        assert np.array_equal(m.data.data[7], m.data.data[6])


def test_pair_order_matches_composition():
    p = params(8, 2, seed=10)
    f = np.random.default_rng(10).normal(size=(4, 8, 3, 4))
    mb, mf = bidirectional_motion(Tensor(f), p)
    z = [compress_channels(Tensor(f[i]), p) for i in range(4)]
    for i in range(3):
        back = multi_scale_motion(aligned_difference(z[i], z[i + 1], p), p).data
        fwd = multi_scale_motion(aligned_difference(z[i + 1], z[i], p), p).data
        assert np.max(np.abs(mb.data.data[i] - back)) < 1e-12
        assert np.max(np.abs(mf.data.data[i] - fwd)) < 1e-12


def test_impulse_motion_follows_trajectory():
    p = pointwise(params(1, 1))
    L, H, W = 3, 3, 4
    path = [(0, 0), (1, 1), (1, 2)]
    f = np.zeros((L, 1, H, W))
    for t, (y, x) in enumerate(path):
        f[t, 0, y, x] = 1.0
    mb, mf = bidirectional_motion(Tensor(f), p)
    for i in range(L - 1):
        back = np.zeros((H, W))
        back[path[i]] += 1 / 3
        back[path[i + 1]] -= 1 / 3
        np.testing.assert_allclose(mb.data.data[i, 0], back, atol=1e-15)
        np.testing.assert_allclose(mf.data.data[i, 0], -back, atol=1e-15)
        support = set(zip(*np.nonzero(mb.data.data[i, 0])))
        assert support == {path[i], path[i + 1]}


def test_single_frame_is_configuration_error():
    with pytest.raises(ConfigurationError):
        bidirectional_motion(Tensor(np.zeros((1, 8, 3, 3))), params(8, 4))


def test_batched_videos_match_individual_videos():
    p = params(8, 4, seed=11)
    f = np.random.default_rng(11).normal(size=(3, 4, 8, 3, 3))
    mb, _ = bidirectional_motion(Tensor(f), p)
    for v in range(3):
        single, _ = bidirectional_motion(Tensor(f[v]), p)
        assert np.max(np.abs(mb.data.data[v] - single.data.data)) < 1e-12


def test_patch_flatten_round_trip():
    x = np.random.default_rng(12).normal(size=(2, 3, 4, 2, 5))
    flat = flatten_patches(Tensor(x))
    assert flat.shape == (2, 3, 10, 4)
    assert np.array_equal(flat.data[1, 2, 7], x[1, 2, :, 1, 2])
    assert np.array_equal(unflatten_patches(flat, (2, 5)).data, x)


def test_modules_own_separate_motion_weights():
    model = FTModel(FTConfig(dim=8, r1=2, r2=4))
    s_names = {n for n in model.store if n.startswith("smga.motion.")}
    c_names = {n for n in model.store if n.startswith("cmga.motion.")}
    assert len(s_names) == len(MultiScaleParams.count(8, 2)) and len(c_names) == len(MultiScaleParams.count(8, 4))
    assert model.store["smga.motion.compress.weight"].shape == (4, 8)
    assert model.store["cmga.motion.compress.weight"].shape == (2, 8)


def test_one_weight_set_serves_every_frame_and_video():
    p = params(8, 4, seed=13)
    f = Tensor(np.random.default_rng(13).normal(size=(2, 5, 8, 3, 3)))
    mb, mf = bidirectional_motion(f, p)
    T.tsum(T.square(mb.data) + T.square(mf.data)).backward()
    # a single accumulated gradient per tensor, no per-frame copies
    for t in (p.compress_w, p.smooth, p.branch_b_w, p.branch_c_w, p.aggregate):
        assert t.grad is not None and t.grad.shape == t.shape
