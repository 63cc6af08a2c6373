"""Channel-compressed, bidirectional, multi-scale motion features.

Feature maps are laid out ``[..., L, D, H, W]``; any leading axes index videos.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from . import tensor as T
from .errors import ConfigurationError
from .params import ParameterStore
from .tensor import Tensor


class Direction(enum.Enum):
    BACKWARD = "backward"  # M(F_i, F_{i+1})
    FORWARD = "forward"  # M(F_{i+1}, F_i)


@dataclass
class MotionTensor:
    direction: Direction
    data: Tensor  # [..., L, D/r, H, W] after boundary extension
    source_shape: tuple
    r: int


class MultiScaleParams:
    """Weights of one motion front end (one per attention module)."""

    def __init__(self, store: ParameterStore, prefix: str, dim: int, r: int):
        if r < 1 or dim % r:
            raise ConfigurationError(f"channel count {dim} is not divisible by compression factor {r}")
        c = dim // r
        self.dim, self.r, self.channels = dim, r, c
        self.prefix = prefix
        self.compress_w = store.kaiming(f"{prefix}.compress.weight", (c, dim), fan_in=dim)
        self.compress_b = store.bias(f"{prefix}.compress.bias", c, fan_in=dim)
        self.smooth = store.kaiming(f"{prefix}.smooth.weight", (c, 3, 3), fan_in=9)
        self.branch_b_w = store.kaiming(f"{prefix}.branch_b.weight", (c, c, 3, 3), fan_in=9 * c)
        self.branch_b_b = store.bias(f"{prefix}.branch_b.bias", c, fan_in=9 * c)
        self.branch_c_w = store.kaiming(f"{prefix}.branch_c.weight", (c, c, 3, 3), fan_in=9 * c)
        self.branch_c_b = store.bias(f"{prefix}.branch_c.bias", c, fan_in=9 * c)
        self.aggregate = store.kaiming(f"{prefix}.aggregate.weight", (c,), fan_in=1)

    @staticmethod
    def count(dim: int, r: int) -> dict[str, int]:
        c = dim // r
        return {
            "compress.weight": c * dim,
            "compress.bias": c,
            "smooth.weight": 9 * c,
            "branch_b.weight": 9 * c * c,
            "branch_b.bias": c,
            "branch_c.weight": 9 * c * c,
            "branch_c.bias": c,
            "aggregate.weight": c,
        }


def compress_channels(f: Tensor, p: MultiScaleParams) -> Tensor:
    """Shared 1x1 convolution D -> D/r applied to every frame."""
    if f.shape[-3] % p.r:
        raise ConfigurationError(f"channel count {f.shape[-3]} is not divisible by {p.r}")
    return T.conv1x1(f, p.compress_w, p.compress_b)


def aligned_difference(f_a: Tensor, f_b: Tensor, p: MultiScaleParams) -> Tensor:
    """f_a - smooth(f_b) with the depthwise 3x3 smoother."""
    return f_a - T.depthwise_conv2d(f_b, p.smooth)


def multi_scale_motion(diff: Tensor, p: MultiScaleParams) -> Tensor:
    H, W = diff.shape[-2:]
    if H < 2 or W < 2:
        raise ConfigurationError(f"multi-scale branches need H, W >= 2, got {H}x{W}")
    a = diff
    b = T.conv2d_3x3(diff, p.branch_b_w, p.branch_b_b)
    c = T.bilinear_upsample2x(T.conv2d_3x3(T.avgpool2x2(diff), p.branch_c_w, p.branch_c_b), (H, W))
    avg = (a + b + c) * (1.0 / 3.0)
    return avg * T.reshape(p.aggregate, (-1, 1, 1))


def _extend_last(x: Tensor) -> Tensor:
    # frame L reuses the (L-1, L) pair
    return T.concat([x, x[..., -1:, :, :, :]], axis=-4)


def bidirectional_motion(f: Tensor, p: MultiScaleParams, compressed: bool = False):
    """Backward and forward motion for every adjacent frame pair of ``f``.

    ``f`` is ``[..., L, D, H, W]``; pass ``compressed=True`` when the channel
    compression was already applied. Returns ``(backward, forward)``, each
    extended to L entries.
    """
    L = f.shape[-4]
    if L < 2:
        raise ConfigurationError(f"motion needs at least 2 frames, got {L}")
    source = tuple(f.shape)
    z = f if compressed else compress_channels(f, p)
    smoothed = T.depthwise_conv2d(z, p.smooth)
    head = z[..., :-1, :, :, :]
    tail = z[..., 1:, :, :, :]
    back_diff = head - smoothed[..., 1:, :, :, :]
    fwd_diff = tail - smoothed[..., :-1, :, :, :]
    mb = _extend_last(multi_scale_motion(back_diff, p))
    mf = _extend_last(multi_scale_motion(fwd_diff, p))
    return (
        MotionTensor(Direction.BACKWARD, mb, source, p.r),
        MotionTensor(Direction.FORWARD, mf, source, p.r),
    )


def flatten_patches(x: Tensor) -> Tensor:
    """[..., L, C, H, W] -> [..., L, HW, C]."""
    *lead, L, C, H, W = x.shape
    n = len(lead)
    y = T.reshape(x, (*lead, L, C, H * W))
    return T.swapaxes(y, n + 1, n + 2)


def unflatten_patches(x: Tensor, hw: tuple) -> Tensor:
    """[..., L, HW, C] -> [..., L, C, H, W]."""
    *lead, L, P, C = x.shape
    n = len(lead)
    y = T.swapaxes(x, n + 1, n + 2)
    return T.reshape(y, (*lead, L, C, *hw))
