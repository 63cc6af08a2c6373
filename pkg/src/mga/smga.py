"""Self motion-guided attention over the patches of one video."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

from . import tensor as T
from .errors import ConfigurationError, UsageError
from .motion import Direction, MotionTensor, MultiScaleParams, bidirectional_motion, flatten_patches, unflatten_patches
from .params import ParameterStore
from .tensor import Tensor


@dataclass
class SelfScore:
    scores: Tensor  # [..., L, HW, HW], row-stochastic
    backward: Optional[Tensor] = None  # pre-softmax S_B
    forward: Optional[Tensor] = None  # pre-softmax S_F


class SmgaParams:
    def __init__(self, store: ParameterStore, prefix: str, frames: int, dim: int, r: int):
        self.frames, self.dim, self.r = frames, dim, r
        self.prefix = prefix
        self.motion = MultiScaleParams(store, f"{prefix}.motion", dim, r)
        self.phi3 = store.kaiming(f"{prefix}.phi3.weight", (dim, 3), fan_in=3)
        self.lam = store.zeros(f"{prefix}.lambda", ())
        self.w1 = store.kaiming(f"{prefix}.mixer.w1", (frames, frames), fan_in=frames)
        self.w2 = store.zeros(f"{prefix}.mixer.w2", (frames, frames))
        self.w3 = store.kaiming(f"{prefix}.mixer.w3", (dim, dim), fan_in=dim)
        self.w4 = store.zeros(f"{prefix}.mixer.w4", (dim, dim))

    @staticmethod
    def count(frames: int, dim: int, r: int) -> dict[str, int]:
        out = {f"motion.{k}": v for k, v in MultiScaleParams.count(dim, r).items()}
        out.update(
            {
                "phi3.weight": 3 * dim,
                "lambda": 1,
                "mixer.w1": frames * frames,
                "mixer.w2": frames * frames,
                "mixer.w3": dim * dim,
                "mixer.w4": dim * dim,
            }
        )
        return out


def self_association(mb: MotionTensor, mf: MotionTensor, d_c: Optional[int] = None, components: bool = True) -> SelfScore:
    """Per-frame HW x HW scores from backward and forward motion.

    With ``components=False`` the two products are fused into one matmul over
    the channel-concatenated motion ([b f][b f]^T = b b^T + f f^T) and the
    pre-softmax parts are not kept.
    """
    if mb.direction is not Direction.BACKWARD or mf.direction is not Direction.FORWARD:
        raise UsageError("self_association expects (backward, forward) motion tensors")
    if mb.data.shape != mf.data.shape:
        raise UsageError(f"motion shapes differ: {mb.data.shape} vs {mf.data.shape}")
    d_c = d_c if d_c is not None else mb.data.shape[-3]
    scale = 1.0 / math.sqrt(d_c)
    b = flatten_patches(mb.data)
    f = flatten_patches(mf.data)
    if not components:
        bf = T.concat([b, f], axis=-1)
        return SelfScore(T.softmax_rows(T.matmul(bf * scale, T.swapaxes(bf, -1, -2))))
    s_b = T.matmul(b, T.swapaxes(b, -1, -2)) * scale
    s_f = T.matmul(f, T.swapaxes(f, -1, -2)) * scale
    return SelfScore(T.softmax_rows(s_b + s_f), s_b, s_f)


def enhance(f: Tensor, s: SelfScore, p: SmgaParams) -> Tensor:
    """lambda * S_i phi3(F)_i + F_i for every frame."""
    values = flatten_patches(T.depthwise_conv3d_t311(f, p.phi3))
    attended = unflatten_patches(T.matmul(s.scores, values), f.shape[-2:])
    return p.lam * attended + f


def _mlp_last(x: Tensor, w_in: Tensor, w_out: Tensor) -> Tensor:
    # fibers along the last axis: x + W_out relu(W_in x)
    hidden = T.relu(T.matmul(x, T.swapaxes(w_in, 0, 1)))
    return T.matmul(hidden, T.swapaxes(w_out, 0, 1)) + x


def temporal_channel_mixer(f: Tensor, p: SmgaParams) -> Tensor:
    """Temporal MLP across L per (d, h, w), then channel MLP across D per (l, h, w)."""
    L, D = f.shape[-4], f.shape[-3]
    if p.w1.shape != (L, L) or p.w3.shape != (D, D):
        raise ConfigurationError(f"mixer weights sized for L={p.w1.shape[0]}, D={p.w3.shape[0]}; input has L={L}, D={D}")
    n = f.ndim - 4
    lead = tuple(range(n))
    L_ax, D_ax, H_ax, W_ax = n, n + 1, n + 2, n + 3
    t_order = lead + (D_ax, H_ax, W_ax, L_ax)
    x = T.transpose(f, t_order)
    g = T.transpose(_mlp_last(x, p.w1, p.w2), _inverse(t_order))
    c_order = lead + (L_ax, H_ax, W_ax, D_ax)
    y = T.transpose(g, c_order)
    return T.transpose(_mlp_last(y, p.w3, p.w4), _inverse(c_order))


def _inverse(order: tuple) -> tuple:
    inv = [0] * len(order)
    for i, a in enumerate(order):
        inv[a] = i
    return tuple(inv)


def smga_forward(f: Tensor, p: SmgaParams, return_scores: bool = False):
    """Full S-MGA: motion -> self scores -> enhancement -> mixer.

    ``f`` is ``[..., L, D, H, W]``. With ``return_scores`` the self scores are
    returned alongside the output.
    """
    if f.shape[-4] < 2:
        raise ConfigurationError(f"S-MGA needs at least 2 frames, got {f.shape[-4]}")
    mb, mf = bidirectional_motion(f, p.motion)
    s = self_association(mb, mf, p.motion.channels, components=return_scores)
    out = temporal_channel_mixer(enhance(f, s, p), p)
    return (out, s) if return_scores else out
