"""Cross motion-guided attention between each query video and the whole support set."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

from . import tensor as T
from .errors import ConfigurationError, UsageError
from .motion import MotionTensor, MultiScaleParams, bidirectional_motion, flatten_patches, unflatten_patches
from .params import ParameterStore
from .tensor import Tensor

FRAMEWISE = "framewise"
FRAMEALL = "frameall"


@dataclass
class CrossScore:
    scores: Tensor  # framewise [Q, L, HW, NK*HW]; frameall [Q, L*HW, L*NK*HW]
    backward: Optional[Tensor] = None
    forward: Optional[Tensor] = None
    variant: str = FRAMEWISE


class CmgaParams:
    def __init__(self, store: ParameterStore, prefix: str, dim: int, r: int):
        self.dim, self.r = dim, r
        self.prefix = prefix
        self.motion = MultiScaleParams(store, f"{prefix}.motion", dim, r)
        self.phi3 = store.kaiming(f"{prefix}.phi3.weight", (dim, 3), fan_in=3)
        self.lam1 = store.zeros(f"{prefix}.lambda1", ())
        self.lam2 = store.zeros(f"{prefix}.lambda2", ())

    @staticmethod
    def count(dim: int, r: int) -> dict[str, int]:
        out = {f"motion.{k}": v for k, v in MultiScaleParams.count(dim, r).items()}
        out.update({"phi3.weight": 3 * dim, "lambda1": 1, "lambda2": 1})
        return out


@dataclass
class EpisodeFeatures:
    support: Tensor  # [N*K, L, D, H, W], ordered by support index
    query: Tensor  # [Q, L, D, H, W]


def _check_same(videos: Tensor) -> None:
    if videos.ndim != 5:
        raise ConfigurationError(f"expected a stack of videos [V, L, D, H, W], got {videos.shape}")


def video_motion(videos: Tensor, p: CmgaParams) -> tuple[Tensor, Tensor]:
    """Patch-flattened motion [V, L, HW, D/r] (backward, forward)."""
    mb, mf = bidirectional_motion(videos, p.motion)
    return flatten_patches(mb.data), flatten_patches(mf.data)


def concat_support(m: Tensor) -> Tensor:
    """[NK, L, HW, C] -> [L, NK*HW, C]; column blocks follow support order."""
    nk, L, hw, c = m.shape
    return T.reshape(T.swapaxes(m, 0, 1), (L, nk * hw, c))


def support_motion(support, p: CmgaParams) -> tuple[Tensor, Tensor]:
    """Task-level motion of all support videos, concatenated along the patch axis."""
    if isinstance(support, (list, tuple)):
        shapes = {tuple(v.shape) for v in support}
        if len(shapes) != 1:
            raise ConfigurationError(f"support videos have heterogeneous shapes: {sorted(shapes)}")
        support = T.stack(list(support), axis=0)
    _check_same(support)
    mb, mf = video_motion(support, p)
    return concat_support(mb), concat_support(mf)


def _fused_scores(q_b, q_f, s_b, s_f, scale):
    q = T.concat([q_b, q_f], axis=-1) * scale
    s = T.concat([s_b, s_f], axis=-1)
    return T.softmax_rows(T.matmul(q, T.swapaxes(s, -1, -2)))


def cross_association_framewise(
    q_b: Tensor, q_f: Tensor, s_b: Tensor, s_f: Tensor, d_c: Optional[int] = None, components: bool = True
) -> CrossScore:
    """q_*: [Q, L, HW, C]; s_*: [L, NK*HW, C] -> scores [Q, L, HW, NK*HW]."""
    if q_b.shape[-3] != s_b.shape[-3] or q_f.shape[-3] != s_f.shape[-3]:
        raise UsageError(f"frame count mismatch: query {q_b.shape}, support {s_b.shape}")
    d_c = d_c if d_c is not None else q_b.shape[-1]
    scale = 1.0 / math.sqrt(d_c)
    if not components:
        return CrossScore(_fused_scores(q_b, q_f, s_b, s_f, scale), variant=FRAMEWISE)
    c_b = T.matmul(q_b, T.swapaxes(s_b, -1, -2)) * scale
    c_f = T.matmul(q_f, T.swapaxes(s_f, -1, -2)) * scale
    return CrossScore(T.softmax_rows(c_b + c_f), c_b, c_f, FRAMEWISE)


def _all_frames(x: Tensor) -> Tensor:
    # [..., L, P, C] -> [..., L*P, C], frame-major
    *lead, L, P, C = x.shape
    return T.reshape(x, (*lead, L * P, C))


def cross_association_frameall(
    q_b: Tensor, q_f: Tensor, s_b: Tensor, s_f: Tensor, d_c: Optional[int] = None, components: bool = True
) -> CrossScore:
    """Scores over every (query frame, support frame) pair: [Q, L*HW, L*NK*HW].

    Rows are ordered (frame, patch); columns (frame, support video, patch), so
    the frame-diagonal blocks coincide with the frame-wise matrices.
    """
    if q_b.shape[-3] != s_b.shape[-3] or q_f.shape[-3] != s_f.shape[-3]:
        raise UsageError(f"frame count mismatch: query {q_b.shape}, support {s_b.shape}")
    d_c = d_c if d_c is not None else q_b.shape[-1]
    scale = 1.0 / math.sqrt(d_c)
    qb, qf = _all_frames(q_b), _all_frames(q_f)
    sb, sf = _all_frames(s_b), _all_frames(s_f)
    if not components:
        return CrossScore(_fused_scores(qb, qf, sb, sf, scale), variant=FRAMEALL)
    c_b = T.matmul(qb, T.swapaxes(sb, -1, -2)) * scale
    c_f = T.matmul(qf, T.swapaxes(sf, -1, -2)) * scale
    return CrossScore(T.softmax_rows(c_b + c_f), c_b, c_f, FRAMEALL)


def support_values(support: Tensor, p: CmgaParams) -> Tensor:
    """phi3-filtered support features, frame i flattened to [NK*HW, D]: [L, NK*HW, D]."""
    return concat_support(flatten_patches(T.depthwise_conv3d_t311(support, p.phi3)))


def enhance_query(f_q: Tensor, c: CrossScore, values: Tensor, p: CmgaParams) -> Tensor:
    """lambda1 * C phi3(F_S) + lambda2 * phi3(F_Q) + F_Q per query frame."""
    hw = f_q.shape[-2:]
    if c.variant == FRAMEALL:
        L = values.shape[0]
        att = T.matmul(c.scores, _all_frames(values))  # [Q, L*HW, D]
        att = T.reshape(att, (att.shape[0], L, att.shape[1] // L, att.shape[2]))
    else:
        att = T.matmul(c.scores, values)  # [Q, L, HW, D]
    attended = unflatten_patches(att, hw)
    return p.lam1 * attended + p.lam2 * T.depthwise_conv3d_t311(f_q, p.phi3) + f_q


def enhance_support(f_s: Tensor, p: CmgaParams) -> Tensor:
    return p.lam2 * T.depthwise_conv3d_t311(f_s, p.phi3) + f_s


def cmga_forward(ep: EpisodeFeatures, p: CmgaParams, variant: str = FRAMEWISE, return_scores: bool = False):
    """Enhance every query against the full support set, and every support video on its own."""
    _check_same(ep.support)
    _check_same(ep.query)
    if ep.support.shape[1:] != ep.query.shape[1:]:
        raise ConfigurationError(f"support {ep.support.shape} and query {ep.query.shape} disagree")
    nk = ep.support.shape[0]
    # one motion pass over the whole task keeps weights shared between paths
    both = T.concat([ep.support, ep.query], axis=0)
    mb, mf = video_motion(both, p)
    s_b, s_f = concat_support(mb[:nk]), concat_support(mf[:nk])
    q_b, q_f = mb[nk:], mf[nk:]
    if variant == FRAMEWISE:
        c = cross_association_framewise(q_b, q_f, s_b, s_f, p.motion.channels, return_scores)
    elif variant == FRAMEALL:
        c = cross_association_frameall(q_b, q_f, s_b, s_f, p.motion.channels, return_scores)
    else:
        raise UsageError(f"unknown cross-attention variant '{variant}'")
    query = enhance_query(ep.query, c, support_values(ep.support, p), p)
    out = EpisodeFeatures(enhance_support(ep.support, p), query)
    return (out, c) if return_scores else out
