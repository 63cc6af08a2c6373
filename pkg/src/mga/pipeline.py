"""Fine-tuning pipeline: trainable patch stem -> S-MGA -> C-MGA."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from . import tensor as T
from .adapters import PatchEmbed
from .cmga import FRAMEWISE, CmgaParams, EpisodeFeatures, cmga_forward
from .params import ParameterStore
from .smga import SmgaParams, smga_forward
from .tensor import Tensor


@dataclass
class FTConfig:
    frames: int = 8
    in_ch: int = 1
    dim: int = 16
    patch: int = 1
    r1: int = 4
    r2: int = 4
    smga: bool = True
    cmga: bool = True
    variant: str = FRAMEWISE


class FTModel:
    def __init__(self, cfg: FTConfig, store: Optional[ParameterStore] = None, seed: int = 0):
        self.cfg = cfg
        self.store = store if store is not None else ParameterStore(seed)
        self.stem = PatchEmbed(self.store, "stem", cfg.in_ch, cfg.dim, cfg.patch)
        self.smga = SmgaParams(self.store, "smga", cfg.frames, cfg.dim, cfg.r1) if cfg.smga else None
        self.cmga = CmgaParams(self.store, "cmga", cfg.dim, cfg.r2) if cfg.cmga else None

    def embed(self, pixels: Tensor) -> Tensor:
        return T.relu(self.stem(pixels))

    def video_features(self, pixels: Tensor, return_scores: bool = False):
        """Per-video stage (stem, S-MGA) on a stack of clips [V, L, C, G, G]."""
        x = self.embed(pixels)
        scores = {}
        if self.smga is not None:
            x, s = smga_forward(x, self.smga, return_scores=True) if return_scores else (smga_forward(x, self.smga), None)
            scores["self"] = s
        return (x, scores) if return_scores else x

    def task_features(self, ep: EpisodeFeatures, return_scores: bool = False):
        """Task-level stage (C-MGA) on per-video features."""
        scores = {}
        if self.cmga is not None:
            if return_scores:
                ep, scores["cross"] = cmga_forward(ep, self.cmga, self.cfg.variant, return_scores=True)
            else:
                ep = cmga_forward(ep, self.cmga, self.cfg.variant)
        return (ep, scores) if return_scores else ep

    def features(self, support_px: Tensor, query_px: Tensor, return_scores: bool = False):
        nk = support_px.shape[0]
        res = self.video_features(T.concat([support_px, query_px], axis=0), return_scores)
        x, scores = res if return_scores else (res, {})
        ep = EpisodeFeatures(x[:nk], x[nk:])
        if not return_scores:
            return self.task_features(ep)
        ep, more = self.task_features(ep, True)
        return ep, {**scores, **more}
