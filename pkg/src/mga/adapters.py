"""Adapter tuning: ST-Adapter, Smga-Adapter and Cmga-Adapter around a frozen backbone stub."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from . import tensor as T
from .cmga import FRAMEWISE, CmgaParams, EpisodeFeatures, cmga_forward
from .errors import ConfigurationError
from .params import ParameterStore
from .smga import SmgaParams, smga_forward
from .tensor import Tensor

ST, SMGA, CMGA = "st", "smga", "cmga"


class PatchEmbed:
    """Non-overlapping p x p patches -> D channels, applied to every frame."""

    def __init__(self, store: ParameterStore, prefix: str, in_ch: int, dim: int, patch: int, trainable: bool = True):
        self.in_ch, self.dim, self.patch = in_ch, dim, patch
        fan_in = in_ch * patch * patch
        self.weight = store.kaiming(f"{prefix}.weight", (dim, fan_in), fan_in=fan_in, trainable=trainable)
        self.bias = store.bias(f"{prefix}.bias", dim, fan_in=fan_in, trainable=trainable)

    def __call__(self, pixels: Tensor) -> Tensor:
        """[..., L, C, G, G] -> [..., L, D, G/p, G/p]."""
        *lead, L, C, G1, G2 = pixels.shape
        p = self.patch
        if C != self.in_ch or G1 % p or G2 % p:
            raise ConfigurationError(f"pixels {pixels.shape} incompatible with {C}->{self.dim} patch {p}")
        h, w = G1 // p, G2 // p
        n = len(lead)
        x = T.reshape(pixels, (*lead, L, C, h, p, w, p))
        # -> [..., L, h, w, C, p, p]
        ax = tuple(range(n)) + (n, n + 2, n + 4, n + 1, n + 3, n + 5)
        x = T.reshape(T.transpose(x, ax), (*lead, L, h, w, C * p * p))
        y = T.matmul(x, T.swapaxes(self.weight, 0, 1)) + self.bias
        ax2 = tuple(range(n)) + (n, n + 3, n + 1, n + 2)
        return T.transpose(y, ax2)


def _channels_last(x: Tensor) -> tuple[Tensor, tuple]:
    n = x.ndim - 4
    order = tuple(range(n)) + (n, n + 2, n + 3, n + 1)
    inv = tuple(range(n)) + (n, n + 3, n + 1, n + 2)
    return T.transpose(x, order), inv


class ResidualBlock:
    """x + W2 relu(W1 LN(x) + b1) + b2, mixing channels per (l, h, w)."""

    def __init__(self, store: ParameterStore, prefix: str, dim: int, hidden: int, trainable: bool = False):
        self.w1 = store.kaiming(f"{prefix}.fc1.weight", (hidden, dim), fan_in=dim, trainable=trainable)
        self.b1 = store.bias(f"{prefix}.fc1.bias", hidden, fan_in=dim, trainable=trainable)
        self.w2 = store.kaiming(f"{prefix}.fc2.weight", (dim, hidden), fan_in=hidden, trainable=trainable)
        self.b2 = store.bias(f"{prefix}.fc2.bias", dim, fan_in=hidden, trainable=trainable)

    def __call__(self, x: Tensor) -> Tensor:
        y, inv = _channels_last(x)
        h = T.relu(T.matmul(T.layer_norm(y), T.swapaxes(self.w1, 0, 1)) + self.b1)
        h = T.matmul(h, T.swapaxes(self.w2, 0, 1)) + self.b2
        return x + T.transpose(h, inv)


class BackboneStub:
    """Patch embedding followed by ``blocks`` residual MLP blocks; frozen by default."""

    def __init__(self, store: ParameterStore, in_ch: int, dim: int, patch: int, blocks: int, frozen: bool = True):
        self.embed = PatchEmbed(store, "backbone.embed", in_ch, dim, patch, trainable=not frozen)
        self.blocks = [ResidualBlock(store, f"backbone.block{i}", dim, 2 * dim, trainable=not frozen) for i in range(blocks)]


class AdapterParams:
    """Down/up projections plus the inner module running at width D' = D / reduction."""

    def __init__(self, store: ParameterStore, prefix: str, kind: str, frames: int, dim: int, reduction: int, inner_r: int):
        if dim % reduction:
            raise ConfigurationError(f"adapter width {dim} not divisible by {reduction}")
        inner = dim // reduction
        self.kind, self.dim, self.inner_dim = kind, dim, inner
        self.w_down = store.kaiming(f"{prefix}.w_down", (dim, inner), fan_in=dim)
        self.w_up = store.zeros(f"{prefix}.w_up", (inner, dim))
        self.inner: object
        if kind == ST:
            self.inner = store.kaiming(f"{prefix}.dwconv3d.weight", (inner, 3, 3, 3), fan_in=27)
        elif kind == SMGA:
            self.inner = SmgaParams(store, f"{prefix}.smga", frames, inner, inner_r)
        elif kind == CMGA:
            self.inner = CmgaParams(store, f"{prefix}.cmga", inner, inner_r)
        else:
            raise ConfigurationError(f"unknown adapter kind '{kind}'")

    @staticmethod
    def count(kind: str, frames: int, dim: int, reduction: int, inner_r: int) -> dict[str, int]:
        inner = dim // reduction
        out = {"w_down": dim * inner, "w_up": inner * dim}
        if kind == ST:
            out["dwconv3d.weight"] = 27 * inner
        elif kind == SMGA:
            out.update({f"smga.{k}": v for k, v in SmgaParams.count(frames, inner, inner_r).items()})
        else:
            out.update({f"cmga.{k}": v for k, v in CmgaParams.count(inner, inner_r).items()})
        return out


def down(x: Tensor, p: AdapterParams) -> Tensor:
    return T.conv1x1(x, T.swapaxes(p.w_down, 0, 1))


def up(x: Tensor, p: AdapterParams) -> Tensor:
    return T.conv1x1(x, T.swapaxes(p.w_up, 0, 1))


def st_adapter(x: Tensor, p: AdapterParams) -> Tensor:
    """x + up(DWConv3D(down(x)))."""
    return x + up(T.depthwise_conv3d(down(x, p), p.inner), p)


def smga_adapter(x: Tensor, p: AdapterParams, return_scores: bool = False):
    """x + up(S-MGA(down(x))) for one video or a stack of videos."""
    if return_scores:
        y, s = smga_forward(down(x, p), p.inner, return_scores=True)
        return x + up(y, p), s
    return x + up(smga_forward(down(x, p), p.inner), p)


def cmga_adapter(ep: EpisodeFeatures, p: AdapterParams, variant: str = FRAMEWISE, return_scores: bool = False):
    """Residual Cmga-Adapter over a whole task."""
    inner = EpisodeFeatures(down(ep.support, p), down(ep.query, p))
    res = cmga_forward(inner, p.inner, variant, return_scores)
    enhanced, scores = res if return_scores else (res, None)
    out = EpisodeFeatures(ep.support + up(enhanced.support, p), ep.query + up(enhanced.query, p))
    return (out, scores) if return_scores else out


@dataclass
class AdapterConfig:
    frames: int = 8
    in_ch: int = 1
    dim: int = 32
    patch: int = 1
    blocks: int = 4
    reduction: int = 4
    r1: int = 4
    r2: int = 4
    early: str = SMGA  # adapter kind after blocks 1..B-1
    last: str = CMGA  # adapter kind after block B
    variant: str = FRAMEWISE


class AdapterModel:
    """Frozen backbone stub with one adapter after every block."""

    def __init__(self, cfg: AdapterConfig, store: ParameterStore):
        if cfg.blocks < 2:
            raise ConfigurationError(f"adapter model needs at least 2 blocks, got {cfg.blocks}")
        self.cfg, self.store = cfg, store
        self.backbone = BackboneStub(store, cfg.in_ch, cfg.dim, cfg.patch, cfg.blocks, frozen=True)
        self.adapters: list[AdapterParams] = []
        for i in range(cfg.blocks):
            kind = cfg.early if i < cfg.blocks - 1 else cfg.last
            r = cfg.r2 if kind == CMGA else cfg.r1
            self.adapters.append(AdapterParams(store, f"adapter{i}", kind, cfg.frames, cfg.dim, cfg.reduction, r))

    @property
    def kinds(self) -> list[str]:
        return [a.kind for a in self.adapters]

    def _video_adapter(self, x: Tensor, a: AdapterParams, return_scores: bool = False):
        if a.kind == ST:
            out = st_adapter(x, a)
            return (out, None) if return_scores else out
        return smga_adapter(x, a, return_scores)

    def video_features(self, pixels: Tensor, return_scores: bool = False):
        """Backbone and every per-video adapter, up to the output of the last block."""
        x = self.backbone.embed(pixels)
        scores = {}
        for i, block in enumerate(self.backbone.blocks):
            x = block(x)
            if i < len(self.backbone.blocks) - 1:
                if return_scores:
                    x, s = self._video_adapter(x, self.adapters[i], True)
                    if s is not None and "self" not in scores:
                        scores["self"] = s
                else:
                    x = self._video_adapter(x, self.adapters[i])
        return (x, scores) if return_scores else x

    def task_features(self, ep: EpisodeFeatures, return_scores: bool = False):
        """The adapter after the last block; task-level when it is a Cmga-Adapter."""
        a = self.adapters[-1]
        scores = {}
        if a.kind == CMGA:
            if return_scores:
                ep, scores["cross"] = cmga_adapter(ep, a, self.cfg.variant, return_scores=True)
            else:
                ep = cmga_adapter(ep, a, self.cfg.variant)
        else:
            ep = EpisodeFeatures(self._video_adapter(ep.support, a), self._video_adapter(ep.query, a))
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

    def backbone_features(self, pixels: Tensor) -> Tensor:
        """Frozen backbone output with every adapter bypassed."""
        x = self.backbone.embed(pixels)
        for block in self.backbone.blocks:
            x = block(x)
        return x


def build_adapter_model(cfg: AdapterConfig, seed: int = 0, store: Optional[ParameterStore] = None) -> AdapterModel:
    return AdapterModel(cfg, store if store is not None else ParameterStore(seed))
