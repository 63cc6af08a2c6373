"""Episodic few-shot protocol: sampling, pooling, matching, loss, optimization, evaluation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol

import numpy as np

from . import tensor as T
from .cmga import EpisodeFeatures
from .errors import DataError, NumericalError, UsageError
from .params import ParameterStore
from .tensor import Tensor


@dataclass
class VideoDataset:
    clips: np.ndarray  # [n, L, C, G, G]
    labels: np.ndarray  # [n] class ids
    ids: np.ndarray  # [n] instance ids

    def __len__(self) -> int:
        return len(self.labels)

    def classes(self) -> np.ndarray:
        return np.unique(self.labels)


@dataclass
class Episode:
    support_idx: np.ndarray  # dataset rows, class-major: K per episode class
    support_labels: np.ndarray  # episode class index in [0, N)
    query_idx: np.ndarray
    query_labels: np.ndarray
    classes: np.ndarray  # dataset class id of each episode class
    n_way: int
    k_shot: int
    seed: Optional[int] = None


def sample_episode(dataset: VideoDataset, n_way: int, k_shot: int, q_per_class: int, rng: np.random.Generator) -> Episode:
    """Uniform classes, then uniform instances without replacement within each class."""
    classes = dataset.classes()
    if len(classes) < n_way:
        raise DataError(f"dataset has {len(classes)} classes, need {n_way}")
    chosen = rng.choice(classes, size=n_way, replace=False)
    s_idx, s_lab, q_idx, q_lab = [], [], [], []
    for j, cls in enumerate(chosen):
        rows = np.flatnonzero(dataset.labels == cls)
        if len(rows) < k_shot + q_per_class:
            raise DataError(f"class {cls} has {len(rows)} instances, need {k_shot + q_per_class}")
        pick = rng.choice(rows, size=k_shot + q_per_class, replace=False)
        s_idx.extend(pick[:k_shot])
        s_lab.extend([j] * k_shot)
        q_idx.extend(pick[k_shot:])
        q_lab.extend([j] * q_per_class)
    return Episode(
        np.array(s_idx), np.array(s_lab), np.array(q_idx), np.array(q_lab), np.array(chosen), n_way, k_shot
    )


def pool_frames(f: Tensor) -> Tensor:
    """Spatial mean: [..., L, D, H, W] -> [..., L, D]."""
    return T.mean(f, axis=(-2, -1))


# ---------------------------------------------------------------- metrics

MetricFn = Callable[[Tensor, Tensor], Tensor]
METRICS: dict[str, MetricFn] = {}


def register_metric(name: str):
    def deco(fn: MetricFn) -> MetricFn:
        METRICS[name] = fn
        return fn

    return deco


def get_metric(name: str) -> MetricFn:
    try:
        return METRICS[name]
    except KeyError:
        raise UsageError(f"unknown metric '{name}'; registered: {sorted(METRICS)}") from None


def _pair_sq_dist(q: Tensor, s: Tensor) -> Tensor:
    # q [Q, Lq, D], s [S, Ls, D] -> [Q, S, Lq, Ls]
    Q, Lq, D = q.shape
    S, Ls, _ = s.shape
    diff = T.reshape(q, (Q, 1, Lq, 1, D)) - T.reshape(s, (1, S, 1, Ls, D))
    return T.tsum(T.square(diff), axis=-1)


@register_metric("bimhm")
def bimhm(q: Tensor, s: Tensor) -> Tensor:
    """Bidirectional mean of per-frame minimum squared distances, [Q, S]."""
    if q.shape[-1] != s.shape[-1]:
        raise UsageError(f"feature width mismatch: {q.shape} vs {s.shape}")
    d = _pair_sq_dist(q, s)
    return T.mean(T.tmin(d, axis=3), axis=2) + T.mean(T.tmin(d, axis=2), axis=2)


def bimhm_distance(q, s) -> float:
    """Distance between two frame sequences [Lq, D] and [Ls, D]."""
    q, s = T.as_tensor(q), T.as_tensor(s)
    if q.ndim != 2 or s.ndim != 2 or q.shape[1] != s.shape[1]:
        raise UsageError(f"bimhm expects [L, D] inputs with equal D, got {q.shape} and {s.shape}")
    return bimhm(T.reshape(q, (1, *q.shape)), T.reshape(s, (1, *s.shape))).data[0, 0].item()


@dataclass
class MatchResult:
    distances: Tensor  # [Q, N]
    logits: Tensor
    predicted: np.ndarray


def episode_logits(features: EpisodeFeatures, n_way: int, k_shot: int, metric: str | MetricFn = "bimhm") -> MatchResult:
    """Class distance is the mean distance to that class's K support videos."""
    fn = get_metric(metric) if isinstance(metric, str) else metric
    d = fn(pool_frames(features.query), pool_frames(features.support))  # [Q, NK]
    Q = d.shape[0]
    dist = T.mean(T.reshape(d, (Q, n_way, k_shot)), axis=2)
    # argmin returns the lowest class index on ties
    return MatchResult(dist, -dist, np.argmin(dist.data, axis=1))


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    logp = T.log_softmax_rows(logits)
    picked = logp[np.arange(len(labels)), labels]
    return -T.mean(picked)


# ---------------------------------------------------------------- models & optimization


class FewShotModel(Protocol):
    store: ParameterStore

    def features(self, support_px: Tensor, query_px: Tensor, return_scores: bool = False): ...


class Adam:
    """Adam with a constant learning rate over the trainable entries of a store."""

    def __init__(self, store: ParameterStore, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(store.trainable().values())
        self.lr, self.b1, self.b2, self.eps = lr, betas[0], betas[1], eps
        self.m = [np.zeros(p.shape) for p in self.params]
        self.v = [np.zeros(p.shape) for p in self.params]
        self.t = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def episode_tensors(dataset: VideoDataset, ep: Episode) -> tuple[Tensor, Tensor]:
    return Tensor(dataset.clips[ep.support_idx]), Tensor(dataset.clips[ep.query_idx])


def episode_loss(model: FewShotModel, dataset: VideoDataset, ep: Episode, metric="bimhm") -> tuple[Tensor, MatchResult]:
    s, q = episode_tensors(dataset, ep)
    res = episode_logits(model.features(s, q), ep.n_way, ep.k_shot, metric)
    return cross_entropy(res.logits, ep.query_labels), res


def train_episode(model: FewShotModel, dataset: VideoDataset, ep: Episode, optimizer: Adam, metric="bimhm") -> float:
    """One forward/backward pass and one optimizer step; returns the loss."""
    optimizer.zero_grad()
    loss, res = episode_loss(model, dataset, ep, metric)
    value = loss.item()
    if not math.isfinite(value):
        raise NumericalError(f"non-finite loss {value}; distance range [{res.distances.data.min()}, {res.distances.data.max()}]", op="loss")
    loss.backward()
    optimizer.step()
    return value


@dataclass
class EvalResult:
    mean: float
    ci95: float
    per_episode: list = field(default_factory=list)


def _video_bank(model, dataset: VideoDataset, chunk: int = 32) -> Optional[np.ndarray]:
    """Per-video features of the whole dataset when the model separates that stage."""
    if not hasattr(model, "video_features"):
        return None
    out = []
    for start in range(0, len(dataset), chunk):
        out.append(model.video_features(Tensor(dataset.clips[start : start + chunk])).data)
    return np.concatenate(out, axis=0)


def evaluate(
    model: FewShotModel,
    dataset: VideoDataset,
    episodes: int,
    rng: np.random.Generator,
    n_way: int = 5,
    k_shot: int = 1,
    q_per_class: int = 1,
    metric="bimhm",
    capture: Optional[dict] = None,
) -> EvalResult:
    """Mean query accuracy over sampled episodes with a 1.96 * stderr interval.

    Per-video features are computed once for the whole dataset when the model
    exposes ``video_features``/``task_features``; only the task-level stage runs
    per episode. Pass a dict as ``capture`` to receive the first episode and its
    attention scores.
    """
    if episodes < 1:
        raise UsageError("evaluate needs at least one episode")
    accs = []
    with T.no_grad():
        bank = _video_bank(model, dataset)
        for i in range(episodes):
            ep = sample_episode(dataset, n_way, k_shot, q_per_class, rng)
            if capture is not None and i == 0:
                s, q = episode_tensors(dataset, ep)
                feats, scores = model.features(s, q, return_scores=True)
                capture.update(episode=ep, scores=scores)
            elif bank is not None:
                feats = model.task_features(EpisodeFeatures(Tensor(bank[ep.support_idx]), Tensor(bank[ep.query_idx])))
            else:
                feats = model.features(*episode_tensors(dataset, ep))
            res = episode_logits(feats, n_way, k_shot, metric)
            accs.append(float(np.mean(res.predicted == ep.query_labels)))
    arr = np.array(accs)
    ci = 1.96 * arr.std(ddof=1) / math.sqrt(len(arr)) if len(arr) > 1 else 0.0
    return EvalResult(float(arr.mean()), float(ci), accs)
