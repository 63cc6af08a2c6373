"""Seeded training/evaluation runs and their on-disk records.

A run directory holds ``results.txt`` (append-only, one ``key=value`` line per
record), one ``summary-<run>.json`` per record and, when scores were captured,
``attn-<run>.npz`` with the first evaluation episode's attention matrices.
Existing files are never rewritten.
"""

from __future__ import annotations

import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from functools import lru_cache
from pathlib import Path
from typing import Optional

import numpy as np

from .adapters import CMGA, SMGA, ST, AdapterConfig, build_adapter_model
from .config import RunConfig
from .fewshot import Adam, VideoDataset, evaluate, sample_episode, train_episode
from .pipeline import FTConfig, FTModel
from .synth import SynthConfig, make_corpus

TRAIN_STREAM, EVAL_STREAM = 1, 2


def synth_config(cfg: RunConfig) -> SynthConfig:
    return SynthConfig(
        grid=cfg.grid,
        frames=cfg.frames,
        square=cfg.square,
        noise=cfg.noise,
        instances_per_class=cfg.instances_per_class,
        seed=cfg.data_seed,
    )


@lru_cache(maxsize=4)
def _corpus(grid: int, frames: int, square: int, noise: float, instances: int, seed: int) -> tuple[VideoDataset, VideoDataset]:
    return make_corpus(SynthConfig(grid=grid, frames=frames, square=square, noise=noise, instances_per_class=instances, seed=seed))


def corpus_for(cfg: RunConfig) -> tuple[VideoDataset, VideoDataset]:
    return _corpus(cfg.grid, cfg.frames, cfg.square, cfg.noise, cfg.instances_per_class, cfg.data_seed)


def adapter_kinds(cfg: RunConfig) -> tuple[str, str]:
    """(early, last) adapter kinds for the module toggles; ST-Adapter fills disabled slots."""
    early = SMGA if cfg.smga else ST
    return early, CMGA if cfg.cmga else early


def build_model(cfg: RunConfig, seed: int):
    if cfg.mode == "adapter":
        early, last = adapter_kinds(cfg)
        acfg = AdapterConfig(
            frames=cfg.frames,
            dim=cfg.dim,
            patch=cfg.patch,
            blocks=cfg.blocks,
            reduction=cfg.adapter_reduction,
            r1=cfg.r1,
            r2=cfg.r2,
            early=early,
            last=last,
            variant=cfg.cross_variant,
        )
        return build_adapter_model(acfg, seed)
    fcfg = FTConfig(
        frames=cfg.frames, dim=cfg.dim, patch=cfg.patch, r1=cfg.r1, r2=cfg.r2, smga=cfg.smga, cmga=cfg.cmga, variant=cfg.cross_variant
    )
    return FTModel(fcfg, seed=seed)


def stream_rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, stream]))


@dataclass
class SeedResult:
    seed: int
    accuracy: float
    ci95: float
    losses: list = field(default_factory=list)
    train_seconds: float = 0.0
    eval_seconds: float = 0.0
    scores: Optional[dict] = None  # numpy attention matrices of the first eval episode


def _score_arrays(capture: dict, frames: int) -> dict:
    ep = capture["episode"]
    out = {
        "frames": np.array(frames),
        "support_idx": ep.support_idx,
        "query_idx": ep.query_idx,
        "query_labels": ep.query_labels,
        "n_way": np.array(ep.n_way),
        "k_shot": np.array(ep.k_shot),
    }
    for name, s in capture["scores"].items():
        if s is not None:
            out[name] = s.scores.data
    if "cross" in capture["scores"]:
        out["cross_variant"] = np.array(capture["scores"]["cross"].variant)
    return out


def run_seed(cfg: RunConfig, seed: int, capture: bool = False) -> SeedResult:
    """Train ``cfg.train_episodes`` episodes from a fresh init, then evaluate."""
    train, test = corpus_for(cfg)
    model = build_model(cfg, seed)
    opt = Adam(model.store, lr=cfg.lr)
    rng = stream_rng(seed, TRAIN_STREAM)
    t0 = time.perf_counter()
    losses = []
    for _ in range(cfg.train_episodes):
        ep = sample_episode(train, cfg.n_way, cfg.k_shot, cfg.q_per_class, rng)
        losses.append(train_episode(model, train, ep, opt, cfg.metric))
    t1 = time.perf_counter()
    cap: Optional[dict] = {} if capture else None
    res = evaluate(
        model, test, cfg.eval_episodes, stream_rng(seed, EVAL_STREAM), cfg.n_way, cfg.k_shot, cfg.q_per_class, cfg.metric, cap
    )
    t2 = time.perf_counter()
    return SeedResult(seed, res.mean, res.ci95, losses, t1 - t0, t2 - t1, _score_arrays(cap, cfg.frames) if capture else None)


def _run_seed_job(args) -> SeedResult:
    cfg, seed, capture = args
    return run_seed(cfg, seed, capture)


def run_seeds(cfg: RunConfig, capture_first: bool = False) -> list[SeedResult]:
    """Every seed of ``cfg``; parallel across ``cfg.workers`` processes, results in seed order."""
    jobs = [(cfg, s, capture_first and i == 0) for i, s in enumerate(cfg.seeds)]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.workers, len(jobs))) as pool:
            return list(pool.map(_run_seed_job, jobs))
    return [_run_seed_job(j) for j in jobs]


@dataclass
class RunRecord:
    run_id: str
    config: dict
    per_seed: dict  # seed -> accuracy
    mean: float
    ci95: float  # across seeds; the single seed's episode CI when there is one seed
    wall_seconds: float
    timestamp: str
    artifacts: Optional[str] = None

    def line(self) -> str:
        cells = [f"run={self.run_id}", f"timestamp={self.timestamp}"]
        for key, value in self.config.items():
            if isinstance(value, list):
                value = ",".join(str(v) for v in value)
            cells.append(f"{key}={value}")
        cells.append("seed_acc=" + ",".join(f"{s}:{a!r}" for s, a in self.per_seed.items()))
        cells += [f"mean={self.mean!r}", f"ci95={self.ci95!r}", f"wall_seconds={self.wall_seconds:.3f}"]
        return " ".join(cells)


def summarize(results: list[SeedResult]) -> tuple[float, float]:
    accs = np.array([r.accuracy for r in results])
    if len(accs) == 1:
        return float(accs[0]), results[0].ci95
    return float(accs.mean()), float(1.96 * accs.std(ddof=1) / math.sqrt(len(accs)))


def resolve_output_dir(cfg: RunConfig) -> Path:
    return Path(os.environ.get("MGA_OUT") or cfg.output_dir)


def _next_run_id(out: Path) -> str:
    taken = {p.stem.split("-", 1)[1] for p in out.glob("summary-r*.json")}
    n = len(taken) + 1
    while f"r{n:04d}" in taken:
        n += 1
    return f"r{n:04d}"


def write_record(out: Path, cfg: RunConfig, results: list[SeedResult], wall: float) -> RunRecord:
    """Append one line to results.txt and create a fresh summary (and artifact) file."""
    out.mkdir(parents=True, exist_ok=True)
    run_id = _next_run_id(out)
    mean, ci = summarize(results)
    stamp = datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
    rec = RunRecord(run_id, cfg.to_dict(), {r.seed: r.accuracy for r in results}, mean, ci, wall, stamp)
    captured = next((r.scores for r in results if r.scores is not None), None)
    if captured is not None:
        art = out / f"attn-{run_id}.npz"
        with open(art, "xb") as fh:
            np.savez(fh, **captured)
        rec.artifacts = art.name
    summary = asdict(rec)
    summary["per_seed"] = [
        {"seed": r.seed, "accuracy": r.accuracy, "ci95": r.ci95, "final_loss": r.losses[-1] if r.losses else None,
         "train_seconds": r.train_seconds, "eval_seconds": r.eval_seconds}
        for r in results
    ]
    with open(out / f"summary-{run_id}.json", "x") as fh:
        json.dump(summary, fh, indent=2)
    with open(out / "results.txt", "a") as fh:
        fh.write(rec.line() + "\n")
    return rec


def run_experiment(cfg: RunConfig, out_dir=None, capture: bool = True) -> RunRecord:
    out = Path(out_dir) if out_dir is not None else resolve_output_dir(cfg)
    t0 = time.perf_counter()
    results = run_seeds(cfg, capture_first=capture)
    return write_record(out, cfg, results, time.perf_counter() - t0)


ABLATION_CELLS = ((False, False), (True, False), (False, True), (True, True))


def ablation_configs(cfg: RunConfig) -> list[RunConfig]:
    """The four module-toggle cells (smga, cmga), baseline first."""
    return [cfg.replace(smga=s, cmga=c) for s, c in ABLATION_CELLS]


def run_ablation(cfg: RunConfig, out_dir=None, capture: bool = True) -> list[RunRecord]:
    return [run_experiment(c, out_dir, capture) for c in ablation_configs(cfg)]


def parse_results_line(line: str) -> dict[str, str]:
    return dict(cell.split("=", 1) for cell in line.split())
