"""Flat ``key = value`` run configuration.

One assignment per line; ``#`` starts a comment. Unknown keys and malformed
values raise :class:`ConfigurationError` naming the field, so typos never pass
silently. Lists (``seeds``) are comma-separated and accept ``a..b`` ranges.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .cmga import FRAMEALL, FRAMEWISE
from .errors import ConfigurationError

MODES = ("ft", "adapter")
VARIANTS = (FRAMEWISE, FRAMEALL)
NUM_SYNTH_CLASSES = 6


@dataclass
class RunConfig:
    mode: str = "ft"
    n_way: int = 5
    k_shot: int = 1
    q_per_class: int = 1
    frames: int = 8
    dim: int = 16
    grid: int = 10  # pixel extent; feature H = W = grid / patch
    patch: int = 1
    r1: int = 4
    r2: int = 4
    seeds: list = field(default_factory=lambda: list(range(10)))
    train_episodes: int = 120
    eval_episodes: int = 300
    lr: float = 1e-2
    smga: bool = True
    cmga: bool = True
    cross_variant: str = FRAMEWISE
    metric: str = "bimhm"
    output_dir: str = "runs"
    # synthetic corpus
    noise: float = 0.05
    square: int = 3
    instances_per_class: int = 30
    data_seed: int = 0
    # adapter mode
    blocks: int = 4
    adapter_reduction: int = 4
    workers: int = 1

    def validate(self) -> "RunConfig":
        def need(ok: bool, key: str, why: str):
            if not ok:
                raise ConfigurationError(f"{key}: {why} (got {getattr(self, key)!r})")

        need(self.mode in MODES, "mode", f"must be one of {MODES}")
        need(self.cross_variant in VARIANTS, "cross_variant", f"must be one of {VARIANTS}")
        for key in ("n_way", "k_shot", "q_per_class", "dim", "grid", "patch", "r1", "r2", "eval_episodes", "workers", "blocks"):
            need(getattr(self, key) >= 1, key, "must be positive")
        need(self.train_episodes >= 0, "train_episodes", "must be non-negative")
        need(self.frames >= 2, "frames", "motion needs at least 2 frames")
        need(self.n_way <= NUM_SYNTH_CLASSES, "n_way", f"synthetic corpus has {NUM_SYNTH_CLASSES} classes")
        need(self.instances_per_class >= self.k_shot + self.q_per_class, "instances_per_class", "fewer than k_shot + q_per_class")
        need(self.grid % self.patch == 0, "grid", f"not divisible by patch {self.patch}")
        need(self.grid // self.patch >= 2, "grid", "feature map must be at least 2x2")
        need(0 < self.square < self.grid, "square", "must lie in (0, grid)")
        need(self.lr > 0, "lr", "must be positive")
        need(self.noise >= 0, "noise", "must be non-negative")
        need(len(self.seeds) > 0, "seeds", "at least one seed")
        inner = self.dim
        if self.mode == "adapter":
            need(self.dim % self.adapter_reduction == 0, "adapter_reduction", f"does not divide dim {self.dim}")
            need(self.blocks >= 2, "blocks", "adapter model needs at least 2 blocks")
            inner = self.dim // self.adapter_reduction
        need(inner % self.r1 == 0, "r1", f"does not divide width {inner}")
        need(inner % self.r2 == 0, "r2", f"does not divide width {inner}")
        return self

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes).validate()


FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_seeds(text: str) -> list[int]:
    seeds: list[int] = []
    for part in text.replace(" ", "").split(","):
        if not part:
            continue
        if ".." in part:
            a, b = part.split("..")
            seeds.extend(range(int(a), int(b) + 1))
        else:
            seeds.append(int(part))
    return seeds


def parse_value(key: str, text: str) -> Any:
    """Convert ``text`` to the type of field ``key``."""
    if key not in FIELDS:
        raise ConfigurationError(f"{key}: unknown key; valid keys are {sorted(FIELDS)}")
    kind = FIELDS[key].type
    try:
        if key == "seeds":
            return _parse_seeds(text)
        if kind == "bool":
            return _parse_bool(text)
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigurationError(f"{key}: {exc}") from None


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    values: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key] = parse_value(key, value)
    return dataclasses.replace(base or RunConfig(), **values).validate()


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigurationError(f"config file not found: {p}")
    return parse_config(p.read_text())


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for key, value in cfg.to_dict().items():
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, list):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
