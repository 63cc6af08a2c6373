"""Seeded synthetic motion clips and the MGAF feature-file format.

Each class is a motion program for a bright square on a noisy background, so
classes differ in how things move and never in how they look.

Per-clip randomness comes from ``numpy.random.Generator(PCG64)`` keyed by a
``SeedSequence`` of ``(seed, split, class_id, instance)``; both are specified
bit-for-bit by numpy and identical across platforms.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import FormatError, UsageError
from .fewshot import VideoDataset

DIRECTIONS = {
    "up": (-1, 0),
    "down": (1, 0),
    "left": (0, -1),
    "right": (0, 1),
    "diag+": (1, 1),
    "diag-": (-1, 1),
}


@dataclass(frozen=True)
class MotionProgram:
    direction: str
    speed: int = 1
    reverse: bool = False  # flip direction at mid-clip

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise UsageError(f"unknown direction '{self.direction}'")
        if self.speed not in (1, 2):
            raise UsageError(f"speed must be 1 or 2, got {self.speed}")

    def offsets(self, frames: int) -> np.ndarray:
        """Cumulative (row, col) displacement at each frame, [L, 2]."""
        dy, dx = DIRECTIONS[self.direction]
        steps = np.zeros((frames, 2), dtype=np.int64)
        for t in range(1, frames):
            sign = -1 if self.reverse and t > frames // 2 else 1
            steps[t] = steps[t - 1] + sign * self.speed * np.array([dy, dx])
        return steps


DEFAULT_PROGRAMS = tuple(MotionProgram(d) for d in DIRECTIONS)


@dataclass
class SynthConfig:
    grid: int = 10
    frames: int = 8
    square: int = 3
    programs: Sequence[MotionProgram] = field(default_factory=lambda: DEFAULT_PROGRAMS)
    noise: float = 0.05
    background: float = 0.1
    foreground: float = 0.9
    instances_per_class: int = 40
    seed: int = 0

    def __post_init__(self):
        if len(set(self.programs)) != len(self.programs):
            raise UsageError("class programs must be pairwise distinct")
        if self.square >= self.grid:
            raise UsageError("square must be smaller than the grid")


def reflect(pos: np.ndarray, hi: int) -> np.ndarray:
    """Fold integer positions into [0, hi] by mirror reflection at both walls."""
    if hi == 0:
        return np.zeros_like(pos)
    period = 2 * hi
    p = np.mod(pos, period)
    return np.where(p > hi, period - p, p)


def clip_rng(seed: int, class_id: int, instance: int, split: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, split, class_id, instance])))


def trajectory(cfg: SynthConfig, class_id: int, rng: np.random.Generator) -> np.ndarray:
    """Top-left corner of the square in every frame, [L, 2]."""
    off = cfg.programs[class_id].offsets(cfg.frames)
    hi = cfg.grid - cfg.square
    start = np.empty(2, dtype=np.int64)
    for ax in range(2):
        lo_ok, hi_ok = -off[:, ax].min(), hi - off[:, ax].max()
        # prefer starts that never touch a wall; otherwise reflection keeps it in bounds
        start[ax] = rng.integers(lo_ok, hi_ok + 1) if lo_ok <= hi_ok else rng.integers(0, hi + 1)
    return reflect(start + off, hi)


def generate_video(cfg: SynthConfig, class_id: int, rng: np.random.Generator) -> np.ndarray:
    """Pixel clip [L, 1, G, G] with values in [0, 1]."""
    if not 0 <= class_id < len(cfg.programs):
        raise UsageError(f"class id {class_id} out of range [0, {len(cfg.programs)})")
    pos = trajectory(cfg, class_id, rng)
    G, s = cfg.grid, cfg.square
    clip = np.full((cfg.frames, 1, G, G), cfg.background)
    for t, (y, x) in enumerate(pos):
        clip[t, 0, y : y + s, x : x + s] = cfg.foreground
    if cfg.noise > 0:
        clip = clip + rng.normal(0.0, cfg.noise, size=clip.shape)
    return np.clip(clip, 0.0, 1.0)


def make_split(cfg: SynthConfig, split: int) -> VideoDataset:
    n = cfg.instances_per_class
    clips, labels, ids = [], [], []
    for c in range(len(cfg.programs)):
        for i in range(n):
            clips.append(generate_video(cfg, c, clip_rng(cfg.seed, c, i, split)))
            labels.append(c)
            ids.append((split * len(cfg.programs) + c) * n + i)
    return VideoDataset(np.stack(clips), np.array(labels), np.array(ids))


def make_corpus(cfg: SynthConfig) -> tuple[VideoDataset, VideoDataset]:
    """Disjoint train and test instance sets over the same classes."""
    return make_split(cfg, 0), make_split(cfg, 1)


# ---------------------------------------------------------------- MGAF files

MAGIC = b"MGAF"
VERSION = 1
MAX_DIMS = 8


def encode_features(array: np.ndarray) -> bytes:
    a = np.asarray(array)
    if a.ndim > MAX_DIMS or a.ndim == 0:
        raise UsageError(f"feature files hold 1..{MAX_DIMS} dims, got {a.ndim}")
    header = MAGIC + struct.pack("<HB", VERSION, a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
    body = header + a.astype("<f4").tobytes(order="C")
    return body + struct.pack("<I", zlib.crc32(body))


def decode_features(buf: bytes) -> np.ndarray:
    if len(buf) < 7:
        raise FormatError("truncated header", len(buf))
    if buf[:4] != MAGIC:
        raise FormatError(f"bad magic {buf[:4]!r}", 0)
    version, ndim = struct.unpack_from("<HB", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    if not 1 <= ndim <= MAX_DIMS:
        raise FormatError(f"invalid dimension count {ndim}", 6)
    end_dims = 7 + 4 * ndim
    if len(buf) < end_dims:
        raise FormatError("truncated extents", len(buf))
    shape = struct.unpack_from(f"<{ndim}I", buf, 7)
    n = int(np.prod(shape))
    end_payload = end_dims + 4 * n
    if len(buf) < end_payload + 4:
        raise FormatError(f"truncated payload: need {end_payload + 4} bytes, have {len(buf)}", len(buf))
    if len(buf) > end_payload + 4:
        raise FormatError("trailing bytes after checksum", end_payload + 4)
    (crc,) = struct.unpack_from("<I", buf, end_payload)
    if zlib.crc32(buf[:end_payload]) != crc:
        raise FormatError("CRC mismatch", end_payload)
    return np.frombuffer(buf, dtype="<f4", count=n, offset=end_dims).reshape(shape).astype(np.float32)


def save_features(path, array: np.ndarray) -> None:
    Path(path).write_bytes(encode_features(array))


def load_features(path) -> np.ndarray:
    return decode_features(Path(path).read_bytes())


def read_extents(path) -> tuple:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise FormatError(f"bad magic {buf[:4]!r}", 0)
    ndim = buf[6]
    return struct.unpack_from(f"<{ndim}I", buf, 7)


def write_corpus(cfg: SynthConfig, out_dir) -> Path:
    """Write every clip as an MGAF file plus a tab-separated manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    for split_name, ds in zip(("train", "test"), make_corpus(cfg)):
        (out / split_name).mkdir(exist_ok=True)
        for clip, label, iid in zip(ds.clips, ds.labels, ds.ids):
            rel = Path(split_name) / f"{iid:06d}.mgaf"
            save_features(out / rel, clip)
            lines.append(f"{iid}\t{label}\t{rel.as_posix()}")
    manifest = out / "manifest.tsv"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def read_manifest(path) -> list[tuple[int, int, str]]:
    rows = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            iid, cls, rel = line.split("\t")
            rows.append((int(iid), int(cls), rel))
    return rows
