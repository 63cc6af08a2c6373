"""Parameter counting, cross-attention cost benchmarking and attention-map export."""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import tensor as T
from .adapters import CMGA, SMGA, AdapterParams
from .cmga import FRAMEALL, FRAMEWISE, CmgaParams, concat_support, cross_association_frameall, cross_association_framewise
from .cmga import enhance_query, support_values, video_motion
from .errors import ConfigurationError, MissingArtifactError, UsageError
from .params import ParameterStore
from .smga import SmgaParams
from .tensor import Tensor

COMPONENTS = ("smga", "cmga", "adapter-model")


@dataclass
class ParamCount:
    component: str
    itemized: dict  # trainable tensor name -> scalar count
    frozen: int = 0

    @property
    def total(self) -> int:
        return sum(self.itemized.values())


def backbone_count(in_ch: int, dim: int, patch: int, blocks: int) -> dict[str, int]:
    fan_in = in_ch * patch * patch
    out = {"backbone.embed.weight": dim * fan_in, "backbone.embed.bias": dim}
    for i in range(blocks):
        out.update(
            {
                f"backbone.block{i}.fc1.weight": 2 * dim * dim,
                f"backbone.block{i}.fc1.bias": 2 * dim,
                f"backbone.block{i}.fc2.weight": 2 * dim * dim,
                f"backbone.block{i}.fc2.bias": dim,
            }
        )
    return out


def count_parameters(
    component: str,
    dim: int,
    r: int,
    frames: int = 8,
    *,
    r1: Optional[int] = None,
    blocks: int = 4,
    reduction: int = 4,
    in_ch: int = 1,
    patch: int = 1,
    early: str = SMGA,
    last: str = CMGA,
) -> ParamCount:
    """Learnable scalars per named tensor, computed from shapes alone.

    For ``adapter-model`` ``r`` is the Cmga-Adapter factor and ``r1`` (default
    ``r``) the Smga-Adapter factor; the frozen backbone is reported separately.
    """
    if component not in COMPONENTS:
        raise UsageError(f"unknown component '{component}'; choose from {COMPONENTS}")
    if dim < 1 or r < 1 or dim % r and component != "adapter-model":
        raise ConfigurationError(f"width {dim} not divisible by {r}")
    if component == "smga":
        return ParamCount(component, {f"smga.{k}": v for k, v in SmgaParams.count(frames, dim, r).items()})
    if component == "cmga":
        return ParamCount(component, {f"cmga.{k}": v for k, v in CmgaParams.count(dim, r).items()})
    r1 = r if r1 is None else r1
    if blocks < 2 or dim % reduction:
        raise ConfigurationError(f"adapter model needs blocks >= 2 and reduction dividing {dim}")
    items: dict[str, int] = {}
    for i in range(blocks):
        kind = early if i < blocks - 1 else last
        inner_r = r if kind == CMGA else r1
        items.update({f"adapter{i}.{k}": v for k, v in AdapterParams.count(kind, frames, dim, reduction, inner_r).items()})
    return ParamCount(component, items, frozen=sum(backbone_count(in_ch, dim, patch, blocks).values()))


# ---------------------------------------------------------------- cost bench


def score_elements(n_way: int, k_shot: int, frames: int, hw: int, variant: str) -> int:
    """Cross-score entries per query video."""
    framewise = frames * hw * n_way * k_shot * hw
    if variant == FRAMEWISE:
        return framewise
    if variant == FRAMEALL:
        return frames * framewise
    raise UsageError(f"unknown variant '{variant}'")


def bench_cost(
    n_way: int = 5,
    k_shot: int = 1,
    frames: int = 8,
    spatial: tuple[int, int] = (7, 7),
    dim: int = 64,
    r: int = 4,
    variant: str = FRAMEWISE,
    queries: int = 1,
    reps: int = 5,
    seed: int = 0,
) -> dict:
    """Analytic counts per query plus the median wall time of the score-and-attend stage.

    MACs cover the two pre-softmax products (``2 * D/r`` per score entry) and
    the attention-weighted sum over support values (``D`` per entry). Peak live
    floats is the largest simultaneously held set during that stage: both
    pre-softmax parts, the softmax output, support values and the enhanced query.
    """
    h, w = spatial
    hw = h * w
    nk = n_way * k_shot
    d_c = dim // r
    elems = score_elements(n_way, k_shot, frames, hw, variant)
    macs = elems * (2 * d_c + dim)
    peak = 3 * elems + frames * nk * hw * dim + frames * hw * dim
    store = ParameterStore(seed)
    p = CmgaParams(store, "cmga", dim, r)
    rng = np.random.default_rng(seed)
    support = Tensor(rng.normal(size=(nk, frames, dim, h, w)))
    query = Tensor(rng.normal(size=(queries, frames, dim, h, w)))
    fn = cross_association_framewise if variant == FRAMEWISE else cross_association_frameall
    times = []
    with T.no_grad():
        sb, sf = video_motion(support, p)
        qb, qf = video_motion(query, p)
        sb, sf = concat_support(sb), concat_support(sf)
        values = support_values(support, p)
        for _ in range(max(1, reps)):
            t0 = time.perf_counter()
            c = fn(qb, qf, sb, sf, d_c, components=False)
            enhance_query(query, c, values, p)
            times.append(time.perf_counter() - t0)
    return {
        "variant": variant,
        "n_way": n_way,
        "k_shot": k_shot,
        "frames": frames,
        "hw": hw,
        "dim": dim,
        "r": r,
        "score_elements": elems,
        "macs": macs,
        "peak_live_floats": peak,
        "wall_seconds": float(np.median(times)) / queries,
        "reps": len(times),
    }


# ---------------------------------------------------------------- attention export


def normalize_u8(m: np.ndarray) -> np.ndarray:
    """Min-max to 0..255 per matrix; an all-equal matrix maps to 0."""
    lo, hi = float(m.min()), float(m.max())
    if hi == lo:
        return np.zeros(m.shape, dtype=np.uint8)
    return np.rint((m - lo) * (255.0 / (hi - lo))).astype(np.uint8)


def write_pgm(path, m: np.ndarray) -> None:
    """Binary 8-bit grayscale PGM (P5); rows are matrix rows."""
    img = normalize_u8(np.asarray(m, dtype=np.float64))
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5" or len(parts) < 4:
        raise UsageError(f"{path}: not a binary PGM")
    w, h = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8, count=w * h).reshape(h, w)


def write_csv(path, m: np.ndarray) -> None:
    # 17 significant digits round-trip float64 exactly
    np.savetxt(path, np.asarray(m, dtype=np.float64), delimiter=",", fmt="%.17g")


def read_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=2)


def find_artifact(run_dir, run_id: Optional[str] = None) -> Path:
    run_dir = Path(run_dir)
    if run_id is not None:
        path = run_dir / f"attn-{run_id}.npz"
        if not path.is_file():
            raise MissingArtifactError(f"no attention artifact {path.name} in {run_dir}")
        return path
    found = sorted(run_dir.glob("attn-r*.npz"))
    if not found:
        raise MissingArtifactError(f"no attention artifacts in {run_dir}")
    return found[-1]


def select_matrix(art: dict, which: str, frame: int, query: int) -> np.ndarray:
    """One 2-D score matrix out of a captured episode."""
    if which not in ("self", "cross"):
        raise UsageError(f"which must be 'self' or 'cross', got '{which}'")
    if which not in art:
        raise MissingArtifactError(f"run saved no {which}-attention scores (module disabled)")
    scores = art[which]
    n_query = len(art["query_idx"])
    if not 0 <= query < n_query:
        raise UsageError(f"query {query} out of range [0, {n_query})")
    if which == "self":
        # self scores cover support then query videos: [V, L, HW, HW]
        vid = len(art["support_idx"]) + query
        L = scores.shape[1]
        if not 0 <= frame < L:
            raise UsageError(f"frame {frame} out of range [0, {L})")
        return scores[vid, frame]
    if scores.ndim == 4:  # frame-wise [Q, L, HW, NK*HW]
        L = scores.shape[1]
        if not 0 <= frame < L:
            raise UsageError(f"frame {frame} out of range [0, {L})")
        return scores[query, frame]
    # frame-all [Q, L*HW, L*NK*HW]: the rows of query frame ``frame``
    if "frames" not in art:
        raise MissingArtifactError("frame-all artifact lacks a frame count")
    L = int(art["frames"])
    hw = scores.shape[1] // L
    if not 0 <= frame < L:
        raise UsageError(f"frame {frame} out of range [0, {L})")
    return scores[query, frame * hw : (frame + 1) * hw]


def export_attention(run_dir, which: str, frame: int, query: int, run_id: Optional[str] = None, out_dir=None) -> list[Path]:
    """Write one score matrix as CSV and PGM; returns both paths."""
    path = find_artifact(run_dir, run_id)
    with np.load(path) as npz:
        art = {k: npz[k] for k in npz.files}
    m = select_matrix(art, which, frame, query)
    out = Path(out_dir) if out_dir is not None else Path(run_dir) / "attention"
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{path.stem}_{which}_ep0_q{query}_f{frame}"
    csv_path, pgm_path = out / f"{stem}.csv", out / f"{stem}.pgm"
    write_csv(csv_path, m)
    write_pgm(pgm_path, m)
    return [csv_path, pgm_path]
