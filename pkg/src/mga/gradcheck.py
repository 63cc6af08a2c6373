"""Central-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable, Iterable, Mapping, Optional, Union

import numpy as np

from .params import ParameterStore
from .tensor import Tensor

Params = Union[ParameterStore, Mapping[str, Tensor], Iterable[Tensor]]


def _named(params: Params) -> list[tuple[str, Tensor]]:
    if isinstance(params, ParameterStore):
        return list(params.trainable().items())
    if isinstance(params, Mapping):
        return list(params.items())
    return [(f"p{i}", t) for i, t in enumerate(params)]


def grad_check(
    f: Callable[[], Tensor],
    params: Params,
    h: float = 1e-3,
    report: Optional[dict] = None,
) -> float:
    """Max over all parameter entries of |analytic - central| / max(1, |central|).

    ``f`` re-evaluates the scalar objective from the current parameter values.
    Pass a dict as ``report`` to receive the worst error per parameter name.
    """
    named = _named(params)
    for _, t in named:
        t.grad = None
    out = f()
    out.backward()
    analytic = {name: (t.grad.copy() if t.grad is not None else np.zeros(t.shape)) for name, t in named}

    worst = 0.0
    for name, t in named:
        flat = t.data.reshape(-1)
        ga = analytic[name].reshape(-1)
        local = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f().item()
            flat[i] = orig - h
            fm = f().item()
            flat[i] = orig
            fd = (fp - fm) / (2.0 * h)
            local = max(local, abs(ga[i] - fd) / max(1.0, abs(fd)))
        if report is not None:
            report[name] = local
        worst = max(worst, local)
    for _, t in named:
        t.grad = None
    return worst
