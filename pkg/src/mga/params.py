"""Named, seeded parameter storage."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from .errors import UsageError
from .tensor import Tensor


class ParameterStore:
    """Ordered map from name to learnable :class:`Tensor`.

    Initializers draw from a single generator seeded at construction, in
    registration order, so rebuilding a model with the same seed reproduces
    every value bit for bit.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self._rng = np.random.default_rng(self.seed)
        self._entries: dict[str, Tensor] = {}

    def add(self, name: str, value, trainable: bool = True) -> Tensor:
        if name in self._entries:
            raise UsageError(f"parameter '{name}' already registered")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=trainable)
        self._entries[name] = t
        return t

    def kaiming(self, name: str, shape: tuple, fan_in: int, trainable: bool = True) -> Tensor:
        # kaiming_uniform with a=sqrt(5): bound = sqrt(6 / ((1 + a^2) fan_in)) = 1/sqrt(fan_in)
        bound = 1.0 / math.sqrt(fan_in)
        return self.add(name, self._rng.uniform(-bound, bound, size=shape), trainable)

    def bias(self, name: str, n: int, fan_in: int, trainable: bool = True) -> Tensor:
        bound = 1.0 / math.sqrt(fan_in)
        return self.add(name, self._rng.uniform(-bound, bound, size=(n,)), trainable)

    def zeros(self, name: str, shape: tuple, trainable: bool = True) -> Tensor:
        return self.add(name, np.zeros(shape), trainable)

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def items(self):
        return self._entries.items()

    def trainable(self) -> dict[str, Tensor]:
        return {k: v for k, v in self._entries.items() if v.requires_grad}

    def frozen(self) -> dict[str, Tensor]:
        return {k: v for k, v in self._entries.items() if not v.requires_grad}

    def freeze(self, prefix: str = "") -> None:
        for k, v in self._entries.items():
            if k.startswith(prefix):
                v.requires_grad = False
                v.grad = None

    def zero_grad(self) -> None:
        for v in self._entries.values():
            v.grad = None

    def num_params(self, trainable_only: bool = False) -> int:
        return sum(v.size for v in self._entries.values() if v.requires_grad or not trainable_only)

    def itemized(self, prefix: str = "") -> dict[str, int]:
        return {k: v.size for k, v in self._entries.items() if k.startswith(prefix)}

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self._entries.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for k, arr in state.items():
            if self._entries[k].shape != arr.shape:
                raise UsageError(f"shape mismatch for '{k}': {self._entries[k].shape} vs {arr.shape}")
            self._entries[k].data = np.array(arr, dtype=np.float64)
