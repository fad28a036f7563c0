"""Named parameter storage and initialisers."""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from .numerics import Tensor


class ParamStore(OrderedDict):
    """Ordered mapping ``name -> Tensor`` of trainable leaves.

    Insertion order is the canonical order used by the optimizer and the
    checkpoint writer, so it must not depend on anything but the config.
    """

    def add(self, name: str, value, requires_grad: bool = True) -> Tensor:
        if name in self:
            raise KeyError(f"duplicate parameter '{name}'")
        t = Tensor(value, requires_grad=requires_grad, name=name)
        self[name] = t
        return t

    def zero_grad(self) -> None:
        for t in self.values():
            t.grad = None

    def grads(self) -> dict:
        """Gradient view; parameters the loss never touched map to zeros."""
        return {k: (np.zeros_like(t.data) if t.grad is None else t.grad) for k, t in self.items()}

    def arrays(self) -> dict:
        return {k: t.data.copy() for k, t in self.items()}

    def load_arrays(self, arrays: dict) -> None:
        missing = set(self) - set(arrays)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for k, t in self.items():
            a = np.asarray(arrays[k], dtype=np.float64)
            if a.shape != t.shape:
                raise ValueError(f"{k}: shape {a.shape} != {t.shape}")
            t.data = a.copy()

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for k, t in self.items():
            out.add(k, t.data.copy(), t.requires_grad)
        return out

    def num_values(self) -> int:
        return int(sum(t.size for t in self.values()))

    def prefixed(self, prefix: str) -> dict:
        """Sub-view of parameters whose name starts with ``prefix + '.'``."""
        p = prefix + "."
        return {k[len(p):]: t for k, t in self.items() if k.startswith(p)}


def uniform_fan_in(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)
