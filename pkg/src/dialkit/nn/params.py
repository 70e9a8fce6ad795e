"""Named parameter collections and their initialisation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from ..errors import ContractError, DimensionError
from .rng import Rng
from .tensor import Tensor

FORMAT_VERSION = 1
INIT_KINDS = ("truncated-normal", "uniform", "zeros", "ones")


@dataclass(frozen=True)
class ParamSpec:
    name: str
    shape: tuple
    init: str = "truncated-normal"
    std: float = 0.02
    fan_in: int | None = None

    def __post_init__(self):
        if self.init not in INIT_KINDS:
            raise ContractError(f"{self.name}: unknown init kind {self.init!r}")
        if not self.shape or any(int(d) <= 0 for d in self.shape):
            raise ContractError(f"{self.name}: shape must be positive, got {self.shape}")


class ParamStore:
    """Ordered (lexicographic) map from parameter name to Tensor."""

    def __init__(self, entries: dict | None = None, version: int = FORMAT_VERSION):
        self._entries: dict[str, Tensor] = {}
        self.version = version
        for name, value in (entries or {}).items():
            self[name] = value

    def __setitem__(self, name: str, value):
        if not isinstance(value, Tensor):
            value = Tensor(np.ascontiguousarray(value, dtype=np.float32), requires_grad=True)
        self._entries[name] = value

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._entries[name]
        except KeyError:
            raise ContractError(f"no parameter named {name!r}") from None

    def __contains__(self, name):
        return name in self._entries

    def __len__(self):
        return len(self._entries)

    def __iter__(self) -> Iterator[str]:
        return iter(sorted(self._entries))

    def names(self):
        return sorted(self._entries)

    def items(self):
        return [(n, self._entries[n]) for n in self.names()]

    def shapes(self):
        return {n: t.shape for n, t in self.items()}

    def num_values(self) -> int:
        return sum(t.data.size for _, t in self.items())

    def zero_grad(self):
        for t in self._entries.values():
            t.grad = None

    def copy(self, dtype=None) -> "ParamStore":
        out = ParamStore(version=self.version)
        for n, t in self.items():
            data = t.data.astype(dtype or t.data.dtype, copy=True)
            out._entries[n] = Tensor(data, requires_grad=True)
        return out

    def subset(self, prefix: str) -> "ParamStore":
        out = ParamStore(version=self.version)
        for n, t in self.items():
            if n.startswith(prefix):
                out._entries[n] = t
        return out

    def load_from(self, other: "ParamStore", prefix: str = ""):
        """Overwrite values of every ``prefix``-named entry with ``other``'s."""
        for n in self.names():
            if not n.startswith(prefix):
                continue
            if n not in other:
                raise ContractError(f"source store lacks {n!r}")
            src = other[n]
            if src.shape != self[n].shape:
                raise DimensionError("load", self[n].shape, src.shape, detail=n)
            self._entries[n] = Tensor(src.data.astype(self[n].dtype, copy=True), requires_grad=True)

    def bitwise_equal(self, other: "ParamStore") -> bool:
        if self.names() != other.names():
            return False
        return all(a.data.dtype == b.data.dtype and a.data.tobytes() == b.data.tobytes()
                   for (_, a), (_, b) in zip(self.items(), other.items()))


def init_params(specs: Iterable[ParamSpec], rng: Rng) -> ParamStore:
    """Create a store from ``specs``; each tensor draws from its own named
    stream so the values depend only on (seed, name, shape, init)."""
    store = ParamStore()
    for spec in specs:
        if spec.name in store:
            raise ContractError(f"duplicate parameter name {spec.name!r}")
        shape = tuple(int(d) for d in spec.shape)
        sub = rng.child(spec.name)
        if spec.init == "zeros":
            data = np.zeros(shape)
        elif spec.init == "ones":
            data = np.ones(shape)
        elif spec.init == "truncated-normal":
            data = sub.truncated_normal(spec.std, shape)
        else:
            fan_in = spec.fan_in or shape[0]
            bound = 1.0 / np.sqrt(fan_in)
            data = sub.uniform(-bound, bound, shape)
        store[spec.name] = Tensor(data.astype(np.float32), requires_grad=True)
    return store
