"""A read-only view over layered configuration mappings."""

from __future__ import annotations

from collections import deque
from typing import Any
from typing import Iterator
from typing import Mapping


class ReadOnlyChainMap(Mapping[str, Any]):
    """Look keys up in each of _maps_ in turn, front to back.

    Configuration layers are pushed with the highest priority first, so
    command line overrides shadow file values, which shadow preset defaults.
    """

    def __init__(self, *maps: Mapping[str, Any]):
        self._maps = deque(maps)

    def __getitem__(self, key: str) -> Any:
        for mapping in self._maps:
            if key in mapping:
                return mapping[key]
        raise KeyError(key)

    def __iter__(self) -> Iterator[str]:
        seen: set[str] = set()
        for mapping in self._maps:
            for key in mapping:
                if key not in seen:
                    seen.add(key)
                    yield key

    def __len__(self) -> int:
        return sum(1 for _ in self)

    def size(self) -> int:
        """Return the number of layers in the chain."""
        return len(self._maps)

    def push(self, layer: Mapping[str, Any]) -> None:
        """Add a layer to the front of the chain, shadowing existing keys."""
        self._maps.appendleft(layer)

    def pop(self) -> Mapping[str, Any]:
        """Remove and return the front layer."""
        return self._maps.popleft()

    def source_of(self, key: str) -> int:
        """Return the index of the layer that supplies _key_."""
        for i, mapping in enumerate(self._maps):
            if key in mapping:
                return i
        raise KeyError(key)

    def flatten(self) -> dict[str, Any]:
        """Return a plain dict with every key resolved."""
        return {key: self[key] for key in self}
