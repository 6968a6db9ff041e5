"""A thread safe, least recently used mapping of hashable keys to results."""

from __future__ import annotations

from collections import OrderedDict
from threading import Lock
from typing import Callable
from typing import Generic
from typing import Hashable
from typing import Iterator
from typing import TypeVar

from ..exceptions import CacheCapacityValueError

K = TypeVar("K", bound=Hashable)
V = TypeVar("V")


class LRUCache(Generic[K, V]):
    """A bounded cache that evicts the least recently used entry when full.

    Args:
        capacity: The maximum number of entries. Must be at least 1.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise CacheCapacityValueError("cache size must be greater than 1")

        self.capacity = capacity
        self.hits = 0
        self.misses = 0
        self._entries: OrderedDict[K, V] = OrderedDict()
        self._lock = Lock()

    def __repr__(self) -> str:  # pragma: no cover
        return (
            f"<{self.__class__.__name__} capacity={self.capacity} "
            f"size={len(self)} hits={self.hits} misses={self.misses}>"
        )

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key: object) -> bool:
        return key in self._entries

    def __iter__(self) -> Iterator[K]:
        """Iterate keys, most recently used first."""
        return reversed(tuple(self._entries))

    def __getitem__(self, key: K) -> V:
        with self._lock:
            value = self._entries[key]
            self._entries.move_to_end(key)
            return value

    def __setitem__(self, key: K, value: V) -> None:
        with self._lock:
            if key in self._entries:
                self._entries.move_to_end(key)
            elif len(self._entries) == self.capacity:
                self._entries.popitem(last=False)
            self._entries[key] = value

    def get(self, key: K, default: V | None = None) -> V | None:
        """Return the value for _key_ or _default_."""
        try:
            return self[key]
        except KeyError:
            return default

    def get_or_compute(self, key: K, compute: Callable[[], V]) -> V:
        """Return the cached value for _key_, computing and storing it on a miss."""
        try:
            value = self[key]
        except KeyError:
            self.misses += 1
            value = compute()
            self[key] = value
            return value

        self.hits += 1
        return value

    def clear(self) -> None:
        """Remove every entry and reset statistics."""
        with self._lock:
            self._entries.clear()
            self.hits = 0
            self.misses = 0
