"""Tests for the LRU cache and the layered configuration map."""

from __future__ import annotations

import pytest
from dyvm.exceptions import CacheCapacityValueError
from dyvm.utils import LRUCache
from dyvm.utils import ReadOnlyChainMap


def test_cache_capacity_must_be_positive() -> None:
    with pytest.raises(CacheCapacityValueError):
        LRUCache(0)


def test_cache_evicts_least_recently_used() -> None:
    cache: LRUCache[str, int] = LRUCache(2)
    cache["a"] = 1
    cache["b"] = 2
    assert cache["a"] == 1
    cache["c"] = 3
    assert "b" not in cache
    assert list(cache) == ["c", "a"]
    assert len(cache) == 2


def test_cache_overwrite_does_not_evict() -> None:
    cache: LRUCache[str, int] = LRUCache(2)
    cache["a"] = 1
    cache["b"] = 2
    cache["a"] = 10
    assert list(cache) == ["a", "b"]
    assert cache.get("a") == 10
    assert cache.get("z") is None
    assert cache.get("z", 5) == 5


def test_get_or_compute_counts_hits_and_misses() -> None:
    cache: LRUCache[int, int] = LRUCache(4)
    calls: list[int] = []

    def compute() -> int:
        calls.append(1)
        return 42

    assert cache.get_or_compute(1, compute) == 42
    assert cache.get_or_compute(1, compute) == 42
    assert len(calls) == 1
    assert (cache.hits, cache.misses) == (1, 1)

    cache.clear()
    assert len(cache) == 0
    assert (cache.hits, cache.misses) == (0, 0)


def test_chain_map_front_layer_shadows() -> None:
    layers = ReadOnlyChainMap({"a": 1, "b": 2}, {"b": 3, "c": 4})
    assert layers["b"] == 2
    assert layers["c"] == 4
    assert list(layers) == ["a", "b", "c"]
    assert len(layers) == 3
    assert layers.source_of("c") == 1
    with pytest.raises(KeyError):
        layers["d"]
    with pytest.raises(KeyError):
        layers.source_of("d")


def test_chain_map_push_and_pop() -> None:
    layers = ReadOnlyChainMap({"a": 1})
    layers.push({"a": 2})
    assert layers.size() == 2
    assert layers["a"] == 2
    assert layers.flatten() == {"a": 2}
    assert layers.pop() == {"a": 2}
    assert layers["a"] == 1
