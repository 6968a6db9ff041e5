from .cache import LRUCache  # noqa: D104
from .chainmap import ReadOnlyChainMap

__all__ = (
    "LRUCache",
    "ReadOnlyChainMap",
)
