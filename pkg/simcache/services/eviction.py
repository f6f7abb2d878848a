from abc import ABC, abstractmethod
from collections import OrderedDict
from typing import List


class EvictionPolicy(ABC):
    """Heat ranking over mini-index slots; drives fill targeting, scan order and victim choice."""

    @abstractmethod
    def order(self) -> List[int]:
        """All slots, hottest (MRU) first."""

    @abstractmethod
    def touch(self, slot: int):
        """Mark a slot as most recently used."""

    @abstractmethod
    def coldest(self) -> int:
        """The slot to evict next."""


class LRUPolicy(EvictionPolicy):
    def __init__(self, n_slots: int):
        # Iteration order is LRU -> MRU
        self._slots: "OrderedDict[int, None]" = OrderedDict((slot, None) for slot in reversed(range(n_slots)))

    def order(self) -> List[int]:
        return list(reversed(self._slots))

    def touch(self, slot: int):
        if slot not in self._slots:
            raise KeyError(slot)
        self._slots.move_to_end(slot)

    def coldest(self) -> int:
        return next(iter(self._slots))
