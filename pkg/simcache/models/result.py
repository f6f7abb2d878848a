import enum
import math
from typing import List, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class ServedFrom(str, enum.Enum):
    CACHE = "CACHE"
    BACKEND = "BACKEND"


class Neighbor(BaseModel):
    model_config = ConfigDict(frozen=True)

    id: int = Field(ge=0, lt=2**64)
    distance: float = Field(ge=0.0)

    @field_validator("distance")
    @classmethod
    def _finite(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("distance must be finite")
        return value

    def sort_key(self) -> Tuple[float, int]:
        return (self.distance, self.id)


class SearchResult(BaseModel):
    """Neighbors sorted ascending by distance, plus the tier that served them."""

    model_config = ConfigDict(frozen=True)

    neighbors: Tuple[Neighbor, ...] = ()
    served_from: ServedFrom

    @model_validator(mode="after")
    def _sorted_and_unique(self):
        seen = set()
        previous = -1.0
        for neighbor in self.neighbors:
            if neighbor.distance < previous:
                raise ValueError("neighbors must be sorted ascending by distance")
            if neighbor.id in seen:
                raise ValueError(f"duplicate neighbor id {neighbor.id}")
            seen.add(neighbor.id)
            previous = neighbor.distance
        return self

    @property
    def ids(self) -> List[int]:
        return [n.id for n in self.neighbors]

    @property
    def distances(self) -> List[float]:
        return [n.distance for n in self.neighbors]


def rerank(candidates, k: int) -> List[Neighbor]:
    """
    Merge candidate neighbors: keep the minimum distance per id, sort by
    (distance, id) and truncate to k.
    """
    best = {}
    for neighbor in candidates:
        current = best.get(neighbor.id)
        if current is None or neighbor.distance < current.distance:
            best[neighbor.id] = neighbor
    return sorted(best.values(), key=Neighbor.sort_key)[:k]
