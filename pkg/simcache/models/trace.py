from typing import Iterator, List

import numpy as np
from pydantic import BaseModel, ConfigDict, Field


class TraceEntry(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    window_step: int = Field(ge=0, lt=2**32)
    base_query_id: int = Field(ge=0, lt=2**32)
    query: np.ndarray


class WorkloadTrace:
    """Ordered replay log of perturbed queries, grouped by window step."""

    def __init__(self, entries: List[TraceEntry], dim: int):
        previous = 0
        for entry in entries:
            if entry.window_step < previous:
                raise ValueError("window_step must be non-decreasing across the trace")
            previous = entry.window_step
        self.entries = list(entries)
        self.dim = dim

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[TraceEntry]:
        return iter(self.entries)

    def __getitem__(self, position: int) -> TraceEntry:
        return self.entries[position]

    @property
    def n_steps(self) -> int:
        return len({e.window_step for e in self.entries})

    def steps(self) -> Iterator[List[int]]:
        """Yield the trace positions of each window step, in order."""
        current: List[int] = []
        step = None
        for position, entry in enumerate(self.entries):
            if step is not None and entry.window_step != step:
                yield current
                current = []
            step = entry.window_step
            current.append(position)
        if current:
            yield current

    def queries(self) -> np.ndarray:
        if not self.entries:
            return np.empty((0, self.dim), dtype=np.float32)
        return np.stack([e.query for e in self.entries]).astype(np.float32)
