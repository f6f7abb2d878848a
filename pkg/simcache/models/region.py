from typing import Sequence, Tuple

from pydantic import BaseModel, ConfigDict, Field

MAX_KEY_SPACE = 2**128


class RegionKey(BaseModel):
    """
    Packed bucket digits of a projected query. Digit i (the bucket index of
    reduced dimension i) is stored at weight n_buckets**i.
    """

    model_config = ConfigDict(frozen=True)

    packed: int = Field(ge=0, lt=MAX_KEY_SPACE)

    @classmethod
    def from_digits(cls, digits: Sequence[int], n_buckets: int) -> "RegionKey":
        packed = 0
        weight = 1
        for digit in digits:
            if not 0 <= digit < n_buckets:
                raise ValueError(f"digit {digit} outside [0, {n_buckets - 1}]")
            packed += int(digit) * weight
            weight *= n_buckets
        return cls(packed=packed)

    def digits(self, n_buckets: int, d_reduced: int) -> Tuple[int, ...]:
        out = []
        rest = self.packed
        for _ in range(d_reduced):
            rest, digit = divmod(rest, n_buckets)
            out.append(digit)
        return tuple(out)
