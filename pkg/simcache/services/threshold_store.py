"""
Region-keyed distance thresholds.

Queries are projected onto a few principal components and bucketed per
reduced dimension; the bucket digits form a RegionKey. For every observed
(k, region) the store keeps an exponential moving average of the backend's
k-th neighbor distance, and a cache candidate list is a hit when its k-th
distance is within (1 + D) of that average.
"""
import logging
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np

from simcache.exceptions import ConfigError, DimensionMismatchError, VectorFormatError
from simcache.models.metric import as_vector
from simcache.models.region import MAX_KEY_SPACE, RegionKey

logger = logging.getLogger(__name__)

PROJECTOR_MAGIC = b"QVPJ"
PROJECTOR_VERSION = 1
_HEADER = struct.Struct("<4sIIII")
ORTHONORMAL_TOLERANCE = 1e-4


class Projector:
    """PCA rows plus equal-width bucket bounds for each reduced dimension."""

    def __init__(self, matrix, bucket_min, bucket_width, n_buckets: int):
        matrix = np.asarray(matrix, dtype=np.float32)
        if matrix.ndim != 2:
            raise ConfigError(f"projector matrix must be 2-d, got shape {matrix.shape}", fields=["matrix"])
        d_reduced, dim_in = matrix.shape
        bucket_min = np.asarray(bucket_min, dtype=np.float32).reshape(-1)
        bucket_width = np.asarray(bucket_width, dtype=np.float32).reshape(-1)

        if n_buckets <= 0:
            raise ConfigError("n_buckets must be positive", fields=["n_buckets"])
        if n_buckets ** d_reduced > MAX_KEY_SPACE:
            raise ConfigError(
                f"n_buckets^d_reduced = {n_buckets}^{d_reduced} exceeds the 128-bit key space",
                fields=["n_buckets", "d_reduced"],
            )
        if bucket_min.shape[0] != d_reduced or bucket_width.shape[0] != d_reduced:
            raise ConfigError(
                f"bucket bounds must have {d_reduced} entries", fields=["bucket_min", "bucket_width"]
            )
        if not np.all(bucket_width > 0):
            raise ConfigError("bucket_width entries must be positive", fields=["bucket_width"])
        gram = matrix.astype(np.float64) @ matrix.astype(np.float64).T
        if np.max(np.abs(gram - np.eye(d_reduced))) > ORTHONORMAL_TOLERANCE:
            raise ConfigError("projector rows must be orthonormal", fields=["matrix"])

        self.matrix = matrix
        self.bucket_min = bucket_min
        self.bucket_width = bucket_width
        self.n_buckets = int(n_buckets)

    @property
    def dim_in(self) -> int:
        return int(self.matrix.shape[1])

    @property
    def d_reduced(self) -> int:
        return int(self.matrix.shape[0])

    def project(self, query) -> np.ndarray:
        q = as_vector(query)
        if q.shape[0] != self.dim_in:
            raise DimensionMismatchError(self.dim_in, q.shape[0], what="query")
        return self.matrix.astype(np.float64) @ q.astype(np.float64)

    def digits(self, query) -> Tuple[int, ...]:
        y = self.project(query)
        raw = np.floor((y - self.bucket_min) / self.bucket_width)
        return tuple(int(d) for d in np.clip(raw, 0, self.n_buckets - 1))

    def to_bytes(self) -> bytes:
        header = _HEADER.pack(PROJECTOR_MAGIC, PROJECTOR_VERSION, self.dim_in, self.d_reduced, self.n_buckets)
        body = (
            self.matrix.astype("<f4").tobytes()
            + self.bucket_min.astype("<f4").tobytes()
            + self.bucket_width.astype("<f4").tobytes()
        )
        return header + body

    @classmethod
    def from_bytes(cls, data: bytes, path: str = "<bytes>") -> "Projector":
        if len(data) < _HEADER.size:
            raise VectorFormatError(path, 0, "truncated projector header")
        magic, version, dim_in, d_reduced, n_buckets = _HEADER.unpack_from(data, 0)
        if magic != PROJECTOR_MAGIC:
            raise VectorFormatError(path, 0, f"bad magic {magic!r}")
        if version != PROJECTOR_VERSION:
            raise VectorFormatError(path, 4, f"unsupported projector version {version}")
        n_floats = d_reduced * dim_in + 2 * d_reduced
        expected = _HEADER.size + 4 * n_floats
        if len(data) != expected:
            raise VectorFormatError(path, min(len(data), expected), f"expected {expected} bytes, got {len(data)}")
        floats = np.frombuffer(data, dtype="<f4", count=n_floats, offset=_HEADER.size)
        split = d_reduced * dim_in
        return cls(
            matrix=floats[:split].reshape(d_reduced, dim_in),
            bucket_min=floats[split:split + d_reduced],
            bucket_width=floats[split + d_reduced:],
            n_buckets=n_buckets,
        )

    def save(self, path: Union[str, Path]):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Projector":
        return cls.from_bytes(Path(path).read_bytes(), path=str(path))

    @classmethod
    def identity(cls, dim: int, bucket_min, bucket_width, n_buckets: int) -> "Projector":
        return cls(np.eye(dim, dtype=np.float32), bucket_min, bucket_width, n_buckets)

    def __repr__(self) -> str:
        return f"Projector(dim_in={self.dim_in}, d_reduced={self.d_reduced}, n_buckets={self.n_buckets})"


def compute_region_key(projector: Projector, query) -> RegionKey:
    return RegionKey.from_digits(projector.digits(query), projector.n_buckets)


class ThresholdStore:
    def __init__(
        self,
        projector: Projector,
        adaptivity_rate: float = 0.9,
        deviation_factor: float = 0.1,
        max_regions: Optional[int] = None,
    ):
        if not 0.0 <= adaptivity_rate <= 1.0:
            raise ConfigError("adaptivity_rate must be in [0, 1]", fields=["adaptivity_rate"])
        if deviation_factor < 0:
            raise ConfigError("deviation_factor must be non-negative", fields=["deviation_factor"])
        if max_regions is not None and max_regions <= 0:
            raise ConfigError("max_regions must be positive", fields=["max_regions"])
        self.projector = projector
        self.adaptivity_rate = adaptivity_rate
        self.deviation_factor = deviation_factor
        self.max_regions = max_regions
        # Iteration order is least -> most recently updated
        self._table: "OrderedDict[Tuple[int, int], float]" = OrderedDict()
        self.evicted = 0

    def region_key(self, query) -> RegionKey:
        return compute_region_key(self.projector, query)

    def lookup_threshold(self, k: int, key: RegionKey) -> Optional[float]:
        return self._table.get((k, key.packed))

    def learn_threshold(self, query, k: int, d_backend: Sequence[float], key: Optional[RegionKey] = None) -> float:
        """
        Fold the backend's k-th distance into theta[k][R].

        An unseen (k, R) starts at d_backend[k]; afterwards
        theta <- (1 - alpha) * theta + alpha * d_backend[k].
        """
        if len(d_backend) < k:
            raise ValueError(f"learn_threshold needs {k} backend distances, got {len(d_backend)}")
        if key is None:
            key = self.region_key(query)
        observed = float(d_backend[k - 1])
        entry = (k, key.packed)

        current = self._table.get(entry)
        if current is None:
            theta = observed
        else:
            theta = (1.0 - self.adaptivity_rate) * current + self.adaptivity_rate * observed
        self._table[entry] = theta
        self._table.move_to_end(entry)

        if self.max_regions is not None and len(self._table) > self.max_regions:
            (old_k, old_packed), _ = self._table.popitem(last=False)
            self.evicted += 1
            logger.debug(f"Threshold cap: evicted k={old_k} region={old_packed}")
        return theta

    def is_hit(self, query, k: int, d_cache: Sequence[float], key: Optional[RegionKey] = None) -> bool:
        if len(d_cache) < k:
            return False
        if key is None:
            key = self.region_key(query)
        theta = self.lookup_threshold(k, key)
        if theta is None:
            return False
        return float(d_cache[k - 1]) <= (1.0 + self.deviation_factor) * theta

    def __len__(self) -> int:
        return len(self._table)

    @property
    def active_regions(self) -> int:
        """Distinct region keys holding at least one threshold."""
        return len({packed for _, packed in self._table})

    def snapshot(self) -> Dict[Tuple[int, int], float]:
        return dict(self._table)
