import numpy as np

from simcache.exceptions import InvalidVectorError
from simcache.models.metric import DistanceMetric


class Dataset:
    """
    In-memory vector collection. Ids are 0-based row positions, matching the
    fvecs/ivecs ground-truth convention.
    """

    def __init__(self, vectors, metric: DistanceMetric = DistanceMetric.EUCLIDEAN):
        data = np.asarray(vectors, dtype=np.float32)
        if data.ndim == 1 and data.size == 0:
            data = data.reshape(0, 0)
        if data.ndim != 2:
            raise InvalidVectorError(f"dataset must be a 2-d array, got shape {data.shape}")
        if data.size and not np.all(np.isfinite(data)):
            raise InvalidVectorError("dataset contains NaN or Inf components")
        self.vectors = np.ascontiguousarray(data)
        self.vectors.setflags(write=False)
        self.metric = DistanceMetric(metric)

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def __len__(self) -> int:
        return int(self.vectors.shape[0])

    def __repr__(self) -> str:
        return f"Dataset(n={len(self)}, dim={self.dim}, metric={self.metric.value})"
