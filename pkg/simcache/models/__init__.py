from simcache.models.metric import DistanceMetric, as_vector, distance, distances
from simcache.models.result import Neighbor, SearchResult, ServedFrom
from simcache.models.dataset import Dataset
from simcache.models.region import RegionKey
from simcache.models.trace import TraceEntry, WorkloadTrace

__all__ = [
    "DistanceMetric",
    "as_vector",
    "distance",
    "distances",
    "Neighbor",
    "SearchResult",
    "ServedFrom",
    "Dataset",
    "RegionKey",
    "TraceEntry",
    "WorkloadTrace",
]
