import enum
from typing import Any, List, Optional

from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from simcache import config
from simcache.exceptions import ConfigError
from simcache.models.metric import DistanceMetric


class SearchStrategy(str, enum.Enum):
    EAGER = "EAGER"
    EXHAUSTIVE = "EXHAUSTIVE"
    ADAPTIVE = "ADAPTIVE"


class MiniIndexConfig(BaseModel):
    capacity: int = Field(gt=0)
    max_degree: int = Field(32, ge=2)
    search_list_size: int = Field(64, gt=0)
    prune_alpha: float = Field(1.2, ge=1.0)


class CacheConfig(BaseModel):
    k_max: int = Field(10, gt=0)
    deviation_factor: float = Field(0.1, ge=0.0)  # D in (1 + D) * theta
    adaptivity_rate: float = Field(0.9, ge=0.0, le=1.0)  # alpha of the threshold EMA
    n_mini_index: int = Field(4, gt=0)
    c_mini_index: int = Field(25_000, gt=0)
    strategy: SearchStrategy = SearchStrategy.ADAPTIVE
    adaptive_hit_ratio_threshold: float = Field(0.9, ge=0.0, le=1.0)
    adaptive_window: int = Field(100, gt=0)
    metric: DistanceMetric = DistanceMetric.EUCLIDEAN
    deterministic_mode: bool = config.DETERMINISTIC
    max_regions: Optional[int] = Field(None, gt=0)

    # Graph parameters shared by every mini-index
    max_degree: int = Field(32, ge=2)
    search_list_size: int = Field(64, gt=0)
    prune_alpha: float = Field(1.2, ge=1.0)

    @model_validator(mode="after")
    def _fits_one_miss(self):
        if self.c_mini_index < self.k_max:
            raise ValueError(
                f"c_mini_index ({self.c_mini_index}) must be >= k_max ({self.k_max}) "
                "so one miss fits in a single mini-index"
            )
        if self.search_list_size < self.k_max:
            raise ValueError(
                f"search_list_size ({self.search_list_size}) must be >= k_max ({self.k_max})"
            )
        return self

    @property
    def total_capacity(self) -> int:
        return self.n_mini_index * self.c_mini_index

    def mini_index_config(self) -> MiniIndexConfig:
        return MiniIndexConfig(
            capacity=self.c_mini_index,
            max_degree=self.max_degree,
            search_list_size=self.search_list_size,
            prune_alpha=self.prune_alpha,
        )


class ProjectorSettings(BaseModel):
    d_reduced: int = Field(16, gt=0)
    n_buckets: int = Field(8, gt=0)
    sample_ratio: float = Field(0.01, gt=0.0, le=1.0)
    seed: int = config.DEFAULT_SEED
    global_threshold: bool = False  # one region for the whole space

    def effective(self) -> "ProjectorSettings":
        if self.global_threshold:
            return self.model_copy(update={"d_reduced": 1, "n_buckets": 1})
        return self


class WorkloadParams(BaseModel):
    n_split: int = Field(10, gt=0)
    noise_ratio: float = Field(0.01, ge=0.0, le=1.0)  # eta
    window_size: int = Field(4, gt=0)
    stride: int = Field(1, gt=0)
    n_repeat: int = Field(3, gt=0)
    n_round: int = Field(1, gt=0)
    seed: int = config.DEFAULT_SEED

    @model_validator(mode="after")
    def _window_bounds(self):
        if self.window_size > self.n_split:
            raise ValueError(f"window_size ({self.window_size}) must be <= n_split ({self.n_split})")
        if self.stride > self.window_size:
            raise ValueError(f"stride ({self.stride}) must be <= window_size ({self.window_size})")
        return self

    @property
    def positions_per_round(self) -> int:
        return (self.n_split - self.window_size) // self.stride + 1

    @property
    def total_steps(self) -> int:
        return self.n_round * self.n_repeat * self.positions_per_round


class SyntheticSpec(BaseModel):
    n: int = Field(100_000, gt=0)
    dim: int = Field(64, gt=0)
    clusters: int = Field(32, gt=0)
    std: float = Field(1.0, gt=0.0)
    center_spread: float = Field(1.0, ge=0.0)
    cluster_stds: Optional[List[float]] = None  # overrides std per cluster
    queries: int = Field(2_000, ge=0)
    seed: int = config.DEFAULT_SEED

    @field_validator("cluster_stds")
    @classmethod
    def _positive_stds(cls, value):
        if value is not None and any(s <= 0 for s in value):
            raise ValueError("cluster_stds must all be positive")
        return value

    @model_validator(mode="after")
    def _stds_match_clusters(self):
        if self.cluster_stds is not None and len(self.cluster_stds) != self.clusters:
            raise ValueError(
                f"cluster_stds has {len(self.cluster_stds)} entries for {self.clusters} clusters"
            )
        return self


class BenchConfig(BaseModel):
    # Data sources: fvecs/bvecs files or an inline synthetic mixture
    dataset_path: Optional[str] = None
    queries_path: Optional[str] = None
    synthetic: Optional[SyntheticSpec] = None
    trace_path: Optional[str] = None
    projector_path: Optional[str] = None
    metric: DistanceMetric = DistanceMetric.EUCLIDEAN

    k: int = Field(10, gt=0)
    workload: WorkloadParams = Field(default_factory=WorkloadParams)
    cache: CacheConfig = Field(default_factory=CacheConfig)
    projector: ProjectorSettings = Field(default_factory=ProjectorSettings)

    # Backend selection: "exact" or "delayed:<search_ms>:<fetch_ms>"
    backend: str = "exact"
    no_cache: bool = False
    baseline: bool = False
    concurrency: int = Field(1, gt=0)
    output_prefix: Optional[str] = None

    @field_validator("backend")
    @classmethod
    def _backend_spec(cls, value: str) -> str:
        parts = value.split(":")
        if parts[0] == "exact" and len(parts) == 1:
            return value
        if parts[0] == "delayed" and len(parts) == 3:
            try:
                delays = [float(p) for p in parts[1:]]
            except ValueError:
                raise ValueError(f"delays must be numbers in '{value}'")
            if any(d < 0 for d in delays):
                raise ValueError(f"delays must be non-negative in '{value}'")
            return value
        raise ValueError(f"unknown backend '{value}', expected exact or delayed:<search_ms>:<fetch_ms>")

    @model_validator(mode="after")
    def _sources_and_k(self):
        if self.dataset_path is None and self.synthetic is None:
            raise ValueError("either dataset_path or synthetic must be provided")
        if self.dataset_path is not None and self.trace_path is None and self.queries_path is None:
            raise ValueError("queries_path (or trace_path) is required with dataset_path")
        if self.k > self.cache.k_max:
            raise ValueError(f"k ({self.k}) must be <= cache.k_max ({self.cache.k_max})")
        if self.concurrency > 1 and self.cache.deterministic_mode:
            raise ValueError("concurrency > 1 requires cache.deterministic_mode to be off")
        # Mini-indexes must rank by the dataset metric
        if self.cache.metric != self.metric:
            if "metric" in self.cache.model_fields_set:
                raise ValueError(
                    f"cache.metric ({self.cache.metric.value}) must match metric ({self.metric.value})"
                )
            self.cache = self.cache.model_copy(update={"metric": self.metric})
        return self


class StepMetrics(BaseModel):
    window_step: int
    queries: int
    hits: int
    misses: int
    hit_ratio: float = Field(ge=0.0, le=1.0)
    hit_latency_p50: Optional[float] = None
    miss_latency_p50: Optional[float] = None
    overall_latency_p50: float
    qps: float
    recall_at_k: float = Field(ge=0.0, le=1.0)
    cumulative_vectors_fetched: int
    live_cached_vectors: int
    active_regions: int
    mean_mini_indexes_scanned: float
    cumulative_evictions: int
    working_set: int


class RunSummary(BaseModel):
    total_queries: int
    hit_ratio: float
    recall_at_k: float
    hit_latency_p50: Optional[float] = None
    miss_latency_p50: Optional[float] = None
    overall_latency_p50: float
    qps: float
    evictions: int
    vectors_fetched: int
    mean_mini_indexes_scanned: float
    max_live_cached_vectors: int
    active_regions: int
    working_set_estimate: int
    total_capacity: int


class BenchReport(BaseModel):
    config: BenchConfig
    steps: List[StepMetrics]
    summary: RunSummary
    baseline_steps: Optional[List[StepMetrics]] = None
    baseline_summary: Optional[RunSummary] = None


class SweepConfig(BaseModel):
    base: BenchConfig
    param: str  # dotted path, e.g. "cache.deviation_factor"
    values: List[Any]

    @field_validator("param")
    @classmethod
    def _known_param(cls, value: str) -> str:
        section, _, name = value.partition(".")
        models = {"cache": CacheConfig, "projector": ProjectorSettings, "workload": WorkloadParams}
        if section not in models or name not in models[section].model_fields:
            raise ValueError(f"unknown sweep parameter '{value}'")
        return value


class SweepPoint(BaseModel):
    param: str
    value: Any
    summary: RunSummary


def validated(model_cls, data: dict):
    """
    Build a pydantic model, turning a ValidationError into a ConfigError that
    names every failing field.
    """
    try:
        return model_cls.model_validate(data)
    except ValidationError as e:
        fields = [".".join(str(p) for p in err["loc"]) or model_cls.__name__ for err in e.errors()]
        details = "; ".join(
            f"{field}: {err['msg']}" for field, err in zip(fields, e.errors())
        )
        raise ConfigError(f"invalid {model_cls.__name__}: {details}", fields=fields) from e
