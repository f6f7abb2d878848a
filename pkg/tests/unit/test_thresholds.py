import numpy as np
import pytest

from simcache.exceptions import ConfigError, DimensionMismatchError, VectorFormatError
from simcache.models.region import RegionKey
from simcache.services.eviction import LRUPolicy
from simcache.services.threshold_store import Projector, ThresholdStore, compute_region_key


@pytest.fixture(scope="function")
def grid_projector():
    return Projector.identity(2, bucket_min=[0.0, 0.0], bucket_width=[1.0, 1.0], n_buckets=8)


@pytest.fixture(scope="function")
def store(grid_projector):
    return ThresholdStore(grid_projector, adaptivity_rate=0.9, deviation_factor=0.25)


# ---- projector / region keys ----

def test_bucketing_digits(grid_projector):
    """Test projected values land in the expected bucket digits."""
    assert grid_projector.digits([3.5, 7.2]) == (3, 7)


def test_out_of_range_values_are_clamped(grid_projector):
    """Test values outside the trained range clamp to the edge buckets."""
    assert grid_projector.digits([9.5, -1.0]) == (7, 0)


def test_same_buckets_same_key(grid_projector):
    """Test queries sharing every bucket share a region key."""
    a = compute_region_key(grid_projector, [3.1, 7.9])
    b = compute_region_key(grid_projector, [3.9, 7.0])
    assert a == b
    assert a == RegionKey.from_digits((3, 7), 8)


def test_project_rejects_wrong_dimension(grid_projector):
    """Test projecting a vector of the wrong dimension raises."""
    with pytest.raises(DimensionMismatchError):
        grid_projector.project([1.0, 2.0, 3.0])


def test_projector_requires_orthonormal_rows():
    """Test a projector matrix must have orthonormal rows."""
    with pytest.raises(ConfigError):
        Projector([[1.0, 1.0]], bucket_min=[0.0], bucket_width=[1.0], n_buckets=4)


def test_projector_rejects_key_space_overflow():
    """Test bucket grids too large for a 128-bit key are refused."""
    with pytest.raises(ConfigError):
        Projector.identity(3, [0.0] * 3, [1.0] * 3, n_buckets=2**43)


def test_projector_rejects_non_positive_width():
    """Test bucket widths must be positive."""
    with pytest.raises(ConfigError):
        Projector.identity(2, [0.0, 0.0], [1.0, 0.0], n_buckets=4)


def test_projector_file_round_trip(grid_projector, tmp_path):
    """Test a saved projector loads back unchanged."""
    path = tmp_path / "grid.proj"
    grid_projector.save(path)
    loaded = Projector.load(path)
    assert loaded.to_bytes() == grid_projector.to_bytes()
    assert loaded.digits([3.5, 7.2]) == (3, 7)


def test_projector_bad_magic(grid_projector):
    """Test a projector file with the wrong magic is rejected."""
    data = b"XXXX" + grid_projector.to_bytes()[4:]
    with pytest.raises(VectorFormatError) as exc:
        Projector.from_bytes(data)
    assert exc.value.offset == 0


def test_projector_truncated_body(grid_projector):
    """Test a truncated projector file is rejected."""
    with pytest.raises(VectorFormatError):
        Projector.from_bytes(grid_projector.to_bytes()[:-4])


# ---- learning ----

def test_unseen_region_is_absent(store):
    """Test a region that never learned has no threshold."""
    key = store.region_key([1.0, 1.0])
    assert store.lookup_threshold(10, key) is None


def test_first_learn_initializes_to_backend_distance(store):
    """Test the first observation becomes the threshold."""
    d = [0.5] * 9 + [2.5]
    assert store.learn_threshold([1.0, 1.0], 10, d) == 2.5
    assert store.lookup_threshold(10, store.region_key([1.0, 1.0])) == 2.5


def test_learn_applies_moving_average(store):
    """Test later observations blend in with weight alpha."""
    q = [1.0, 1.0]
    store.learn_threshold(q, 1, [10.0])
    assert store.learn_threshold(q, 1, [20.0]) == pytest.approx(19.0)


def test_zero_adaptivity_freezes_threshold(grid_projector):
    """Test alpha 0 keeps the first threshold forever."""
    frozen = ThresholdStore(grid_projector, adaptivity_rate=0.0)
    frozen.learn_threshold([1.0, 1.0], 1, [10.0])
    assert frozen.learn_threshold([1.0, 1.0], 1, [123.0]) == 10.0


def test_learn_requires_k_distances(store):
    """Test learning needs at least k backend distances."""
    with pytest.raises(ValueError):
        store.learn_threshold([1.0, 1.0], 3, [1.0, 2.0])


def test_thresholds_are_per_k_and_region(store):
    """Test thresholds are kept apart by k and by region."""
    store.learn_threshold([1.0, 1.0], 1, [1.0])
    store.learn_threshold([1.0, 1.0], 2, [1.0, 2.0])
    store.learn_threshold([5.0, 5.0], 1, [3.0])
    assert len(store) == 3
    assert store.active_regions == 2
    assert store.lookup_threshold(1, store.region_key([5.0, 5.0])) == 3.0


def test_region_cap_drops_least_recently_updated(grid_projector):
    """Test the region cap evicts the least recently updated threshold."""
    capped = ThresholdStore(grid_projector, max_regions=2)
    capped.learn_threshold([0.5, 0.5], 1, [1.0])
    capped.learn_threshold([1.5, 0.5], 1, [1.0])
    capped.learn_threshold([0.5, 0.5], 1, [2.0])
    capped.learn_threshold([2.5, 0.5], 1, [1.0])
    assert len(capped) == 2
    assert capped.evicted == 1
    assert capped.lookup_threshold(1, capped.region_key([1.5, 0.5])) is None
    assert capped.lookup_threshold(1, capped.region_key([0.5, 0.5])) is not None


# ---- hit test ----

def test_hit_within_deviation(store):
    """Test the hit test accepts up to (1 + D) times the threshold."""
    q = [1.0, 1.0]
    store.learn_threshold(q, 1, [1.0])
    assert store.is_hit(q, 1, [1.2]) is True
    assert store.is_hit(q, 1, [1.3]) is False


def test_hit_needs_k_candidates(store):
    """Test fewer than k cache candidates never hit."""
    q = [1.0, 1.0]
    store.learn_threshold(q, 2, [0.1, 1.0])
    assert store.is_hit(q, 2, [0.1]) is False


def test_no_threshold_never_hits(store):
    """Test a region without a threshold never hits."""
    assert store.is_hit([1.0, 1.0], 1, [0.0]) is False


def test_store_validates_parameters(grid_projector):
    """Test out-of-range alpha or D is a config error."""
    with pytest.raises(ConfigError):
        ThresholdStore(grid_projector, adaptivity_rate=1.5)
    with pytest.raises(ConfigError):
        ThresholdStore(grid_projector, deviation_factor=-0.1)


# ---- heat order ----

def test_lru_initial_order_and_touch():
    """Test LRU starts in slot order and moves touched slots to the front."""
    policy = LRUPolicy(3)
    assert policy.order() == [0, 1, 2]
    assert policy.coldest() == 2
    policy.touch(2)
    assert policy.order() == [2, 0, 1]
    assert policy.coldest() == 1


def test_lru_touch_unknown_slot():
    with pytest.raises(KeyError):
        LRUPolicy(2).touch(5)
