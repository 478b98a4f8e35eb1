import numpy as np
from scipy import stats

from recycled_sts.rng import child_key, child_keys, id_label, root_key, uniforms


def test_uniforms_range_and_distribution():
    u = uniforms(np.uint64(42), 200_000)
    assert u.min() >= 0.0 and u.max() < 1.0
    assert stats.kstest(u, "uniform").statistic < 0.005


def test_prefix_property():
    # draw k of a stream does not depend on how many draws are requested
    a = uniforms(np.uint64(9), 10)
    b = uniforms(np.uint64(9), 1000)
    np.testing.assert_array_equal(a, b[:10])


def test_children_are_distinct_and_uncorrelated():
    keys = child_keys(np.uint64(5), np.arange(1000, dtype=np.uint64))
    assert len(set(keys.tolist())) == 1000
    a = uniforms(keys[0], 50_000)
    b = uniforms(keys[1], 50_000)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.02
    assert child_key(np.uint64(5), np.uint64(3)) == keys[3]


def test_root_key_and_labels_are_stable():
    assert root_key(1, 2, 3) == root_key(1, 2, 3)
    assert root_key(1, 2, 3) != root_key(1, 3, 2)
    assert id_label("subject-1") == id_label("subject-1")
    assert id_label("subject-1") != id_label("subject-2")
