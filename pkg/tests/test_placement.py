import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.cluster.vq import kmeans2

from fres.errors import ConfigError
from fres.placement import ls_fcm


def test_all_ues_at_one_point():
    pts = np.tile([[12.0, 34.0]], (5, 1))
    c = ls_fcm(pts, 3)
    assert np.allclose(c, [12.0, 34.0])


def test_two_clusters_match_kmeans():
    rng = np.random.default_rng(0)
    a = rng.normal([10, 10], 1.0, (20, 2))
    b = rng.normal([90, 80], 1.0, (20, 2))
    pts = np.vstack([a, b])
    ref, _ = kmeans2(pts, 2, seed=1, minit="++")
    c = ls_fcm(pts, 2)
    for r in ref:
        assert np.min(np.linalg.norm(c - r, axis=1)) < 1.0


def test_single_center_is_centroid():
    pts = np.random.default_rng(2).uniform(0, 100, (15, 2))
    c = ls_fcm(pts, 1, fuzzifier=1.05)
    assert np.allclose(c[0], pts.mean(axis=0), atol=1e-6)


def test_errors():
    with pytest.raises(ConfigError):
        ls_fcm(np.zeros((2, 2)), 3)
    with pytest.raises(ConfigError):
        ls_fcm(np.ones((4, 2)), 2, fuzzifier=1.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 4), st.sampled_from([1.5, 2.0]))
def test_memberships_and_monotone_objective(seed, m, alpha):
    pts = np.random.default_rng(seed).uniform(0, 100, (12, 2))
    _, hist = ls_fcm(pts, m, pathloss_exponent=alpha, return_history=True)
    for _, u in hist:
        assert np.allclose(u.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(u >= 0)
    obj = [h[0] for h in hist]
    assert all(b <= a * (1 + 1e-9) for a, b in zip(obj, obj[1:]))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0, 100, (10, 2))
    c1 = ls_fcm(pts, 3)
    c2 = ls_fcm(pts[rng.permutation(10)], 3)
    key = lambda c: c[np.lexsort((c[:, 1], c[:, 0]))]
    assert np.allclose(key(c1), key(c2), atol=1e-6)
