import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from s2hprune import autodiff as ad
from s2hprune.autodiff import Tensor
from s2hprune.masking import GroupMask, binarize_mask, relax_mask, soft_channel_count

# 50-digit decimal evaluation of softmax + suffix sums for u = [1.0, 0.5, 0.0, -0.5]
REF_U = [1.0, 0.5, 0.0, -0.5]
REF_W = [1.0, 0.54494576607658875521969454566217976407431026944116,
         0.26894142136999512074884075817816372563485535983494,
         0.10153632409155180089024564677047548280726572508486]
REF_T = 0.47885587788453391921469523765270474312910783859025
REF_COUNT = 1.9154235115381356768587809506108189725164313543609


def test_relax_uniform():
    np.testing.assert_array_equal(relax_mask(Tensor(np.zeros(4))).values, [1.0, 0.75, 0.5, 0.25])


def test_relax_near_one_hot():
    w = relax_mask(Tensor([20.0, 0.0, 0.0, 0.0])).values
    np.testing.assert_allclose(w, [1, 0, 0, 0], atol=1e-6)


def test_relax_reference():
    np.testing.assert_allclose(relax_mask(Tensor(REF_U)).values, REF_W, rtol=0, atol=1e-15)


def test_binarize_examples():
    t, m = binarize_mask([1, 0.75, 0.5, 0.25])
    assert t == 0.625 and m.tolist() == [True, True, False, False]
    t, m = binarize_mask([1, 0, 0, 0])
    assert t == 0.25 and m.tolist() == [True, False, False, False]


def test_binarize_reference():
    t, m = binarize_mask(relax_mask(Tensor(REF_U)))
    assert abs(t - REF_T) < 1e-15
    assert m.tolist() == [True, True, False, False]


def test_binarize_tie_keeps():
    t, m = binarize_mask([1.0, 0.5, 0.5, 0.0])
    assert t == 0.5 and m.tolist() == [True, True, True, False]


def test_soft_count_examples():
    assert float(soft_channel_count(Tensor(np.zeros(4))).values) == 2.5
    assert abs(float(soft_channel_count(Tensor([-60.0, -60.0, 60.0, -60.0])).values) - 3) < 1e-12
    assert abs(float(soft_channel_count(Tensor(REF_U)).values) - REF_COUNT) < 1e-15


def test_soft_count_grad_fd(rng):
    for _ in range(20):
        u = Tensor(rng.standard_normal(6) * 2, requires_grad=True)
        assert ad.grad_check(soft_channel_count, u) < 1e-6


def test_prefix_structure_1000_random_u(rng):
    for _ in range(1000):
        c = int(rng.integers(1, 17))
        u = Tensor(rng.standard_normal(c) * rng.uniform(0.1, 10))
        w = relax_mask(u).values
        t, m = binarize_mask(w)
        assert w[0] == 1.0
        assert np.all(np.diff(w) <= 0) and np.all(w > 0)
        assert 0 < t <= 1
        k = int(m.sum())
        assert k >= 1 and m.tolist() == [True] * k + [False] * (c - k)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=1, max_size=20))
def test_prefix_structure_property(u):
    w = relax_mask(Tensor(np.array(u))).values
    _, m = binarize_mask(w)
    k = int(m.sum())
    assert w[0] == 1.0 and k >= 1 and not m[k:].any()


@pytest.mark.parametrize("k", [1, 2, 4, 7])
def test_counts_converge_to_one_hot(k):
    c = 8
    gaps = []
    for sharp in (2.0, 5.0, 10.0, 40.0):
        u = np.zeros(c)
        u[k - 1] = sharp
        g = GroupMask("g", c, u=u)
        gaps.append(abs(float(g.soft_count().values) - k))
    assert gaps == sorted(gaps, reverse=True)
    assert gaps[-1] < 1e-12 and g.hard_count == k


def test_fixed_group():
    g = GroupMask("in", 3, fixed=True)
    assert not g.trainable and g.hard_count == 3
    np.testing.assert_array_equal(g.w.values, np.ones(3))
    assert not g.u.requires_grad


def test_force_and_release():
    g = GroupMask("h", 4)
    g.force_prefix(1)
    assert g.hard_count == 1 and not g.trainable
    np.testing.assert_array_equal(g.w.values, [1, 0, 0, 0])
    g.release()
    assert g.hard_count == 2 and g.trainable
    with pytest.raises(ValueError):
        g.force_prefix(0)
