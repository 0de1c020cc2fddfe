import math

import numpy as np
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from s2hprune.metrics import GapReport, js_divergence, l2_gap, top1_accuracy

from conftest import tiny_mlp

logit_rows = arrays(np.float64, (3, 5), elements=st.floats(-20, 20))


def softmax(z):
    e = np.exp(z - z.max(-1, keepdims=True))
    return e / e.sum(-1, keepdims=True)


def test_js_examples(rng):
    a = rng.standard_normal((4, 3))
    assert js_divergence(a, a) == 0.0
    assert abs(js_divergence([[800.0, 0.0]], [[0.0, 800.0]]) - math.log(2)) < 1e-15


def test_js_direct_summation(rng):
    a, b = rng.standard_normal((5, 10)), rng.standard_normal((5, 10))
    p, q = softmax(a), softmax(b)
    vals = []
    for pr, qr in zip(p, q):
        m = [(x + y) / 2 for x, y in zip(pr, qr)]
        vals.append(0.5 * math.fsum(x * math.log(x / mi) for x, mi in zip(pr, m))
                    + 0.5 * math.fsum(y * math.log(y / mi) for y, mi in zip(qr, m)))
    assert abs(js_divergence(a, b) - sum(vals) / len(vals)) < 1e-10


@settings(max_examples=100, deadline=None)
@given(logit_rows, logit_rows)
def test_js_bounds_and_symmetry(a, b):
    v = js_divergence(a, b)
    assert 0 <= v <= math.log(2) + 1e-12
    assert abs(v - js_divergence(b, a)) < 1e-12


def test_l2_examples(rng):
    a = rng.standard_normal((4, 3))
    assert l2_gap(a, a) == 0.0
    assert abs(l2_gap([[800.0, 0.0]], [[0.0, 800.0]]) - math.sqrt(2)) < 1e-15
    b = rng.standard_normal((4, 3))
    ref = np.mean([math.sqrt(math.fsum((x - y) ** 2 for x, y in zip(pr, qr)))
                   for pr, qr in zip(softmax(a), softmax(b))])
    assert abs(l2_gap(a, b) - ref) < 1e-12


@settings(max_examples=100, deadline=None)
@given(logit_rows, logit_rows, logit_rows)
def test_l2_triangle_inequality(a, b, c):
    assert l2_gap(a, c) <= l2_gap(a, b) + l2_gap(b, c) + 1e-12


def test_top1_examples():
    logits = np.array([[2.0, 1.0], [0.0, 3.0]])
    assert top1_accuracy(logits, [0, 1]) == 1.0
    assert top1_accuracy(logits, [1, 0]) == 0.0
    assert top1_accuracy([[0.0, 0.0]], [0]) == 1.0


def test_metrics_do_not_mutate(rng):
    g = tiny_mlp()
    before = [p.values.copy() for p in g.parameters()]
    a = g.forward(rng.standard_normal((3, 4))).values
    js_divergence(a, a[::-1])
    l2_gap(a, a[::-1])
    for p, b in zip(g.parameters(), before):
        np.testing.assert_array_equal(p.values, b)


def test_ratio_in_unit_interval(rng):
    g = tiny_mlp((4, 6, 5, 2))
    for _ in range(50):
        for grp in g.mask_parameters():
            grp.values = rng.standard_normal(grp.shape) * 5
        g.refresh_masks()
        assert 0 < g.flops_ratio("hard") <= 1 and 0 < g.flops_ratio("soft") <= 1


def test_gap_report_dict():
    r = GapReport(0.1, 0.2, 0.9, 0.8, 10)
    assert r.to_dict()["hard_top1"] == 0.8
