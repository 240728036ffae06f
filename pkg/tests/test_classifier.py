import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from overlay_phase.classifier import (
    TABLE_ROWS, ClassifierRegions, TraceAttributes, TraceClass, TraceClassifier, class_histogram, classify,
    trace_attributes,
)
from overlay_phase.errors import InvariantViolation

from conftest import trace_of

L, T, U = (0, 2), (15, 15), (30, 32)

ARCHETYPES = {
    TraceClass.STABLE_LEAF: [L, L, L],
    TraceClass.NEVER_STABLE_ULTRA: [T, T, T],
    TraceClass.STABLE_ULTRA: [U, U, U],
    TraceClass.BIPOLAR: [L, U, L],
    TraceClass.UNSTABLE_LEAF: [L, T, L],
    TraceClass.TOTAL_CHURN: [L, T, U],
    TraceClass.STABLE_ULTRA_OCCASIONAL_CHURN: [U, T, U, U],
    TraceClass.HALF_STABLE_ULTRA: [T, T, T, T, U, U],
    TraceClass.HALF_UNSTABLE_ULTRA: [T, T, U, U, U, U, U],
}


def archetype_corpus():
    return [trace_of(s, peer=c.value) for c, s in ARCHETYPES.items()]


def test_archetypes_recovered():
    corpus = archetype_corpus()
    labels = TraceClassifier().fit().predict(corpus)
    assert list(labels) == [c.value for c in ARCHETYPES]


def test_attribute_values():
    a = trace_attributes([U, T, U, U])
    assert a.as_tuple() == pytest.approx((0, 0.25, 0.75, 0, 1, 2 / 3))
    # start and end of the trace are not crossings
    assert trace_attributes([T, T, U]).xi_t == 0.5


def test_never_stable_via_saturated_ultra_crossings():
    a = trace_attributes([T, T, T, U, T, T, T])
    assert a.xi_u == 1 and a.xi_t < 1
    assert classify(a) is TraceClass.NEVER_STABLE_ULTRA


def test_disk_boundaries():
    r = ClassifierRegions()
    assert r.locate((30, 22)) == 2  # distance exactly 10: inside
    assert r.locate((30, 21)) == 1
    assert r.locate((10, 2)) == 0
    with pytest.raises(InvariantViolation):
        ClassifierRegions((10, 10), (0, 2), 10, 10)
    with pytest.raises(InvariantViolation):
        ClassifierRegions(r_u=0)


@st.composite
def attributes(draw):
    pattern = draw(st.tuples(st.booleans(), st.booleans(), st.booleans()).filter(any))
    w = [draw(st.floats(0.01, 1)) if on else 0.0 for on in pattern]
    eta = [x / sum(w) for x in w]
    eta[next(i for i, on in enumerate(pattern) if on)] += 1 - sum(eta)
    xi = [draw(st.sampled_from([0.0, 0.25, 0.5, 1.0]) | st.floats(0, 1)) if on else 0.0 for on in pattern]
    eta = [min(1.0, max(0.0, e)) for e in eta]
    return TraceAttributes(*eta, *xi)


@settings(max_examples=2000)
@given(attributes())
def test_total_and_deterministic(a):
    c = classify(a)
    assert isinstance(c, TraceClass)
    assert classify(TraceAttributes(*a.as_tuple())) is c


@given(attributes(), st.floats(0.1, 0.9))
def test_depends_on_sign_pattern_only(a, shrink):
    # reweight the visited regions without changing which are zero
    eta = np.array(a.as_tuple()[:3])
    on = eta > 0
    w = np.where(on, eta * shrink + (1 - shrink) / on.sum(), 0.0)
    w = w / w.sum()
    b = TraceAttributes(*w, *a.as_tuple()[3:])
    assert classify(b) is classify(a)


@given(st.lists(st.sampled_from([L, T, U, (5, 5), (25, 30), (40, 40)]), min_size=1, max_size=40))
def test_attributes_of_random_traces(states):
    a = trace_attributes(states)
    assert sum(a.as_tuple()[:3]) == pytest.approx(1)
    assert all(0 <= v <= 1 for v in a.as_tuple())
    classify(a)


def test_attribute_validation():
    with pytest.raises(InvariantViolation):
        TraceAttributes(0.5, 0.6, 0, 0, 0, 0)
    with pytest.raises(InvariantViolation):
        TraceAttributes(1, 0, 0, 0, 0.5, 0)
    with pytest.raises(InvariantViolation):
        trace_attributes([])


def test_histogram_order_and_shares():
    labels = [TraceClass.STABLE_LEAF] * 3 + [TraceClass.BIPOLAR]
    hist = class_histogram(labels)
    assert [row[0] for row in hist] == [row[0] for row in TABLE_ROWS]
    counts = {c: n for c, _, _, n, _ in hist}
    assert counts[TraceClass.STABLE_LEAF] == 3 and counts[TraceClass.STABLE_ULTRA] == 0
    assert sum(share for *_, share in hist) == pytest.approx(1)
    assert all(share == 0 for *_, share in class_histogram([]))


def test_estimator_api():
    clf = TraceClassifier(usp=(30, 32), lsp=(0, 2))
    with pytest.raises(Exception):
        clf.transform(archetype_corpus())
    X = clf.fit().transform(archetype_corpus())
    assert X.shape == (9, 6)
    assert len(clf.classes_) == 9
    assert clf.get_params()["r_u"] == 10.0
