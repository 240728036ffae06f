import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from overlay_phase.analytics import (
    RegionTransferEstimator, TransitionPairSet, equilibrium, incoming_field, intensity, outgoing_field,
    region_of, region_transfer_matrix, stationary_probability, stream_field, transition_pairs,
)
from overlay_phase.core import PhaseState, RegionId
from overlay_phase.errors import ModelError, ReducibleChainError
from overlay_phase.ingest import TraceStore
from overlay_phase.profiles import load_profile

from conftest import make_record, trace_of

states = st.tuples(st.integers(0, 40), st.integers(0, 40))
# one representative state per region, in region order, for the LimeWire partition
REPS = [PhaseState(0, 2), PhaseState(30, 32), PhaseState(2, 25), PhaseState(15, 10)]


def power_iteration(G, n=20000):
    h = np.full(G.shape[0], 1.0 / G.shape[0])
    for _ in range(n):
        h = G @ h
    return h


@given(st.lists(st.lists(states, min_size=1, max_size=12), max_size=10))
def test_intensity_conserves_records(traces):
    trs = [trace_of(s) for s in traces]
    grid = intensity(TraceStore({t.peer_id: t for t in trs}))
    assert grid.total == sum(len(s) for s in traces)
    for s in traces:
        for st_ in s:
            assert grid[st_] >= 1
    assert grid[(200, 200)] == 0


def test_intensity_transforms():
    grid = intensity([(1, 2), (1, 2), (0, 0)])
    rows = {(l, u): v for l, u, v in grid.rows("fourth-root")}
    assert rows[(1, 2)] == pytest.approx(2 ** 0.25)
    assert (0, 1) not in rows
    with pytest.raises(ValueError):
        grid.transformed("log")
    assert intensity([]).total == 0


@given(st.lists(st.lists(states, min_size=1, max_size=10), max_size=8), st.sampled_from([1, 2]))
def test_stream_field_matches_brute_force(traces, group):
    pairs = TransitionPairSet.from_traces([trace_of(s) for s in traces])
    field = stream_field(pairs, group)
    raw = [(a, b) for s in traces for a, b in zip(s, s[1:])]
    cells = {}
    for a, b in raw:
        key = (a[0] // group, a[1] // group)
        cells.setdefault(key, []).append((b[0] - a[0], b[1] - a[1]))
    assert set(field.cells) == set(cells)
    for key, moves in cells.items():
        vx, vy, n = field.cells[key]
        assert n == len(moves)
        assert abs(vx - np.mean([m[0] for m in moves])) < 1e-12
        assert abs(vy - np.mean([m[1] for m in moves])) < 1e-12


def test_stream_field_support_and_group():
    pairs = [((0, 0), (1, 0)), ((0, 0), (3, 0)), ((5, 5), (5, 6))]
    assert set(stream_field(pairs, min_support=2).cells) == {(0, 0)}
    with pytest.raises(ValueError):
        stream_field(pairs, group=3)


def test_direction_fields():
    pairs = [((0, 0), (3, 4)), ((3, 4), (3, 4))]
    out = outgoing_field(pairs)
    e = out[(0, 0)][0]
    assert (e.ux, e.uy) == pytest.approx((0.6, 0.8))
    assert e.length == pytest.approx(0.4 * 5)
    assert out[(3, 4)][0].length == 0
    inc = incoming_field(pairs)
    assert (inc[(3, 4)][0].ux, inc[(3, 4)][0].uy) == pytest.approx((-0.6, -0.8))


def test_stationary_probability():
    pairs = transition_pairs([(0, 2), (0, 2), (0, 2), (1, 2), (0, 2)])
    p = stationary_probability(pairs)
    assert p[PhaseState(0, 2)] == pytest.approx(2 / 3)
    assert p[PhaseState(1, 2)] == 0


def test_region_of_limewire():
    for r, s in zip(RegionId, REPS):
        assert region_of(s) is r
    assert region_of((100, 100)) is None
    # shared boundary goes to the lower ordinal
    assert region_of((5, 10)) is RegionId.LSR


def test_region_transfer_columns_and_exclusions():
    seq = [REPS[0], REPS[2], REPS[1], PhaseState(100, 100), REPS[1], REPS[1]]
    res = region_transfer_matrix(transition_pairs(seq))
    G = res.G.values
    assert np.allclose(G.sum(axis=0), 1, atol=1e-9)
    assert res.excluded_pairs == 2
    assert res.empty_regions == (RegionId.UDR,)
    assert G[RegionId.TB, RegionId.LSR] == 1
    assert res.counts.sum() == 3
    assert res.p.values.sum() == pytest.approx(1)
    with pytest.raises(ModelError):
        region_transfer_matrix([((100, 100), (100, 101))])


@given(arrays(float, (4, 4), elements=st.floats(0.01, 1)))
def test_equilibrium_fixed_point(a):
    G = a / a.sum(axis=0)
    h = equilibrium(G).values
    assert np.max(np.abs(G @ h - h)) < 1e-9
    assert np.allclose(h, power_iteration(G, 5000), atol=1e-8)


def test_equilibrium_rejects():
    with pytest.raises(ReducibleChainError):
        equilibrium(np.eye(4))
    with pytest.raises(ModelError):
        equilibrium(np.full((4, 4), 0.3))
    with pytest.raises(ModelError):
        equilibrium(np.full((3, 3), 1 / 3))


def test_published_matrices_within_rounding():
    G_L = np.array([[0.9878, 0.0023, 0.0401, 0.0116], [0.0029, 0.9325, 0.3666, 0.0787],
                    [0.0089, 0.0645, 0.5880, 0.1829], [0.0005, 0.0007, 0.0052, 0.7269]])
    h = equilibrium(G_L).values
    # independent oracle: power iteration on the column-renormalized matrix
    assert np.allclose(h, power_iteration(G_L / G_L.sum(axis=0)), atol=1e-9)
    assert np.allclose(h, [0.3955, 0.5107, 0.0901, 0.0037], atol=2e-3)


def test_transfer_estimate_converges():
    rng = np.random.default_rng(7)
    G = np.array([[0.90, 0.05, 0.30, 0.10], [0.04, 0.85, 0.30, 0.20],
                  [0.05, 0.08, 0.30, 0.30], [0.01, 0.02, 0.10, 0.40]])
    C = np.cumsum(G, axis=0)
    n = 100_000
    u = rng.random(n)
    seq = np.empty(n + 1, dtype=int)
    seq[0] = 0
    for i in range(n):
        seq[i + 1] = min(int(np.searchsorted(C[:, seq[i]], u[i], side="right")), 3)
    pairs = TransitionPairSet(tuple((REPS[a], REPS[b]) for a, b in zip(seq, seq[1:])))
    est = RegionTransferEstimator().fit(pairs)
    assert np.max(np.abs(est.transfer_matrix_ - G)) < 0.02
    assert est.n_pairs_ == n and est.n_excluded_ == 0
    assert np.allclose(est.equilibrium_, equilibrium(G).values, atol=0.02)
    assert est.transform([REPS[2], (100, 100)]).tolist() == [2, -1]


def test_bearshare_partition():
    p = load_profile("bearshare")
    assert region_of(p.ultra_stable_point, p) is RegionId.USR
    assert region_of(p.leaf_stable_point, "bearshare") is RegionId.LSR


def test_store_input():
    store = TraceStore.from_records([make_record("a", 0, 0, 2), make_record("a", 60, 30, 32)])
    assert len(TransitionPairSet.from_traces(store)) == 1
