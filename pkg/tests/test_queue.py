import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.linalg import null_space
from scipy.stats import poisson

from overlay_phase.core import QueueLimits
from overlay_phase.errors import InvariantViolation, ModelError
from overlay_phase.queue import (
    DegreeKeepingModel, QueueParams, admitted_rejected, bdtm_transfer, calibrate_mu,
    ctdm_equilibrium, ctdm_generator, ctdm_transfer, erlang_b, estimate_lambda, leaf_params,
    time_step_convergence, ultra_params,
)

# exact values from 30-digit arithmetic on the Erlang-B sum formula
LEAF_BLOCKING = 0.374983262572653833
ULTRA_TOP = 0.387512762734065142

rates = st.floats(0.05, 60)
systems = st.sampled_from([(30, 0), (12, 20), (3, 0), (5, 2)])


def erlang_b_sum(m, a):
    # direct sum in log space, independent of the recursion
    logs = [n * math.log(a) - math.lgamma(n + 1) for n in range(m + 1)]
    top = max(logs)
    return math.exp(logs[-1] - top) / sum(math.exp(x - top) for x in logs)


def null_space_equilibrium(params):
    v = null_space(ctdm_generator(params))[:, 0]
    return v / v.sum()


def brute_force_bdtm(params, n_arrivals=80):
    n, k = params.n_states, params.k
    T = np.zeros((n, n))
    pa = poisson.pmf(np.arange(n_arrivals), params.lam)
    for j in range(n):
        d = k + j
        for drops in itertools.product((0, 1), repeat=d):
            pd = math.prod(params.mu if x else 1 - params.mu for x in drops)
            kept = d - sum(drops)
            for a, p in enumerate(pa):
                T[min(max(kept + a, k), k + params.m) - k, j] += pd * p
        T[-1, j] += 1 - pa.sum()
    return T


@given(rates, st.floats(0.01, 2), systems)
def test_generator_columns_sum_to_zero(lam, mu, mk):
    Q = ctdm_generator(QueueParams(lam, mu, *mk))
    assert np.allclose(Q.sum(axis=0), 0, atol=1e-9)
    assert np.all(Q - np.diag(np.diag(Q)) >= 0)


@given(rates, st.floats(0.01, 1), systems)
def test_bdtm_columns_sum_to_one(lam, mu, mk):
    T = bdtm_transfer(QueueParams(lam, mu, *mk))
    assert np.allclose(T.sum(axis=0), 1, atol=1e-9)
    assert T.min() >= 0


@given(st.floats(0.1, 100), st.floats(0.05, 2), systems)
def test_closed_form_is_null_space(lam, mu, mk):
    p = QueueParams(lam, mu, *mk)
    eq = ctdm_equilibrium(p)
    assert np.allclose(eq.probs, null_space_equilibrium(p), atol=1e-10)
    assert np.max(np.abs(ctdm_generator(p) @ eq.probs)) < 1e-9


@given(st.floats(0.1, 100), st.floats(0.05, 2), systems)
def test_detailed_balance(lam, mu, mk):
    p = QueueParams(lam, mu, *mk)
    pi = ctdm_equilibrium(p).probs
    for i in range(p.m):
        assert lam * pi[i] == pytest.approx((p.k + i + 1) * mu * pi[i + 1], abs=1e-10)


@given(st.integers(1, 60), st.floats(0.01, 100))
def test_erlang_recursion_matches_sum(m, a):
    assert erlang_b(m, a) == pytest.approx(erlang_b_sum(m, a), abs=1e-12)
    assert ctdm_equilibrium(QueueParams(a, 1.0, m)).top_mass == pytest.approx(erlang_b_sum(m, a), abs=1e-12)


def test_reference_blocking():
    leaf = leaf_params(9.5, calibrate_mu(5.8, 27.85))
    eq = ctdm_equilibrium(leaf)
    assert eq.top_mass == pytest.approx(LEAF_BLOCKING, abs=1e-12)
    adm, rej = admitted_rejected(9.5, eq.top_mass)
    assert adm + rej == pytest.approx(9.5)
    ultra = ultra_params(8.0, calibrate_mu(4.8, 29.9443))
    assert ctdm_equilibrium(ultra).top_mass == pytest.approx(ULTRA_TOP, abs=1e-12)
    assert ctdm_equilibrium(ultra).degrees.tolist() == list(range(20, 33))


def test_degenerate_rates():
    assert ctdm_equilibrium(QueueParams(0, 1, 5)).probs[0] == 1
    assert ctdm_equilibrium(QueueParams(1, 0, 5)).top_mass == 1


@pytest.mark.parametrize("params", [QueueParams(2.0, 0.3, 3), QueueParams(0.7, 0.9, 3, 2), QueueParams(5, 0.05, 3, 1)])
def test_bdtm_brute_force(params):
    assert np.allclose(bdtm_transfer(params), brute_force_bdtm(params), atol=1e-9)


def test_bdtm_rejects_probability_above_one():
    with pytest.raises(ModelError):
        bdtm_transfer(QueueParams(1, 1.5, 3))


def test_time_step_convergence_monotone():
    leaf = leaf_params(9.5, 5.8 / 27.85)
    tv = [d for _, d in time_step_convergence(leaf, (1, 1 / 2, 1 / 4, 1 / 8, 1 / 64))]
    assert all(a > b for a, b in zip(tv, tv[1:]))
    # the BDTM-to-CTDM gap shrinks roughly linearly in the step
    assert tv[-1] == pytest.approx(tv[3] / 8, rel=0.25)


def test_ctdm_transfer_is_stochastic_and_stationary():
    p = ultra_params(8, 0.16)
    T = ctdm_transfer(p)
    eq = ctdm_equilibrium(p).probs
    assert np.allclose(T.sum(axis=0), 1)
    assert np.allclose(T @ eq, eq, atol=1e-9)
    assert np.allclose(ctdm_transfer(p, 2.0), T @ T, atol=1e-9)


def test_estimate_lambda():
    assert estimate_lambda(0.36, 5.8) == pytest.approx(9.0625)
    with pytest.raises(ModelError):
        estimate_lambda(1.0, 5.8)
    with pytest.raises(ModelError):
        estimate_lambda(0.3, -1)


@pytest.mark.parametrize("bad", [dict(lam=-1, mu=1, m=3), dict(lam=1, mu=math.nan, m=3),
                                 dict(lam=1, mu=1, m=0), dict(lam=1, mu=1, m=3, k=-1)])
def test_params_validation(bad):
    with pytest.raises(InvariantViolation):
        QueueParams(**bad)


def test_model_fit_recovers_stationary_rates():
    leaf = leaf_params(9.5, 0.2)
    eq = ctdm_equilibrium(leaf)
    rng = np.random.default_rng(3)
    X = rng.choice(eq.degrees, size=200_000, p=eq.probs)
    y = rng.binomial(X, 0.2)
    m = DegreeKeepingModel("leaf").fit(X, y)
    assert m.mu_ == pytest.approx(0.2, rel=0.01)
    # admitted arrivals balance departures in equilibrium
    assert m.lam_ * (1 - m.stable_point_prob_) == pytest.approx(y.mean())
    assert m.score(X) > -0.02
    assert m.predict_proba([30, 31]).tolist() == [pytest.approx(eq.top_mass, abs=0.01), 0.0]


def test_model_fixed_rates_and_sampling():
    m = DegreeKeepingModel("ultra", "bdtm", lam=8, mu=0.16).fit()
    assert m.stable_point_prob_ is None
    adm, rej = m.admitted_rejected()
    assert adm + rej == pytest.approx(8)
    trace = m.sample(100, seed=1)
    assert len(trace) == 101 and trace.min() >= 20 and trace.max() <= 32
    assert np.array_equal(trace, m.sample(100, seed=1))


def test_model_errors():
    with pytest.raises(ModelError):
        DegreeKeepingModel("leaf").fit()
    with pytest.raises(ModelError):
        DegreeKeepingModel("both", lam=1, mu=1).fit()
    with pytest.raises(ModelError):
        DegreeKeepingModel(kind="gillespie", lam=1, mu=1).fit()
    with pytest.raises(ModelError):
        DegreeKeepingModel().fit([1, 2], [1])


def test_model_uses_custom_limits():
    m = DegreeKeepingModel("ultra", B_u=27, L_u=20, lam=5, mu=0.2).fit()
    assert m.equilibrium_.degrees.tolist() == list(range(20, 28))
    assert m.params_ == ultra_params(5, 0.2, QueueLimits(30, 27, 20))
