"""Acceptance checks, one per criterion, each printing a PASS/FAIL line.

Run under pytest, or directly with ``python tests/test_acceptance.py``.
"""

import functools
import itertools
import math
import sys
import time
from collections import Counter
from pathlib import Path

import numpy as np
import pytest
from scipy.linalg import null_space
from scipy.stats import poisson

sys.path.insert(0, str(Path(__file__).parent))

from overlay_phase.analytics import equilibrium, region_of  # noqa: E402
from overlay_phase.churn import churn_steps, connection_lifetime, fit_exponential, fit_poisson, Histogram  # noqa: E402
from overlay_phase.classifier import TraceAttributes, TraceClass, TraceClassifier, classify  # noqa: E402
from overlay_phase.core import PeerMode, RegionId  # noqa: E402
from overlay_phase.ingest import TraceStore  # noqa: E402
from overlay_phase.profiles import load_profile  # noqa: E402
from overlay_phase.queue import (  # noqa: E402
    QueueParams, admitted_rejected, bdtm_equilibrium_for, bdtm_transfer, calibrate_mu, ctdm_equilibrium,
    ctdm_generator, estimate_lambda, leaf_params, time_step_convergence, ultra_params,
)
from overlay_phase.simulator import Simulation, load_config  # noqa: E402
from overlay_phase.tracegen import GenConfig, generate_degrees  # noqa: E402
from overlay_phase.validation import total_variation  # noqa: E402

from test_classifier import ARCHETYPES, archetype_corpus  # noqa: E402

G_L = [[0.9878, 0.0023, 0.0401, 0.0116], [0.0029, 0.9325, 0.3666, 0.0787],
       [0.0089, 0.0645, 0.5880, 0.1829], [0.0005, 0.0007, 0.0052, 0.7269]]
G_B = [[0.9857, 0.0025, 0.0497, 0.0104], [0.0009, 0.9616, 0.3655, 0.1062],
       [0.0038, 0.0196, 0.5233, 0.0916], [0.0096, 0.0163, 0.0615, 0.7919]]
H_L = [0.3955, 0.5107, 0.0901, 0.0037]
H_B = [0.2975, 0.5901, 0.0405, 0.0720]


class Check:
    """Collects sub-checks of one criterion and reports them on one line."""

    def __init__(self, number, title):
        self.number, self.title = number, title
        self.parts = []

    def __call__(self, ok, detail):
        self.parts.append((bool(ok), detail))

    @property
    def ok(self):
        return all(ok for ok, _ in self.parts)

    def line(self):
        shown = [d if ok else f"FAILED {d}" for ok, d in self.parts]
        return f"{'PASS' if self.ok else 'FAIL'}  criterion {self.number:>2}  {self.title}: " + "; ".join(shown)


def timed(fn, repeat=1):
    best, out = math.inf, None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return out, best


def erlang_recursion(m, a):
    b = 1.0
    for n in range(1, m + 1):
        b = a * b / (n + a * b)
    return b


@functools.lru_cache(maxsize=None)
def simulated(attempt_scale=1.0):
    t0 = time.perf_counter()
    sim = Simulation(load_config(attempt_scale=attempt_scale))
    records = list(sim.iter_records())
    return sim, records, time.perf_counter() - t0


def usr_share(records, profile):
    ultra = [r for r in records if r.mode is PeerMode.ULTRA]
    regions = Counter(region_of(r.state, profile) for r in ultra)
    return regions[RegionId.USR] / len(ultra), ultra


# --------------------------------------------------------------------------


def criterion_1():
    c = Check(1, "region-chain equilibrium")
    for name, G, h_ref in (("L", G_L, H_L), ("B", G_B, H_B)):
        h, dt = timed(lambda: equilibrium(G).values, repeat=50)
        err = float(np.max(np.abs(h - h_ref)))
        c(err <= 2e-3, f"h_{name} max err {err:.2e} (<= 2e-3)")
        c(dt < 1e-3, f"h_{name} {dt * 1e3:.3f} ms (< 1 ms)")
    return c


def criterion_2():
    c = Check(2, "lambda estimation")
    for q, u, ref in ((0.36, 5.8, 9.1), (0.39, 4.8, 7.9)):
        lam = estimate_lambda(q, u)
        c(abs(lam - ref) <= 0.05, f"lambda({q}, {u}) = {lam:.4f} vs {ref} (tol 0.05)")
    return c


def criterion_3():
    c = Check(3, "Erlang-B identity")
    worst = 0.0
    grid = list(itertools.product((1, 5, 30, 60), (0.1, 1.0, 10.0, 45.6, 200.0)))
    for m, a in grid:
        top = ctdm_equilibrium(QueueParams(a, 1.0, m)).top_mass
        worst = max(worst, abs(top - erlang_recursion(m, a)))
    c(len(grid) == 20 and worst <= 1e-12, f"{len(grid)}-point grid max diff {worst:.1e} (<= 1e-12)")
    leaf = leaf_params(9.5, calibrate_mu(5.8, 27.85))
    blocking = ctdm_equilibrium(leaf).top_mass
    admitted, _ = admitted_rejected(9.5, blocking)
    c(0.32 <= blocking <= 0.42, f"blocking {blocking:.4f} in [0.32, 0.42]")
    c(abs(admitted - 5.98) <= 0.4, f"admitted {admitted:.3f} vs 5.98 (tol 0.4)")
    return c


def criterion_4():
    c = Check(4, "closed form vs null space")
    worst = 0.0
    for load in (0.1, 1.0, 10.0, 45.6):
        for params in (leaf_params(load * 0.2, 0.2), ultra_params(load * 0.2, 0.2)):
            v = null_space(ctdm_generator(params))[:, 0]
            worst = max(worst, float(np.max(np.abs(ctdm_equilibrium(params).probs - v / v.sum()))))
    c(worst <= 1e-10, f"max diff {worst:.1e} over 8 systems (<= 1e-10)")
    return c


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


def criterion_5():
    c = Check(5, "BDTM brute force and time-step convergence")
    worst = 0.0
    for params in (QueueParams(2.0, 0.3, 3), QueueParams(0.7, 0.9, 3, 2), QueueParams(9.5, 0.2, 3, 1)):
        worst = max(worst, float(np.max(np.abs(bdtm_transfer(params) - brute_force_bdtm(params)))))
    c(worst <= 1e-9, f"m=3 enumeration max diff {worst:.1e} (<= 1e-9)")
    tv = time_step_convergence(leaf_params(9.5, 5.8 / 27.85), (1, 1 / 2, 1 / 4, 1 / 8, 1 / 64))
    seq = [d for _, d in tv]
    c(all(a > b for a, b in zip(seq[:4], seq[1:4])), "TV monotone over dt 1..1/8: "
      + ", ".join(f"{d:.4f}" for d in seq[:4]))
    c(seq[-1] < 0.01, f"TV at dt=1/64 = {seq[-1]:.4f} (< 0.01)")
    return c


def criterion_6():
    c = Check(6, "generator ergodicity")
    leaf, ultra = leaf_params(9.5, 5.8 / 27.85), ultra_params(8.0, 4.8 / 29.9443)
    t0 = time.perf_counter()
    for model in ("ctdm", "bdtm"):
        cfg = GenConfig(model, leaf, ultra, (leaf.cap, ultra.cap), 10**6, seed=2024)
        l_deg, u_deg, *_ = generate_degrees(cfg)
        solve = ctdm_equilibrium if model == "ctdm" else bdtm_equilibrium_for
        for name, deg, params in (("leaf", l_deg, leaf), ("ultra", u_deg, ultra)):
            emp = np.bincount(deg - params.floor, minlength=params.n_states) / len(deg)
            tv = total_variation(emp, solve(params).probs)
            c(tv < 0.03, f"{model} {name} TV {tv:.4f} (< 0.03)")
        again = generate_degrees(cfg)
        c(again[0].tobytes() == l_deg.tobytes() and again[1].tobytes() == u_deg.tobytes(),
          f"{model} same seed bitwise identical")
    elapsed = time.perf_counter() - t0
    c(elapsed < 30, f"{elapsed:.1f} s (< 30 s)")
    return c


def criterion_7():
    c = Check(7, "classifier")
    labels = TraceClassifier().fit().predict(archetype_corpus())
    expected = [k.value for k in ARCHETYPES]
    c(list(labels) == expected and len(set(labels)) == 9, f"archetypes recovered {sum(a == b for a, b in zip(labels, expected))}/9")
    rng = np.random.default_rng(7)
    n, bad = 100_000, 0
    grid = np.array([0.0, 0.25, 0.5, 1.0])
    for _ in range(n):
        on = rng.random(3) < 0.6
        if not on.any():
            on[rng.integers(3)] = True
        w = np.where(on, rng.random(3) + 1e-3, 0.0)
        eta = w / w.sum()
        xi = np.where(on, np.where(rng.random(3) < 0.5, rng.choice(grid, 3), rng.random(3)), 0.0)
        a = TraceAttributes(*eta.tolist(), *xi.tolist())
        first = classify(a)
        if not isinstance(first, TraceClass) or classify(TraceAttributes(*a.as_tuple())) is not first:
            bad += 1
    c(bad == 0, f"{n} random tuples total and deterministic ({bad} failures)")
    return c


def criterion_8():
    c = Check(8, "churn estimators")
    rng = np.random.default_rng(8)
    lam = fit_poisson(Histogram.from_counts(rng.poisson(4.3, 10**6)), "head_k_mean", 11).lambda_hat
    c(abs(lam - 4.3) <= 0.1, f"head_k_mean {lam:.4f} vs 4.3 (tol 0.1)")
    rate = fit_exponential(rng.exponential(11.23, 10**5)).rate
    rel = abs(rate - 1 / 11.23) * 11.23
    c(rel <= 0.03, f"exponential rate rel err {rel:.4f} (<= 3%)")
    for deg, dep, ref in ((27.8507, 11.6, 2.40), (29.9443, 9.6, 3.12)):
        life = connection_lifetime(deg, dep)
        c(abs(life - ref) <= 0.01, f"lifetime({deg}, {dep}) = {life:.4f} h vs {ref}")
    return c


def criterion_9():
    c = Check(9, "end-to-end simulation")
    profile = load_profile("limewire")
    _, records, elapsed = simulated(1.0)
    share, ultra = usr_share(records, profile)
    c(share >= 0.40, f"USR share of ultra samples {share:.3f} (>= 0.40)")
    tb = sum(1 for r in records if region_of(r.state, profile) is RegionId.TB)
    belt = sum(1 for r in ultra if 23 <= r.state.d_u <= 32 and r.state.d_l < 20)
    c(tb > 0 and belt > 0, f"TB samples {tb}, belt samples {belt} (> 0)")
    _, half, elapsed_half = simulated(0.5)
    share_half, _ = usr_share(half, profile)
    c(share_half < share, f"halved attempt rate USR share {share_half:.3f} < {share:.3f}")
    c(max(elapsed, elapsed_half) < 120, f"runtime {elapsed:.1f} s / {elapsed_half:.1f} s (< 120 s)")
    return c


def criterion_10():
    c = Check(10, "connection vs degree churn")
    _, records, _ = simulated(1.0)
    traces = list(TraceStore.from_records(records))
    labels = TraceClassifier().fit().predict(traces)
    stable = [t for t, lab in zip(traces, labels) if lab == TraceClass.STABLE_ULTRA.value]
    steps = [s for t in stable for s in churn_steps(t)]
    c(len(steps) > 0, f"{len(stable)} stable-ultra traces, {len(steps)} steps")
    if steps:
        dep = float(np.mean([s.departures for s in steps]))
        dc = float(np.mean([s.degree_change for s in steps]))
        ratio = dep / dc if dc > 0 else math.inf
        c(ratio >= 2, f"departures {dep:.2f} / degree change {dc:.2f} = {ratio:.2f} (>= 2)")
    return c


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6, criterion_7,
            criterion_8, criterion_9, criterion_10]


@pytest.mark.parametrize("criterion", CRITERIA, ids=[f"criterion_{i}" for i in range(1, 11)])
def test_acceptance(criterion, capsys):
    result = criterion()
    with capsys.disabled():
        print("\n" + result.line())
    assert result.ok, result.line()


if __name__ == "__main__":
    results = [fn() for fn in CRITERIA]
    for r in results:
        print(r.line())
    sys.exit(0 if all(r.ok for r in results) else 1)
