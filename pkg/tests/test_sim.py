import math
import warnings

import numpy as np
import pytest

from idsched.asymptotic import mlg_stationary_policy
from idsched.errors import EstimationError
from idsched.exact import StationaryPolicy, average_cost
from idsched.model import Instance
from idsched.sim import (
    SimConfig,
    StationaryHandle,
    WddHandle,
    estimate_cost,
    log_mean_exp,
    regeneration_state,
    run_trial,
    simulate_cycles,
    stream_trials,
)
from idsched.sim import _CHUNK, _batch_stationary, _batch_wdd
from idsched.model import successor_on_failure, successor_on_success


def _random_policy(inst, seed):
    rng = np.random.default_rng(seed)
    return StationaryPolicy(rng.integers(1, inst.n_clients + 1, inst.total_states))


def test_regeneration_state_convention():
    assert regeneration_state((3, 5)) == (1, 0)
    assert regeneration_state((4, 6, 8)) == (0, 1, 2)
    assert regeneration_state((2,)) == (0,)


def test_run_trial_is_deterministic():
    inst = Instance((2, 3), (0.6, 0.7), 0.05)
    pol = _random_policy(inst, 0)
    a = run_trial(inst, StationaryHandle("p", pol, inst), 500, (11, 3), inst.thresholds)
    b = run_trial(inst, StationaryHandle("p", pol, inst), 500, (11, 3), inst.thresholds)
    assert a.exceedance_total == b.exceedance_total
    assert a.deliveries == b.deliveries
    assert a.cycle_lengths == b.cycle_lengths
    assert a.cycle_exceedances == b.cycle_exceedances


def test_cycles_tile_the_trajectory():
    inst = Instance((2, 3), (0.6, 0.7), 0.05)
    pol = _random_policy(inst, 1)
    horizon = 2000
    res = run_trial(inst, StationaryHandle("p", pol, inst), horizon, (5, 0), inst.thresholds)
    assert res.exceedance_total <= inst.n_clients * horizon
    assert sum(res.cycle_lengths) <= horizon
    assert sum(res.cycle_exceedances) <= res.exceedance_total

    # replay the trial's uniform stream; the recorded cycles must partition
    # the span between the first and last renewal hits with no gaps
    rng = np.random.default_rng((5, 0))
    draws = np.concatenate([rng.random(min(_CHUNK, horizon - k)) for k in range(0, horizon, _CHUNK)])
    idxr = inst.indexer()
    state = inst.thresholds
    regen = regeneration_state(inst.thresholds)
    hits = []
    exceed = []
    for t in range(horizon):
        if state == regen:
            hits.append(t)
        exceed.append(sum(1 for x, tau in zip(state, inst.thresholds) if x == tau))
        u = int(pol.decisions[idxr.index(state)])
        if draws[t] < inst.reliabilities[u - 1]:
            state = successor_on_success(state, u, inst.thresholds)
        else:
            state = successor_on_failure(state, inst.thresholds)
    assert res.cycle_lengths == [b - a for a, b in zip(hits, hits[1:])]
    assert res.cycle_exceedances == [sum(exceed[a:b]) for a, b in zip(hits, hits[1:])]


def test_batch_engines_match_reference_exactly():
    inst = Instance((2, 3), (0.6, 0.7), 0.05)
    pol = _random_policy(inst, 2)
    handle = StationaryHandle("p", pol, inst)
    ref = [run_trial(inst, handle, 400, (123, r), inst.thresholds, warmup=13) for r in range(5)]
    bat = _batch_stationary(inst, pol.decisions, 400, 5, 123, inst.thresholds, 13, True)
    for r, b in zip(ref, bat):
        assert r.exceedance_total == b.exceedance_total
        assert r.deliveries == b.deliveries
        assert r.cycle_lengths == b.cycle_lengths
        assert r.cycle_exceedances == b.cycle_exceedances

    wdd = WddHandle(inst)
    refw = [run_trial(inst, wdd, 400, (55, r), inst.thresholds, warmup=7) for r in range(5)]
    batw = _batch_wdd(inst, 400, 5, 55, inst.thresholds, 7, True)
    for r, b in zip(refw, batw):
        assert r.exceedance_total == b.exceedance_total
        assert r.deliveries == b.deliveries
        assert r.cycle_lengths == b.cycle_lengths
        assert r.cycle_exceedances == b.cycle_exceedances


def test_single_client_threshold_frequency():
    # symmetric two-state chain spends half its accounted slots at threshold
    inst = Instance((1,), (0.5,), 0.1)
    pol = StationaryPolicy(np.array([1, 1]))
    res = run_trial(inst, StationaryHandle("f", pol, inst), 200_000, (9, 0), (0,))
    assert res.exceedance_total / 200_000 == pytest.approx(0.5, abs=0.01)


def test_estimate_cost_degenerate_and_single_trial():
    # perfect channels, generous thresholds: zero exceedances, zero cost
    inst = Instance((3, 3), (1.0, 1.0), 0.1, allow_endpoint_reliabilities=True)
    pol = StationaryPolicy(np.tile([1, 2], inst.total_states)[: inst.total_states])
    est = estimate_cost(inst, StationaryHandle("p", pol, inst), SimConfig(horizon=100, trials=8, seed=1), start=(0, 1))
    assert est.j_hat == 0.0
    assert est.degenerate
    assert est.stderr_log == 0.0

    # one trial: the estimate is the raw exceedance rate
    inst2 = Instance((1,), (0.5,), 0.1)
    forced = StationaryPolicy(np.array([1, 1]))
    est2 = estimate_cost(inst2, StationaryHandle("f", forced, inst2), SimConfig(horizon=1000, trials=1, seed=2))
    single = run_trial(inst2, StationaryHandle("f", forced, inst2), 1000, (2, 0), (1,))
    assert est2.j_hat == pytest.approx(single.exceedance_total / 1000, rel=1e-12)


def test_estimate_cost_tracks_exact_value_single_client():
    inst = Instance((1,), (0.5,), 0.1)
    pol = StationaryPolicy(np.array([1, 1]))
    exact_j = average_cost(pol, inst).average_cost
    est = estimate_cost(inst, StationaryHandle("f", pol, inst), SimConfig(horizon=100_000, trials=64, seed=3))
    assert est.j_hat == pytest.approx(exact_j, rel=0.02)


def test_log_mean_exp_is_overflow_safe():
    vals = np.array([1e4, 1e4 - 3.0, 5.0])
    out = log_mean_exp(vals)
    assert math.isfinite(out)
    assert out == pytest.approx(1e4 + math.log((1 + math.exp(-3) + math.exp(5 - 1e4)) / 3), rel=1e-12)


def test_perfect_channel_cycles_are_deterministic():
    # no failures: the least-time-to-go rule loops through its renewal cycle
    inst = Instance((3, 5), (1.0, 1.0), 0.01, allow_endpoint_reliabilities=True)
    pol = mlg_stationary_policy(inst)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cyc = simulate_cycles(
            inst, StationaryHandle("mlg", pol, inst), SimConfig(horizon=500, trials=4, seed=5), start=(1, 0)
        )
    assert cyc.mean_length == 2.0
    assert cyc.j_cycle == 0.0


def test_cycle_estimate_agrees_with_direct_estimate_in_regime():
    # small per-cycle fluctuations: both estimators target the same value
    inst = Instance((3, 5), (1 - 0.04, 1 - 0.02), 0.01)
    pol = mlg_stationary_policy(inst)
    handle = StationaryHandle("mlg", pol, inst)
    cfg = SimConfig(horizon=200_000, trials=32, seed=11)
    est = estimate_cost(inst, handle, cfg, start=(1, 0))
    cyc = simulate_cycles(inst, handle, cfg, start=(1, 0))
    combined = math.sqrt(est.stderr_j**2 + cyc.stderr_j**2)
    assert abs(est.j_hat - cyc.j_cycle) <= 3 * combined


def test_simulate_cycles_errors_without_regeneration():
    # an open-loop schedule that never visits (1, 0): serving client 1 forever
    inst = Instance((2, 3), (0.6, 0.7), 0.05)
    pol = StationaryPolicy(np.ones(inst.total_states, dtype=np.int64))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with pytest.raises(EstimationError):
            simulate_cycles(
                inst, StationaryHandle("pin", pol, inst), SimConfig(horizon=300, trials=2, seed=6)
            )


def test_stream_trials_emits_one_json_line_per_trial():
    import io
    import json

    inst = Instance((2, 3), (0.6, 0.7), 0.05)
    pol = _random_policy(inst, 8)
    sink = io.StringIO()
    results = stream_trials(
        inst, StationaryHandle("p", pol, inst), SimConfig(horizon=300, trials=4, seed=21), sink=sink
    )
    lines = sink.getvalue().strip().split("\n")
    assert len(lines) == 4
    for line, res in zip(lines, results):
        payload = json.loads(line)
        assert payload["exceedance_total"] == res.exceedance_total
        assert payload["deliveries"] == list(res.deliveries)


def test_warmup_shifts_accounting():
    inst = Instance((2, 3), (0.6, 0.7), 0.05)
    pol = _random_policy(inst, 7)
    handle = StationaryHandle("p", pol, inst)
    plain = run_trial(inst, handle, 100, (31, 0), inst.thresholds)
    warmed = run_trial(inst, handle, 100, (31, 0), inst.thresholds, warmup=50)
    # same stream, different accounting windows
    assert plain.exceedance_total != warmed.exceedance_total or plain.deliveries != warmed.deliveries
    assert sum(warmed.deliveries) <= 100
