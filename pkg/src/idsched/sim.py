"""Monte Carlo simulation of the slotted system under any policy.

Costs are accumulated as integer exceedance counts and only exponentiated
inside log-domain reductions, so horizons of 10^7 slots cannot overflow.
Each trial owns a pseudorandom substream derived from (seed, trial index);
the same substream is consumed identically by the per-slot reference engine
and the vectorized batch engines, so results are independent of which engine
ran and of any batching, and repeated runs are bitwise identical.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import EstimationError
from .exact import StationaryPolicy
from .heuristics import DebtLedger, PeriodicSchedule, RoundRobinState, prr_advance, prr_decide, ps_decide, wdd_decide
from .model import Instance, State, transition_tables

_CHUNK = 16384  # slots of uniforms drawn per call; part of the stream contract


@dataclass(frozen=True)
class SimConfig:
    horizon: int
    trials: int
    seed: int
    warmup: int = 0

    def __post_init__(self) -> None:
        if self.horizon < 1 or self.trials < 1:
            raise ValueError("horizon and trials must be positive")
        if self.warmup < 0:
            raise ValueError("warmup must be nonnegative")


@dataclass(eq=False)
class TrialResult:
    """Accounting summary of one simulated trial (post-warmup slots only)."""

    exceedance_total: int
    deliveries: tuple[int, ...]
    cycle_lengths: list[int]
    cycle_exceedances: list[int]
    delivery_slots: list[list[int]] | None = None

    def to_json(self) -> dict:
        return {
            "exceedance_total": self.exceedance_total,
            "deliveries": list(self.deliveries),
            "cycle_lengths": list(self.cycle_lengths),
            "cycle_exceedances": list(self.cycle_exceedances),
        }


@dataclass(frozen=True)
class CostEstimate:
    """Risk-sensitive average-cost estimate from independent trials."""

    j_hat: float
    log_mean_cost: float
    stderr_log: float
    stderr_j: float
    trials_used: int
    degenerate: bool


@dataclass(frozen=True)
class CycleEstimate:
    """Renewal-cycle estimates: mean length, mean multiplicative cost, implied average cost."""

    mean_length: float
    mean_cost: float
    j_cycle: float
    stderr_j: float
    n_cycles: int
    aborted_trials: int


def regeneration_state(thresholds: tuple[int, ...]) -> State:
    """Renewal marker: (1, 0) for two clients, (0, 1, ..., N-1) otherwise."""
    n = len(thresholds)
    if n == 2:
        return (1, 0)
    return tuple(range(n))


def log_mean_exp(values) -> float:
    """log(mean(exp(values))) with max shift; finite for arbitrarily large inputs."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("empty input")
    m = float(v.max())
    return m + float(np.log(np.exp(v - m).mean()))


# ---------------------------------------------------------------------------
# policy handles


class PolicyHandle:
    """Uniform per-slot decision interface used by the simulator.

    Stateful wrappers are reset at the start of every trial; ``observe`` is
    called once per slot after the channel outcome is known.
    """

    name = "policy"

    def reset(self) -> None:
        pass

    def decide(self, state: State, t: int) -> int:
        raise NotImplementedError

    def observe(self, served: int, delivered: bool) -> None:
        pass


class StationaryHandle(PolicyHandle):
    def __init__(self, name: str, policy: StationaryPolicy, inst: Instance):
        policy.validate(inst)
        self.name = name
        self.policy = policy
        self._indexer = inst.indexer()

    def decide(self, state: State, t: int) -> int:
        return int(self.policy.decisions[self._indexer.index(state)])


class PrrHandle(PolicyHandle):
    name = "prr"

    def __init__(self, n_clients: int):
        self._n = n_clients
        self._rr = RoundRobinState(1, n_clients)

    def reset(self) -> None:
        self._rr = RoundRobinState(1, self._n)

    def decide(self, state: State, t: int) -> int:
        return prr_decide(self._rr)

    def observe(self, served: int, delivered: bool) -> None:
        self._rr = prr_advance(self._rr, delivered)


class WddHandle(PolicyHandle):
    name = "wdd"

    def __init__(self, inst: Instance):
        self._inst = inst
        self._ledger = DebtLedger.fresh(inst.n_clients)

    def reset(self) -> None:
        self._ledger = DebtLedger.fresh(self._inst.n_clients)

    def decide(self, state: State, t: int) -> int:
        return wdd_decide(self._ledger, self._inst)

    def observe(self, served: int, delivered: bool) -> None:
        self._ledger = self._ledger.after_slot(served if delivered else None)


class PsHandle(PolicyHandle):
    name = "ps"

    def __init__(self, sched: PeriodicSchedule):
        self._sched = sched

    def decide(self, state: State, t: int) -> int:
        return ps_decide(self._sched, t)


# ---------------------------------------------------------------------------
# reference engine


def _uniform_blocks(rng: np.random.Generator, total: int):
    produced = 0
    while produced < total:
        n = min(_CHUNK, total - produced)
        yield rng.random(n)
        produced += n


def run_trial(
    inst: Instance,
    policy: PolicyHandle,
    horizon: int,
    trial_seed,
    start: State,
    warmup: int = 0,
    record_delivery_slots: bool = False,
) -> TrialResult:
    """Simulate ``warmup + horizon`` slots, accounting only the last ``horizon``.

    Each slot: ask the policy for a client, draw the channel outcome from the
    trial's substream, charge the pre-transition state's exceedance count, and
    apply the clipped transition.  Renewal hits (pre-transition) delimit the
    recorded cycles.
    """
    taus = inst.thresholds
    ps = inst.reliabilities
    n = inst.n_clients
    if len(start) != n or any(not 0 <= x <= t for x, t in zip(start, taus)):
        raise ValueError("start state outside the clipped space")
    regen = regeneration_state(taus)
    rng = np.random.default_rng(trial_seed)
    policy.reset()

    state = tuple(start)
    exceed_total = 0
    deliveries = [0] * n
    slots: list[list[int]] | None = [[] for _ in range(n)] if record_delivery_slots else None
    cycle_lengths: list[int] = []
    cycle_exceedances: list[int] = []
    open_start: int | None = None
    exc_since = 0

    t = 0
    for block in _uniform_blocks(rng, warmup + horizon):
        for draw in block.tolist():
            accounted = t >= warmup
            if accounted and state == regen:
                if open_start is not None:
                    cycle_lengths.append(t - open_start)
                    cycle_exceedances.append(exc_since)
                open_start = t
                exc_since = 0
            k = sum(1 for x, tau in zip(state, taus) if x == tau)
            if accounted:
                exceed_total += k
                exc_since += k
            u = policy.decide(state, t)
            delivered = draw < ps[u - 1]
            if delivered:
                state = tuple(
                    0 if i == u - 1 else min(x + 1, tau)
                    for i, (x, tau) in enumerate(zip(state, taus))
                )
                if accounted:
                    deliveries[u - 1] += 1
                    if slots is not None:
                        slots[u - 1].append(t)
            else:
                state = tuple(min(x + 1, tau) for x, tau in zip(state, taus))
            policy.observe(u, delivered)
            t += 1
    return TrialResult(
        exceedance_total=exceed_total,
        deliveries=tuple(deliveries),
        cycle_lengths=cycle_lengths,
        cycle_exceedances=cycle_exceedances,
        delivery_slots=slots,
    )


# ---------------------------------------------------------------------------
# batch engines (trial-vectorized; bitwise identical to the reference)


def _cycles_from_matrices(exc_row: np.ndarray, regen_row: np.ndarray) -> tuple[list[int], list[int]]:
    pos = np.flatnonzero(regen_row)
    if len(pos) < 2:
        return [], []
    lengths = np.diff(pos)
    csum = np.concatenate(([0], np.cumsum(exc_row, dtype=np.int64)))
    exceed = csum[pos[1:]] - csum[pos[:-1]]
    return lengths.tolist(), exceed.tolist()


def _batch_stationary(
    inst: Instance,
    decisions: np.ndarray,
    horizon: int,
    trials: int,
    seed: int,
    start: State,
    warmup: int,
    record_cycles: bool,
) -> list[TrialResult]:
    tables = transition_tables(inst)
    regen_idx = tables.indexer.index(regeneration_state(inst.thresholds))
    p = np.asarray(inst.reliabilities)
    dec0 = np.asarray(decisions, dtype=np.int64) - 1
    rngs = [np.random.default_rng((seed, r)) for r in range(trials)]
    rows = np.arange(trials)

    sidx = np.full(trials, tables.indexer.index(tuple(start)), dtype=np.int64)
    exceed_total = np.zeros(trials, dtype=np.int64)
    deliveries = np.zeros((trials, inst.n_clients), dtype=np.int64)
    exc_matrix = np.zeros((trials, horizon), dtype=np.int16) if record_cycles else None
    regen_matrix = np.zeros((trials, horizon), dtype=bool) if record_cycles else None

    t = 0
    total = warmup + horizon
    while t < total:
        m = min(_CHUNK, total - t)
        block = np.stack([rng.random(m) for rng in rngs])
        for j in range(m):
            accounted = t >= warmup
            if accounted:
                exc = tables.hits[sidx]
                exceed_total += exc
                if record_cycles:
                    exc_matrix[:, t - warmup] = exc
                    regen_matrix[:, t - warmup] = sidx == regen_idx
            u0 = dec0[sidx]
            delivered = block[:, j] < p[u0]
            if accounted:
                deliveries[rows, u0] += delivered
            sidx = np.where(delivered, tables.succ[sidx, u0], tables.fail[sidx])
            t += 1

    out = []
    for r in range(trials):
        if record_cycles:
            lengths, exceed = _cycles_from_matrices(exc_matrix[r], regen_matrix[r])
        else:
            lengths, exceed = [], []
        out.append(
            TrialResult(
                exceedance_total=int(exceed_total[r]),
                deliveries=tuple(int(d) for d in deliveries[r]),
                cycle_lengths=lengths,
                cycle_exceedances=exceed,
            )
        )
    return out


def _batch_wdd(
    inst: Instance,
    horizon: int,
    trials: int,
    seed: int,
    start: State,
    warmup: int,
    record_cycles: bool,
) -> list[TrialResult]:
    taus = np.asarray(inst.thresholds, dtype=np.int64)
    p = np.asarray(inst.reliabilities)
    ptau = p * taus
    n = inst.n_clients
    regen = np.asarray(regeneration_state(inst.thresholds), dtype=np.int64)
    rngs = [np.random.default_rng((seed, r)) for r in range(trials)]
    rows = np.arange(trials)

    x = np.tile(np.asarray(start, dtype=np.int64), (trials, 1))
    m_counts = np.zeros((trials, n), dtype=np.int64)
    exceed_total = np.zeros(trials, dtype=np.int64)
    deliveries = np.zeros((trials, n), dtype=np.int64)
    exc_matrix = np.zeros((trials, horizon), dtype=np.int16) if record_cycles else None
    regen_matrix = np.zeros((trials, horizon), dtype=bool) if record_cycles else None

    t = 0
    total = warmup + horizon
    while t < total:
        mlen = min(_CHUNK, total - t)
        block = np.stack([rng.random(mlen) for rng in rngs])
        for j in range(mlen):
            accounted = t >= warmup
            if accounted:
                exc = (x == taus).sum(axis=1)
                exceed_total += exc
                if record_cycles:
                    exc_matrix[:, t - warmup] = exc
                    regen_matrix[:, t - warmup] = (x == regen).all(axis=1)
            debts = t / ptau - m_counts / p
            u0 = debts.argmax(axis=1)  # first maximum = lowest client
            delivered = block[:, j] < p[u0]
            if accounted:
                deliveries[rows, u0] += delivered
            np.minimum(x + 1, taus, out=x)
            x[rows[delivered], u0[delivered]] = 0
            m_counts[rows[delivered], u0[delivered]] += 1
            t += 1

    out = []
    for r in range(trials):
        if record_cycles:
            lengths, exceed = _cycles_from_matrices(exc_matrix[r], regen_matrix[r])
        else:
            lengths, exceed = [], []
        out.append(
            TrialResult(
                exceedance_total=int(exceed_total[r]),
                deliveries=tuple(int(d) for d in deliveries[r]),
                cycle_lengths=lengths,
                cycle_exceedances=exceed,
            )
        )
    return out


def _run_trials(
    inst: Instance,
    policy: PolicyHandle,
    cfg: SimConfig,
    start: State,
    record_cycles: bool,
) -> list[TrialResult]:
    if isinstance(policy, StationaryHandle):
        return _batch_stationary(
            inst, policy.policy.decisions, cfg.horizon, cfg.trials, cfg.seed, start, cfg.warmup, record_cycles
        )
    if isinstance(policy, WddHandle):
        return _batch_wdd(inst, cfg.horizon, cfg.trials, cfg.seed, start, cfg.warmup, record_cycles)
    return [
        run_trial(inst, policy, cfg.horizon, (cfg.seed, r), start, warmup=cfg.warmup)
        for r in range(cfg.trials)
    ]


def stream_trials(
    inst: Instance,
    policy: PolicyHandle,
    cfg: SimConfig,
    start: State | None = None,
    sink=None,
    record_cycles: bool = True,
) -> list[TrialResult]:
    """Run the configured trials, optionally writing one JSON line per trial.

    ``sink`` is any object with a ``write`` method (file, StringIO); pass None
    to just get the results.
    """
    import json

    if start is None:
        start = inst.thresholds
    results = _run_trials(inst, policy, cfg, tuple(start), record_cycles=record_cycles)
    if sink is not None:
        for res in results:
            sink.write(json.dumps(res.to_json()) + "\n")
    return results


# ---------------------------------------------------------------------------
# estimators


def estimate_cost(
    inst: Instance, policy: PolicyHandle, cfg: SimConfig, start: State | None = None
) -> CostEstimate:
    """Risk-sensitive average cost over independent trials.

    ``j_hat = logmeanexp(theta * C_r) / (theta * horizon)`` where ``C_r`` is
    trial r's exceedance total; the log-mean is max-shifted so arbitrarily
    large exponents stay finite.  The log-scale standard error comes from the
    delta method on the shifted sample mean.
    """
    if start is None:
        start = inst.thresholds
    results = _run_trials(inst, policy, cfg, tuple(start), record_cycles=False)
    w = inst.theta * np.array([res.exceedance_total for res in results], dtype=float)
    lme = log_mean_exp(w)
    j_hat = lme / (inst.theta * cfg.horizon)
    shifted = np.exp(w - w.max())
    degenerate = bool(np.all(w == w[0]))
    if cfg.trials > 1 and not degenerate:
        stderr_log = float(shifted.std(ddof=1) / (math.sqrt(cfg.trials) * shifted.mean()))
    else:
        stderr_log = 0.0
    return CostEstimate(
        j_hat=j_hat,
        log_mean_cost=lme,
        stderr_log=stderr_log,
        stderr_j=stderr_log / (inst.theta * cfg.horizon),
        trials_used=cfg.trials,
        degenerate=degenerate,
    )


def simulate_cycles(
    inst: Instance, policy: PolicyHandle, cfg: SimConfig, start: State | None = None
) -> CycleEstimate:
    """Renewal-cycle estimates pooled across trials.

    Estimates the mean cycle length and the mean multiplicative cycle cost
    (log domain), and combines them into the implied average cost
    ``ln(mean cost) / (theta * mean length)``.  Trials that never hit the
    renewal state complete no cycles; a warning is issued for them.
    """
    if start is None:
        start = inst.thresholds
    results = _run_trials(inst, policy, cfg, tuple(start), record_cycles=True)
    lengths: list[int] = []
    counts: list[int] = []
    aborted = 0
    for res in results:
        if not res.cycle_lengths:
            aborted += 1
            continue
        lengths.extend(res.cycle_lengths)
        counts.extend(res.cycle_exceedances)
    if aborted:
        warnings.warn(
            f"{aborted} of {cfg.trials} trials completed no regeneration cycle",
            stacklevel=2,
        )
    if not lengths:
        raise EstimationError("no completed regeneration cycles; longer horizon needed")

    larr = np.asarray(lengths, dtype=float)
    w = inst.theta * np.asarray(counts, dtype=float)
    n_cycles = len(lengths)
    lme = log_mean_exp(w)
    mean_len = float(larr.mean())
    j_cycle = lme / (inst.theta * mean_len)

    shifted = np.exp(w - w.max())
    mean_e = float(shifted.mean())
    if n_cycles > 1:
        var_log_v = float(shifted.var(ddof=1)) / (n_cycles * mean_e**2)
        var_len = float(larr.var(ddof=1)) / n_cycles
        cov = float(np.cov(shifted, larr, ddof=1)[0, 1]) / (n_cycles * mean_e)
        d_a = 1.0 / (inst.theta * mean_len)
        d_b = -lme / (inst.theta * mean_len**2)
        var_j = var_log_v * d_a**2 + var_len * d_b**2 + 2.0 * cov * d_a * d_b
        stderr_j = math.sqrt(max(var_j, 0.0))
    else:
        stderr_j = 0.0
    return CycleEstimate(
        mean_length=mean_len,
        mean_cost=float(math.exp(lme)),
        j_cycle=j_cycle,
        stderr_j=stderr_j,
        n_cycles=n_cycles,
        aborted_trials=aborted,
    )
