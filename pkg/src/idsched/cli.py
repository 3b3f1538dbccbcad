"""Batch experiment driver and command-line interface.

Subcommands: ``sweep`` (grid of instances x policies to CSV), ``solve`` and
``simulate`` (single-point variants), ``describe`` (instance diagnostics),
``emit-policy`` (serialize a constructed policy).  Exit codes: 0 success,
2 configuration error, 3 resource or convergence error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import asymptotic, exact, heuristics, sim
from .errors import ConfigError, EstimationError, ResourceLimitError, SchedulingError, StructuralError
from .model import AsymptoticInstance, Instance, instance_from_json

CSV_HEADER = "sweep_value,policy,J,J_normalized,stderr,method,converged"

_POLICY_NAMES = ("op-exhaustive", "op-iterative", "mlg", "sn", "prr", "wdd", "ps", "explicit")


@dataclass
class ExperimentConfig:
    instance: Instance | AsymptoticInstance
    policies: list[dict]
    sweep_axis: str
    sweep_values: list[float]
    evaluation: str
    sim_config: dict | None
    seed: int
    output: str | None
    exact_state_cap: int = 2000
    enumeration_cap: int = 4096


def load_config(obj: dict | str | Path) -> ExperimentConfig:
    """Parse and validate an experiment configuration."""
    if isinstance(obj, (str, Path)):
        try:
            obj = json.loads(Path(obj).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ConfigError("config must be a JSON object")
    try:
        instance = instance_from_json(obj["instance"])
    except KeyError as exc:
        raise ConfigError("config needs an 'instance' section") from exc
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad instance: {exc}") from exc

    raw_policies = obj.get("policies", [])
    if not raw_policies:
        raise ConfigError("config needs a nonempty 'policies' list")
    policies = []
    for spec in raw_policies:
        if isinstance(spec, str):
            spec = {"name": spec}
        if not isinstance(spec, dict) or "name" not in spec:
            raise ConfigError(f"bad policy spec: {spec!r}")
        if spec["name"] not in _POLICY_NAMES:
            raise ConfigError(f"unknown policy {spec['name']!r}; known: {', '.join(_POLICY_NAMES)}")
        if spec["name"] == "ps" and "max_period" not in spec:
            raise ConfigError("ps policy spec needs a 'max_period'")
        if spec["name"] == "explicit" and "decisions" not in spec:
            raise ConfigError("explicit policy spec needs a 'decisions' array")
        policies.append(spec)

    sweep = obj.get("sweep")
    if sweep is None:
        axis = "epsilon" if isinstance(instance, AsymptoticInstance) else "theta"
        base = instance.epsilon if isinstance(instance, AsymptoticInstance) else instance.theta
        values = [base]
    else:
        axis = sweep.get("axis")
        values = list(sweep.get("values", []))
        if axis not in ("theta", "epsilon"):
            raise ConfigError("sweep axis must be 'theta' or 'epsilon'")
        if not values or any(b <= a for a, b in zip(values, values[1:])):
            raise ConfigError("sweep values must be nonempty and strictly increasing")
    if axis == "epsilon" and not isinstance(instance, AsymptoticInstance):
        raise ConfigError("an epsilon sweep requires the asymptotic instance form (taus/bs/epsilon/theta)")
    if any(spec["name"] == "mlg" for spec in policies) and instance.n_clients != 2:
        raise ConfigError("the mlg policy is defined for exactly two clients")

    evaluation = obj.get("evaluation", "exact")
    if evaluation not in ("exact", "simulate", "both"):
        raise ConfigError("evaluation must be 'exact', 'simulate', or 'both'")
    sim_config = obj.get("sim")
    if evaluation in ("simulate", "both") and sim_config is None:
        raise ConfigError(f"evaluation '{evaluation}' needs a 'sim' section")
    if sim_config is not None:
        for key in ("horizon", "trials"):
            if key not in sim_config:
                raise ConfigError(f"sim section needs '{key}'")

    return ExperimentConfig(
        instance=instance,
        policies=policies,
        sweep_axis=axis,
        sweep_values=values,
        evaluation=evaluation,
        sim_config=sim_config,
        seed=int(obj.get("seed", 0)),
        output=obj.get("output"),
        exact_state_cap=int(obj.get("exact_state_cap", 2000)),
        enumeration_cap=int(obj.get("enumeration_cap", 4096)),
    )


def bundled_config_path(name: str) -> Path:
    """Path of a packaged example configuration such as ``fig4``."""
    candidate = resources.files("idsched").joinpath("configs", f"{name}.json")
    return Path(str(candidate))


@dataclass
class ResultRow:
    sweep_value: float
    policy: str
    j: float
    j_normalized: float
    stderr: float | None
    method: str
    converged: bool

    def csv(self) -> str:
        stderr = "" if self.stderr is None else repr(self.stderr)
        converged = "true" if self.converged else "false"
        return (
            f"{self.sweep_value!r},{self.policy},{self.j!r},"
            f"{self.j_normalized!r},{stderr},{self.method},{converged}"
        )


def _instance_at(cfg: ExperimentConfig, value: float) -> Instance:
    base = cfg.instance
    try:
        if cfg.sweep_axis == "epsilon":
            assert isinstance(base, AsymptoticInstance)
            return base.with_epsilon(value).materialize()
        if isinstance(base, AsymptoticInstance):
            return base.with_theta(value).materialize()
        return dataclasses.replace(base, theta=value)
    except ValueError as exc:
        raise ConfigError(f"sweep value {value} produces an invalid instance: {exc}") from exc


def _ne_policy_count(inst: Instance) -> int:
    count = 1
    indexer = inst.indexer()
    constrained = set()
    if inst.n_clients >= 2:
        from .model import exclusion_state

        constrained = {indexer.index(exclusion_state(inst.thresholds, n)) for n in range(1, inst.n_clients + 1)}
    for s in range(inst.total_states):
        count *= inst.n_clients - (1 if s in constrained else 0)
    return count


class _Evaluator:
    """Per-sweep-point policy construction and evaluation."""

    def __init__(self, cfg: ExperimentConfig, inst: Instance):
        self.cfg = cfg
        self.inst = inst
        self._schedules: dict[int, heuristics.PeriodicSchedule] = {}

    def reference(self) -> tuple[float, str, bool]:
        """Optimal-cost reference: exhaustive when the enumeration fits, else iterative."""
        names = [spec["name"] for spec in self.cfg.policies]
        use_exhaustive = "op-exhaustive" in names or (
            "op-iterative" not in names and _ne_policy_count(self.inst) <= self.cfg.enumeration_cap
        )
        if use_exhaustive:
            _, report = exact.exhaustive_optimal(self.inst, policy_cap=self.cfg.enumeration_cap)
            return report.average_cost, "exhaustive", report.converged
        result = exact.growth_rate_optimal(self.inst)
        return result.average_cost, "growth_rate", result.converged

    def _schedule(self, max_period: int) -> heuristics.PeriodicSchedule:
        if max_period not in self._schedules:
            self._schedules[max_period] = heuristics.build_periodic_schedule(self.inst, max_period)
        return self._schedules[max_period]

    def stationary_policy(self, spec: dict) -> exact.StationaryPolicy | None:
        name = spec["name"]
        if name == "op-exhaustive":
            return exact.exhaustive_optimal(self.inst, policy_cap=self.cfg.enumeration_cap)[0]
        if name == "op-iterative":
            return exact.growth_rate_optimal(self.inst).policy
        if name == "mlg":
            return asymptotic.mlg_stationary_policy(self.inst)
        if name == "sn":
            return asymptotic.sn_policy(self.inst)[0]
        if name == "explicit":
            return exact.StationaryPolicy(np.asarray(spec["decisions"], dtype=np.int64))
        return None

    def evaluate_exact(self, spec: dict, reference: tuple[float, str, bool]) -> tuple[float, str, bool] | None:
        """Exact J for the policy, or None when only simulation applies (wdd)."""
        name = spec["name"]
        if self.inst.total_states > self.cfg.exact_state_cap:
            raise ConfigError(
                f"exact evaluation infeasible: {self.inst.total_states} states exceed the cap "
                f"of {self.cfg.exact_state_cap}"
            )
        if name == "op-exhaustive" and reference[1] == "exhaustive":
            return reference
        if name == "op-iterative" and reference[1] == "growth_rate":
            return reference
        if name in ("op-exhaustive", "op-iterative"):
            if name == "op-exhaustive":
                _, report = exact.exhaustive_optimal(self.inst, policy_cap=self.cfg.enumeration_cap)
                return report.average_cost, "exhaustive", report.converged
            result = exact.growth_rate_optimal(self.inst)
            return result.average_cost, "growth_rate", result.converged
        if name == "prr":
            report = heuristics.prr_average_cost(self.inst)
            return report.average_cost, "exact-augmented", report.converged
        if name == "ps":
            sched = self._schedule(int(spec["max_period"]))
            report = heuristics.periodic_schedule_average_cost(self.inst, sched)
            return report.average_cost, "exact-periodic", report.converged
        if name == "wdd":
            return None
        policy = self.stationary_policy(spec)
        assert policy is not None
        report = exact.average_cost(policy, self.inst)
        return report.average_cost, "exact", report.converged

    def handle(self, spec: dict) -> sim.PolicyHandle:
        name = spec["name"]
        if name == "prr":
            return sim.PrrHandle(self.inst.n_clients)
        if name == "wdd":
            return sim.WddHandle(self.inst)
        if name == "ps":
            return sim.PsHandle(self._schedule(int(spec["max_period"])))
        policy = self.stationary_policy(spec)
        assert policy is not None
        return sim.StationaryHandle(name, policy, self.inst)

    def evaluate_sim(self, spec: dict) -> tuple[float, float]:
        if self.cfg.sim_config is None:
            raise ConfigError(
                f"policy {spec['name']!r} needs simulation but the config has no 'sim' section"
            )
        sc = sim.SimConfig(
            horizon=int(self.cfg.sim_config["horizon"]),
            trials=int(self.cfg.sim_config["trials"]),
            seed=self.cfg.seed,
            warmup=int(self.cfg.sim_config.get("warmup", 0)),
        )
        est = sim.estimate_cost(self.inst, self.handle(spec), sc)
        return est.j_hat, est.stderr_j


def _point_rows(cfg: ExperimentConfig, value: float) -> list[ResultRow]:
    inst = _instance_at(cfg, value)
    ev = _Evaluator(cfg, inst)
    ref_j, ref_method, ref_converged = ev.reference()
    rows = []
    for spec in cfg.policies:
        name = spec["name"]
        exact_result = None
        if cfg.evaluation in ("exact", "both"):
            exact_result = ev.evaluate_exact(spec, (ref_j, ref_method, ref_converged))
            if exact_result is not None:
                j, method, converged = exact_result
                rows.append(
                    ResultRow(value, name, j, j / ref_j, None, method, converged)
                )
        if cfg.evaluation == "simulate" or (cfg.evaluation == "both") or (
            cfg.evaluation == "exact" and exact_result is None
        ):
            j, stderr = ev.evaluate_sim(spec)
            rows.append(ResultRow(value, name, j, j / ref_j, stderr, "simulate", True))
    return rows


def run_experiment(cfg: ExperimentConfig, out_path: str | Path | None = None, threads: int = 1) -> list[ResultRow]:
    """Evaluate every sweep point x policy; write CSV when a path is given.

    Rows are computed independently (optionally in parallel) and emitted in
    sorted order, so reruns of the same config are byte-identical.
    """
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(lambda v: _point_rows(cfg, v), cfg.sweep_values))
    else:
        chunks = [_point_rows(cfg, v) for v in cfg.sweep_values]
    rows = [row for chunk in chunks for row in chunk]
    rows.sort(key=lambda r: (r.sweep_value, r.policy, r.method))
    target = out_path or cfg.output
    if target is not None:
        text = "\n".join([CSV_HEADER] + [row.csv() for row in rows]) + "\n"
        Path(target).write_text(text)
    return rows


def describe(cfg: ExperimentConfig) -> str:
    """Human-readable instance diagnostics."""
    base = cfg.instance
    inst = base.materialize() if isinstance(base, AsymptoticInstance) else base
    lines = []
    lines.append(f"clients: {inst.n_clients}")
    lines.append(f"thresholds: {inst.thresholds}")
    lines.append(f"reliabilities: {tuple(round(p, 12) for p in inst.reliabilities)}")
    lines.append(f"theta: {inst.theta}")
    lines.append(f"states: {inst.total_states}")
    th = exact.theta_threshold(inst)
    if th.underflow:
        lines.append("theta threshold: underflows to ~0 (stationary-optimum guarantee vacuous)")
    else:
        lines.append(f"theta threshold: {th.value:.6g} (K={th.k})")
    swept_thetas = cfg.sweep_values if cfg.sweep_axis == "theta" else [inst.theta]
    flagged = [t for t in swept_thetas if th.underflow or t >= th.value]
    if flagged:
        lines.append(
            f"warning: theta values {flagged} are at or above the threshold; "
            "the stationary-optimum guarantee does not cover them (costs are still computed)"
        )
    if inst.n_clients == 1:
        lines.append("note: with one client the exclusion-state constraint is vacuous; the single policy is forced")
    try:
        _, levels = asymptotic.sn_policy(inst)
        sizes = [len(members) for members in levels.levels]
        lines.append(f"level-set sizes: {sizes}")
        lines.append(f"level-set remain: {len(levels.remain)}, unplaced: {len(levels.unplaced)}")
    except (StructuralError, ValueError) as exc:
        lines.append(f"level sets unavailable: {exc}")
    return "\n".join(lines)


def emit_policy(cfg: ExperimentConfig, name: str) -> dict:
    """Serialize the named policy constructed on the config's base instance."""
    spec = next((s for s in cfg.policies if s["name"] == name), None)
    if spec is None:
        spec = {"name": name}
        if name not in _POLICY_NAMES:
            raise ConfigError(f"unknown policy {name!r}")
    base = cfg.instance
    inst = base.materialize() if isinstance(base, AsymptoticInstance) else base
    ev = _Evaluator(cfg, inst)
    if name == "ps":
        return ev._schedule(int(spec.get("max_period", 12))).to_json()
    if name in ("prr", "wdd"):
        raise ConfigError(f"policy {name!r} is stateful; it has no decision-array form")
    policy = ev.stationary_policy(spec)
    assert policy is not None
    return policy.to_json()


# ---------------------------------------------------------------------------
# entry point


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="idsched", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for cmd in ("solve", "simulate", "sweep", "describe", "emit-policy"):
        p = sub.add_parser(cmd)
        p.add_argument("--config", required=True, help="experiment config (JSON)")
        p.add_argument("--out", default=None, help="output path (CSV or JSON)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--threads", type=int, default=1, help="parallel sweep-point workers")
        if cmd == "emit-policy":
            p.add_argument("--policy", required=True, help="policy name to serialize")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.command == "describe":
            print(describe(cfg))
            return 0
        if args.command == "emit-policy":
            payload = json.dumps(emit_policy(cfg, args.policy), indent=2)
            if args.out:
                Path(args.out).write_text(payload + "\n")
            else:
                print(payload)
            return 0
        if args.command == "solve":
            cfg.evaluation = "exact"
            cfg.sweep_values = [cfg.sweep_values[0]]
        elif args.command == "simulate":
            cfg.evaluation = "simulate"
            cfg.sweep_values = [cfg.sweep_values[0]]
            if cfg.sim_config is None:
                raise ConfigError("simulate needs a 'sim' section in the config")
        rows = run_experiment(cfg, out_path=args.out, threads=args.threads)
        print(CSV_HEADER)
        for row in rows:
            print(row.csv())
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ResourceLimitError, StructuralError, EstimationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except SchedulingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
