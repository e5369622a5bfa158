"""Run orchestration: invocation lifecycle, feedback, stragglers, reports.

The engine wires the configurator's decisions to the simulated backends,
tracks every invocation from pending input items through completion, smooths
latency estimates with observed executions, duplicates suspected stragglers,
retries failures, and assembles the run report.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field
from statistics import mean, median
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .backend import BackendSim, RunningInvocation, invocation_cost
from .configurator import Configurator, OpTable, TuningParams
from .pipeline import (
    ConfigEntry,
    ConfigSpec,
    OperationSpec,
    PipelineDag,
    SequentialPath,
    content_hash,
    decompose_paths,
    validate_dag,
)
from .scenario import Scenario

INVOCATION_STATES = (
    "pending",
    "speculated",
    "delayed-for-batch",
    "committed",
    "running",
    "completed",
    "failed",
    "duplicated",
)


def apply_feedback(old_estimate_s: float, observed_s: float, beta: float) -> float:
    """Exponential smoothing of a latency estimate toward an observation."""
    return beta * observed_s + (1.0 - beta) * old_estimate_s


@dataclass(slots=True)
class Invocation:
    """One batch of input items moving through the decision pipeline."""

    invocation_id: int
    operation: str
    items: list
    unit_id: int
    attempt: int = 0
    forced: bool = False
    state: str = "pending"
    spec_entry: ConfigEntry | None = None
    spec_eidx: int = -1
    spec_slack_s: float = 0.0
    spec_objective: float = 0.0
    committed_entry: ConfigEntry | None = None
    committed_eidx: int = -1
    committed_slack_s: float = 0.0
    committed_at: float = 0.0
    started_at: float = -1.0
    timeout_threshold_s: float = 0.0
    duplicate_spawned: bool = False
    finished_at: float = -1.0
    actual_s: float = 0.0
    cost: float = 0.0
    met: bool = False
    outcome: str = ""

    @property
    def fill(self) -> int:
        return len(self.items)


@dataclass(slots=True)
class _Unit:
    """One unit of work: the original invocation plus retries/duplicates."""

    resolved: bool
    live: set


class FeedbackStore:
    """Per-configuration observation counts plus the smoothing rule."""

    def __init__(self, beta: float, frozen: bool = False) -> None:
        self.beta = beta
        self.frozen = frozen
        self.observations: dict[tuple[str, str], int] = {}

    def observe(self, op: str, config_id: str) -> None:
        key = (op, config_id)
        self.observations[key] = self.observations.get(key, 0) + 1


@dataclass
class RunReport:
    """Aggregates of one pipeline run; the CSV schema is fixed."""

    run_id: str
    scenario: str
    pipeline: str
    target_s: float
    latency_s: float
    normalized_latency: float
    cost: float
    slack_met_frac: float
    configs_used: int
    failures: int
    duplicates: int
    invocations: int
    completed: int
    terminal_items: int
    speculate_median_ms: float
    speculate_mean_ms: float
    commit_median_ms: float
    commit_mean_ms: float
    decision_count: int
    decisions_per_s: float
    wall_s: float
    flags: dict[str, Any] = field(default_factory=dict)

    CSV_COLUMNS = (
        "run_id",
        "target_s",
        "latency_s",
        "normalized_latency",
        "cost",
        "slack_met_frac",
        "configs_used",
        "failures",
        "duplicates",
    )

    def target_met(self) -> bool:
        return self.normalized_latency <= 1.0

    def csv_row(self) -> str:
        vals = [
            self.run_id,
            repr(float(self.target_s)),
            repr(float(self.latency_s)),
            repr(float(self.normalized_latency)),
            repr(float(self.cost)),
            repr(float(self.slack_met_frac)),
            str(self.configs_used),
            str(self.failures),
            str(self.duplicates),
        ]
        return ",".join(vals)

    def summary(self) -> str:
        lines = [
            f"run {self.run_id}: {self.pipeline} on {self.scenario}",
            f"  target {self.target_s:g} s -> latency {self.latency_s:.3f} s "
            f"(normalized {self.normalized_latency:.3f}, "
            f"{'met' if self.target_met() else 'missed'})",
            f"  cost ${self.cost:.4f}  slack met {self.slack_met_frac:.3f}  "
            f"configs used {self.configs_used}",
            f"  invocations {self.invocations}  completed {self.completed}  "
            f"failures {self.failures}  duplicates {self.duplicates}",
            f"  decisions {self.decision_count} "
            f"(speculate median {self.speculate_median_ms:.4f} ms, "
            f"commit median {self.commit_median_ms:.4f} ms, "
            f"{self.decisions_per_s:.0f}/s)",
        ]
        if self.flags:
            lines.append("  flags " + " ".join(f"{k}={v}" for k, v in sorted(self.flags.items())))
        return "\n".join(lines)


def write_report_csv(path: str, reports: Sequence[RunReport]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(RunReport.CSV_COLUMNS) + "\n")
        for r in reports:
            fh.write(r.csv_row() + "\n")


def _scaled_profiles(
    profiles: Mapping[str, ConfigSpec], scale: float
) -> dict[str, ConfigSpec]:
    out: dict[str, ConfigSpec] = {}
    for op, spec in profiles.items():
        entries = [
            ConfigEntry(
                config_id=e.config_id,
                backend_kind=e.backend_kind,
                knob_values=dict(e.knob_values),
                batch_size=e.batch_size,
                resource_request=e.resource_request,
                latency_s=e.latency_s * scale,
                latency_initial_s=e.latency_initial_s * scale,
                peak_memory_mb=e.peak_memory_mb,
                schedulable=e.schedulable,
            )
            for e in spec.entries
        ]
        out[op] = ConfigSpec(operation=spec.operation, entries=entries,
                             reference_id=spec.reference_id)
    return out


class PipelineRun:
    """One end-to-end tuned execution of a pipeline over a workload trace."""

    def __init__(
        self,
        dag: PipelineDag,
        operations: Mapping[str, OperationSpec],
        profiles: Mapping[str, ConfigSpec],
        frames: Sequence[tuple[int, Mapping[str, int]]],
        scenario: Scenario,
        target_s: float,
        params: TuningParams | None = None,
        *,
        ablations: Iterable[str] = (),
        seed: int | None = None,
        paths: tuple[SequentialPath, ...] | None = None,
        profile_scale: float = 1.0,
        pipeline_name: str = "pipeline",
        flags: Mapping[str, Any] | None = None,
    ) -> None:
        violations = validate_dag(dag)
        if violations:
            raise ValueError("invalid pipeline: " + "; ".join(violations))
        for v in dag.vertices:
            if v not in profiles:
                raise ValueError(f"operation {v!r} has not been profiled")
        self.dag = dag
        self.operations = dict(operations)
        self.scenario = scenario
        self.target_s = float(target_s)
        self.params = params or TuningParams()
        self.ablations = frozenset(ablations)
        self.seed = scenario.seed if seed is None else seed
        self.pipeline_name = pipeline_name
        self.flags = dict(flags or {})
        if profile_scale <= 0:
            raise ValueError("profile_scale must be positive")
        self.profiles = _scaled_profiles(profiles, profile_scale)
        self.paths = paths if paths is not None else decompose_paths(dag)
        self.depths = dag.depths()
        self._check_joins()

        self.frames = [(int(fid), dict(attrs)) for fid, attrs in frames]
        for fid, attrs in self.frames:
            for k, v in attrs.items():
                if not isinstance(v, int) or v < 0:
                    raise ValueError(f"frame {fid}: attribute {k!r} must be a non-negative int")

        self.tables = {
            op: OpTable(self.profiles[op], scenario) for op in sorted(dag.vertices)
        }
        self.rng = np.random.default_rng(self.seed)
        self.sim = BackendSim(scenario, self.rng)
        self.sim.on_start = self._handle_start

        self.buffers: dict[str, deque] = {op: deque() for op in dag.vertices}
        self._succs = {op: dag.successors(op) for op in dag.vertices}
        self._indeg = {op: len(dag.predecessors(op)) for op in dag.vertices}
        self._ancestors = {op: sorted(dag.ancestors(op)) for op in dag.vertices}
        self._staging: dict[str, dict[int, dict[str, int]]] = {
            op: {} for op in dag.vertices if self._indeg[op] > 1
        }
        self.unspawned: dict[str, int] = {op: 0 for op in dag.vertices}
        self._ops_deep_first = sorted(dag.vertices, key=lambda v: (-self.depths[v], v))

        self.configurator = Configurator(
            self.tables,
            self.paths,
            self.depths,
            scenario,
            self.params,
            self.ablations,
            self.target_s,
            clock=lambda: self.sim.now,
            upstream_supply=self._supply,
            cq_length=self.sim.queue_length,
            submit=self._submit,
            make_invocation=self._make_invocation,
            schedule_wake=self.sim.schedule_wake,
        )
        self.feedback = FeedbackStore(self.params.smoothing_beta, frozen="fb" in self.ablations)

        self.invocations: dict[int, Invocation] = {}
        self._next_id = 0
        self.units: dict[int, _Unit] = {}
        self.total_cost = 0.0
        self.failures = 0
        self.duplicates_spawned = 0
        self.completed_results = 0
        self.met_count = 0
        self.terminal_items = 0
        self.last_accept_s = 0.0
        self.configs_used: set[str] = set()

    # -- structure ------------------------------------------------------------

    def _check_joins(self) -> None:
        for v in self.dag.vertices:
            preds = self.dag.predecessors(v)
            if len(preds) <= 1:
                continue
            if v in self.dag.fanout_rules:
                raise ValueError(f"join vertex {v!r} cannot carry a fan-out rule")
            for p in preds:
                if (p, v) in self.dag.branch_predicates:
                    raise ValueError(f"edge ({p}, {v}) into join vertex cannot carry a predicate")

    def _supply(self, op: str) -> int:
        total = 0
        for a in self._ancestors[op]:
            total += self.unspawned[a]
        return total

    # -- invocation plumbing ---------------------------------------------------

    def _new_id(self) -> int:
        self._next_id += 1
        return self._next_id

    def _make_invocation(self, op: str, items: list, forced: bool) -> Invocation:
        iid = self._new_id()
        inv = Invocation(invocation_id=iid, operation=op, items=items, unit_id=iid,
                         forced=forced)
        self.invocations[iid] = inv
        self.units[iid] = _Unit(resolved=False, live={iid})
        return inv

    def _clone_for_unit(self, original: Invocation) -> Invocation:
        iid = self._new_id()
        inv = Invocation(
            invocation_id=iid,
            operation=original.operation,
            items=original.items,
            unit_id=original.unit_id,
            attempt=original.attempt + 1,
        )
        self.invocations[iid] = inv
        self.units[original.unit_id].live.add(iid)
        return inv

    def _submit(self, inv: Invocation, entry: ConfigEntry, fill: int) -> None:
        self.sim.submit(inv, entry, fill)

    def _handle_start(self, run: RunningInvocation) -> None:
        inv = self.invocations[run.invocation_id]
        inv.state = "running"
        inv.started_at = run.start_s
        self.configs_used.add(inv.committed_entry.config_id)
        self.configurator.notify_started(inv)
        threshold = self.params.straggler_timeout_factor * inv.committed_entry.latency_s
        inv.timeout_threshold_s = threshold
        wake_at = run.start_s + threshold
        self.sim.schedule_wake(wake_at + 1e-9 * (1.0 + abs(wake_at)),
                               ("timeout", run.invocation_id))

    def _buffered_count(self, op: str) -> int:
        return len(self.buffers[op])

    def _topup(self, inv: Invocation, count: int) -> None:
        buf = self.buffers[inv.operation]
        take = min(count, len(buf))
        for _ in range(take):
            inv.items.append(buf.popleft())
        if not buf:
            self.configurator.clear_hold(inv.operation)

    # -- event handling ---------------------------------------------------------

    def _pump(self) -> None:
        while True:
            formed = 0
            for op in self._ops_deep_first:
                buf = self.buffers[op]
                if buf:
                    formed += self.configurator.speculate_from_buffer(op, buf)
                    if not buf:
                        self.configurator.clear_hold(op)
            committed = self.configurator.pump_commits(self._buffered_count, self._topup)
            if formed == 0 and committed == 0:
                return

    def _spawn_downstream(self, inv: Invocation) -> None:
        op = inv.operation
        succs = self._succs[op]
        if not succs:
            self.terminal_items += inv.fill
            self.unspawned[op] -= inv.fill
            return
        predicates = self.dag.branch_predicates
        fanout = self.dag.fanout_rules
        for origin, attrs in inv.items:
            for dst in succs:
                pred = predicates.get((op, dst))
                if pred is not None and not pred.evaluate(attrs):
                    continue
                if dst in fanout:
                    count = int(attrs.get(fanout[dst], 0))
                else:
                    count = 1
                if count <= 0:
                    continue
                if self._indeg[dst] > 1:
                    self._deliver_join(op, dst, origin, attrs, count)
                else:
                    buf = self.buffers[dst]
                    for _ in range(count):
                        buf.append((origin, attrs))
                    self.unspawned[dst] += count
        self.unspawned[op] -= inv.fill

    def _deliver_join(self, src: str, dst: str, origin: int, attrs: Mapping, count: int) -> None:
        staged = self._staging[dst].setdefault(origin, {})
        staged[src] = staged.get(src, 0) + count
        # Emit one merged item whenever every in-edge has delivered one.
        while len(staged) == self._indeg[dst] and all(staged.values()):
            for k in staged:
                staged[k] -= 1
            for k in [k for k, v in staged.items() if v == 0]:
                del staged[k]
            self.buffers[dst].append((origin, attrs))
            self.unspawned[dst] += 1
            if not staged:
                del self._staging[dst][origin]
                break

    def _apply_feedback(self, inv: Invocation, observed_s: float) -> None:
        op = inv.operation
        entry = inv.committed_entry
        table = self.tables[op]
        if inv.committed_eidx == table.ref_index:
            self.configurator.completed_ref[op] += 1
        self.feedback.observe(op, entry.config_id)
        if self.feedback.frozen:
            return
        new = apply_feedback(float(table.lat[inv.committed_eidx]), observed_s,
                             self.feedback.beta)
        table.set_latency(inv.committed_eidx, new)
        self.configurator.bump_profiles(op, inv.committed_eidx)
        if (
            inv.committed_eidx == table.ref_index
            and self.configurator.completed_ref[op] == self.params.dfp_count
            and "dfp" not in self.ablations
        ):
            # Warm-up gate just lifted: propagate the reference drift to
            # every configuration that never ran, so a systematically wrong
            # profile does not survive into the post-warm-up commits.
            self.configurator.recalibrate_unobserved(op, self.feedback.observations)

    def _on_complete(self, run: RunningInvocation, t: float) -> None:
        inv = self.invocations[run.invocation_id]
        inv.finished_at = t
        inv.actual_s = run.actual_s
        price = self.scenario.backend(run.backend_kind).price_rate
        inv.cost = invocation_cost(run.entry.resource_request, run.actual_s, price)
        self.total_cost += inv.cost
        unit = self.units[inv.unit_id]
        unit.live.discard(inv.invocation_id)
        self._apply_feedback(inv, run.actual_s)
        if unit.resolved:
            inv.state = "duplicated"
            inv.outcome = "discarded"
            return
        unit.resolved = True
        inv.state = "completed"
        inv.outcome = "accepted"
        inv.met = run.actual_s <= inv.committed_slack_s
        if inv.met:
            self.met_count += 1
        self.completed_results += 1
        self.last_accept_s = t
        self._spawn_downstream(inv)

    def _on_fail(self, run: RunningInvocation, t: float) -> None:
        inv = self.invocations[run.invocation_id]
        inv.finished_at = t
        inv.actual_s = run.actual_s
        price = self.scenario.backend(run.backend_kind).price_rate
        inv.cost = invocation_cost(run.entry.resource_request, run.actual_s, price)
        self.total_cost += inv.cost
        self.failures += 1
        inv.state = "failed"
        inv.outcome = "failed"
        unit = self.units[inv.unit_id]
        unit.live.discard(inv.invocation_id)
        if not unit.resolved and not unit.live:
            retry = self._clone_for_unit(inv)
            self.configurator.speculate_fixed(retry)

    def _check_straggler(self, invocation_id: int) -> None:
        inv = self.invocations.get(invocation_id)
        if inv is None or inv.state != "running" or inv.duplicate_spawned:
            return
        if self.units[inv.unit_id].resolved:
            return
        if self.sim.now - inv.started_at > inv.timeout_threshold_s:
            inv.duplicate_spawned = True
            dup = self._clone_for_unit(inv)
            self.duplicates_spawned += 1
            self.configurator.speculate_fixed(dup)

    def check_stragglers(self, now: float | None = None) -> int:
        """Scan running invocations; spawn one duplicate per overdue one."""
        now = self.sim.now if now is None else now
        spawned = 0
        for run in list(self.sim.running.values()):
            inv = self.invocations[run.invocation_id]
            if inv.duplicate_spawned or self.units[inv.unit_id].resolved:
                continue
            if now - inv.started_at > inv.timeout_threshold_s:
                inv.duplicate_spawned = True
                dup = self._clone_for_unit(inv)
                self.duplicates_spawned += 1
                self.configurator.speculate_fixed(dup)
                spawned += 1
        return spawned

    # -- main loop ----------------------------------------------------------------

    def _work_remains(self) -> bool:
        if any(self.buffers.values()):
            return True
        if self.configurator.sq_total() > 0:
            return True
        if any(self.sim.queue_length(k) for k in self.scenario.backend_kinds()):
            return True
        return bool(self.sim.running)

    def start_run(self) -> None:
        for v in self.dag.input_vertices():
            buf = self.buffers[v]
            for fid, attrs in self.frames:
                buf.append((fid, attrs))
            self.unspawned[v] += len(self.frames)
        self._pump()

    def run_to_completion(self) -> RunReport:
        wall0 = time.perf_counter()
        self.start_run()
        forced_flush = False
        while True:
            ev = self.sim.advance()
            if ev is None:
                if not self._work_remains():
                    break
                # Batching holds with unbounded budgets can stall an idle
                # engine; spend their budget and retry once before giving up.
                if not forced_flush and self.configurator.holds:
                    forced_flush = True
                    for hold in self.configurator.holds.values():
                        hold.deadline_s = self.sim.now
                    self._pump()
                    continue
                raise RuntimeError(self._livelock_diagnostic())
            forced_flush = False
            if ev.kind == "wake":
                tag = ev.tag
                if tag[0] == "timeout":
                    self._check_straggler(tag[1])
            elif ev.kind == "complete":
                self._on_complete(ev.running, ev.time_s)
            else:
                self._on_fail(ev.running, ev.time_s)
            self._pump()
        wall = time.perf_counter() - wall0
        return self._build_report(wall)

    def _livelock_diagnostic(self) -> str:
        buffered = {op: len(b) for op, b in self.buffers.items() if b}
        queued = {k: self.sim.queue_length(k) for k in self.scenario.backend_kinds()}
        return (
            "run stalled with work remaining: "
            f"buffered={buffered} "
            f"speculative={self.configurator.queue_sizes()} "
            f"commit_queues={queued} "
            f"running={len(self.sim.running)}"
        )

    def _build_report(self, wall_s: float) -> RunReport:
        latency = float(self.last_accept_s)
        if self.target_s > 0:
            normalized = latency / self.target_s
        elif latency == 0.0:
            normalized = 0.0
        else:
            normalized = float("inf")
        spec_times = self.configurator.speculate_times
        commit_times = self.configurator.commit_times
        decisions = len(spec_times) + len(commit_times)
        run_id = content_hash(
            {
                "scenario": self.scenario.name,
                "pipeline": self.pipeline_name,
                "target": self.target_s,
                "seed": self.seed,
                "ablations": sorted(self.ablations),
                "flags": {k: str(v) for k, v in sorted(self.flags.items())},
            }
        )[:12]
        return RunReport(
            run_id=run_id,
            scenario=self.scenario.name,
            pipeline=self.pipeline_name,
            target_s=self.target_s,
            latency_s=latency,
            normalized_latency=normalized,
            cost=self.total_cost,
            slack_met_frac=(self.met_count / self.completed_results
                            if self.completed_results else 1.0),
            configs_used=len(self.configs_used),
            failures=self.failures,
            duplicates=self.duplicates_spawned,
            invocations=len(self.invocations),
            completed=self.completed_results,
            terminal_items=self.terminal_items,
            speculate_median_ms=(median(spec_times) * 1e3 if spec_times else 0.0),
            speculate_mean_ms=(mean(spec_times) * 1e3 if spec_times else 0.0),
            commit_median_ms=(median(commit_times) * 1e3 if commit_times else 0.0),
            commit_mean_ms=(mean(commit_times) * 1e3 if commit_times else 0.0),
            decision_count=decisions,
            decisions_per_s=(decisions / wall_s if wall_s > 0 else 0.0),
            wall_s=wall_s,
            flags=self.flags,
        )

    def write_decision_log(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(
                "virtual_time\tdecision\tinvocation_id\toperation\tbackend"
                "\tconfig_id\tslack_s\tobjective\n"
            )
            for row in self.configurator.decision_log:
                t, kind, iid, op, backend, cid, slack_s, obj = row
                fh.write(
                    f"{t:.9f}\t{kind}\t{iid}\t{op}\t{backend}\t{cid}"
                    f"\t{slack_s:.9f}\t{obj:.9f}\n"
                )
