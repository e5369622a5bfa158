"""Discrete-event simulation of heterogeneous serverless backend pools.

Each backend kind is a pool of identical instances. An invocation occupies
its resource request on one instance from start to finish; admission is
strict FIFO per backend (the queue head blocks until it fits somewhere, no
backfill). Virtual time only moves when ``advance`` pops the next event, so
runs are deterministic for a fixed seed.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable

import numpy as np

from .pipeline import ConfigAssignment, ConfigEntry
from .scenario import BackendSpec, GroundTruthModel, Scenario


class SubmitRejected(ValueError):
    """Raised when a request can never fit on any instance of its backend."""


def assignment_of_entry(entry: ConfigEntry) -> ConfigAssignment:
    return ConfigAssignment(
        backend_kind=entry.backend_kind,
        resource_request=entry.resource_request,
        batch_size=entry.batch_size,
        knob_values=tuple(sorted(entry.knob_values.items())),
    )


def draw_actual_latency(
    model: GroundTruthModel,
    operation: str,
    assignment: ConfigAssignment,
    item_count: int,
    rng: np.random.Generator,
) -> tuple[float, bool]:
    """Sample one execution latency; returns (seconds, straggled).

    The deterministic part is the per-batch base latency plus the per-item
    coefficient times the number of fan-in items. Noise is a multiplicative
    log-normal factor; a straggle multiplies the result by the scenario's
    straggle factor.
    """
    truth = model.kind_truth(operation, assignment.backend_kind)
    latency = truth.base_latency(assignment) + truth.per_item_seconds * item_count
    if model.noise_sigma > 0.0:
        latency *= math.exp(rng.normal(0.0, model.noise_sigma))
    straggled = False
    if model.straggle_rate > 0.0 and rng.random() < model.straggle_rate:
        latency *= model.straggle_factor
        straggled = True
    return latency, straggled


def invocation_cost(resource_request: int, actual_latency_s: float, price_rate: float) -> float:
    """Dollars charged for one execution: resources held times duration times rate."""
    return resource_request * actual_latency_s * price_rate


def inject_fault_policy(
    model: GroundTruthModel,
    *,
    failure_rate: float | None = None,
    straggle_rate: float | None = None,
    straggle_factor: float | None = None,
) -> GroundTruthModel:
    """Return a copy of the model with fault knobs replaced."""
    from dataclasses import replace

    return replace(
        model,
        failure_rate=model.failure_rate if failure_rate is None else failure_rate,
        straggle_rate=model.straggle_rate if straggle_rate is None else straggle_rate,
        straggle_factor=model.straggle_factor if straggle_factor is None else straggle_factor,
    )


@dataclass
class RunningInvocation:
    """Bookkeeping for one execution occupying backend resources."""

    invocation_id: int
    operation: str
    entry: ConfigEntry
    fill: int
    backend_kind: str
    instance: int
    start_s: float
    actual_s: float
    scheduled_finish_s: float
    will_fail: bool
    straggled: bool


@dataclass
class SimEvent:
    """One notification popped by ``advance``.

    ``kind`` is 'complete', 'fail', or 'wake'; completions and failures carry
    the finished execution, wakes carry an opaque tag for the caller.
    ``started`` lists executions admitted at this same virtual instant by the
    freed resources.
    """

    time_s: float
    kind: str
    running: RunningInvocation | None = None
    tag: Any = None
    started: list[RunningInvocation] = field(default_factory=list)


@dataclass
class _Pool:
    spec: BackendSpec
    free: list[int]
    queue: list[Any]  # pending submissions, FIFO


class BackendSim:
    """Event-driven executor for every backend pool in a scenario."""

    _COMPLETE = 0
    _WAKE = 1

    def __init__(self, scenario: Scenario, rng: np.random.Generator) -> None:
        self.scenario = scenario
        self.model = scenario.ground_truth
        self.rng = rng
        self.now: float = 0.0
        self._pools = {
            b.kind: _Pool(b, [b.resources_per_instance] * b.instance_count, [])
            for b in scenario.backends
        }
        self._heap: list[tuple[float, int, int]] = []
        self._seq = 0
        self._payload: dict[int, tuple[int, Any]] = {}
        self.running: dict[int, RunningInvocation] = {}
        self.trace: list[tuple[float, str, int, str, int]] = []
        self.on_start: Callable[[RunningInvocation], None] | None = None

    # -- submission --------------------------------------------------------

    def queue_length(self, kind: str) -> int:
        return len(self._pools[kind].queue)

    def queued_items(self, kind: str) -> list[Any]:
        return list(self._pools[kind].queue)

    def submit(self, invocation: Any, entry: ConfigEntry, fill: int) -> list[RunningInvocation]:
        """Queue one execution; returns anything that started right away."""
        pool = self._pools.get(entry.backend_kind)
        if pool is None:
            raise SubmitRejected(f"no backend of kind {entry.backend_kind!r}")
        if entry.resource_request > pool.spec.resources_per_instance:
            raise SubmitRejected(
                f"{entry.config_id}: requests {entry.resource_request} units but "
                f"{entry.backend_kind} instances hold {pool.spec.resources_per_instance}"
            )
        pool.queue.append((invocation, entry, fill))
        return self._try_start(pool)

    def _try_start(self, pool: _Pool) -> list[RunningInvocation]:
        started: list[RunningInvocation] = []
        while pool.queue:
            invocation, entry, fill = pool.queue[0]
            instance = -1
            for i, free in enumerate(pool.free):
                if free >= entry.resource_request:
                    instance = i
                    break
            if instance < 0:
                break  # FIFO head blocks; no backfill behind it
            pool.queue.pop(0)
            started.append(self._start(pool, invocation, entry, fill, instance))
        return started

    def _start(
        self, pool: _Pool, invocation: Any, entry: ConfigEntry, fill: int, instance: int
    ) -> RunningInvocation:
        pool.free[instance] -= entry.resource_request
        actual, straggled = draw_actual_latency(
            self.model, invocation.operation, assignment_of_entry(entry), fill, self.rng
        )
        will_fail = self.model.failure_rate > 0.0 and self.rng.random() < self.model.failure_rate
        finish = self.now + self.scenario.dispatch_overhead_s + actual
        run = RunningInvocation(
            invocation_id=invocation.invocation_id,
            operation=invocation.operation,
            entry=entry,
            fill=fill,
            backend_kind=entry.backend_kind,
            instance=instance,
            start_s=self.now,
            actual_s=actual,
            scheduled_finish_s=finish,
            will_fail=will_fail,
            straggled=straggled,
        )
        self.running[invocation.invocation_id] = run
        self._push(finish, self._COMPLETE, run)
        self.trace.append((self.now, "start", invocation.invocation_id, entry.backend_kind, instance))
        if self.on_start is not None:
            self.on_start(run)
        return run

    # -- events --------------------------------------------------------------

    def _push(self, time_s: float, code: int, payload: Any) -> None:
        self._seq += 1
        self._payload[self._seq] = (code, payload)
        heapq.heappush(self._heap, (time_s, code, self._seq))

    def schedule_wake(self, time_s: float, tag: Any) -> None:
        """Ask for a 'wake' event at a future virtual time (timers, deadlines)."""
        self._push(max(time_s, self.now), self._WAKE, tag)

    def has_events(self) -> bool:
        return bool(self._heap)

    def peek_time(self) -> float | None:
        return self._heap[0][0] if self._heap else None

    def advance(self) -> SimEvent | None:
        """Pop the earliest event, release resources, admit FIFO successors."""
        if not self._heap:
            return None
        time_s, code, seq = heapq.heappop(self._heap)
        _, payload = self._payload.pop(seq)
        self.now = time_s
        if code == self._WAKE:
            return SimEvent(time_s=time_s, kind="wake", tag=payload)
        run: RunningInvocation = payload
        pool = self._pools[run.backend_kind]
        pool.free[run.instance] += run.entry.resource_request
        del self.running[run.invocation_id]
        kind = "fail" if run.will_fail else "complete"
        self.trace.append((time_s, kind, run.invocation_id, run.backend_kind, run.instance))
        started = self._try_start(pool)
        return SimEvent(time_s=time_s, kind=kind, running=run, started=started)

    # -- introspection -------------------------------------------------------

    def occupied(self, kind: str) -> int:
        pool = self._pools[kind]
        return pool.spec.pool_resources - sum(pool.free)

    def check_conservation(self) -> None:
        for kind, pool in self._pools.items():
            used = {i: 0 for i in range(pool.spec.instance_count)}
            for run in self.running.values():
                if run.backend_kind == kind:
                    used[run.instance] += run.entry.resource_request
            for i, free in enumerate(pool.free):
                if used[i] + free != pool.spec.resources_per_instance:
                    raise AssertionError(f"resource leak on {kind}[{i}]")
                if free < 0:
                    raise AssertionError(f"overcommit on {kind}[{i}]")

    def write_trace(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("virtual_time\tevent_kind\tinvocation_id\tbackend\tinstance\n")
            for t, kind, inv, backend, instance in self.trace:
                fh.write(f"{t:.9f}\t{kind}\t{inv}\t{backend}\t{instance}\n")
