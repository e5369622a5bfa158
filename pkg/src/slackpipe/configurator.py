"""Per-invocation tuning decisions: slack, objective, selection, queues.

The decision flow mirrors the two-phase scheme the engine runs on every
invocation: an early speculative pass placing it in a per-backend
speculative queue, and a late commit pass that re-evaluates the choice just
before submission to a bounded per-backend commit queue. Batching decisions
may hold inputs back briefly when a larger batch is both reachable and safe
for every waiting invocation's slack.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Container, Iterable, Mapping, Sequence

import numpy as np

from .pipeline import ConfigEntry, ConfigSpec, SequentialPath, reference_config
from .scenario import Scenario

ABLATION_TOKENS = ("fb", "dfp", "sdb", "eslc", "pbc")


@dataclass(frozen=True)
class TuningParams:
    """Engine knobs; defaults follow the deployment-calibrated values."""

    alpha: float = 100.0
    cq_capacity: int | None = None
    dfp_count: int = 10
    straggler_timeout_factor: float = 1.5
    smoothing_beta: float = 0.5

    def __post_init__(self) -> None:
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.cq_capacity is not None and self.cq_capacity < 1:
            raise ValueError("cq_capacity must be >= 1")
        if self.dfp_count < 0:
            raise ValueError("dfp_count must be >= 0")
        if self.straggler_timeout_factor <= 0:
            raise ValueError("straggler_timeout_factor must be positive")
        if not (0.0 < self.smoothing_beta <= 1.0):
            raise ValueError("smoothing_beta must be in (0, 1]")


@dataclass(frozen=True)
class Slack:
    """Seconds of headroom allotted to one operation on one backend kind."""

    seconds: float
    backend_kind: str


@dataclass(frozen=True)
class AffinityScore:
    operation: str
    backend_kind: str
    ratio: float


def remaining_path_latency(
    operation: str, path: SequentialPath, ref_latency: Mapping[str, float]
) -> float:
    """Sum of reference-config latency estimates from ``operation`` (inclusive)
    to the end of ``path``."""
    idx = path.index(operation)
    total = 0.0
    for op in path[idx:]:
        total += ref_latency[op]
    return total


def compute_slack(
    operation: str,
    backend_kind: str,
    *,
    target_s: float,
    elapsed_s: float,
    queueing_s: float,
    paths: Sequence[SequentialPath],
    ref_latency: Mapping[str, float],
) -> Slack:
    """Allot slack to one operation against one backend kind.

    For every decomposed path containing the operation, the remaining
    latency budget (target minus elapsed minus the backend's queueing
    estimate) is split proportionally to the operation's reference latency
    over the path's remaining reference latency; the operation receives the
    minimum over paths. The value is deliberately unclamped: a negative
    slack signals an already-blown budget to the objective.
    """
    remaining_budget = target_s - elapsed_s - queueing_s
    slack_s: float | None = None
    for path in paths:
        if operation not in path:
            continue
        share = ref_latency[operation] / remaining_path_latency(operation, path, ref_latency)
        value = share * remaining_budget
        if slack_s is None or value < slack_s:
            slack_s = value
    if slack_s is None:
        raise ValueError(f"operation {operation!r} does not appear on any path")
    return Slack(slack_s, backend_kind)


def estimate_queueing(queued_entries: Iterable[ConfigEntry], pool_resources: float) -> float:
    """Expected wait for newly queued work on one backend kind.

    Sums, over every speculative and committed-but-not-running invocation on
    that backend, its estimated latency scaled by the fraction of the pool it
    requests. Running invocations are excluded by construction.
    """
    total = 0.0
    for e in queued_entries:
        total += e.latency_s * e.resource_request / pool_resources
    return total


def objective(
    entry: ConfigEntry,
    slack_s: float,
    *,
    price_rate: float,
    pool_resources: float,
    alpha: float,
) -> float:
    """Cost-efficiency score; lower is better.

    Base term is dollars per item: resources times latency times price over
    batch size. When the estimated latency does not fit the allotted slack,
    a throughput penalty weighted by alpha is added, steering selection
    toward configurations that clear the backlog faster.
    """
    cost_term = (entry.resource_request * entry.latency_s * price_rate) / entry.batch_size
    if entry.latency_s < slack_s:
        return cost_term
    penalty = alpha * (
        (entry.latency_s * entry.resource_request) / (entry.batch_size * pool_resources)
    )
    return cost_term + penalty


@dataclass
class Decision:
    """Outcome of one selection pass."""

    kind: str  # 'assign' or 'delay'
    entry: ConfigEntry
    entry_index: int
    fill: int
    objective_value: float
    slack_s: float
    wait_budget_s: float = 0.0


class OpTable:
    """Vectorized view of one operation's schedulable configurations.

    Latency estimates are updated in place as feedback arrives, so every
    evaluation reflects the live profile state.
    """

    def __init__(self, spec: ConfigSpec, scenario: Scenario) -> None:
        self.operation = spec.operation
        kinds_present = {b.kind for b in scenario.backends}
        entries: list[ConfigEntry] = []
        for e in spec.entries:
            ok = (
                e.schedulable
                and e.backend_kind in kinds_present
                and e.resource_request <= scenario.backend(e.backend_kind).resources_per_instance
            )
            if ok:
                entries.append(e)
        if not entries:
            raise ValueError(f"operation {spec.operation!r} has no schedulable configuration")
        self.entries = entries
        self.kinds = sorted({e.backend_kind for e in entries})
        self._kind_pos = {k: i for i, k in enumerate(self.kinds)}
        n = len(entries)
        self.lat = np.array([e.latency_s for e in entries], dtype=np.float64)
        self.res = np.array([e.resource_request for e in entries], dtype=np.float64)
        self.batch = np.array([e.batch_size for e in entries], dtype=np.float64)
        self.batch_int = np.array([e.batch_size for e in entries], dtype=np.int64)
        self.pool = np.array(
            [scenario.backend(e.backend_kind).pool_resources for e in entries], dtype=np.float64
        )
        self.price = np.array(
            [scenario.backend(e.backend_kind).price_rate for e in entries], dtype=np.float64
        )
        self.kind_idx = np.array([self._kind_pos[e.backend_kind] for e in entries], dtype=np.int64)
        order = sorted(range(n), key=lambda i: entries[i].config_id)
        self.id_rank = np.empty(n, dtype=np.int64)
        for rank, i in enumerate(order):
            self.id_rank[i] = rank
        self.index_of_id = {e.config_id: i for i, e in enumerate(entries)}
        ref = reference_config(spec)
        if ref.config_id in self.index_of_id:
            self.ref_index = self.index_of_id[ref.config_id]
            self.ref_entry = entries[self.ref_index]
        else:
            # Reference sized beyond every instance: it still anchors slack
            # shares, but can never be forced or selected.
            self.ref_index = -1
            self.ref_entry = ref
        self.max_batch = int(self.batch_int.max())

    def set_latency(self, index: int, latency_s: float) -> None:
        self.entries[index].latency_s = latency_s
        self.lat[index] = latency_s

    def _slack_vec(self, slack_by_kind: Mapping[str, float]) -> np.ndarray:
        per_kind = np.array([slack_by_kind[k] for k in self.kinds], dtype=np.float64)
        return per_kind[self.kind_idx]

    def scores(
        self, slack_by_kind: Mapping[str, float], alpha: float
    ) -> tuple[np.ndarray, np.ndarray]:
        """Objective values and bare cost terms for every schedulable entry."""
        slack_arr = self._slack_vec(slack_by_kind)
        cost = (self.res * self.lat) * self.price / self.batch
        penalty = alpha * ((self.lat * self.res) / (self.batch * self.pool))
        score = cost + np.where(self.lat < slack_arr, 0.0, penalty)
        return score, cost

    def _argmin(self, score: np.ndarray, cost: np.ndarray, mask: np.ndarray) -> int:
        masked = np.where(mask, score, np.inf)
        best = masked.min()
        ties = np.flatnonzero(masked == best)
        if len(ties) == 1:
            return int(ties[0])
        return int(
            min(ties, key=lambda i: (cost[i], self.res[i], self.id_rank[i]))
        )

    def select(
        self,
        slack_by_kind: Mapping[str, float],
        alpha: float,
        available: int,
        *,
        allow_delay: bool,
        upstream_supply: int = 0,
        excluded_kinds: frozenset[str] = frozenset(),
        min_batch: int = 1,
    ) -> Decision | None:
        """Pick the best configuration for the current queue and slack state.

        Returns a delay decision when the overall argmin wants a larger batch
        than is available, enough upstream work is still pending to fill it,
        and the slack headroom over its latency leaves room to wait. Returns
        None when every candidate kind is excluded (their commit queues are
        full) or no entry can take ``min_batch`` items in one batch.
        """
        mask = np.ones(len(self.entries), dtype=bool)
        if excluded_kinds:
            keep = np.array(
                [k not in excluded_kinds for k in self.kinds], dtype=bool
            )
            mask &= keep[self.kind_idx]
        if min_batch > 1:
            mask &= self.batch_int >= min_batch
        if not mask.any():
            return None
        score, cost = self.scores(slack_by_kind, alpha)
        i = self._argmin(score, cost, mask)
        entry = self.entries[i]
        if (
            allow_delay
            and entry.batch_size > available
            and upstream_supply >= entry.batch_size - available
        ):
            wait_budget = slack_by_kind[entry.backend_kind] - entry.latency_s
            if wait_budget > 0.0:
                return Decision(
                    kind="delay",
                    entry=entry,
                    entry_index=i,
                    fill=available,
                    objective_value=float(score[i]),
                    slack_s=slack_by_kind[entry.backend_kind],
                    wait_budget_s=wait_budget,
                )
        if entry.batch_size > available:
            mask2 = mask & (self.batch_int <= available)
            if mask2.any():
                i = self._argmin(score, cost, mask2)
                entry = self.entries[i]
        fill = min(entry.batch_size, available)
        return Decision(
            kind="assign",
            entry=entry,
            entry_index=i,
            fill=fill,
            objective_value=float(score[i]),
            slack_s=slack_by_kind[entry.backend_kind],
        )

    def affinity(
        self, backend_kind: str, slack_by_kind: Mapping[str, float], alpha: float
    ) -> float | None:
        """How much worse the best alternative elsewhere is, as a ratio.

        None when the operation has no schedulable entry on the kind;
        +inf when it has entries nowhere else.
        """
        if backend_kind not in self._kind_pos:
            return None
        score, _ = self.scores(slack_by_kind, alpha)
        on = self.kind_idx == self._kind_pos[backend_kind]
        if not on.any():
            return None
        if on.all():
            return float("inf")
        return float(score[~on].min() / score[on].min())


def select_config(
    spec: ConfigSpec,
    scenario: Scenario,
    slack_by_kind: Mapping[str, float],
    available: int,
    params: TuningParams,
    *,
    allow_delay: bool = True,
    upstream_supply: int = 0,
) -> Decision:
    """Standalone selection over a ConfigSpec; raises if nothing is schedulable."""
    table = OpTable(spec, scenario)
    decision = table.select(
        slack_by_kind,
        params.alpha,
        available,
        allow_delay=allow_delay,
        upstream_supply=upstream_supply,
    )
    assert decision is not None  # no exclusions here; OpTable raised if empty
    return decision


def affinity(
    spec: ConfigSpec,
    scenario: Scenario,
    backend_kind: str,
    slack_by_kind: Mapping[str, float],
    params: TuningParams,
) -> AffinityScore:
    table = OpTable(spec, scenario)
    ratio = table.affinity(backend_kind, slack_by_kind, params.alpha)
    if ratio is None:
        raise ValueError(
            f"affinity undefined: {spec.operation!r} has no schedulable entry on {backend_kind!r}"
        )
    return AffinityScore(spec.operation, backend_kind, ratio)


@dataclass
class _Hold:
    """An armed batching delay for one operation's pending inputs."""

    deadline_s: float
    needed: int


class Configurator:
    """Owns the speculative and commit queues plus every tuning decision.

    The surrounding run engine feeds it invocations and clock/queue state;
    everything here is single-threaded and deterministic.
    """

    def __init__(
        self,
        tables: Mapping[str, OpTable],
        paths: Sequence[SequentialPath],
        depths: Mapping[str, int],
        scenario: Scenario,
        params: TuningParams,
        ablations: frozenset[str],
        target_s: float,
        *,
        clock: Callable[[], float],
        upstream_supply: Callable[[str], int],
        cq_length: Callable[[str], int],
        submit: Callable[[Any, ConfigEntry, int], None],
        make_invocation: Callable[[str, list, bool], Any],
        schedule_wake: Callable[[float, Any], None],
    ) -> None:
        unknown = ablations - set(ABLATION_TOKENS)
        if unknown:
            raise ValueError(f"unknown ablation tokens: {sorted(unknown)}")
        self.tables = dict(tables)
        self.paths = list(paths)
        self.depths = dict(depths)
        self.scenario = scenario
        self.params = params
        self.ablations = ablations
        self.target_s = target_s
        self._clock = clock
        self._supply = upstream_supply
        self._cq_length = cq_length
        self._submit = submit
        self._make_invocation = make_invocation
        self._schedule_wake = schedule_wake

        self.kinds = scenario.backend_kinds()
        self._pool = {k: float(scenario.backend(k).pool_resources) for k in self.kinds}
        self.cq_capacity = self._derive_cq_capacity()

        # Live reference-latency view plus per-op path share ratios.
        self._ref_latency = {op: t.ref_entry.latency_s for op, t in self.tables.items()}
        self._suffixes: dict[str, list[tuple[str, ...]]] = {
            op: [p[p.index(op):] for p in self.paths if op in p] for op in self.tables
        }
        for op, suf in self._suffixes.items():
            if not suf:
                raise ValueError(f"operation {op!r} does not appear on any path")
        self._ratio_version = -1
        self._ratios: dict[str, tuple[float, ...]] = {}

        # Speculative queue: per-op id-ordered deques plus per-kind weights.
        self.sq_by_op: dict[str, deque[Any]] = {op: deque() for op in self.tables}
        self._sq_weight: dict[str, dict[tuple[str, int], int]] = {k: {} for k in self.kinds}
        self._cq_weight: dict[str, dict[tuple[str, int], int]] = {k: {} for k in self.kinds}
        self._version = 0
        self._ref_version = 0
        self._queueing_cache: tuple[int, dict[str, float]] | None = None
        self._bundle_cache: dict[str, tuple[int, dict[str, float]]] = {}

        self.forced_counts: dict[str, int] = {op: 0 for op in self.tables}
        self.completed_ref: dict[str, int] = {op: 0 for op in self.tables}
        self.holds: dict[str, _Hold] = {}

        self.decision_log: list[tuple] = []
        self.speculate_times: list[float] = []
        self.commit_times: list[float] = []

    # -- shared state ---------------------------------------------------------

    def _derive_cq_capacity(self) -> dict[str, int]:
        if self.params.cq_capacity is not None:
            return {k: self.params.cq_capacity for k in self.kinds}
        caps: dict[str, int] = {}
        for k in self.kinds:
            min_r = None
            for t in self.tables.values():
                on = t.kind_idx == t._kind_pos.get(k, -1)
                if on.any():
                    r = int(t.res[on].min())
                    min_r = r if min_r is None else min(min_r, r)
            if min_r is None:
                caps[k] = 1
            else:
                caps[k] = max(1, int(self._pool[k] // min_r))
        return caps

    def bump(self) -> None:
        self._version += 1

    def bump_profiles(self, op: str, index: int) -> None:
        """Feedback changed one latency estimate; refresh dependent caches."""
        self._version += 1
        if index == self.tables[op].ref_index:
            self._ref_latency[op] = self.tables[op].lat[index]
            self._ref_version += 1

    def recalibrate_unobserved(self, op: str, observed: Container[tuple[str, str]]) -> None:
        """Rescale never-observed estimates by the reference drift ratio.

        Runs once per operation, when the warm-up gate lifts. Smoothed
        reference completions are the only ground truth available at that
        point; entries with zero completions inherit the same systematic
        error, so their estimates are rescaled from the profiled value by
        smoothed/profiled of the reference. Accurate profiles give ratio 1
        and the pass is a no-op.
        """
        table = self.tables[op]
        if table.ref_index < 0:
            return
        initial_ref = table.entries[table.ref_index].latency_initial_s
        if initial_ref <= 0.0:
            return
        ratio = float(table.lat[table.ref_index]) / initial_ref
        for i, entry in enumerate(table.entries):
            if i == table.ref_index or (op, entry.config_id) in observed:
                continue
            table.set_latency(i, entry.latency_initial_s * ratio)
        self._version += 1

    def _path_ratios(self, op: str) -> tuple[float, ...]:
        if self._ratio_version != self._ref_version:
            self._ratios.clear()
            self._ratio_version = self._ref_version
        got = self._ratios.get(op)
        if got is None:
            ref = self._ref_latency
            own = ref[op]
            ratios = []
            for suffix in self._suffixes[op]:
                total = 0.0
                for o in suffix:
                    total += ref[o]
                ratios.append(own / total)
            got = tuple(ratios)
            self._ratios[op] = got
        return got

    def queueing_by_kind(self) -> dict[str, float]:
        cached = self._queueing_cache
        if cached is not None and cached[0] == self._version:
            return cached[1]
        out: dict[str, float] = {}
        for k in self.kinds:
            total = 0.0
            for weights in (self._sq_weight[k], self._cq_weight[k]):
                for (op, eidx), count in weights.items():
                    t = self.tables[op]
                    total += count * (t.lat[eidx] * t.res[eidx])
            out[k] = total / self._pool[k]
        self._queueing_cache = (self._version, out)
        return out

    def slack_by_kind(self, op: str) -> dict[str, float]:
        cached = self._bundle_cache.get(op)
        if cached is not None and cached[0] == self._version:
            return cached[1]
        queueing = self.queueing_by_kind()
        now = self._clock()
        ratios = self._path_ratios(op)
        out: dict[str, float] = {}
        for k in self.kinds:
            budget = self.target_s - now - queueing[k]
            slack = None
            for r in ratios:
                v = r * budget
                if slack is None or v < slack:
                    slack = v
            out[k] = slack  # type: ignore[assignment]
        self._bundle_cache[op] = (self._version, out)
        return out

    def slack(self, op: str, kind: str) -> Slack:
        return Slack(self.slack_by_kind(op)[kind], kind)

    def affinity_of(self, op: str, kind: str) -> float | None:
        return self.tables[op].affinity(kind, self.slack_by_kind(op), self.params.alpha)

    # -- speculation ----------------------------------------------------------

    def _weights_add(self, table: dict[str, dict], kind: str, op: str, eidx: int, d: int) -> None:
        key = (op, eidx)
        m = table[kind]
        new = m.get(key, 0) + d
        if new:
            m[key] = new
        else:
            m.pop(key, None)
        self.bump()

    def speculate_from_buffer(self, op: str, buffer: list) -> int:
        """Form invocations from an operation's pending inputs.

        Greedily assigns batches per the current selection; arms a batching
        hold and stops when the decision says waiting for a fuller batch is
        safe. Returns the number of invocations formed.
        """
        formed = 0
        table = self.tables[op]
        dfp_on = "dfp" not in self.ablations
        sdb_on = "sdb" not in self.ablations
        while buffer:
            t0 = time.perf_counter()
            forced = (
                dfp_on
                and table.ref_index >= 0
                and self.completed_ref[op] < self.params.dfp_count
            )
            slacks = self.slack_by_kind(op)
            if forced:
                entry = table.ref_entry
                decision = Decision(
                    kind="assign",
                    entry=entry,
                    entry_index=table.ref_index,
                    fill=1,
                    objective_value=float("nan"),
                    slack_s=slacks[entry.backend_kind],
                )
                self.forced_counts[op] += 1
            else:
                hold = self.holds.get(op)
                allow_delay = sdb_on
                if hold is not None and self._clock() >= hold.deadline_s:
                    allow_delay = False  # budget spent; flush with what we have
                decision = table.select(
                    slacks,
                    self.params.alpha,
                    len(buffer),
                    allow_delay=allow_delay,
                    upstream_supply=self._supply(op),
                )
                assert decision is not None
                if decision.kind == "delay":
                    if hold is None:
                        deadline = self._clock() + decision.wait_budget_s
                        self.holds[op] = _Hold(deadline, decision.entry.batch_size)
                        if deadline != float("inf"):
                            self._schedule_wake(deadline, ("hold", op))
                    self.speculate_times.append(time.perf_counter() - t0)
                    break
            self.holds.pop(op, None)
            items = [buffer.popleft() for _ in range(decision.fill)]
            inv = self._make_invocation(op, items, forced)
            self._enqueue_speculated(inv, decision)
            self.speculate_times.append(time.perf_counter() - t0)
            formed += 1
        return formed

    def speculate_fixed(self, inv: Any) -> None:
        """Re-enter a retry or straggler duplicate: fixed items, fresh decision."""
        t0 = time.perf_counter()
        table = self.tables[inv.operation]
        decision = table.select(
            self.slack_by_kind(inv.operation),
            self.params.alpha,
            inv.fill,
            allow_delay=False,
            min_batch=inv.fill,
        )
        if decision is None:
            raise RuntimeError(
                f"no configuration can re-run {inv.fill} items of {inv.operation!r}"
            )
        self._enqueue_speculated(inv, decision)
        self.speculate_times.append(time.perf_counter() - t0)

    def _enqueue_speculated(self, inv: Any, decision: Decision) -> None:
        inv.state = "speculated"
        inv.spec_entry = decision.entry
        inv.spec_eidx = decision.entry_index
        inv.spec_slack_s = decision.slack_s
        inv.spec_objective = decision.objective_value
        self.sq_by_op[inv.operation].append(inv)
        self._weights_add(self._sq_weight, decision.entry.backend_kind, inv.operation,
                          decision.entry_index, +1)
        self.decision_log.append(
            (self._clock(), "speculate", inv.invocation_id, inv.operation,
             decision.entry.backend_kind, decision.entry.config_id,
             decision.slack_s, decision.objective_value)
        )

    # -- commit ---------------------------------------------------------------

    def _commit_candidate(
        self, op: str, head: Any, full_kinds: frozenset[str], buffered: int
    ) -> tuple[ConfigEntry, int, int, float, float] | None:
        """(entry, entry_index, fill_target, slack, objective) for the op's
        queue head, or None when its target commit queue is saturated.

        The head's items are already bound to it, so re-selection only
        considers entries whose batch size can take all of them in one call;
        inputs still waiting in the operation's batching buffer may top the
        batch up to the re-selected size.
        """
        table = self.tables[op]
        if head.forced:
            kind = table.ref_entry.backend_kind
            if kind in full_kinds:
                return None
            slacks = self.slack_by_kind(op)
            return table.ref_entry, table.ref_index, head.fill, slacks[kind], float("nan")
        if "eslc" in self.ablations:
            if head.spec_entry.backend_kind in full_kinds:
                return None
            return (head.spec_entry, head.spec_eidx, head.fill,
                    head.spec_slack_s, head.spec_objective)
        decision = table.select(
            self.slack_by_kind(op),
            self.params.alpha,
            head.fill + buffered,
            allow_delay=False,
            excluded_kinds=full_kinds,
            min_batch=head.fill,
        )
        if decision is None:
            return None
        return (decision.entry, decision.entry_index, max(decision.fill, head.fill),
                decision.slack_s, decision.objective_value)

    def pump_commits(
        self,
        buffered_count: Callable[[str], int],
        topup: Callable[[Any, int], None],
    ) -> int:
        """Admit speculated invocations into commit queues until saturation.

        Ordering: invocations still under warm-up forcing go first, deepest
        operation first; the rest by hardware affinity descending, slack
        ascending, then invocation id. FIFO across everything when the
        priority scheme is ablated. Returns the number of commits.
        """
        committed = 0
        fifo = "pbc" in self.ablations
        while True:
            t0 = time.perf_counter()
            full_kinds = frozenset(
                k for k in self.kinds if self._cq_length(k) >= self.cq_capacity[k]
            )
            best_key: tuple | None = None
            best: tuple[str, Any, ConfigEntry, int, int, float, float] | None = None
            for op in self.tables:
                queue = self.sq_by_op[op]
                if not queue:
                    continue
                head = queue[0]
                cand = self._commit_candidate(op, head, full_kinds, buffered_count(op))
                if cand is None:
                    continue
                entry, eidx, fill_target, slack_s, obj = cand
                if fifo:
                    key: tuple = (head.invocation_id,)
                elif head.forced:
                    key = (0, -self.depths[op], head.invocation_id)
                else:
                    aff = self.tables[op].affinity(
                        entry.backend_kind, self.slack_by_kind(op), self.params.alpha
                    )
                    key = (1, -(aff if aff is not None else 0.0), slack_s, head.invocation_id)
                if best_key is None or key < best_key:
                    best_key = key
                    best = (op, head, entry, eidx, fill_target, slack_s, obj)
            if best is None:
                return committed
            op, inv, entry, eidx, fill_target, slack_s, obj = best
            self.sq_by_op[op].popleft()
            self._weights_add(
                self._sq_weight, inv.spec_entry.backend_kind, op, inv.spec_eidx, -1
            )
            if fill_target > inv.fill:
                topup(inv, fill_target - inv.fill)
            inv.state = "committed"
            inv.committed_entry = entry
            inv.committed_eidx = eidx
            inv.committed_slack_s = slack_s
            inv.committed_at = self._clock()
            self._weights_add(self._cq_weight, entry.backend_kind, op, eidx, +1)
            self.decision_log.append(
                (self._clock(), "commit", inv.invocation_id, op,
                 entry.backend_kind, entry.config_id, slack_s, obj)
            )
            self.commit_times.append(time.perf_counter() - t0)
            committed += 1
            self._submit(inv, entry, inv.fill)

    def notify_started(self, inv: Any) -> None:
        """An invocation left the commit queue for an instance."""
        self._weights_add(
            self._cq_weight, inv.committed_entry.backend_kind, inv.operation,
            inv.committed_eidx, -1,
        )

    def clear_hold(self, op: str) -> None:
        self.holds.pop(op, None)

    def queue_sizes(self) -> dict[str, int]:
        return {op: len(q) for op, q in self.sq_by_op.items()}

    def sq_total(self) -> int:
        return sum(len(q) for q in self.sq_by_op.values())
