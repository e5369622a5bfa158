"""Pipeline structure: operations, knob templates, configurations, and DAG paths.

A pipeline is a DAG of named operations. Each operation carries a knob
template describing its tunable execution configurations (hardware kind,
resource size, batch size, plus arbitrary categorical or ranged knobs).
Everything in this module is a pure function over immutable values; the
simulator and configurator build on top of it.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

# Backend kind that reference configurations must live on.
CPU_KIND = "cpu"

_PREDICATE_OPS = {
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
    "==": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
}


def canonical_json(obj: Any) -> str:
    """Serialize with sorted keys and fixed separators so hashes are stable."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def content_hash(obj: Any) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def expand_range(
    lo: int, hi: int, *, step: int | None = None, progression: str = "linear"
) -> tuple[int, ...]:
    """Expand a ranged knob declaration into an explicit ascending value list.

    ``linear`` walks lo..hi by ``step``; ``pow2`` doubles from lo while <= hi.
    """
    if lo > hi:
        raise ValueError(f"range lower bound {lo} exceeds upper bound {hi}")
    if progression == "pow2":
        if lo <= 0:
            raise ValueError("pow2 progression requires a positive lower bound")
        vals = []
        v = lo
        while v <= hi:
            vals.append(v)
            v *= 2
        return tuple(vals)
    if progression != "linear":
        raise ValueError(f"unknown progression {progression!r}")
    if step is None or step <= 0:
        raise ValueError("linear range requires a positive step")
    return tuple(range(lo, hi + 1, step))


@dataclass(frozen=True)
class Knob:
    """One tunable dimension: a name plus its explicit value list."""

    name: str
    values: tuple[Any, ...]

    def __post_init__(self) -> None:
        if not self.values:
            raise ValueError(f"knob {self.name!r} has no values")

    @staticmethod
    def from_json(obj: Mapping[str, Any]) -> "Knob":
        kind = obj.get("kind", "categorical")
        if kind == "categorical":
            return Knob(obj["name"], tuple(obj["values"]))
        if kind == "ranged":
            values = expand_range(
                int(obj["min"]),
                int(obj["max"]),
                step=obj.get("step"),
                progression=obj.get("progression", "linear"),
            )
            return Knob(obj["name"], values)
        raise ValueError(f"unknown knob kind {kind!r}")


@dataclass(frozen=True)
class KnobTemplate:
    """Search space for one operation.

    ``resource_options`` lists the resource sizes enumerable per hardware
    kind (cores for CPU kinds, memory MB for GPU kinds); every kind in
    ``hardware_targets`` must have at least one.
    """

    knobs: tuple[Knob, ...]
    hardware_targets: tuple[str, ...]
    batch_sizes: tuple[int, ...]
    resource_options: Mapping[str, tuple[int, ...]]

    def __post_init__(self) -> None:
        if not self.hardware_targets:
            raise ValueError("template lists no hardware targets")
        if not self.batch_sizes:
            raise ValueError("template lists no batch sizes")
        if any(b < 1 for b in self.batch_sizes):
            raise ValueError("batch sizes must be >= 1")
        names = [k.name for k in self.knobs]
        if len(set(names)) != len(names):
            raise ValueError("duplicate knob names in template")
        for kind in self.hardware_targets:
            opts = self.resource_options.get(kind)
            if not opts:
                raise ValueError(f"hardware target {kind!r} has no resource options")
            if any(r <= 0 for r in opts):
                raise ValueError(f"resource options for {kind!r} must be positive")

    @staticmethod
    def from_json(obj: Mapping[str, Any]) -> "KnobTemplate":
        batches = obj["batch_sizes"]
        if isinstance(batches, Mapping):
            batch_vals = expand_range(
                int(batches["min"]),
                int(batches["max"]),
                step=batches.get("step"),
                progression=batches.get("progression", "pow2"),
            )
        else:
            batch_vals = tuple(int(b) for b in batches)
        return KnobTemplate(
            knobs=tuple(Knob.from_json(k) for k in obj.get("knobs", [])),
            hardware_targets=tuple(obj["hardware_targets"]),
            batch_sizes=batch_vals,
            resource_options={
                k: tuple(sorted(int(r) for r in v))
                for k, v in obj["resource_options"].items()
            },
        )

    def to_json(self) -> dict[str, Any]:
        return {
            "knobs": [
                {"name": k.name, "kind": "categorical", "values": list(k.values)}
                for k in self.knobs
            ],
            "hardware_targets": list(self.hardware_targets),
            "batch_sizes": list(self.batch_sizes),
            "resource_options": {k: list(v) for k, v in self.resource_options.items()},
        }

    def cardinality(self) -> int:
        per_knob = 1
        for k in self.knobs:
            per_knob *= len(k.values)
        return sum(
            len(self.resource_options[kind]) * len(self.batch_sizes) * per_knob
            for kind in self.hardware_targets
        )


@dataclass(frozen=True)
class OperationSpec:
    """A named pipeline stage and its tunable search space."""

    name: str
    executable_id: str
    knob_template: KnobTemplate
    branching: bool = False


@dataclass(frozen=True)
class ConfigAssignment:
    """One point in an operation's search space, prior to profiling."""

    backend_kind: str
    resource_request: int
    batch_size: int
    knob_values: tuple[tuple[str, Any], ...]

    def config_id(self) -> str:
        parts = [f"{self.backend_kind}-r{self.resource_request}-b{self.batch_size}"]
        parts.extend(f"{k}={v}" for k, v in self.knob_values)
        return "-".join(parts)


@dataclass
class ConfigEntry:
    """A profiled configuration: knob assignment plus latency estimates.

    ``latency_s`` is the live smoothed per-batch estimate and is updated by
    runtime feedback; ``latency_initial_s`` retains the profiler's value.
    """

    config_id: str
    backend_kind: str
    knob_values: dict[str, Any]
    batch_size: int
    resource_request: int
    latency_s: float
    latency_initial_s: float
    peak_memory_mb: float = 0.0
    schedulable: bool = True

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError(f"{self.config_id}: batch size must be >= 1")
        if self.resource_request <= 0:
            raise ValueError(f"{self.config_id}: resource request must be positive")
        if self.latency_s <= 0 or self.latency_initial_s <= 0:
            raise ValueError(f"{self.config_id}: latency must be positive")

    def to_json(self) -> dict[str, Any]:
        return {
            "config_id": self.config_id,
            "backend_kind": self.backend_kind,
            "knob_values": dict(sorted(self.knob_values.items())),
            "batch_size": self.batch_size,
            "resource_request": self.resource_request,
            "latency_s": self.latency_s,
            "latency_initial_s": self.latency_initial_s,
            "peak_memory_mb": self.peak_memory_mb,
            "schedulable": self.schedulable,
        }

    @staticmethod
    def from_json(obj: Mapping[str, Any]) -> "ConfigEntry":
        return ConfigEntry(
            config_id=obj["config_id"],
            backend_kind=obj["backend_kind"],
            knob_values=dict(obj["knob_values"]),
            batch_size=int(obj["batch_size"]),
            resource_request=int(obj["resource_request"]),
            latency_s=float(obj["latency_s"]),
            latency_initial_s=float(obj["latency_initial_s"]),
            peak_memory_mb=float(obj.get("peak_memory_mb", 0.0)),
            schedulable=bool(obj.get("schedulable", True)),
        )


@dataclass
class ConfigSpec:
    """All profiled configurations of one operation plus its reference entry."""

    operation: str
    entries: list[ConfigEntry]
    reference_id: str

    def __post_init__(self) -> None:
        ids = [e.config_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError(f"{self.operation}: duplicate config ids")
        if self.reference_id not in set(ids):
            raise ValueError(f"{self.operation}: reference {self.reference_id!r} not among entries")

    def entry(self, config_id: str) -> ConfigEntry:
        for e in self.entries:
            if e.config_id == config_id:
                return e
        raise KeyError(config_id)

    def to_json(self) -> dict[str, Any]:
        return {
            "operation": self.operation,
            "reference_id": self.reference_id,
            "entries": [e.to_json() for e in self.entries],
        }

    @staticmethod
    def from_json(obj: Mapping[str, Any]) -> "ConfigSpec":
        return ConfigSpec(
            operation=obj["operation"],
            entries=[ConfigEntry.from_json(e) for e in obj["entries"]],
            reference_id=obj["reference_id"],
        )


@dataclass(frozen=True)
class BranchPredicate:
    """Comparison over one integer input attribute, e.g. persons > 0."""

    attr: str
    op: str
    value: int

    def __post_init__(self) -> None:
        if self.op not in _PREDICATE_OPS:
            raise ValueError(f"unknown predicate operator {self.op!r}")

    def evaluate(self, attrs: Mapping[str, int]) -> bool:
        return _PREDICATE_OPS[self.op](attrs.get(self.attr, 0), self.value)


@dataclass
class PipelineDag:
    """Operations wired into a DAG with optional branch predicates and fan-out.

    ``branch_predicates`` gates edges out of branching vertices; an edge with
    no predicate always fires. ``fanout_rules`` maps a destination vertex to
    the input attribute whose value is the number of items emitted to it per
    upstream item (absent means one item per item).
    """

    vertices: tuple[str, ...]
    edges: tuple[tuple[str, str], ...]
    branching: frozenset[str] = frozenset()
    branch_predicates: dict[tuple[str, str], BranchPredicate] = field(default_factory=dict)
    fanout_rules: dict[str, str] = field(default_factory=dict)

    def successors(self, v: str) -> list[str]:
        return sorted(dst for src, dst in self.edges if src == v)

    def predecessors(self, v: str) -> list[str]:
        return sorted(src for src, dst in self.edges if dst == v)

    def input_vertices(self) -> list[str]:
        with_preds = {dst for _, dst in self.edges}
        return sorted(v for v in self.vertices if v not in with_preds)

    def output_vertices(self) -> list[str]:
        with_succs = {src for src, _ in self.edges}
        return sorted(v for v in self.vertices if v not in with_succs)

    def depths(self) -> dict[str, int]:
        """Longest edge distance from any input vertex, per vertex."""
        order = _topological_order(self)
        if order is None:
            raise ValueError("pipeline contains a cycle")
        depth = {v: 0 for v in self.vertices}
        for v in order:
            for dst in self.successors(v):
                depth[dst] = max(depth[dst], depth[v] + 1)
        return depth

    def ancestors(self, v: str) -> set[str]:
        seen: set[str] = set()
        stack = list(self.predecessors(v))
        while stack:
            u = stack.pop()
            if u not in seen:
                seen.add(u)
                stack.extend(self.predecessors(u))
        return seen

    def content_hash(self) -> str:
        return content_hash(
            {
                "vertices": sorted(self.vertices),
                "edges": sorted(self.edges),
                "branching": sorted(self.branching),
                "predicates": {
                    f"{s}->{d}": [p.attr, p.op, p.value]
                    for (s, d), p in sorted(self.branch_predicates.items())
                },
                "fanout": dict(sorted(self.fanout_rules.items())),
            }
        )


SequentialPath = tuple[str, ...]


def _topological_order(dag: PipelineDag) -> list[str] | None:
    """Kahn's algorithm; None if a cycle prevents completion."""
    indeg = {v: 0 for v in dag.vertices}
    for _, dst in dag.edges:
        indeg[dst] += 1
    ready = sorted(v for v, d in indeg.items() if d == 0)
    order: list[str] = []
    while ready:
        v = ready.pop(0)
        order.append(v)
        for dst in dag.successors(v):
            indeg[dst] -= 1
            if indeg[dst] == 0:
                # Insertion keeps the ready list sorted without a re-sort.
                lo = 0
                while lo < len(ready) and ready[lo] < dst:
                    lo += 1
                ready.insert(lo, dst)
    if len(order) != len(dag.vertices):
        return None
    return order


def validate_dag(dag: PipelineDag) -> list[str]:
    """Check structural invariants; returns human-readable violations.

    An empty report means the DAG is well-formed: acyclic, at least one input
    and one output vertex, edges over known vertices, and every predicate
    attached to an existing edge leaving a branching vertex.
    """
    violations: list[str] = []
    known = set(dag.vertices)
    if len(known) != len(dag.vertices):
        violations.append("duplicate vertex names")
    for src, dst in dag.edges:
        if src not in known or dst not in known:
            violations.append(f"edge ({src}, {dst}) references an unknown vertex")
    edge_set = set(dag.edges)
    if len(edge_set) != len(dag.edges):
        violations.append("duplicate edges")
    # The cycle check walks edges, so it only makes sense once they all
    # reference known vertices.
    if not violations:
        if _topological_order(dag) is None:
            violations.append("pipeline contains a cycle")
        else:
            if not dag.input_vertices():
                violations.append("pipeline has no input vertex")
            if not dag.output_vertices():
                violations.append("pipeline has no output vertex")
    for (src, dst), _pred in sorted(dag.branch_predicates.items()):
        if (src, dst) not in edge_set:
            violations.append(f"predicate on missing edge ({src}, {dst})")
        if src not in dag.branching:
            violations.append(f"predicate edge ({src}, {dst}) leaves non-branching vertex {src}")
    for v in sorted(dag.fanout_rules):
        if v not in known:
            violations.append(f"fan-out rule for unknown vertex {v}")
    return violations


def decompose_paths(dag: PipelineDag) -> tuple[SequentialPath, ...]:
    """Enumerate every simple input-to-output path, lexicographically ordered.

    Rejects malformed DAGs with the validation report in the error message.
    """
    violations = validate_dag(dag)
    if violations:
        raise ValueError("invalid pipeline: " + "; ".join(violations))
    outputs = set(dag.output_vertices())
    paths: list[SequentialPath] = []

    def walk(v: str, prefix: list[str]) -> None:
        prefix.append(v)
        if v in outputs:
            paths.append(tuple(prefix))
        else:
            for nxt in dag.successors(v):
                walk(nxt, prefix)
        prefix.pop()

    for start in dag.input_vertices():
        walk(start, [])
    paths.sort()
    return tuple(paths)


def enumerate_configs(template: KnobTemplate) -> list[ConfigAssignment]:
    """Expand a template into its full cross-product of assignments.

    Order is deterministic: hardware kinds sorted, then resource sizes and
    batch sizes ascending, then knob values in template order.
    """
    out: list[ConfigAssignment] = []
    knob_names = [k.name for k in template.knobs]
    value_lists = [k.values for k in template.knobs]
    for kind in sorted(template.hardware_targets):
        for resource in template.resource_options[kind]:
            for batch in sorted(template.batch_sizes):
                for combo in itertools.product(*value_lists):
                    out.append(
                        ConfigAssignment(
                            backend_kind=kind,
                            resource_request=resource,
                            batch_size=batch,
                            knob_values=tuple(zip(knob_names, combo)),
                        )
                    )
    return out


def reference_config(spec: ConfigSpec) -> ConfigEntry:
    """The operation's baseline: smallest CPU batch-1 entry.

    Ties on resource size break toward the lexicographically smallest knob
    assignment, then config id. Raises when no CPU batch-1 entry exists.
    """
    candidates = [
        e
        for e in spec.entries
        if e.backend_kind == CPU_KIND and e.batch_size == 1
    ]
    if not candidates:
        raise ValueError(
            f"operation {spec.operation!r} has no {CPU_KIND} batch-1 entry to use as reference"
        )
    return min(
        candidates,
        key=lambda e: (
            e.resource_request,
            tuple(sorted((k, str(v)) for k, v in e.knob_values.items())),
            e.config_id,
        ),
    )


def load_pipeline(obj: Mapping[str, Any]) -> tuple[PipelineDag, dict[str, OperationSpec]]:
    """Build the DAG and operation table from a parsed pipeline document."""
    ops: dict[str, OperationSpec] = {}
    for op_obj in obj["operations"]:
        name = op_obj["name"]
        if name in ops:
            raise ValueError(f"duplicate operation name {name!r}")
        ops[name] = OperationSpec(
            name=name,
            executable_id=op_obj["executable_id"],
            knob_template=KnobTemplate.from_json(op_obj["knob_template"]),
            branching=bool(op_obj.get("branching", False)),
        )
    edges = tuple((e[0], e[1]) for e in obj["edges"])
    predicates: dict[tuple[str, str], BranchPredicate] = {}
    for p in obj.get("branch_predicates", []):
        predicates[(p["src"], p["dst"])] = BranchPredicate(p["attr"], p["op"], int(p["value"]))
    dag = PipelineDag(
        vertices=tuple(ops),
        edges=edges,
        branching=frozenset(n for n, op in ops.items() if op.branching),
        branch_predicates=predicates,
        fanout_rules=dict(obj.get("fanout_rules", {})),
    )
    return dag, ops


def pipeline_content_hash(obj: Mapping[str, Any]) -> str:
    """Hash of the raw pipeline document, used to key the path cache."""
    return content_hash(obj)
