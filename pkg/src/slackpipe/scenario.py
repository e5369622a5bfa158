"""Scenario files: backend fleets, prices, ground-truth latency, noise, faults.

A scenario pins down everything the simulator needs that is not part of the
pipeline itself. Ground truth is intentionally hidden from the tuning engine;
only the profiler and the simulated executions sample it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

from .pipeline import ConfigAssignment


@dataclass(frozen=True)
class BackendSpec:
    """A pool of identical serverless instances of one hardware kind.

    ``resources_per_instance`` is cores for CPU kinds and memory MB for GPU
    kinds; concurrent invocations coexist on an instance while their resource
    requests sum to at most that limit. ``price_rate`` is dollars per
    resource-unit-second.
    """

    kind: str
    instance_count: int
    resources_per_instance: int
    price_rate: float

    def __post_init__(self) -> None:
        if self.instance_count < 1:
            raise ValueError(f"backend {self.kind!r}: instance count must be >= 1")
        if self.resources_per_instance < 1:
            raise ValueError(f"backend {self.kind!r}: resources per instance must be >= 1")
        if self.price_rate <= 0:
            raise ValueError(f"backend {self.kind!r}: price rate must be positive")

    @property
    def pool_resources(self) -> int:
        return self.instance_count * self.resources_per_instance


@dataclass(frozen=True)
class OpKindTruth:
    """Ground-truth latency law for one operation on one hardware kind.

    Per-batch base latency for a configuration with resource size R and
    batch size B is::

        base_seconds * (R / ref_resource) ** -resource_exponent
                     * B ** batch_exponent
                     * product(knob multipliers)

    and the content-dependent part adds ``per_item_seconds`` for every item
    in the batch.
    """

    base_seconds: float
    ref_resource: int
    resource_exponent: float = 0.0
    batch_exponent: float = 1.0
    per_item_seconds: float = 0.0
    knob_multipliers: Mapping[str, Mapping[str, float]] = field(default_factory=dict)

    def base_latency(self, assignment: ConfigAssignment) -> float:
        lat = self.base_seconds
        if self.resource_exponent:
            lat *= (assignment.resource_request / self.ref_resource) ** -self.resource_exponent
        lat *= assignment.batch_size**self.batch_exponent
        for knob, value in assignment.knob_values:
            table = self.knob_multipliers.get(knob)
            if table:
                lat *= table.get(str(value), 1.0)
        return lat


@dataclass(frozen=True)
class GroundTruthModel:
    """Latency law plus stochastic effects for the whole scenario.

    ``noise_sigma`` is the log-normal sigma of a multiplicative latency
    factor (0 disables noise). Failures and straggles are per-invocation
    Bernoulli draws; a straggle multiplies actual latency by
    ``straggle_factor``. Failures surface at the would-be completion time.
    """

    per_op: Mapping[str, Mapping[str, OpKindTruth]]
    noise_sigma: float = 0.0
    failure_rate: float = 0.0
    straggle_rate: float = 0.0
    straggle_factor: float = 1.0
    peak_memory_per_item_mb: float = 0.0

    def kind_truth(self, operation: str, kind: str) -> OpKindTruth:
        table = self.per_op.get(operation)
        if table is None or kind not in table:
            raise KeyError(f"no ground truth for operation {operation!r} on {kind!r}")
        return table[kind]

    def base_latency(self, operation: str, assignment: ConfigAssignment) -> float:
        return self.kind_truth(operation, assignment.backend_kind).base_latency(assignment)


@dataclass(frozen=True)
class TuningDefaults:
    """Scenario-supplied defaults for the tuning engine; CLI flags override."""

    alpha: float = 100.0
    smoothing_beta: float = 0.5
    dfp_count: int = 10
    straggler_timeout_factor: float = 1.5
    cq_capacity: int | None = None
    samples_per_config: int = 3


@dataclass(frozen=True)
class Scenario:
    name: str
    backends: tuple[BackendSpec, ...]
    ground_truth: GroundTruthModel
    seed: int = 0
    dispatch_overhead_s: float = 0.0
    tuning: TuningDefaults = TuningDefaults()

    def __post_init__(self) -> None:
        kinds = [b.kind for b in self.backends]
        if len(set(kinds)) != len(kinds):
            raise ValueError("duplicate backend kinds in scenario")

    def backend(self, kind: str) -> BackendSpec:
        for b in self.backends:
            if b.kind == kind:
                return b
        raise KeyError(f"scenario has no backend of kind {kind!r}")

    def backend_kinds(self) -> list[str]:
        return [b.kind for b in self.backends]

    def with_fault_overrides(
        self,
        *,
        noise_sigma: float | None = None,
        failure_rate: float | None = None,
        straggle_rate: float | None = None,
        straggle_factor: float | None = None,
    ) -> "Scenario":
        gt = self.ground_truth
        gt = replace(
            gt,
            noise_sigma=gt.noise_sigma if noise_sigma is None else noise_sigma,
            failure_rate=gt.failure_rate if failure_rate is None else failure_rate,
            straggle_rate=gt.straggle_rate if straggle_rate is None else straggle_rate,
            straggle_factor=gt.straggle_factor if straggle_factor is None else straggle_factor,
        )
        return replace(self, ground_truth=gt)


def _truth_from_json(obj: Mapping[str, Any]) -> OpKindTruth:
    return OpKindTruth(
        base_seconds=float(obj["base_seconds"]),
        ref_resource=int(obj["ref_resource"]),
        resource_exponent=float(obj.get("resource_exponent", 0.0)),
        batch_exponent=float(obj.get("batch_exponent", 1.0)),
        per_item_seconds=float(obj.get("per_item_seconds", 0.0)),
        knob_multipliers={
            k: {str(vk): float(vv) for vk, vv in v.items()}
            for k, v in obj.get("knob_multipliers", {}).items()
        },
    )


def scenario_from_json(obj: Mapping[str, Any]) -> Scenario:
    backends = tuple(
        BackendSpec(
            kind=b["kind"],
            instance_count=int(b["instance_count"]),
            resources_per_instance=int(b["resources_per_instance"]),
            price_rate=float(b["price_rate"]),
        )
        for b in obj["backends"]
    )
    gt = GroundTruthModel(
        per_op={
            op: {kind: _truth_from_json(t) for kind, t in kinds.items()}
            for op, kinds in obj["ground_truth"].items()
        },
        noise_sigma=float(obj.get("noise_sigma", 0.0)),
        failure_rate=float(obj.get("failure_rate", 0.0)),
        straggle_rate=float(obj.get("straggle_rate", 0.0)),
        straggle_factor=float(obj.get("straggle_factor", 1.0)),
        peak_memory_per_item_mb=float(obj.get("peak_memory_per_item_mb", 0.0)),
    )
    tuning_obj = obj.get("tuning", {})
    tuning = TuningDefaults(
        alpha=float(tuning_obj.get("alpha", 100.0)),
        smoothing_beta=float(tuning_obj.get("smoothing_beta", 0.5)),
        dfp_count=int(tuning_obj.get("dfp_count", 10)),
        straggler_timeout_factor=float(tuning_obj.get("straggler_timeout_factor", 1.5)),
        cq_capacity=(
            int(tuning_obj["cq_capacity"]) if tuning_obj.get("cq_capacity") is not None else None
        ),
        samples_per_config=int(tuning_obj.get("samples_per_config", 3)),
    )
    return Scenario(
        name=obj.get("name", "scenario"),
        backends=backends,
        ground_truth=gt,
        seed=int(obj.get("seed", 0)),
        dispatch_overhead_s=float(obj.get("dispatch_overhead_s", 0.0)),
        tuning=tuning,
    )


def load_scenario(path: str | Path) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        return scenario_from_json(json.load(fh))
