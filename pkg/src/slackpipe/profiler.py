"""One-time profiling of operation configurations, with a content-hash cache.

Profiling samples each enumerated configuration on an otherwise idle
simulated backend with zero fan-in items, so the stored latency is the
content-independent per-batch base. Results are keyed by the operation's
executable identity plus its knob template, which makes them reusable across
pipeline recompositions and repeat invocations.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .backend import draw_actual_latency
from .pipeline import (
    ConfigEntry,
    ConfigSpec,
    OperationSpec,
    SequentialPath,
    content_hash,
    enumerate_configs,
    reference_config,
)
from .scenario import Scenario

METADATA_DIR_ENV = "SLACKPIPE_METADATA_DIR"
DEFAULT_SAMPLES = 3


def profile_operation(
    op: OperationSpec,
    scenario: Scenario,
    samples_per_config: int = DEFAULT_SAMPLES,
) -> ConfigSpec:
    """Measure every configuration of one operation.

    Each enumerated assignment is sampled ``samples_per_config`` times
    (at least once) with a full batch of input items and the mean becomes
    the stored latency estimate. Configurations whose resource request
    cannot fit on any instance of their backend are kept but marked
    unschedulable; a hardware target with no backend in the scenario at
    all is an error.
    """
    samples = max(1, samples_per_config)
    for kind in op.knob_template.hardware_targets:
        try:
            scenario.backend(kind)
        except KeyError:
            raise ValueError(
                f"operation {op.name!r} targets backend kind {kind!r}, "
                f"which the scenario does not provide"
            ) from None
    assignments = enumerate_configs(op.knob_template)
    seed_material = content_hash([scenario.seed, op.executable_id])
    rng = np.random.default_rng(int(seed_material[:16], 16))
    model = scenario.ground_truth
    entries: list[ConfigEntry] = []
    for a in assignments:
        drawn = [
            draw_actual_latency(model, op.name, a, a.batch_size, rng)[0]
            for _ in range(samples)
        ]
        latency = float(sum(drawn) / len(drawn))
        backend = scenario.backend(a.backend_kind)
        entries.append(
            ConfigEntry(
                config_id=a.config_id(),
                backend_kind=a.backend_kind,
                knob_values=dict(a.knob_values),
                batch_size=a.batch_size,
                resource_request=a.resource_request,
                latency_s=latency,
                latency_initial_s=latency,
                peak_memory_mb=model.peak_memory_per_item_mb * a.batch_size,
                schedulable=a.resource_request <= backend.resources_per_instance,
            )
        )
    draft = ConfigSpec(operation=op.name, entries=entries, reference_id=entries[0].config_id)
    draft.reference_id = reference_config(draft).config_id
    return draft


def profiling_time_estimate(
    specs: Mapping[str, ConfigSpec], samples_per_config: int = DEFAULT_SAMPLES
) -> float:
    """Virtual seconds a sequential profiling pass would consume."""
    samples = max(1, samples_per_config)
    total = 0.0
    for spec in specs.values():
        for e in spec.entries:
            total += samples * e.latency_initial_s
    return total


def profile_cache_key(op: OperationSpec) -> str:
    return content_hash(
        {"executable_id": op.executable_id, "template": op.knob_template.to_json()}
    )


class MetadataStore:
    """Directory of profiled ConfigSpecs and decomposed path sets.

    Files are content-addressed: an operation's profile key is its
    executable id plus knob template, a pipeline's path key is the hash of
    the whole pipeline document. Hits are never rewritten.
    """

    def __init__(self, root: str | Path | None = None) -> None:
        if root is None:
            root = os.environ.get(METADATA_DIR_ENV, ".slackpipe-metadata")
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _profile_path(self, op: OperationSpec) -> Path:
        return self.root / f"configspec-{op.name}-{profile_cache_key(op)[:16]}.json"

    def load_profile(self, op: OperationSpec) -> ConfigSpec | None:
        path = self._profile_path(op)
        if not path.exists():
            return None
        with open(path, "r", encoding="utf-8") as fh:
            return ConfigSpec.from_json(json.load(fh))

    def store_profile(self, op: OperationSpec, spec: ConfigSpec) -> Path:
        path = self._profile_path(op)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(spec.to_json(), fh, indent=1, sort_keys=True)
            fh.write("\n")
        return path

    def ensure_profile(
        self,
        op: OperationSpec,
        scenario: Scenario,
        samples_per_config: int = DEFAULT_SAMPLES,
        force: bool = False,
    ) -> tuple[ConfigSpec, bool]:
        """Profile unless cached; returns (spec, hit)."""
        if not force:
            cached = self.load_profile(op)
            if cached is not None:
                return cached, True
        spec = profile_operation(op, scenario, samples_per_config)
        self.store_profile(op, spec)
        return spec, False

    def _paths_path(self, pipeline_hash: str) -> Path:
        return self.root / f"paths-{pipeline_hash[:16]}.json"

    def load_paths(self, pipeline_hash: str) -> tuple[SequentialPath, ...] | None:
        path = self._paths_path(pipeline_hash)
        if not path.exists():
            return None
        with open(path, "r", encoding="utf-8") as fh:
            return tuple(tuple(p) for p in json.load(fh))

    def store_paths(self, pipeline_hash: str, paths: tuple[SequentialPath, ...]) -> Path:
        path = self._paths_path(pipeline_hash)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump([list(p) for p in paths], fh)
            fh.write("\n")
        return path
