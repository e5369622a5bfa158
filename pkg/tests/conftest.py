from __future__ import annotations

from pathlib import Path
from typing import Any, Mapping

import pytest

from slackpipe.pipeline import ConfigEntry, ConfigSpec
from slackpipe.scenario import (
    BackendSpec,
    GroundTruthModel,
    OpKindTruth,
    Scenario,
    TuningDefaults,
)

REPO_ROOT = Path(__file__).resolve().parent.parent
SCENARIO_DIR = REPO_ROOT / "scenarios"

_acceptance_lines: list[str] = []


def record_acceptance(label: str, passed: bool, detail: str) -> None:
    _acceptance_lines.append(f"{'PASS' if passed else 'FAIL'}  {label}: {detail}")


def pytest_terminal_summary(terminalreporter, exitstatus, config) -> None:
    if not _acceptance_lines:
        return
    terminalreporter.section("acceptance checks")
    for line in _acceptance_lines:
        terminalreporter.write_line(line)


def make_entry(
    config_id: str | None = None,
    *,
    kind: str = "cpu",
    resource: int = 1,
    batch: int = 1,
    latency: float = 1.0,
    schedulable: bool = True,
    knob_values: Mapping[str, Any] | None = None,
) -> ConfigEntry:
    if config_id is None:
        config_id = f"{kind}-r{resource}-b{batch}"
        if knob_values:
            config_id += "-" + "-".join(f"{k}={v}" for k, v in sorted(knob_values.items()))
    return ConfigEntry(
        config_id=config_id,
        backend_kind=kind,
        knob_values=dict(knob_values or {}),
        batch_size=batch,
        resource_request=resource,
        latency_s=latency,
        latency_initial_s=latency,
        schedulable=schedulable,
    )


def make_spec(operation: str, entries: list[ConfigEntry], reference_id: str | None = None) -> ConfigSpec:
    return ConfigSpec(
        operation=operation,
        entries=entries,
        reference_id=reference_id or entries[0].config_id,
    )


def make_scenario(
    backends: list[tuple[str, int, int, float]],
    truths: Mapping[str, Mapping[str, OpKindTruth]] | None = None,
    *,
    seed: int = 7,
    noise_sigma: float = 0.0,
    failure_rate: float = 0.0,
    straggle_rate: float = 0.0,
    straggle_factor: float = 1.0,
    tuning: TuningDefaults | None = None,
) -> Scenario:
    """Build a scenario from (kind, instances, resources_per_instance, price) rows."""
    return Scenario(
        name="test",
        backends=tuple(
            BackendSpec(kind=k, instance_count=n, resources_per_instance=r, price_rate=p)
            for k, n, r, p in backends
        ),
        ground_truth=GroundTruthModel(
            per_op=dict(truths or {}),
            noise_sigma=noise_sigma,
            failure_rate=failure_rate,
            straggle_rate=straggle_rate,
            straggle_factor=straggle_factor,
        ),
        seed=seed,
        tuning=tuning or TuningDefaults(),
    )


@pytest.fixture(scope="session")
def scenario_dir() -> Path:
    assert SCENARIO_DIR.is_dir(), "bundled scenarios missing; run scenarios/build_scenarios.py"
    return SCENARIO_DIR


@pytest.fixture(scope="session")
def metadata_dir(tmp_path_factory) -> Path:
    return tmp_path_factory.mktemp("metadata")
