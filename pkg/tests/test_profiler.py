from __future__ import annotations

import pytest

from slackpipe.pipeline import Knob, KnobTemplate, OperationSpec
from slackpipe.profiler import (
    MetadataStore,
    profile_cache_key,
    profile_operation,
    profiling_time_estimate,
)
from slackpipe.scenario import OpKindTruth

from conftest import make_scenario


def op_spec(name: str = "resize", **template_kwargs) -> OperationSpec:
    template = KnobTemplate(
        knobs=template_kwargs.pop("knobs", ()),
        hardware_targets=template_kwargs.pop("hardware_targets", ("cpu",)),
        batch_sizes=template_kwargs.pop("batch_sizes", (1, 4)),
        resource_options=template_kwargs.pop("resource_options", {"cpu": (1, 2)}),
    )
    return OperationSpec(name=name, executable_id=f"{name}-v1", knob_template=template)


def resize_truth() -> dict:
    return {
        "resize": {
            "cpu": OpKindTruth(
                base_seconds=0.5,
                ref_resource=1,
                resource_exponent=0.5,
                batch_exponent=0.8,
                per_item_seconds=0.02,
            )
        }
    }


def test_profile_reproduces_truth_at_zero_noise() -> None:
    scenario = make_scenario([("cpu", 2, 4, 1e-5)], resize_truth())
    spec = profile_operation(op_spec(), scenario, samples_per_config=1)
    assert len(spec.entries) == 4  # 2 resources x 2 batches
    by_id = {e.config_id: e for e in spec.entries}
    # Estimates are taken against a full batch, per-item share included.
    assert by_id["cpu-r1-b1"].latency_s == pytest.approx(0.5 + 0.02, rel=1e-12)
    assert by_id["cpu-r2-b4"].latency_s == pytest.approx(
        0.5 * 2**-0.5 * 4**0.8 + 0.02 * 4, rel=1e-12
    )
    for e in spec.entries:
        assert e.latency_initial_s == e.latency_s


def test_profile_marks_oversized_configs_unschedulable() -> None:
    scenario = make_scenario([("cpu", 2, 4, 1e-5)], resize_truth())
    spec = profile_operation(
        op_spec(resource_options={"cpu": (1, 8)}), scenario, samples_per_config=1
    )
    flags = {e.config_id: e.schedulable for e in spec.entries}
    assert flags["cpu-r1-b1"] is True
    assert flags["cpu-r8-b1"] is False  # kept for slack anchoring, never runnable


def test_profile_errors_on_missing_backend_kind() -> None:
    scenario = make_scenario([("cpu", 2, 4, 1e-5)], resize_truth())
    with pytest.raises(ValueError):
        profile_operation(
            op_spec(hardware_targets=("cpu", "tpu"),
                    resource_options={"cpu": (1,), "tpu": (1,)}),
            scenario,
            samples_per_config=1,
        )


def test_profile_reference_is_smallest_cpu_batch_one() -> None:
    scenario = make_scenario([("cpu", 2, 4, 1e-5)], resize_truth())
    spec = profile_operation(op_spec(), scenario, samples_per_config=1)
    assert spec.reference_id == "cpu-r1-b1"


def test_profile_records_memory_without_gating() -> None:
    scenario = make_scenario([("cpu", 2, 4, 1e-5)], resize_truth())
    object.__setattr__(
        scenario, "ground_truth",
        type(scenario.ground_truth)(
            per_op=resize_truth(), peak_memory_per_item_mb=256.0,
        ),
    )
    spec = profile_operation(op_spec(), scenario, samples_per_config=1)
    by_id = {e.config_id: e for e in spec.entries}
    assert by_id["cpu-r1-b4"].peak_memory_mb == pytest.approx(1024.0)
    # Memory is bookkeeping only; schedulability stays resource-driven.
    assert by_id["cpu-r1-b4"].schedulable is True


def test_profile_sample_count_clamps_to_one() -> None:
    scenario = make_scenario([("cpu", 2, 4, 1e-5)], resize_truth())
    spec = profile_operation(op_spec(), scenario, samples_per_config=0)
    assert all(e.latency_s > 0 for e in spec.entries)


def test_profile_noise_averages_toward_truth() -> None:
    noisy = make_scenario([("cpu", 2, 4, 1e-5)], resize_truth(), noise_sigma=0.2)
    few = profile_operation(op_spec(), noisy, samples_per_config=1)
    many = profile_operation(op_spec(), noisy, samples_per_config=400)
    truth = 0.5 + 0.02
    few_err = abs(few.entry("cpu-r1-b1").latency_s - truth)
    many_err = abs(many.entry("cpu-r1-b1").latency_s - truth)
    assert many_err < max(few_err, 0.05)


def test_profiling_time_estimate_sums_samples() -> None:
    scenario = make_scenario([("cpu", 2, 4, 1e-5)], resize_truth())
    spec = profile_operation(op_spec(), scenario, samples_per_config=1)
    total = profiling_time_estimate({"resize": spec}, samples_per_config=3)
    assert total == pytest.approx(3 * sum(e.latency_initial_s for e in spec.entries))


# -- metadata cache -----------------------------------------------------------


def test_cache_key_tracks_template_changes() -> None:
    a = profile_cache_key(op_spec())
    b = profile_cache_key(op_spec(batch_sizes=(1, 4, 8)))
    c = profile_cache_key(op_spec(knobs=(Knob("m", ("x",)),)))
    assert len({a, b, c}) == 3


def test_store_roundtrip_and_reuse(tmp_path) -> None:
    scenario = make_scenario([("cpu", 2, 4, 1e-5)], resize_truth())
    store = MetadataStore(str(tmp_path))
    op = op_spec()

    spec, was_cached = store.ensure_profile(op, scenario, samples_per_config=1)
    assert was_cached is False
    again, was_cached = store.ensure_profile(op, scenario, samples_per_config=1)
    assert was_cached is True
    assert [e.to_json() for e in again.entries] == [e.to_json() for e in spec.entries]

    loaded = store.load_profile(op)
    assert loaded is not None and loaded.reference_id == spec.reference_id


def test_paths_roundtrip(tmp_path) -> None:
    store = MetadataStore(str(tmp_path))
    paths = (("a", "b"), ("a", "c"))
    store.store_paths("somehash", paths)
    assert store.load_paths("somehash") == paths
    assert store.load_paths("otherhash") is None
