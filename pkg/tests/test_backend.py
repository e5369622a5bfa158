from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pytest

from slackpipe.backend import (
    BackendSim,
    SubmitRejected,
    draw_actual_latency,
    inject_fault_policy,
    invocation_cost,
)
from slackpipe.pipeline import ConfigAssignment
from slackpipe.scenario import OpKindTruth

from conftest import make_entry, make_scenario


@dataclass
class FakeInvocation:
    invocation_id: int
    operation: str = "op"


def truth_table() -> dict:
    return {
        "op": {
            "cpu": OpKindTruth(
                base_seconds=0.8,
                ref_resource=2,
                resource_exponent=0.5,
                batch_exponent=0.9,
                per_item_seconds=0.05,
                knob_multipliers={"model": {"accurate": 1.5, "fast": 1.0}},
            ),
            "gpu": OpKindTruth(base_seconds=0.1, ref_resource=4),
        }
    }


# -- latency model ------------------------------------------------------------


def test_base_latency_formula() -> None:
    truth = truth_table()["op"]["cpu"]
    a = ConfigAssignment("cpu", 8, 4, (("model", "accurate"),))
    # 0.8 * (8/2)^-0.5 * 4^0.9 * 1.5
    expected = 0.8 * (8 / 2) ** -0.5 * 4**0.9 * 1.5
    assert truth.base_latency(a) == pytest.approx(expected, rel=1e-12)


def test_unknown_knob_value_multiplies_by_one() -> None:
    truth = truth_table()["op"]["cpu"]
    plain = ConfigAssignment("cpu", 2, 1, ())
    odd = ConfigAssignment("cpu", 2, 1, (("model", "mystery"),))
    assert truth.base_latency(odd) == truth.base_latency(plain)


def test_draw_actual_latency_deterministic_without_noise() -> None:
    scenario = make_scenario([("cpu", 2, 8, 1e-5)], truth_table())
    rng = np.random.default_rng(0)
    a = ConfigAssignment("cpu", 2, 4, ())
    latency, straggled = draw_actual_latency(scenario.ground_truth, "op", a, 4, rng)
    expected = 0.8 * 4**0.9 + 0.05 * 4
    assert latency == pytest.approx(expected, rel=1e-12)
    assert not straggled


def test_draw_actual_latency_counts_items_not_capacity() -> None:
    scenario = make_scenario([("cpu", 2, 8, 1e-5)], truth_table())
    rng = np.random.default_rng(0)
    a = ConfigAssignment("cpu", 2, 4, ())
    half, _ = draw_actual_latency(scenario.ground_truth, "op", a, 2, rng)
    assert half == pytest.approx(0.8 * 4**0.9 + 0.05 * 2, rel=1e-12)


def test_straggle_multiplies_latency() -> None:
    scenario = make_scenario(
        [("cpu", 2, 8, 1e-5)], truth_table(), straggle_rate=1.0, straggle_factor=4.0
    )
    rng = np.random.default_rng(0)
    a = ConfigAssignment("cpu", 2, 1, ())
    latency, straggled = draw_actual_latency(scenario.ground_truth, "op", a, 0, rng)
    assert straggled
    assert latency == pytest.approx(0.8 * 4.0, rel=1e-12)


def test_invocation_cost() -> None:
    assert invocation_cost(2, 1.5, 1e-3) == pytest.approx(0.003)


def test_inject_fault_policy_replaces_only_requested_knobs() -> None:
    scenario = make_scenario([("cpu", 1, 4, 1e-5)], truth_table(), noise_sigma=0.3)
    model = inject_fault_policy(scenario.ground_truth, failure_rate=0.25)
    assert model.failure_rate == 0.25
    assert model.noise_sigma == 0.3
    assert model.straggle_rate == scenario.ground_truth.straggle_rate


# -- pool mechanics -----------------------------------------------------------


def sim_with(instances: int, size: int) -> BackendSim:
    scenario = make_scenario([("cpu", instances, size, 1e-5)], truth_table())
    return BackendSim(scenario, np.random.default_rng(1))


def test_submit_starts_when_capacity_allows() -> None:
    sim = sim_with(1, 4)
    entry = make_entry(resource=2, latency=1.0)
    started = sim.submit(FakeInvocation(1), entry, 1)
    assert [r.invocation_id for r in started] == [1]
    assert sim.occupied("cpu") == 2
    sim.check_conservation()


def test_submit_rejects_oversized_request() -> None:
    sim = sim_with(1, 4)
    with pytest.raises(SubmitRejected):
        sim.submit(FakeInvocation(1), make_entry(resource=8), 1)


def test_submit_rejects_unknown_kind() -> None:
    sim = sim_with(1, 4)
    with pytest.raises(SubmitRejected):
        sim.submit(FakeInvocation(1), make_entry(kind="tpu"), 1)


def test_fifo_head_blocks_no_backfill() -> None:
    sim = sim_with(1, 4)
    assert sim.submit(FakeInvocation(1), make_entry(resource=3, latency=5.0), 1)
    # Head of queue needs 3 units; only 1 free. The 1-unit job behind it
    # must wait even though it would fit.
    assert sim.submit(FakeInvocation(2), make_entry(resource=3, latency=1.0), 1) == []
    assert sim.submit(FakeInvocation(3), make_entry(resource=1, latency=1.0), 1) == []
    assert sim.queue_length("cpu") == 2
    sim.check_conservation()


def test_completion_frees_resources_and_admits_next() -> None:
    sim = sim_with(1, 2)
    sim.submit(FakeInvocation(1), make_entry(resource=2, latency=1.0), 1)
    waiting = make_entry(resource=2, latency=1.0)
    sim.submit(FakeInvocation(2), waiting, 1)
    ev = sim.advance()
    assert ev is not None and ev.kind == "complete"
    assert ev.running.invocation_id == 1
    assert [r.invocation_id for r in ev.started] == [2]
    assert sim.now == pytest.approx(ev.running.actual_s)


def test_events_pop_in_time_order() -> None:
    sim = sim_with(4, 4)
    # Truth: 0.8 * (R/2)^-0.5 + 0.05 per item, so r1 runs 1.18 s and r4 0.62 s.
    sim.submit(FakeInvocation(1), make_entry(resource=1, latency=3.0), 1)
    sim.submit(FakeInvocation(2), make_entry(resource=4, latency=1.0), 1)
    sim.schedule_wake(0.8, ("timer", 7))
    kinds = []
    while sim.has_events():
        ev = sim.advance()
        kinds.append((ev.kind, getattr(ev.running, "invocation_id", None)))
    assert kinds == [("complete", 2), ("wake", None), ("complete", 1)]


def test_wake_never_schedules_into_the_past() -> None:
    sim = sim_with(1, 1)
    sim.submit(FakeInvocation(1), make_entry(resource=1, latency=2.0), 1)
    sim.advance()
    finished_at = sim.now
    assert finished_at > 0.5
    sim.schedule_wake(0.5, "late")
    ev = sim.advance()
    assert ev.kind == "wake" and ev.time_s >= finished_at


def test_failures_surface_at_completion_time() -> None:
    scenario = make_scenario([("cpu", 1, 4, 1e-5)], truth_table(), failure_rate=1.0)
    sim = BackendSim(scenario, np.random.default_rng(3))
    sim.submit(FakeInvocation(1), make_entry(resource=1, latency=1.0), 1)
    ev = sim.advance()
    assert ev.kind == "fail"
    assert ev.time_s == pytest.approx(ev.running.actual_s)
    assert sim.occupied("cpu") == 0  # failed runs still release their units


def test_dispatch_overhead_delays_finish() -> None:
    scenario = make_scenario([("cpu", 1, 4, 1e-5)], truth_table())
    object.__setattr__(scenario, "dispatch_overhead_s", 0.25)
    sim = BackendSim(scenario, np.random.default_rng(1))
    run = sim.submit(FakeInvocation(1), make_entry(resource=1, latency=1.0), 1)[0]
    assert run.scheduled_finish_s == pytest.approx(run.actual_s + 0.25)


def test_identical_seeds_replay_identically() -> None:
    def transcript(seed: int) -> list:
        scenario = make_scenario(
            [("cpu", 2, 4, 1e-5)], truth_table(), noise_sigma=0.4, failure_rate=0.2,
            seed=seed,
        )
        sim = BackendSim(scenario, np.random.default_rng(scenario.seed))
        for i in range(20):
            sim.submit(FakeInvocation(i), make_entry(resource=1, latency=0.5), 1)
        out = []
        while sim.has_events():
            ev = sim.advance()
            out.append((round(ev.time_s, 12), ev.kind, ev.running.invocation_id))
        return out

    assert transcript(11) == transcript(11)
    assert transcript(11) != transcript(12)


def test_trace_written_as_tsv(tmp_path) -> None:
    sim = sim_with(1, 4)
    sim.submit(FakeInvocation(1), make_entry(resource=1, latency=1.0), 1)
    while sim.has_events():
        sim.advance()
    out = tmp_path / "events.tsv"
    sim.write_trace(str(out))
    lines = out.read_text().strip().splitlines()
    assert lines[0].split("\t") == [
        "virtual_time", "event_kind", "invocation_id", "backend", "instance",
    ]
    assert len(lines) == 3  # header, start, complete
