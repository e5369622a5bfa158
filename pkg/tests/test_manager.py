from __future__ import annotations

import pytest

from slackpipe.configurator import TuningParams
from slackpipe.manager import (
    FeedbackStore,
    PipelineRun,
    apply_feedback,
    write_report_csv,
)
from slackpipe.pipeline import (
    BranchPredicate,
    Knob,
    KnobTemplate,
    OperationSpec,
    PipelineDag,
)
from slackpipe.profiler import profile_operation
from slackpipe.scenario import OpKindTruth

from conftest import make_scenario


# -- feedback smoothing -------------------------------------------------------


def test_apply_feedback_is_exponential_smoothing() -> None:
    assert apply_feedback(2.0, 4.0, 0.5) == 3.0
    assert apply_feedback(2.0, 4.0, 1.0) == 4.0
    assert apply_feedback(2.0, 4.0, 0.25) == 2.5


def test_feedback_converges_geometrically_from_half_truth() -> None:
    truth = 1.0
    estimate = 0.5 * truth
    for _ in range(10):
        estimate = apply_feedback(estimate, truth, 0.5)
    # Error halves per observation: 0.5 * 0.5^10 of truth remains.
    assert truth - estimate == 2.0**-11
    assert abs(estimate - truth) / truth < 0.05


def test_feedback_store_counts_observations() -> None:
    store = FeedbackStore(beta=0.5)
    store.observe("op", "cpu-r1-b1")
    store.observe("op", "cpu-r1-b1")
    store.observe("op", "gpu-r4-b8")
    assert store.observations[("op", "cpu-r1-b1")] == 2
    assert store.observations[("op", "gpu-r4-b8")] == 1


# -- micro-pipeline helpers ---------------------------------------------------


def knobless_op(name: str, shape) -> OperationSpec:
    kinds, batches, resources = shape
    return OperationSpec(
        name=name,
        executable_id=f"{name}-v1",
        knob_template=KnobTemplate(
            knobs=(),
            hardware_targets=tuple(kinds),
            batch_sizes=tuple(batches),
            resource_options={k: tuple(v) for k, v in resources.items()},
        ),
    )


def build_run(
    ops: dict[str, OperationSpec],
    edges: list[tuple[str, str]],
    scenario,
    frames,
    target: float,
    *,
    params: TuningParams | None = None,
    ablations=(),
    profile_scale: float = 1.0,
    branching=frozenset(),
    predicates=None,
    fanout=None,
    profile_scenario=None,
) -> PipelineRun:
    dag = PipelineDag(
        vertices=tuple(sorted(ops)),
        edges=tuple(edges),
        branching=frozenset(branching),
        branch_predicates=dict(predicates or {}),
        fanout_rules=dict(fanout or {}),
    )
    profiles = {
        name: profile_operation(op, profile_scenario or scenario, 1)
        for name, op in ops.items()
    }
    return PipelineRun(
        dag, ops, profiles, frames, scenario, target,
        params or TuningParams(),
        ablations=ablations,
        profile_scale=profile_scale,
    )


def single_op_scenario(**kwargs):
    return make_scenario(
        [("cpu", 2, 4, 1.32e-5)],
        {"work": {"cpu": OpKindTruth(base_seconds=0.5, ref_resource=1)}},
        **kwargs,
    )


def single_op() -> dict[str, OperationSpec]:
    return {"work": knobless_op("work", (["cpu"], [1], {"cpu": [1]}))}


# -- end-to-end basics --------------------------------------------------------


def test_single_op_run_accounting() -> None:
    scenario = single_op_scenario()
    run = build_run(single_op(), [], scenario, [(0, {}), (1, {}), (2, {})], 60.0)
    report = run.run_to_completion()
    assert report.completed == 3
    assert report.terminal_items == 3
    assert report.failures == 0 and report.duplicates == 0
    # Two 4-resource instances hold eight unit jobs, so one 0.5 s wave.
    assert report.latency_s == pytest.approx(0.5)
    assert report.cost == pytest.approx(3 * 1 * 0.5 * 1.32e-5, rel=1e-9)
    assert report.target_met()


def test_report_csv_roundtrip(tmp_path) -> None:
    scenario = single_op_scenario()
    run = build_run(single_op(), [], scenario, [(0, {})], 60.0)
    report = run.run_to_completion()
    out = tmp_path / "report.csv"
    write_report_csv(str(out), [report])
    lines = out.read_text().strip().splitlines()
    assert len(lines) == 2
    header = lines[0].split(",")
    assert "latency_s" in header and "cost" in header and "run_id" in header
    assert lines[1].split(",")[0] == report.run_id


def test_identical_runs_produce_identical_reports() -> None:
    def once():
        scenario = single_op_scenario(noise_sigma=0.3, failure_rate=0.2)
        run = build_run(single_op(), [], scenario,
                        [(i, {}) for i in range(6)], 60.0)
        return run.run_to_completion()

    a, b = once(), once()
    assert a.csv_row() == b.csv_row()


def test_diamond_join_waits_for_both_parents() -> None:
    truths = {
        name: {"cpu": OpKindTruth(base_seconds=sec, ref_resource=1)}
        for name, sec in [("src", 0.1), ("left", 0.2), ("right", 0.6), ("sink", 0.1)]
    }
    scenario = make_scenario([("cpu", 8, 4, 1e-5)], truths)
    ops = {
        name: knobless_op(name, (["cpu"], [1], {"cpu": [1]}))
        for name in ("src", "left", "right", "sink")
    }
    run = build_run(
        ops,
        [("src", "left"), ("src", "right"), ("left", "sink"), ("right", "sink")],
        scenario, [(i, {}) for i in range(4)], 60.0,
    )
    report = run.run_to_completion()
    assert report.terminal_items == 4
    sink_starts = [
        inv.committed_at for inv in run.invocations.values()
        if inv.operation == "sink"
    ]
    # The slow parent gates the join: no sink work before 0.1 + 0.6.
    assert len(sink_starts) == 4
    assert min(sink_starts) >= 0.7 - 1e-9


def test_branch_predicates_and_fanout_shape_downstream_volume() -> None:
    truths = {
        "gate": {"cpu": OpKindTruth(base_seconds=0.1, ref_resource=1)},
        "expand": {"cpu": OpKindTruth(base_seconds=0.05, ref_resource=1)},
    }
    scenario = make_scenario([("cpu", 8, 4, 1e-5)], truths)
    ops = {
        "gate": knobless_op("gate", (["cpu"], [1], {"cpu": [1]})),
        "expand": knobless_op("expand", (["cpu"], [1], {"cpu": [1]})),
    }
    frames = [(0, {"k": 0}), (1, {"k": 2}), (2, {"k": 3}), (3, {"k": 0})]
    run = build_run(
        ops, [("gate", "expand")], scenario, frames, 60.0,
        branching={"gate"},
        predicates={("gate", "expand"): BranchPredicate("k", ">", 0)},
        fanout={"expand": "k"},
    )
    report = run.run_to_completion()
    expand_fills = sum(
        inv.fill for inv in run.invocations.values()
        if inv.operation == "expand" and inv.outcome == "accepted"
    )
    assert expand_fills == 2 + 3  # k=0 frames never reach the expander
    assert report.terminal_items == 5


# -- feedback and warm-up behavior --------------------------------------------


def test_feedback_walks_estimate_toward_truth() -> None:
    scenario = make_scenario(
        [("cpu", 1, 4, 1.32e-5)],
        {"work": {"cpu": OpKindTruth(base_seconds=0.5, ref_resource=1)}},
    )
    # Timeout factor is lifted so the undershot estimate cannot trigger
    # spurious straggler duplicates, whose feedback would skew the walk.
    run = build_run(single_op(), [], scenario, [(0, {}), (1, {}), (2, {})], 60.0,
                    params=TuningParams(straggler_timeout_factor=10.0),
                    profile_scale=0.5)
    table = run.tables["work"]
    assert table.lat[table.ref_index] == 0.25
    run.run_to_completion()
    # 0.25 -> 0.375 -> 0.4375 -> 0.46875 over three sequential completions.
    assert table.lat[table.ref_index] == 0.46875


def test_feedback_ablation_freezes_estimates() -> None:
    scenario = make_scenario(
        [("cpu", 1, 4, 1.32e-5)],
        {"work": {"cpu": OpKindTruth(base_seconds=0.5, ref_resource=1)}},
    )
    run = build_run(single_op(), [], scenario, [(0, {}), (1, {})], 60.0,
                    params=TuningParams(straggler_timeout_factor=10.0),
                    profile_scale=0.5, ablations=("fb",))
    table = run.tables["work"]
    run.run_to_completion()
    assert table.lat[table.ref_index] == 0.25


def warmup_scenario():
    return make_scenario(
        [("cpu", 8, 4, 1.32e-5), ("gpu", 2, 8, 1.0e-5)],
        {"work": {
            "cpu": OpKindTruth(base_seconds=0.5, ref_resource=1),
            "gpu": OpKindTruth(base_seconds=0.05, ref_resource=4),
        }},
    )


def warmup_op() -> dict[str, OperationSpec]:
    return {"work": knobless_op(
        "work", (["cpu", "gpu"], [1], {"cpu": [1], "gpu": [4]})
    )}


def test_warmup_holds_everything_on_reference_until_completions_arrive() -> None:
    # gpu is cheaper per item, but the gate keeps arrivals on the reference
    # until enough reference completions have come back.
    run = build_run(warmup_op(), [], warmup_scenario(),
                    [(i, {}) for i in range(8)], 60.0,
                    params=TuningParams(dfp_count=3))
    run.run_to_completion()
    kinds = {inv.committed_entry.backend_kind for inv in run.invocations.values()}
    assert kinds == {"cpu"}


def test_warmup_disabled_lets_selection_run_free() -> None:
    run = build_run(warmup_op(), [], warmup_scenario(),
                    [(i, {}) for i in range(8)], 60.0,
                    params=TuningParams(dfp_count=3), ablations=("dfp",))
    run.run_to_completion()
    kinds = {inv.committed_entry.backend_kind for inv in run.invocations.values()}
    assert kinds == {"gpu"}


def test_gate_lift_rescales_unobserved_estimates() -> None:
    scenario = make_scenario(
        [("cpu", 1, 4, 1.32e-5)],
        {"work": {"cpu": OpKindTruth(base_seconds=0.5, ref_resource=1,
                                     batch_exponent=1.2)}},
    )
    ops = {"work": knobless_op("work", (["cpu"], [1, 4], {"cpu": [1]}))}
    run = build_run(ops, [], scenario, [(i, {}) for i in range(3)], 60.0,
                    params=TuningParams(dfp_count=2, straggler_timeout_factor=10.0),
                    profile_scale=0.5)
    table = run.tables["work"]
    big = table.index_of_id["cpu-r1-b4"]
    assert table.lat[big] == 0.5 * (0.5 * 4**1.2)
    run.run_to_completion()
    # Two reference completions lift the gate: smoothed 0.25 -> 0.4375,
    # ratio 1.75, and the never-run batch-4 estimate follows it.
    assert table.lat[big] == pytest.approx(0.5 * (0.5 * 4**1.2) * 1.75, rel=1e-12)


def test_gate_lift_with_honest_profiles_is_a_no_op() -> None:
    scenario = make_scenario(
        [("cpu", 1, 4, 1.32e-5)],
        {"work": {"cpu": OpKindTruth(base_seconds=0.5, ref_resource=1,
                                     batch_exponent=1.2)}},
    )
    ops = {"work": knobless_op("work", (["cpu"], [1, 4], {"cpu": [1]}))}
    run = build_run(ops, [], scenario, [(i, {}) for i in range(3)], 60.0,
                    params=TuningParams(dfp_count=2))
    table = run.tables["work"]
    big = table.index_of_id["cpu-r1-b4"]
    before = float(table.lat[big])
    run.run_to_completion()
    assert table.lat[big] == before


# -- stragglers, duplicates, failures -----------------------------------------


def test_straggler_spawns_duplicate_first_completion_wins() -> None:
    # Profiles come from the fault-free world; stragglers are injected only
    # at run time, so every execution overshoots its estimate by 4x.
    # Timeout fires at 3 x 0.5 s while the straggler runs for 2.0 s, so
    # exactly one duplicate launches and the original still finishes first.
    scenario = single_op_scenario(straggle_rate=1.0, straggle_factor=4.0)
    run = build_run(single_op(), [], scenario, [(0, {})], 60.0,
                    params=TuningParams(straggler_timeout_factor=3.0),
                    profile_scenario=single_op_scenario())
    report = run.run_to_completion()
    assert report.duplicates == 1
    assert report.completed == 1
    outcomes = sorted(inv.outcome for inv in run.invocations.values())
    assert outcomes == ["accepted", "discarded"]
    # Both executions straggle to 2.0 s; the original (started first) wins
    # and the duplicate still runs to completion on the pool.
    assert report.latency_s == pytest.approx(2.0, rel=1e-9)
    assert report.cost == pytest.approx(2 * (1 * 2.0 * 1.32e-5), rel=1e-9)


def test_duplicate_reenters_selection_fresh() -> None:
    scenario = single_op_scenario(straggle_rate=1.0, straggle_factor=4.0)
    run = build_run(single_op(), [], scenario, [(0, {})], 60.0,
                    params=TuningParams(straggler_timeout_factor=3.0),
                    profile_scenario=single_op_scenario())
    run.run_to_completion()
    attempts = sorted(inv.attempt for inv in run.invocations.values())
    assert attempts == [0, 1]
    dup = next(inv for inv in run.invocations.values() if inv.attempt == 1)
    assert dup.committed_entry is not None  # went through selection again


def test_failures_retry_until_success() -> None:
    scenario = single_op_scenario(failure_rate=0.5)
    run = build_run(single_op(), [], scenario, [(i, {}) for i in range(5)], 60.0)
    report = run.run_to_completion()
    assert report.failures > 0
    assert report.completed == 5
    assert any(inv.attempt > 0 for inv in run.invocations.values())
    assert any(inv.outcome == "failed" for inv in run.invocations.values())


def test_livelock_diagnostic_mentions_stuck_work() -> None:
    scenario = single_op_scenario()
    run = build_run(single_op(), [], scenario, [(0, {})], 60.0)
    run.buffers["work"].append((99, {}))  # orphan item the engine cannot see
    diag = run._livelock_diagnostic()
    assert "work" in diag and "buffered" in diag
