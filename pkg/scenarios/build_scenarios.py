#!/usr/bin/env python3
"""Regenerate the bundled scenario bundles (pipeline, scenario, trace files).

Each bundle is deterministic: fixed generator seeds, sorted JSON keys. Run
from the repository root:

    python3 scenarios/build_scenarios.py
"""

from __future__ import annotations

import json
from pathlib import Path

from slackpipe.workload import generate_trace, write_trace

ROOT = Path(__file__).resolve().parent


def dump(path: Path, obj: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def knobless(kinds: list[str], batches: list[int], resources: dict[str, list[int]]) -> dict:
    return {
        "knobs": [],
        "hardware_targets": kinds,
        "batch_sizes": batches,
        "resource_options": resources,
    }


def build_branching() -> None:
    out = ROOT / "branching"
    recog_batches = [1, 2, 4, 8, 16, 32, 64]
    pipeline = {
        "name": "video_branching",
        "operations": [
            {
                "name": "decode",
                "executable_id": "branching-decode-v1",
                "knob_template": knobless(
                    ["io", "cpu"], [1, 2, 4, 8, 16, 32], {"io": [1], "cpu": [8]}
                ),
            },
            {
                "name": "thumbnail",
                "executable_id": "branching-thumbnail-v1",
                "knob_template": knobless(["lite", "cpu"], [1], {"lite": [1, 2], "cpu": [8]}),
            },
            {
                "name": "detect",
                "executable_id": "branching-detect-v1",
                "branching": True,
                "knob_template": {
                    "knobs": [
                        {"name": "model", "kind": "categorical", "values": ["accurate", "fast"]}
                    ],
                    "hardware_targets": ["cpu", "gpu"],
                    "batch_sizes": recog_batches,
                    "resource_options": {"cpu": [2, 4], "gpu": [4, 8]},
                },
            },
            {
                "name": "face_recog",
                "executable_id": "branching-face-v1",
                "knob_template": knobless(
                    ["cpu", "gpu"], recog_batches, {"cpu": [1], "gpu": [4]}
                ),
            },
            {
                "name": "car_recog",
                "executable_id": "branching-car-v1",
                "knob_template": knobless(
                    ["cpu", "gpu"], recog_batches, {"cpu": [1], "gpu": [4]}
                ),
            },
            {
                "name": "face_mark",
                "executable_id": "branching-face-mark-v1",
                "knob_template": knobless(["lite", "cpu"], [1], {"lite": [1, 2], "cpu": [8]}),
            },
            {
                "name": "car_mark",
                "executable_id": "branching-car-mark-v1",
                "knob_template": knobless(["lite", "cpu"], [1], {"lite": [1, 2], "cpu": [8]}),
            },
        ],
        "edges": [
            ["decode", "thumbnail"],
            ["decode", "detect"],
            ["detect", "face_recog"],
            ["detect", "car_recog"],
            ["face_recog", "face_mark"],
            ["car_recog", "car_mark"],
        ],
        "branch_predicates": [
            {"src": "detect", "dst": "face_recog", "attr": "persons", "op": ">", "value": 0},
            {"src": "detect", "dst": "car_recog", "attr": "cars", "op": ">", "value": 0},
        ],
        "fanout_rules": {"face_recog": "persons", "car_recog": "cars"},
    }
    scenario = {
        "name": "branching",
        "seed": 42,
        "backends": [
            {"kind": "io", "instance_count": 8, "resources_per_instance": 1,
             "price_rate": 6.0e-06},
            {"kind": "cpu", "instance_count": 24, "resources_per_instance": 4,
             "price_rate": 1.32e-05},
            {"kind": "gpu", "instance_count": 6, "resources_per_instance": 8,
             "price_rate": 9.0e-04},
            {"kind": "lite", "instance_count": 768, "resources_per_instance": 4,
             "price_rate": 8.0e-06},
        ],
        "noise_sigma": 0.0,
        "failure_rate": 0.0,
        "straggle_rate": 0.0,
        "straggle_factor": 1.0,
        "peak_memory_per_item_mb": 256.0,
        "dispatch_overhead_s": 0.0,
        "tuning": {
            "alpha": 100.0,
            "smoothing_beta": 0.5,
            "dfp_count": 10,
            "straggler_timeout_factor": 1.5,
            "cq_capacity": 4,
            "samples_per_config": 1,
        },
        "ground_truth": {
            "decode": {
                "io": {"base_seconds": 0.30, "ref_resource": 1, "resource_exponent": 0.0,
                       "batch_exponent": 0.85},
                "cpu": {"base_seconds": 0.39, "ref_resource": 1, "resource_exponent": 0.0,
                        "batch_exponent": 0.85},
            },
            "thumbnail": {
                "lite": {"base_seconds": 0.10, "ref_resource": 1, "resource_exponent": 0.2},
                "cpu": {"base_seconds": 0.13, "ref_resource": 1, "resource_exponent": 0.0},
            },
            "detect": {
                "cpu": {"base_seconds": 0.85, "ref_resource": 2, "resource_exponent": 0.45,
                        "batch_exponent": 0.9, "per_item_seconds": 0.125,
                        "knob_multipliers": {"model": {"accurate": 1.45, "fast": 1.0}}},
                "gpu": {"base_seconds": 0.12, "ref_resource": 4, "resource_exponent": 0.3,
                        "batch_exponent": 0.3, "per_item_seconds": 0.0015,
                        "knob_multipliers": {"model": {"accurate": 1.3, "fast": 1.0}}},
            },
            "face_recog": {
                "cpu": {"base_seconds": 2.0, "ref_resource": 1, "resource_exponent": 0.5,
                        "batch_exponent": 0.85, "per_item_seconds": 0.20},
                "gpu": {"base_seconds": 0.10, "ref_resource": 4, "resource_exponent": 0.25,
                        "batch_exponent": 0.35, "per_item_seconds": 0.0015},
            },
            "car_recog": {
                "cpu": {"base_seconds": 1.75, "ref_resource": 1, "resource_exponent": 0.5,
                        "batch_exponent": 0.85, "per_item_seconds": 0.18},
                "gpu": {"base_seconds": 0.09, "ref_resource": 4, "resource_exponent": 0.25,
                        "batch_exponent": 0.35, "per_item_seconds": 0.0015},
            },
            "face_mark": {
                "lite": {"base_seconds": 0.20, "ref_resource": 1, "resource_exponent": 0.2},
                "cpu": {"base_seconds": 0.26, "ref_resource": 1, "resource_exponent": 0.0},
            },
            "car_mark": {
                "lite": {"base_seconds": 0.18, "ref_resource": 1, "resource_exponent": 0.2},
                "cpu": {"base_seconds": 0.234, "ref_resource": 1, "resource_exponent": 0.0},
            },
        },
    }
    dump(out / "pipeline.json", pipeline)
    dump(out / "scenario.json", scenario)
    frames = generate_trace(3000, 17, {"cars": 0.6, "persons": 0.8}, 3)
    write_trace(str(out / "trace.jsonl"), frames)


def build_parallel() -> None:
    out = ROOT / "parallel"
    filter_batches = [1, 2, 4, 8, 16, 32]
    pipeline = {
        "name": "parallel_filters",
        "operations": [
            {
                "name": "decode",
                "executable_id": "parallel-decode-v1",
                "knob_template": knobless(
                    ["io", "cpu"], [1, 2, 4, 8, 16, 32], {"io": [1], "cpu": [8]}
                ),
            },
            {
                "name": "edge_detect",
                "executable_id": "parallel-edge-v1",
                "knob_template": knobless(
                    ["cpu", "gpu"], filter_batches, {"cpu": [1, 2], "gpu": [4, 8]}
                ),
            },
            {
                "name": "bilateral",
                "executable_id": "parallel-bilateral-v1",
                "knob_template": knobless(
                    ["cpu", "gpu"], filter_batches, {"cpu": [1, 2], "gpu": [4, 8]}
                ),
            },
            {
                "name": "merge",
                "executable_id": "parallel-merge-v1",
                "knob_template": knobless(["cpu"], [1, 2, 4, 8, 16], {"cpu": [1, 2]}),
            },
            {
                "name": "encode",
                "executable_id": "parallel-encode-v1",
                "knob_template": knobless(["cpu"], [1, 2, 4, 8, 16], {"cpu": [1, 2]}),
            },
        ],
        "edges": [
            ["decode", "edge_detect"],
            ["decode", "bilateral"],
            ["edge_detect", "merge"],
            ["bilateral", "merge"],
            ["merge", "encode"],
        ],
    }
    scenario = {
        "name": "parallel",
        "seed": 77,
        "backends": [
            {"kind": "io", "instance_count": 8, "resources_per_instance": 1,
             "price_rate": 6.0e-06},
            {"kind": "cpu", "instance_count": 16, "resources_per_instance": 4,
             "price_rate": 1.32e-05},
            {"kind": "gpu", "instance_count": 6, "resources_per_instance": 8,
             "price_rate": 3.0e-04},
        ],
        "noise_sigma": 0.0,
        "peak_memory_per_item_mb": 128.0,
        "tuning": {
            "alpha": 100.0,
            "smoothing_beta": 0.5,
            "dfp_count": 10,
            "straggler_timeout_factor": 1.5,
            "cq_capacity": 4,
            "samples_per_config": 1,
        },
        "ground_truth": {
            "decode": {
                "io": {"base_seconds": 0.28, "ref_resource": 1, "resource_exponent": 0.0,
                       "batch_exponent": 0.85},
                "cpu": {"base_seconds": 0.36, "ref_resource": 1, "resource_exponent": 0.0,
                        "batch_exponent": 0.85},
            },
            "edge_detect": {
                "cpu": {"base_seconds": 0.9, "ref_resource": 1, "resource_exponent": 0.5,
                        "batch_exponent": 0.85, "per_item_seconds": 0.01},
                "gpu": {"base_seconds": 0.08, "ref_resource": 4, "resource_exponent": 0.3,
                        "batch_exponent": 0.3, "per_item_seconds": 0.01},
            },
            "bilateral": {
                "cpu": {"base_seconds": 1.3, "ref_resource": 1, "resource_exponent": 0.5,
                        "batch_exponent": 0.85, "per_item_seconds": 0.01},
                "gpu": {"base_seconds": 0.10, "ref_resource": 4, "resource_exponent": 0.3,
                        "batch_exponent": 0.3, "per_item_seconds": 0.01},
            },
            "merge": {
                "cpu": {"base_seconds": 0.18, "ref_resource": 1, "resource_exponent": 0.35,
                        "batch_exponent": 0.9, "per_item_seconds": 0.005}
            },
            "encode": {
                "cpu": {"base_seconds": 0.35, "ref_resource": 1, "resource_exponent": 0.35,
                        "batch_exponent": 0.9}
            },
        },
    }
    dump(out / "pipeline.json", pipeline)
    dump(out / "scenario.json", scenario)
    frames = generate_trace(1500, 23, {}, 0)
    write_trace(str(out / "trace.jsonl"), frames)


def build_overhead() -> None:
    out = ROOT / "overhead"
    pipeline = {
        "name": "overhead_chain",
        "operations": [
            {
                "name": "stage_a",
                "executable_id": "overhead-stage-a-v1",
                "knob_template": knobless(["cpu"], [1], {"cpu": [1, 2]}),
            },
            {
                "name": "stage_b",
                "executable_id": "overhead-stage-b-v1",
                "knob_template": knobless(["cpu"], [1], {"cpu": [1, 2]}),
            },
        ],
        "edges": [["stage_a", "stage_b"]],
    }
    scenario = {
        "name": "overhead",
        "seed": 5,
        "backends": [
            {"kind": "cpu", "instance_count": 32, "resources_per_instance": 4,
             "price_rate": 1.32e-05}
        ],
        "noise_sigma": 0.0,
        "tuning": {
            "alpha": 100.0,
            "smoothing_beta": 0.5,
            "dfp_count": 10,
            "straggler_timeout_factor": 1.5,
            "samples_per_config": 1,
        },
        "ground_truth": {
            "stage_a": {
                "cpu": {"base_seconds": 0.008, "ref_resource": 1, "resource_exponent": 0.3,
                        "batch_exponent": 1.0}
            },
            "stage_b": {
                "cpu": {"base_seconds": 0.006, "ref_resource": 1, "resource_exponent": 0.3,
                        "batch_exponent": 1.0}
            },
        },
    }
    dump(out / "pipeline.json", pipeline)
    dump(out / "scenario.json", scenario)
    frames = generate_trace(13000, 31, {}, 0)
    write_trace(str(out / "trace.jsonl"), frames)


if __name__ == "__main__":
    build_branching()
    build_parallel()
    build_overhead()
    print("scenario bundles written under", ROOT)
