"""Command line: profile configuration spaces, run tuned pipelines, sweep targets.

Exit codes: 0 when the latency target was met, 1 when it was missed, 2 for
usage or configuration errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Any, Mapping, Sequence

from .manager import PipelineRun, RunReport, write_report_csv
from .configurator import ABLATION_TOKENS, TuningParams
from .pipeline import (
    OperationSpec,
    PipelineDag,
    decompose_paths,
    load_pipeline,
    pipeline_content_hash,
)
from .profiler import DEFAULT_SAMPLES, MetadataStore, profiling_time_estimate
from .scenario import Scenario, load_scenario
from .workload import generate_trace, load_trace, write_trace

EXIT_MET = 0
EXIT_MISSED = 1
EXIT_USAGE = 2

SWEEP_LABELS = ("fast", "cheap", "25", "50", "75")


def _add_common(sub: argparse.ArgumentParser, *, trace: bool) -> None:
    sub.add_argument("--pipeline", required=True, help="pipeline JSON file")
    sub.add_argument("--scenario", required=True, help="scenario JSON file")
    if trace:
        sub.add_argument("--trace", required=True, help="workload trace JSONL file")
    sub.add_argument("--metadata-dir", default=None,
                     help="profile/path cache directory (default: "
                          "$SLACKPIPE_METADATA_DIR or .slackpipe-metadata)")
    sub.add_argument("--samples", type=int, default=None,
                     help="profiling samples per configuration")


def _add_run_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--alpha", type=float, default=None,
                     help="throughput-penalty weight in the selection objective")
    sub.add_argument("--seed", type=int, default=None,
                     help="RNG seed (default: the scenario's)")
    sub.add_argument("--ablate", default="",
                     help="comma list of techniques to disable: "
                          + ",".join(ABLATION_TOKENS))
    sub.add_argument("--report", default=None, help="write the report CSV here")
    sub.add_argument("--decision-log", default=None,
                     help="write the per-decision TSV log here")
    sub.add_argument("--event-trace", default=None,
                     help="write the backend event TSV trace here")
    sub.add_argument("--profile-scale", type=float, default=1.0,
                     help="multiply all profiled latencies before the run "
                          "(mis-profiling experiments)")
    sub.add_argument("--noise-sigma", type=float, default=None,
                     help="override the scenario's multiplicative noise sigma")
    sub.add_argument("--failure-rate", type=float, default=None,
                     help="override the scenario's invocation failure rate")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slackpipe",
        description="Deadline-aware auto-tuning for DAG pipelines on "
                    "simulated serverless backends.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("profile", help="enumerate and profile every configuration")
    _add_common(p, trace=False)
    p.add_argument("--force", action="store_true",
                   help="re-profile even when a cached spec exists")

    r = subs.add_parser("run", help="run one tuned pipeline execution")
    _add_common(r, trace=True)
    r.add_argument("--target", type=float, required=True,
                   help="end-to-end latency target in seconds (0 or inf allowed)")
    _add_run_flags(r)

    s = subs.add_parser("sweep", help="derive and run fast/cheap anchored targets")
    _add_common(s, trace=True)
    s.add_argument("--targets", default=",".join(SWEEP_LABELS),
                   help="comma list among fast,cheap,25,50,75")
    _add_run_flags(s)

    g = subs.add_parser("gen-trace", help="synthesize a workload trace")
    g.add_argument("--count", type=int, required=True, help="number of frames")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="output JSONL path")
    g.add_argument("--attribute", action="append", default=[],
                   metavar="NAME=RATE",
                   help="mean count per frame for one attribute (repeatable)")
    g.add_argument("--max-per-attribute", type=int, default=4)
    return parser


def _parse_ablations(text: str) -> frozenset[str]:
    tokens = frozenset(t.strip() for t in text.split(",") if t.strip())
    unknown = tokens - set(ABLATION_TOKENS)
    if unknown:
        raise ValueError(
            f"unknown ablation tokens: {', '.join(sorted(unknown))} "
            f"(expected among {', '.join(ABLATION_TOKENS)})"
        )
    return tokens


def _load_pipeline_file(path: str) -> tuple[dict, PipelineDag, dict[str, OperationSpec]]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    dag, ops = load_pipeline(doc)
    return doc, dag, ops


def _tuning_params(scenario: Scenario, alpha: float | None) -> TuningParams:
    t = scenario.tuning
    return TuningParams(
        alpha=t.alpha if alpha is None else alpha,
        cq_capacity=t.cq_capacity,
        dfp_count=t.dfp_count,
        straggler_timeout_factor=t.straggler_timeout_factor,
        smoothing_beta=t.smoothing_beta,
    )


def _ensure_profiles(
    store: MetadataStore,
    ops: Mapping[str, OperationSpec],
    scenario: Scenario,
    samples: int,
    force: bool = False,
) -> tuple[dict, int]:
    profiles = {}
    hits = 0
    for name in sorted(ops):
        spec, hit = store.ensure_profile(ops[name], scenario, samples, force=force)
        profiles[name] = spec
        hits += hit
    return profiles, hits


def _paths_for(store: MetadataStore, doc: dict, dag: PipelineDag):
    key = pipeline_content_hash(doc)
    paths = store.load_paths(key)
    if paths is None:
        paths = decompose_paths(dag)
        store.store_paths(key, paths)
    return paths


def _flags_dict(args: argparse.Namespace, target: float | None = None) -> dict[str, Any]:
    flags: dict[str, Any] = {
        "pipeline": args.pipeline,
        "scenario": args.scenario,
        "trace": args.trace,
        "alpha": args.alpha,
        "seed": args.seed,
        "ablate": ",".join(sorted(_parse_ablations(args.ablate))),
        "profile_scale": args.profile_scale,
        "noise_sigma": args.noise_sigma,
        "failure_rate": args.failure_rate,
    }
    if target is not None:
        flags["target"] = target
    return {k: v for k, v in flags.items() if v is not None}


def _write_outputs(args: argparse.Namespace, run: PipelineRun, reports: Sequence[RunReport]) -> None:
    if args.report:
        write_report_csv(args.report, reports)
        meta = {
            "flags": [dict(r.flags) for r in reports],
            "scenario": reports[0].scenario,
            "pipeline": reports[0].pipeline,
            "wall_s": [r.wall_s for r in reports],
            "decision_count": [r.decision_count for r in reports],
        }
        with open(args.report + ".meta.json", "w", encoding="utf-8") as fh:
            json.dump(meta, fh, indent=1, sort_keys=True)
    if args.decision_log:
        run.write_decision_log(args.decision_log)
    if args.event_trace:
        run.sim.write_trace(args.event_trace)


def _build_run(args: argparse.Namespace, target: float) -> PipelineRun:
    doc, dag, ops = _load_pipeline_file(args.pipeline)
    scenario = load_scenario(args.scenario)
    store = MetadataStore(args.metadata_dir)
    samples = args.samples
    if samples is None:
        samples = scenario.tuning.samples_per_config
    # Profiles always come from the scenario as published; fault overrides
    # model changed conditions at run time, not at measurement time.
    profiles, _ = _ensure_profiles(store, ops, scenario, samples)
    paths = _paths_for(store, doc, dag)
    run_scenario = scenario.with_fault_overrides(
        noise_sigma=args.noise_sigma, failure_rate=args.failure_rate
    )
    frames = load_trace(args.trace)
    return PipelineRun(
        dag,
        ops,
        profiles,
        frames,
        run_scenario,
        target,
        _tuning_params(run_scenario, args.alpha),
        ablations=_parse_ablations(args.ablate),
        seed=args.seed,
        paths=paths,
        profile_scale=args.profile_scale,
        pipeline_name=doc.get("name", "pipeline"),
        flags=_flags_dict(args, target),
    )


def _cmd_profile(args: argparse.Namespace) -> int:
    _, _, ops = _load_pipeline_file(args.pipeline)
    scenario = load_scenario(args.scenario)
    store = MetadataStore(args.metadata_dir)
    samples = args.samples
    if samples is None:
        samples = scenario.tuning.samples_per_config
    profiles, hits = _ensure_profiles(store, ops, scenario, samples, force=args.force)
    total = sum(len(s.entries) for s in profiles.values())
    est = profiling_time_estimate(profiles, samples)
    print(f"profiled {len(profiles)} operations, {total} configurations "
          f"({hits} cached) into {store.root}")
    print(f"simulated profiling time: {est:.1f} s at {samples} samples per configuration")
    return EXIT_MET


def _cmd_run(args: argparse.Namespace) -> int:
    run = _build_run(args, args.target)
    report = run.run_to_completion()
    print(report.summary())
    _write_outputs(args, run, [report])
    return EXIT_MET if report.target_met() else EXIT_MISSED


def _cmd_sweep(args: argparse.Namespace) -> int:
    labels = [t.strip() for t in args.targets.split(",") if t.strip()]
    unknown = set(labels) - set(SWEEP_LABELS)
    if unknown:
        raise ValueError(
            f"unknown sweep targets: {', '.join(sorted(unknown))} "
            f"(expected among {', '.join(SWEEP_LABELS)})"
        )
    if not labels:
        raise ValueError("no sweep targets requested")

    last_run: list[PipelineRun] = []

    def one(target: float) -> tuple[PipelineRun, RunReport]:
        run = _build_run(args, target)
        report = run.run_to_completion()
        print(report.summary())
        last_run[:] = [run]
        return run, report

    _, fast = one(0.0)
    _, cheap = one(float("inf"))
    if fast.latency_s >= cheap.latency_s:
        raise ValueError(
            f"sweep anchors are degenerate: fast latency {fast.latency_s:.3f} s "
            f">= cheap latency {cheap.latency_s:.3f} s; the scenario offers no "
            "cost/latency trade-off to sweep"
        )
    mid = (fast.latency_s + cheap.latency_s) / 2.0
    derived = {
        "fast": (0.0, fast),
        "cheap": (float("inf"), cheap),
        "25": ((fast.latency_s + mid) / 2.0, None),
        "50": (mid, None),
        "75": ((cheap.latency_s + mid) / 2.0, None),
    }
    rows: list[tuple[str, float, RunReport]] = []
    missed = False
    for label in SWEEP_LABELS:
        if label not in labels:
            continue
        target, report = derived[label]
        if report is None:
            _, report = one(target)
            missed = missed or not report.target_met()
        rows.append((label, target, report))

    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            fh.write("label,target_s,latency_s,normalized_latency,cost\n")
            for label, target, rep in rows:
                fh.write(
                    f"{label},{float(target)!r},{float(rep.latency_s)!r},"
                    f"{float(rep.normalized_latency)!r},{float(rep.cost)!r}\n"
                )
        meta = {
            "flags": dict(_flags_dict(args)),
            "anchors": {"fast_latency_s": fast.latency_s, "cheap_latency_s": cheap.latency_s},
            "rows": [
                {"label": label, "target_s": target, "run_id": rep.run_id}
                for label, target, rep in rows
            ],
        }
        with open(args.report + ".meta.json", "w", encoding="utf-8") as fh:
            json.dump(meta, fh, indent=1, sort_keys=True)
    if args.decision_log and last_run:
        last_run[0].write_decision_log(args.decision_log)
    if args.event_trace and last_run:
        last_run[0].sim.write_trace(args.event_trace)
    # Anchors are calibration runs; pass/fail is about the derived midpoints.
    return EXIT_MISSED if missed else EXIT_MET


def _cmd_gen_trace(args: argparse.Namespace) -> int:
    rates = {}
    for spec in args.attribute:
        if "=" not in spec:
            raise ValueError(f"--attribute expects NAME=RATE, got {spec!r}")
        name, rate = spec.split("=", 1)
        rates[name.strip()] = float(rate)
    frames = generate_trace(args.count, args.seed, rates, args.max_per_attribute)
    write_trace(args.out, frames)
    print(f"wrote {len(frames)} frames to {args.out}")
    return EXIT_MET


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else 0
    handlers = {
        "profile": _cmd_profile,
        "run": _cmd_run,
        "sweep": _cmd_sweep,
        "gen-trace": _cmd_gen_trace,
    }
    try:
        return handlers[args.command](args)
    except (ValueError, KeyError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
