"""Deadline-aware auto-tuning for DAG pipelines on simulated serverless backends."""

from .backend import (
    BackendSim,
    SubmitRejected,
    draw_actual_latency,
    inject_fault_policy,
    invocation_cost,
)
from .configurator import (
    ABLATION_TOKENS,
    AffinityScore,
    Configurator,
    OpTable,
    Slack,
    TuningParams,
    affinity,
    compute_slack,
    estimate_queueing,
    objective,
    remaining_path_latency,
    select_config,
)
from .manager import (
    FeedbackStore,
    Invocation,
    PipelineRun,
    RunReport,
    apply_feedback,
    write_report_csv,
)
from .pipeline import (
    BranchPredicate,
    ConfigAssignment,
    ConfigEntry,
    ConfigSpec,
    Knob,
    KnobTemplate,
    OperationSpec,
    PipelineDag,
    decompose_paths,
    enumerate_configs,
    load_pipeline,
    reference_config,
    validate_dag,
)
from .profiler import MetadataStore, profile_operation, profiling_time_estimate
from .scenario import BackendSpec, GroundTruthModel, Scenario, load_scenario
from .workload import generate_trace, load_trace, write_trace

__version__ = "0.1.0"

__all__ = [
    "ABLATION_TOKENS",
    "AffinityScore",
    "BackendSim",
    "BackendSpec",
    "BranchPredicate",
    "ConfigAssignment",
    "ConfigEntry",
    "ConfigSpec",
    "Configurator",
    "FeedbackStore",
    "GroundTruthModel",
    "Invocation",
    "Knob",
    "KnobTemplate",
    "MetadataStore",
    "OpTable",
    "OperationSpec",
    "PipelineDag",
    "PipelineRun",
    "RunReport",
    "Scenario",
    "Slack",
    "SubmitRejected",
    "TuningParams",
    "affinity",
    "apply_feedback",
    "compute_slack",
    "decompose_paths",
    "draw_actual_latency",
    "enumerate_configs",
    "estimate_queueing",
    "generate_trace",
    "inject_fault_policy",
    "invocation_cost",
    "load_pipeline",
    "load_scenario",
    "load_trace",
    "objective",
    "profile_operation",
    "profiling_time_estimate",
    "reference_config",
    "remaining_path_latency",
    "select_config",
    "validate_dag",
    "write_report_csv",
    "write_trace",
]
