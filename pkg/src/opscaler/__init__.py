"""Operator-level autoscaling and placement planner for generative-model
inference clusters.

The library models a generative model as a DAG of operators, each backed
by a fitted performance profile and an M/M/R queue, and plans per-operator
(parallelism, replicas, batch) configurations against TTFT/TBT SLOs. It
includes the greedy operator-level planner, a model-level baseline, a
brute-force oracle, interference-aware device placement, and energy /
memory / GPU savings accounting for trace-driven studies.
"""

from .autoscaler import (
    AutoscaleParams,
    BruteForceBounds,
    OperatorConfig,
    ScalingPlan,
    brute_force_autoscale,
    greedy_autoscale,
    init_configs,
    model_level_autoscale,
)
from .errors import OpscalerError
from .metrics import EnergyParams, SavingsReport, ScenarioEval, compare, request_energy
from .opgraph import (
    OperatorDag,
    OperatorNode,
    build_dag,
    critical_path_latency,
    load_dag,
    propagate_arrivals,
)
from .perfmodel import (
    InterferenceParams,
    LatencyModel,
    OperatorProfile,
    ProfileSet,
    comm_time,
    fit_profile,
    interference_factor,
    load_profiles,
    op_latency,
    op_memory,
)
from .placement import (
    DeviceSpec,
    Placement,
    PlacementParams,
    default_stream_place,
    load_fleet,
    make_fleet,
    place,
    recompute_latency_with_interference,
)
from .queueing import (
    QueueOperatingPoint,
    des_oracle,
    erlang_c,
    expected_wait,
    min_replicas_for_wait,
    min_replicas_stable,
)
from .workload import (
    RequestRecord,
    SynthSpec,
    WorkloadPoint,
    load_trace,
    save_trace,
    synth_workload,
    windowize,
)

__version__ = "0.1.0"

__all__ = [
    "AutoscaleParams",
    "BruteForceBounds",
    "DeviceSpec",
    "EnergyParams",
    "InterferenceParams",
    "LatencyModel",
    "OperatorConfig",
    "OperatorDag",
    "OperatorNode",
    "OperatorProfile",
    "OpscalerError",
    "Placement",
    "PlacementParams",
    "ProfileSet",
    "QueueOperatingPoint",
    "RequestRecord",
    "SavingsReport",
    "ScalingPlan",
    "ScenarioEval",
    "SynthSpec",
    "WorkloadPoint",
    "brute_force_autoscale",
    "build_dag",
    "comm_time",
    "compare",
    "critical_path_latency",
    "default_stream_place",
    "des_oracle",
    "erlang_c",
    "expected_wait",
    "fit_profile",
    "greedy_autoscale",
    "init_configs",
    "interference_factor",
    "load_dag",
    "load_fleet",
    "load_profiles",
    "load_trace",
    "make_fleet",
    "min_replicas_for_wait",
    "min_replicas_stable",
    "model_level_autoscale",
    "op_latency",
    "op_memory",
    "place",
    "propagate_arrivals",
    "recompute_latency_with_interference",
    "request_energy",
    "save_trace",
    "synth_workload",
    "windowize",
]
