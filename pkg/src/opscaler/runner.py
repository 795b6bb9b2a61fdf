"""Scenario assembly: plan, place, and score workload points.

This is the glue the CLI and the test suites drive: it runs one planning
mode end-to-end on a workload point, evaluates energy/memory/devices, and
builds baseline-vs-candidate savings rows for sweeps. Sweep points are
independent pure computations and are evaluated concurrently, with
results merged back in axis order so output stays deterministic.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

from . import autoscaler, metrics, placement as plc
from .autoscaler import AutoscaleParams, BruteForceBounds, ScalingPlan
from .metrics import EnergyParams, ScenarioEval
from .opgraph import OperatorDag, OperatorNode
from .perfmodel import ProfileSet
from .placement import DeviceSpec, Placement, PlacementParams
from .workload import WorkloadPoint

MODES = ("operator", "model", "oracle")
PLACEMENTS = ("shared", "default_stream")


@dataclass
class PointResult:
    point: WorkloadPoint
    mode: str
    placement_mode: str
    plan: ScalingPlan
    placement: Placement | None
    evaluation: ScenarioEval


def plan_for_mode(
    mode: str,
    dag: OperatorDag,
    profiles: ProfileSet,
    point: WorkloadPoint,
    params: AutoscaleParams,
    bounds: BruteForceBounds | None = None,
) -> ScalingPlan:
    if mode == "operator":
        return autoscaler.greedy_autoscale(dag, profiles, point, params)
    if mode == "model":
        return autoscaler.model_level_autoscale(dag, profiles, point, params)
    if mode == "oracle":
        return autoscaler.brute_force_autoscale(dag, profiles, point, params, bounds)
    raise ValueError(f"unknown mode {mode!r}")


def run_point(
    mode: str,
    dag: OperatorDag,
    profiles: ProfileSet,
    fleet: list[DeviceSpec],
    point: WorkloadPoint,
    params: AutoscaleParams,
    placement_mode: str = "shared",
    energy_params: EnergyParams | None = None,
    bounds: BruteForceBounds | None = None,
    fingerprint_extra: dict | None = None,
) -> PointResult:
    """Run one mode on one workload point: plan, place, score."""
    energy_params = energy_params or EnergyParams()
    plan = plan_for_mode(mode, dag, profiles, point, params, bounds)
    pparams = PlacementParams(slo=params.slo)
    label = f"{mode}/{placement_mode}"
    fingerprint = metrics.workload_fingerprint(point, params.slo, fingerprint_extra)

    if not plan.feasible:
        evaluation = ScenarioEval(
            label=label,
            fingerprint=fingerprint,
            devices_used=0,
            energy_joules=0.0,
            memory_bytes=0.0,
            feasible=False,
        )
        return PointResult(point, mode, placement_mode, plan, None, evaluation)

    # model-level replicas always land on dedicated devices; a uniform plan
    # has k_base = R and no extras, so shared placement degenerates to that
    if placement_mode == "default_stream":
        placed = plc.default_stream_place(plan, dag, profiles, fleet, pparams, point)
    elif placement_mode == "shared":
        placed = plc.place(plan, dag, profiles, fleet, pparams, point)
    else:
        raise ValueError(f"unknown placement mode {placement_mode!r}")

    energy = metrics.request_energy(plan, placed, dag, profiles, point, energy_params)
    metrics.fill_device_energy(placed, plan, dag, profiles, point, energy_params)
    memory = metrics.provisioned_memory(plan, placed)
    evaluation = ScenarioEval(
        label=label,
        fingerprint=fingerprint,
        devices_used=placed.devices_used,
        energy_joules=energy,
        memory_bytes=memory,
        feasible=plan.feasible and placed.feasible,
    )
    return PointResult(point, mode, placement_mode, plan, placed, evaluation)


@dataclass
class ComparisonRow:
    """One sweep row: model-level baseline vs operator-level candidate."""

    axis: str
    value: float
    point: WorkloadPoint
    baseline: PointResult | None
    candidate: PointResult | None
    report: metrics.SavingsReport | None

    @property
    def vacuous(self) -> bool:
        # zero-demand point: nothing was planned on either side
        return self.baseline is None and self.candidate is None

    @property
    def feasible_baseline(self) -> bool:
        return self.vacuous or (
            self.baseline is not None and self.baseline.evaluation.feasible
        )

    @property
    def feasible_candidate(self) -> bool:
        return self.vacuous or (
            self.candidate is not None and self.candidate.evaluation.feasible
        )

    @property
    def fingerprint(self) -> str:
        for side in (self.baseline, self.candidate):
            if side is not None:
                return side.evaluation.fingerprint
        return ""


def compare_point(
    dag: OperatorDag,
    profiles: ProfileSet,
    fleet: list[DeviceSpec],
    point: WorkloadPoint,
    params: AutoscaleParams,
    placement_mode: str = "shared",
    energy_params: EnergyParams | None = None,
    axis: str = "",
    value: float = 0.0,
    fingerprint_extra: dict | None = None,
) -> ComparisonRow:
    """Model-level vs operator-level on one identical workload point."""
    if point.qps <= 0.0:
        # nothing to serve; both sides trivially equal
        return ComparisonRow(axis, value, point, None, None, None)
    baseline = run_point(
        "model", dag, profiles, fleet, point, params,
        placement_mode="shared", energy_params=energy_params,
        fingerprint_extra=fingerprint_extra,
    )
    candidate = run_point(
        "operator", dag, profiles, fleet, point, params,
        placement_mode=placement_mode, energy_params=energy_params,
        fingerprint_extra=fingerprint_extra,
    )
    report = None
    if baseline.evaluation.feasible and candidate.evaluation.feasible:
        report = metrics.compare(baseline.evaluation, candidate.evaluation)
    return ComparisonRow(axis, value, point, baseline, candidate, report)


def scale_dag(dag: OperatorDag, factor: float) -> OperatorDag:
    """Model-size sweep: scale every node's layer repeat count."""
    nodes = [
        OperatorNode(
            id=n.id,
            kind=n.kind,
            layer_count=max(1, round(n.layer_count * factor)),
            profile_ref=n.profile_ref,
        )
        for n in dag.nodes
    ]
    return OperatorDag(nodes=nodes, edges=list(dag.edges))


def sweep(
    axis: str,
    values: list[float],
    dag: OperatorDag,
    profiles: ProfileSet,
    fleet: list[DeviceSpec],
    base_point: WorkloadPoint,
    params: AutoscaleParams,
    placement_mode: str = "shared",
    energy_params: EnergyParams | None = None,
    max_workers: int = 4,
) -> list[ComparisonRow]:
    """Evaluate baseline-vs-candidate across one axis.

    seqlen varies the point's sequence length, qps its arrival rate, and
    model_scale multiplies every layer count. Points run concurrently;
    rows come back in axis order.
    """
    if axis not in ("seqlen", "qps", "model_scale"):
        raise ValueError(f"unknown sweep axis {axis!r}")

    def job(value: float) -> ComparisonRow:
        point = base_point
        the_dag = dag
        point_params = params
        if axis == "seqlen":
            # hold the offered token load and SLO pressure constant across
            # lengths: qps scales inversely with L, and the configured SLO
            # applies at the base length and scales linearly with it
            scale = value / base_point.seq_len
            point = replace(
                base_point, seq_len=int(value), qps=base_point.qps / scale
            )
            point_params = replace(
                params, slo=params.slo * scale, epsilon=params.epsilon * scale
            )
        elif axis == "qps":
            point = replace(base_point, qps=float(value))
        else:
            the_dag = scale_dag(dag, value)
        extra = {"axis": axis, "value": value}
        return compare_point(
            the_dag, profiles, fleet, point, point_params,
            placement_mode=placement_mode, energy_params=energy_params,
            axis=axis, value=value, fingerprint_extra=extra,
        )

    if len(values) <= 1 or max_workers <= 1:
        return [job(v) for v in values]
    with ThreadPoolExecutor(max_workers=min(max_workers, len(values))) as pool:
        return list(pool.map(job, values))


def _fmt(x: float) -> str:
    if x != x:  # NaN
        return ""
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.10g}"


SWEEP_CSV_HEADER = (
    "sweep_var,value,gpu_savings,energy_savings,memory_savings,"
    "feasible_baseline,feasible_candidate,fingerprint"
)


def sweep_rows_to_csv(rows: list[ComparisonRow]) -> str:
    """Render sweep rows as the plot-ready CSV (deterministic bytes)."""
    lines = [SWEEP_CSV_HEADER]
    for row in rows:
        if row.report is not None:
            g = _fmt(row.report.gpu_savings)
            e = _fmt(row.report.energy_savings)
            m = _fmt(row.report.memory_savings)
        elif row.vacuous:
            # zero-demand point: both sides idle, savings vacuously zero
            g = e = m = _fmt(0.0)
        else:
            g = e = m = ""
        lines.append(
            ",".join(
                [
                    row.axis,
                    _fmt(row.value),
                    g,
                    e,
                    m,
                    str(row.feasible_baseline).lower(),
                    str(row.feasible_candidate).lower(),
                    row.fingerprint,
                ]
            )
        )
    return "\n".join(lines) + "\n"
