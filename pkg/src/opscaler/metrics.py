"""Energy attribution, provisioned memory, and savings reports.

Per-request energy for one operator is

    E_v = alpha * P_v * R_v * (W_v + T_v) + beta * T_v

with W and T taken from the placement-adjusted sojourns and multiplied by
the operator's layer count. alpha prices provisioned capacity held over
the request's passage (idle power), beta the active compute itself.
Savings between two evaluated scenarios are plain fractions
(baseline - candidate) / baseline, negative when the candidate is worse.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

from .autoscaler import ScalingPlan
from .errors import OpscalerError
from .opgraph import OperatorDag
from .perfmodel import ProfileSet
from .placement import Placement, adjusted_ops_for_placement
from .workload import WorkloadPoint

REFERENCE_GPU_WATTS = 400.0


class MismatchedScenario(OpscalerError):
    """Savings comparison across different workload/SLO fingerprints."""


@dataclass(frozen=True)
class EnergyParams:
    """Idle (alpha) and active (beta) power coefficients, joules/sec.

    Defaults split a 400 W reference GPU 30/70 between provisioned-idle
    and dynamic power.
    """

    alpha: float = 0.3 * REFERENCE_GPU_WATTS
    beta: float = 0.7 * REFERENCE_GPU_WATTS

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("power coefficients must be >= 0")


@dataclass(frozen=True)
class SavingsReport:
    gpu_savings: float
    energy_savings: float
    memory_savings: float
    baseline_label: str
    candidate_label: str
    baseline: dict
    candidate: dict

    def to_dict(self) -> dict:
        return {
            "gpu_savings": self.gpu_savings,
            "energy_savings": self.energy_savings,
            "memory_savings": self.memory_savings,
            "baseline_label": self.baseline_label,
            "candidate_label": self.candidate_label,
            "baseline": self.baseline,
            "candidate": self.candidate,
        }


@dataclass(frozen=True)
class ScenarioEval:
    """One evaluated (plan, placement) pair, ready for comparison."""

    label: str
    fingerprint: str
    devices_used: int
    energy_joules: float
    memory_bytes: float
    feasible: bool


def request_energy(
    plan: ScalingPlan,
    placement: Placement,
    dag: OperatorDag,
    profiles: ProfileSet,
    point: WorkloadPoint,
    params: EnergyParams,
) -> float:
    """Total per-request energy (joules) across all operators."""
    adjusted = adjusted_ops_for_placement(dag, plan, point, profiles, placement)
    total = 0.0
    for op_id, cfg in plan.configs.items():
        layers = dag.node(op_id).layer_count
        adj = adjusted[op_id]
        wait = adj.wait * layers
        service = adj.latency * layers
        total += params.alpha * cfg.p * cfg.r * (wait + service)
        total += params.beta * service
    return total


def fill_device_energy(
    placement: Placement,
    plan: ScalingPlan,
    dag: OperatorDag,
    profiles: ProfileSet,
    point: WorkloadPoint,
    params: EnergyParams,
) -> None:
    """Attribute per-request energy to devices, in place.

    Each replica carries its alpha share plus an equal 1/R share of the
    operator's beta term; device sums reproduce `request_energy` exactly.
    """
    adjusted = adjusted_ops_for_placement(dag, plan, point, profiles, placement)
    for load in placement.device_loads.values():
        load.energy = 0.0
    for a in placement.assignments:
        cfg = plan.configs[a.op_id]
        layers = dag.node(a.op_id).layer_count
        adj = adjusted[a.op_id]
        share = params.alpha * cfg.p * (adj.wait + adj.latency) * layers
        share += params.beta * adj.latency * layers / cfg.r
        placement.device_loads[a.device_id].energy += share


def provisioned_memory(plan: ScalingPlan, placement: Placement) -> float:
    """Bytes allocated across all placed replicas."""
    return sum(a.mem_bytes for a in placement.assignments)


def workload_fingerprint(point: WorkloadPoint, slo: float, extra: dict | None = None) -> str:
    """Stable hash identifying the workload/SLO a scenario was run under."""
    payload = {
        "qps": point.qps,
        "seq_len": point.seq_len,
        "phase": point.phase,
        "window": list(point.window),
        "slo": slo,
    }
    if extra:
        payload.update(extra)
    blob = json.dumps(payload, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def compare(baseline: ScenarioEval, candidate: ScenarioEval) -> SavingsReport:
    """Three savings fractions of candidate over baseline.

    Both scenarios must have been evaluated on the identical workload and
    SLO; fractions are not clamped, so a worse candidate shows negative
    savings.
    """
    if baseline.fingerprint != candidate.fingerprint:
        raise MismatchedScenario(
            f"fingerprints differ: {baseline.fingerprint} vs {candidate.fingerprint}"
        )
    for name, value in (
        ("devices_used", baseline.devices_used),
        ("energy_joules", baseline.energy_joules),
        ("memory_bytes", baseline.memory_bytes),
    ):
        if value <= 0:
            raise ValueError(f"baseline {name} must be positive, got {value}")
    return SavingsReport(
        gpu_savings=(baseline.devices_used - candidate.devices_used)
        / baseline.devices_used,
        energy_savings=(baseline.energy_joules - candidate.energy_joules)
        / baseline.energy_joules,
        memory_savings=(baseline.memory_bytes - candidate.memory_bytes)
        / baseline.memory_bytes,
        baseline_label=baseline.label,
        candidate_label=candidate.label,
        baseline={
            "devices": baseline.devices_used,
            "energy_joules": baseline.energy_joules,
            "memory_bytes": baseline.memory_bytes,
            "feasible": baseline.feasible,
        },
        candidate={
            "devices": candidate.devices_used,
            "energy_joules": candidate.energy_joules,
            "memory_bytes": candidate.memory_bytes,
            "feasible": candidate.feasible,
        },
    )
