"""Replica-to-device placement with interference-aware colocation.

Deployment happens in two stages. First, k_base = min_v R_v full model
instances go onto dedicated device groups, packing operators first-fit-
decreasing by weight memory. Second, the remaining "extra" replicas are
placed greedily, heaviest service time first: each probes the already
used devices in id order, skipping any that would violate device memory
(a hard constraint) or push the interference-adjusted end-to-end latency
over the SLO; surviving candidates are scored by weighted residual slack
and the best one wins. Only when no used device accepts the replica is a
fresh device provisioned.

Interference bookkeeping groups replicas by ownership: the operators of
one model instance form a single group per device (they execute
sequentially, so their joint standing SM demand is the maximum over
members, and they never interfere with each other -- operator profiles
are measured with the whole model resident). Each extra replica is its
own group. A device's standing load is the sum of its group demands, and
a replica's latency inflation follows the hinge interference model on
the load contributed by the other groups.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from . import perfmodel, queueing
from .autoscaler import ScalingPlan
from .errors import OpscalerError
from .opgraph import NodeSojourn, OperatorDag, critical_path_latency
from .perfmodel import ProfileSet
from .workload import WorkloadPoint


class FleetExhausted(OpscalerError):
    """No unused device remains for a replica that must be provisioned."""


class InfeasiblePlacement(OpscalerError):
    """A replica cannot be hosted on any device (memory or SLO)."""


@dataclass(frozen=True)
class DeviceSpec:
    id: str
    mem_cap: float = 80e9
    compute_cap: float = 1.0
    link_bw: float = 600e9

    def __post_init__(self):
        if self.mem_cap <= 0:
            raise ValueError(f"device {self.id}: mem_cap must be positive")


@dataclass
class ReplicaAssignment:
    op_id: str
    replica_index: int
    device_id: str
    sm_share: int
    sm_demand: float
    mem_bytes: float
    group: str
    interference_adjusted_latency: float = 0.0


@dataclass
class DeviceLoad:
    mem_used: float = 0.0
    sm_demand: float = 0.0
    energy: float = 0.0


@dataclass
class Placement:
    assignments: list[ReplicaAssignment]
    device_loads: dict[str, DeviceLoad]
    devices_used: int
    feasible: bool
    recomputed_latency: float

    def to_dict(self) -> dict:
        return {
            "assignments": [
                {
                    "op": a.op_id,
                    "replica": a.replica_index,
                    "device": a.device_id,
                    "sm_share": a.sm_share,
                    "interference_adjusted_latency": a.interference_adjusted_latency,
                }
                for a in self.assignments
            ],
            "devices": [
                {
                    "id": dev,
                    "mem_used": load.mem_used,
                    "sm_demand": load.sm_demand,
                    "energy": load.energy,
                }
                for dev, load in sorted(self.device_loads.items())
            ],
            "devices_used": self.devices_used,
            "feasible": self.feasible,
            "recomputed_latency": self.recomputed_latency,
        }


@dataclass(frozen=True)
class PlacementParams:
    slo: float
    slack_weight_mem: float = 0.5
    slack_weight_compute: float = 0.5
    max_sm_load: float = 1.5  # candidates beyond this oversubscription are rejected


def load_fleet(path: str | Path) -> list[DeviceSpec]:
    """Fleet config: JSON list of device objects."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    return [
        DeviceSpec(
            id=d["id"],
            mem_cap=float(d.get("mem_cap", 80e9)),
            compute_cap=float(d.get("compute_cap", 1.0)),
            link_bw=float(d.get("link_bw", 600e9)),
        )
        for d in raw
    ]


def make_fleet(n: int, mem_cap: float = 80e9, link_bw: float = 600e9) -> list[DeviceSpec]:
    width = len(str(max(0, n - 1)))
    return [
        DeviceSpec(id=f"gpu{i:0{width}d}", mem_cap=mem_cap, link_bw=link_bw)
        for i in range(n)
    ]


# ---------------------------------------------------------------------------
# working state


class _State:
    def __init__(self, dag: OperatorDag, profiles: ProfileSet, plan: ScalingPlan,
                 point: WorkloadPoint, fleet: list[DeviceSpec]):
        self.dag = dag
        self.profiles = profiles
        self.plan = plan
        self.point = point
        self.devices = {d.id: d for d in fleet}
        self.device_order = sorted(self.devices)
        self.unused = list(self.device_order)
        self.used: list[str] = []
        self.assignments: list[ReplicaAssignment] = []
        self.by_device: dict[str, list[ReplicaAssignment]] = {}

    def op_mem(self, op_id: str) -> float:
        cfg = self.plan.configs[op_id]
        prof = self.profiles.get(self.dag.node(op_id).profile_ref)
        return perfmodel.op_memory(prof, cfg.b, self.point.seq_len, cfg.p)

    def op_demand(self, op_id: str) -> float:
        cfg = self.plan.configs[op_id]
        prof = self.profiles.get(self.dag.node(op_id).profile_ref)
        return prof.sm_demand(cfg.b, self.point.seq_len)

    def mem_used(self, device_id: str) -> float:
        return sum(a.mem_bytes for a in self.by_device.get(device_id, []))

    def group_demands(self, device_id: str) -> dict[str, float]:
        demands: dict[str, float] = {}
        for a in self.by_device.get(device_id, []):
            demands[a.group] = max(demands.get(a.group, 0.0), a.sm_demand)
        return demands

    def standing_load(self, device_id: str) -> float:
        return sum(self.group_demands(device_id).values())

    def take_unused(self) -> str:
        if not self.unused:
            raise FleetExhausted(
                f"all {len(self.devices)} devices in use, none left to provision"
            )
        dev = self.unused.pop(0)
        self.used.append(dev)
        self.by_device[dev] = []
        return dev

    def assign(self, op_id: str, replica_index: int, device_id: str, group: str,
               sm_share: int) -> ReplicaAssignment:
        a = ReplicaAssignment(
            op_id=op_id,
            replica_index=replica_index,
            device_id=device_id,
            sm_share=sm_share,
            sm_demand=self.op_demand(op_id),
            mem_bytes=self.op_mem(op_id),
            group=group,
        )
        self.assignments.append(a)
        self.by_device[device_id].append(a)
        return a


def _interference_per_replica(
    state: _State, extra: list[ReplicaAssignment] | None = None
) -> dict[tuple[str, int], float]:
    """Interference factor for every (op, replica), optionally with a
    tentative extra assignment overlaid."""
    by_device: dict[str, list[ReplicaAssignment]] = {
        d: list(v) for d, v in state.by_device.items()
    }
    for a in extra or []:
        by_device.setdefault(a.device_id, []).append(a)
    params = state.profiles.interference
    factors = {}
    for dev, members in by_device.items():
        demands: dict[str, float] = {}
        for a in members:
            demands[a.group] = max(demands.get(a.group, 0.0), a.sm_demand)
        total = sum(demands.values())
        for a in members:
            others = total - demands[a.group]
            factors[(a.op_id, a.replica_index)] = perfmodel.interference_factor(
                others, a.sm_demand, params
            )
    return factors


@dataclass(frozen=True)
class AdjustedOp:
    """Operator service figures after interference adjustment."""

    latency: float   # effective T, mean over replicas
    wait: float
    service: float   # T / B
    comm: float
    stable: bool


def _adjusted_ops(
    dag: OperatorDag,
    plan: ScalingPlan,
    point: WorkloadPoint,
    factors: dict[tuple[str, int], float],
) -> dict[str, AdjustedOp]:
    out = {}
    for op_id, cfg in plan.configs.items():
        pred = plan.predicted[op_id]
        replica_factors = [
            factors.get((op_id, k), 1.0) for k in range(1, cfg.r + 1)
        ]
        t_eff = pred.op_latency * sum(replica_factors) / len(replica_factors)
        mu = 1.0 / (t_eff * dag.node(op_id).layer_count)
        lam = point.qps / cfg.b
        stable = lam < cfg.r * mu
        wait = (
            queueing.expected_wait(queueing.QueueOperatingPoint(lam, mu, cfg.r))
            if stable
            else math.inf
        )
        out[op_id] = AdjustedOp(
            latency=t_eff,
            wait=wait,
            service=t_eff / cfg.b,
            comm=pred.comm,
            stable=stable,
        )
    return out


def _latency_from_adjusted(dag: OperatorDag, adjusted: dict[str, AdjustedOp]) -> float:
    if not all(a.stable for a in adjusted.values()):
        return math.inf
    sojourns = {
        op: NodeSojourn(sojourn=a.wait + a.service, comm=a.comm)
        for op, a in adjusted.items()
    }
    latency, _ = critical_path_latency(dag, sojourns)
    return latency


def recompute_latency_with_interference(
    dag: OperatorDag,
    plan: ScalingPlan,
    point: WorkloadPoint,
    profiles: ProfileSet,
    state_or_placement,
    extra: list[ReplicaAssignment] | None = None,
) -> float:
    """End-to-end latency with every replica's interference applied.

    An operator's effective service latency is the mean over its replicas
    of the interference-adjusted latency; waits and the critical path are
    recomputed from those.
    """
    if isinstance(state_or_placement, Placement):
        factors = _placement_factors(state_or_placement, profiles)
    else:
        factors = _interference_per_replica(state_or_placement, extra)
    adjusted = _adjusted_ops(dag, plan, point, factors)
    return _latency_from_adjusted(dag, adjusted)


def _placement_factors(placement: Placement, profiles: ProfileSet):
    factors = {}
    by_device: dict[str, list[ReplicaAssignment]] = {}
    for a in placement.assignments:
        by_device.setdefault(a.device_id, []).append(a)
    for dev, members in by_device.items():
        demands: dict[str, float] = {}
        for a in members:
            demands[a.group] = max(demands.get(a.group, 0.0), a.sm_demand)
        total = sum(demands.values())
        for a in members:
            factors[(a.op_id, a.replica_index)] = perfmodel.interference_factor(
                total - demands[a.group], a.sm_demand, profiles.interference
            )
    return factors


def adjusted_ops_for_placement(
    dag: OperatorDag,
    plan: ScalingPlan,
    point: WorkloadPoint,
    profiles: ProfileSet,
    placement: Placement,
) -> dict[str, AdjustedOp]:
    """Per-operator adjusted wait/service figures for a final placement."""
    factors = _placement_factors(placement, profiles)
    return _adjusted_ops(dag, plan, point, factors)


def weighted_slack(
    mem_slack: float,
    mem_cap: float,
    compute_slack: float,
    compute_cap: float,
    w_mem: float = 0.5,
    w_compute: float = 0.5,
) -> float:
    """Score a candidate device by its residual headroom after the
    tentative assignment; higher is better. Compute slack below zero
    (tolerated oversubscription) counts as zero."""
    mem_frac = max(0.0, mem_slack) / mem_cap
    comp_frac = max(0.0, compute_slack) / compute_cap
    return w_mem * mem_frac + w_compute * comp_frac


# ---------------------------------------------------------------------------
# deployment stages


def _deploy_base_instances(state: _State, k_base: int) -> None:
    order = sorted(
        state.dag.node_ids,
        key=lambda op: (
            -(state.profiles.get(state.dag.node(op).profile_ref).weight_mem
              / state.plan.configs[op].p),
            op,
        ),
    )
    for instance in range(1, k_base + 1):
        group = f"base{instance}"
        instance_devices: list[str] = []
        for op_id in order:
            mem = state.op_mem(op_id)
            target = None
            for dev in instance_devices:
                if state.mem_used(dev) + mem <= state.devices[dev].mem_cap:
                    target = dev
                    break
            if target is None:
                target = state.take_unused()
                if mem > state.devices[target].mem_cap:
                    raise InfeasiblePlacement(
                        f"operator {op_id} needs {mem:.3g} B, above the "
                        f"{state.devices[target].mem_cap:.3g} B device capacity"
                    )
                instance_devices.append(target)
            state.assign(op_id, instance, target, group, sm_share=100)


def _extra_replicas(plan: ScalingPlan, k_base: int) -> list[tuple[str, int]]:
    extras = []
    for op_id, cfg in plan.configs.items():
        for k in range(k_base + 1, cfg.r + 1):
            extras.append((op_id, k))
    extras.sort(
        key=lambda item: (-plan.predicted[item[0]].op_latency, item[0], item[1])
    )
    return extras


def place(
    plan: ScalingPlan,
    dag: OperatorDag,
    profiles: ProfileSet,
    fleet: list[DeviceSpec],
    params: PlacementParams,
    point: WorkloadPoint,
) -> Placement:
    """Greedy interference-aware placement of a scaling plan."""
    if not plan.feasible:
        raise ValueError("placement requires an SLO-feasible plan")
    if not fleet:
        raise ValueError("fleet must not be empty")
    state = _State(dag, profiles, plan, point, fleet)
    k_base = min(cfg.r for cfg in plan.configs.values())
    _deploy_base_instances(state, k_base)

    for op_id, k in _extra_replicas(plan, k_base):
        group = f"extra:{op_id}:{k}"
        mem = state.op_mem(op_id)
        demand = state.op_demand(op_id)
        share = max(1, min(100, round(demand * 100)))
        candidates = []
        for dev in state.used:
            cap = state.devices[dev]
            mem_used = state.mem_used(dev)
            if mem_used + mem > cap.mem_cap:
                continue
            load = state.standing_load(dev)
            if load + demand > params.max_sm_load:
                continue
            tentative = ReplicaAssignment(
                op_id=op_id, replica_index=k, device_id=dev, sm_share=share,
                sm_demand=demand, mem_bytes=mem, group=group,
            )
            latency = recompute_latency_with_interference(
                dag, plan, point, profiles, state, extra=[tentative]
            )
            if latency > params.slo:
                continue
            score = weighted_slack(
                mem_slack=cap.mem_cap - (mem_used + mem),
                mem_cap=cap.mem_cap,
                compute_slack=cap.compute_cap - (load + demand),
                compute_cap=cap.compute_cap,
                w_mem=params.slack_weight_mem,
                w_compute=params.slack_weight_compute,
            )
            candidates.append((score, dev))
        if candidates:
            # best slack wins; ties resolve to the lowest device id
            candidates.sort(key=lambda c: (-c[0], c[1]))
            target = candidates[0][1]
            state.assign(op_id, k, target, group, sm_share=share)
        else:
            target = state.take_unused()
            if mem > state.devices[target].mem_cap:
                raise InfeasiblePlacement(
                    f"operator {op_id} replica {k} needs {mem:.3g} B, above "
                    f"device capacity {state.devices[target].mem_cap:.3g} B"
                )
            state.assign(op_id, k, target, group, sm_share=100)

    return _finalize(state, params)


def default_stream_place(
    plan: ScalingPlan,
    dag: OperatorDag,
    profiles: ProfileSet,
    fleet: list[DeviceSpec],
    params: PlacementParams,
    point: WorkloadPoint,
) -> Placement:
    """No-sharing variant for GPUs without concurrent streams: every extra
    replica occupies a dedicated device, so no interference arises."""
    if not plan.feasible:
        raise ValueError("placement requires an SLO-feasible plan")
    if not fleet:
        raise ValueError("fleet must not be empty")
    state = _State(dag, profiles, plan, point, fleet)
    k_base = min(cfg.r for cfg in plan.configs.values())
    _deploy_base_instances(state, k_base)
    for op_id, k in _extra_replicas(plan, k_base):
        target = state.take_unused()
        mem = state.op_mem(op_id)
        if mem > state.devices[target].mem_cap:
            raise InfeasiblePlacement(
                f"operator {op_id} replica {k} needs {mem:.3g} B, above "
                f"device capacity {state.devices[target].mem_cap:.3g} B"
            )
        state.assign(op_id, k, target, f"extra:{op_id}:{k}", sm_share=100)
    return _finalize(state, params)


def _finalize(state: _State, params: PlacementParams) -> Placement:
    factors = _interference_per_replica(state)
    for a in state.assignments:
        pred = state.plan.predicted[a.op_id]
        a.interference_adjusted_latency = pred.op_latency * factors[
            (a.op_id, a.replica_index)
        ]
    adjusted = _adjusted_ops(state.dag, state.plan, state.point, factors)
    latency = _latency_from_adjusted(state.dag, adjusted)
    loads = {
        dev: DeviceLoad(
            mem_used=state.mem_used(dev), sm_demand=state.standing_load(dev)
        )
        for dev in state.used
    }
    return Placement(
        assignments=state.assignments,
        device_loads=loads,
        devices_used=len(state.used),
        feasible=latency <= params.slo,
        recomputed_latency=latency,
    )
