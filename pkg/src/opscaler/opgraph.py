"""Operator DAG: validation, arrival-rate propagation, critical path.

The model is a directed acyclic graph of operators. A node aggregates all
identical layers of one operator kind (`layer_count`); its critical-path
contribution is multiplied by that count. Iteration latency is the
maximum over source->sink paths of the per-node (sojourn + comm) weights.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import OpscalerError

OPERATOR_KINDS = (
    "attention",
    "linear",
    "moe_linear",
    "norm",
    "activation",
    "embedding",
    "elementwise",
    "other",
)


class CycleDetected(OpscalerError):
    """The edge set admits no topological order."""


class DanglingEdge(OpscalerError):
    """An edge endpoint names a node that does not exist."""


class MissingSojourn(OpscalerError):
    """A sojourn map does not cover every node in the DAG."""


@dataclass(frozen=True)
class OperatorNode:
    id: str
    kind: str
    layer_count: int = 1
    profile_ref: str = ""

    def __post_init__(self):
        if self.layer_count < 1:
            raise ValueError(f"node {self.id}: layer_count must be >= 1")
        if self.kind not in OPERATOR_KINDS:
            raise ValueError(f"node {self.id}: unknown kind {self.kind!r}")


@dataclass(frozen=True)
class Edge:
    src: str
    dst: str
    volume_ref: str = ""


@dataclass(frozen=True)
class NodeSojourn:
    """Per-node critical-path weight: sojourn (wait + service) and
    outbound communication time, both in seconds."""

    sojourn: float
    comm: float = 0.0


@dataclass
class OperatorDag:
    """Validated operator graph with cached topological order.

    Immutable by convention after construction; safe to share across
    concurrent sweep workers.
    """

    nodes: list[OperatorNode]
    edges: list[Edge]
    sources: list[str] = field(default_factory=list)
    sinks: list[str] = field(default_factory=list)
    topo_order: list[str] = field(default_factory=list)

    def __post_init__(self):
        self._node_by_id = {}
        for n in self.nodes:
            if n.id in self._node_by_id:
                raise ValueError(f"duplicate node id {n.id!r}")
            self._node_by_id[n.id] = n
        self._succ = {n.id: [] for n in self.nodes}
        self._pred = {n.id: [] for n in self.nodes}
        for e in self.edges:
            for endpoint in (e.src, e.dst):
                if endpoint not in self._node_by_id:
                    raise DanglingEdge(
                        f"edge ({e.src} -> {e.dst}) references missing node {endpoint!r}"
                    )
            self._succ[e.src].append(e.dst)
            self._pred[e.dst].append(e.src)
        for adj in (self._succ, self._pred):
            for v in adj.values():
                v.sort()
        self.topo_order = self._toposort()
        self.sources = sorted(v for v, p in self._pred.items() if not p)
        self.sinks = sorted(v for v, s in self._succ.items() if not s)
        if not self.sources or not self.sinks:
            raise CycleDetected("graph has no source or no sink")

    def _toposort(self) -> list[str]:
        indeg = {v: len(p) for v, p in self._pred.items()}
        ready = sorted(v for v, d in indeg.items() if d == 0)
        order = []
        while ready:
            v = ready.pop(0)
            order.append(v)
            inserted = False
            for w in self._succ[v]:
                indeg[w] -= 1
                if indeg[w] == 0:
                    ready.append(w)
                    inserted = True
            if inserted:
                ready.sort()
        if len(order) != len(self.nodes):
            stuck = sorted(v for v, d in indeg.items() if d > 0)
            back = next(
                (e for e in self.edges if e.dst in stuck and e.src in stuck), None
            )
            detail = f" (back edge {back.src} -> {back.dst})" if back else ""
            raise CycleDetected(f"cycle through nodes {stuck}{detail}")
        return order

    def node(self, node_id: str) -> OperatorNode:
        return self._node_by_id[node_id]

    def successors(self, node_id: str) -> list[str]:
        return self._succ[node_id]

    def predecessors(self, node_id: str) -> list[str]:
        return self._pred[node_id]

    def out_edges(self, node_id: str) -> list[Edge]:
        return [e for e in self.edges if e.src == node_id]

    @property
    def node_ids(self) -> list[str]:
        return [n.id for n in self.nodes]


def build_dag(spec: dict) -> OperatorDag:
    """Build and validate an OperatorDag from its JSON-style description.

    Expected shape:
        {"nodes": [{"id", "kind", "layer_count", "profile_ref"}, ...],
         "edges": [{"src", "dst", "volume_ref"}, ...]}
    """
    nodes = [
        OperatorNode(
            id=n["id"],
            kind=n.get("kind", "other"),
            layer_count=int(n.get("layer_count", 1)),
            profile_ref=n.get("profile_ref", n["id"]),
        )
        for n in spec.get("nodes", [])
    ]
    edges = [
        Edge(src=e["src"], dst=e["dst"], volume_ref=e.get("volume_ref", e["src"]))
        for e in spec.get("edges", [])
    ]
    return OperatorDag(nodes=nodes, edges=edges)


def load_dag(path: str | Path) -> OperatorDag:
    """Load a DAG spec file (JSON) from disk."""
    with open(path, "r", encoding="utf-8") as fh:
        return build_dag(json.load(fh))


def propagate_arrivals(
    dag: OperatorDag, qps: float, batch_map: dict[str, int]
) -> dict[str, float]:
    """Per-node batch arrival rate under uniform fan-through.

    Every operator sees every request once per iteration, so the batch
    arrival rate at node v is qps / B_v.
    """
    if qps <= 0.0:
        raise ValueError(f"qps must be positive, got {qps}")
    rates = {}
    for node_id in dag.node_ids:
        b = batch_map[node_id]
        if b < 1:
            raise ValueError(f"node {node_id}: batch size must be >= 1, got {b}")
        rates[node_id] = qps / b
    return rates


def critical_path_latency(
    dag: OperatorDag, sojourn: dict[str, NodeSojourn]
) -> tuple[float, list[str]]:
    """Iteration latency: the max-weight source->sink path.

    Node weight is (sojourn + comm) * layer_count. Ties are broken toward
    the lexicographically smallest node-id sequence, so results are
    deterministic.
    """
    for node_id in dag.node_ids:
        if node_id not in sojourn:
            raise MissingSojourn(f"no sojourn entry for node {node_id!r}")
        entry = sojourn[node_id]
        if not (entry.sojourn >= 0.0 and entry.comm >= 0.0):
            raise ValueError(f"node {node_id}: sojourn/comm must be finite and >= 0")

    def weight(node_id: str) -> float:
        n = dag.node(node_id)
        s = sojourn[node_id]
        return (s.sojourn + s.comm) * n.layer_count

    # longest path over the cached topological order; best[v] carries the
    # path as a tuple so equal-latency ties resolve lexicographically
    best: dict[str, tuple[float, tuple[str, ...]]] = {}
    for v in dag.topo_order:
        w = weight(v)
        preds = dag.predecessors(v)
        if not preds:
            best[v] = (w, (v,))
            continue
        cand = None
        for p in preds:
            pl, pp = best[p]
            entry = (pl + w, pp + (v,))
            if cand is None or entry[0] > cand[0] or (
                entry[0] == cand[0] and entry[1] < cand[1]
            ):
                cand = entry
        best[v] = cand

    top = None
    for sink in dag.sinks:
        entry = best[sink]
        if top is None or entry[0] > top[0] or (entry[0] == top[0] and entry[1] < top[1]):
            top = entry
    return top[0], list(top[1])
