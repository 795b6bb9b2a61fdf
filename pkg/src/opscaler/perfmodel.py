"""Parametric per-operator performance models and profile fitting.

Latency follows a three-term polynomial in batch B and sequence length L:

    base(B, L) = c0 + c1*B*L + c2*B*L^2

which covers the three observed scaling classes (flat, linear, quadratic;
the quadratic term is reserved for prefill attention). Parallelism divides
latency by eta*P; an SM-share below the operator's fractional SM demand
inflates latency proportionally, while shares above demand have no effect.

Memory is weight/P plus a transient term linear in B*L; communication
volume is linear in B*L and converts to time through the link bandwidth.
Colocation interference is a hinge on device SM oversubscription.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import nnls

from .errors import OpscalerError

PHASES = ("prefill", "decode")


class UnknownPhase(OpscalerError):
    """Phase tag other than 'prefill' or 'decode'."""


class InsufficientSamples(OpscalerError):
    """Too few measurement samples to fit a latency model."""


class DegenerateDesign(OpscalerError):
    """Sample design matrix is rank deficient (e.g. one (B, L) point)."""


class UnknownProfile(OpscalerError):
    """A profile_ref or volume_ref does not resolve in the ProfileSet."""


@dataclass(frozen=True)
class LatencyModel:
    """Polynomial latency coefficients: seconds, seconds per token*batch,
    seconds per token^2*batch."""

    c0: float = 0.0
    c1: float = 0.0
    c2: float = 0.0

    def __post_init__(self):
        if self.c0 < 0 or self.c1 < 0 or self.c2 < 0:
            raise ValueError("latency coefficients must be non-negative")

    def base_latency(self, batch: int, seq_len: int) -> float:
        bl = batch * seq_len
        return self.c0 + self.c1 * bl + self.c2 * bl * seq_len


@dataclass(frozen=True)
class InterferenceParams:
    """Hinge penalty on SM oversubscription: I = 1 + theta*excess^exponent."""

    theta: float = 0.5
    exponent: float = 1.0

    def __post_init__(self):
        if self.theta < 0:
            raise ValueError("theta must be >= 0")


@dataclass(frozen=True)
class OperatorProfile:
    name: str
    phase_models: dict[str, LatencyModel]
    weight_mem: float = 0.0     # bytes, divided by parallelism degree
    m0: float = 0.0             # transient bytes, fixed
    m1: float = 0.0             # transient bytes per token*batch
    v0: float = 0.0             # comm bytes, fixed
    v1: float = 0.0             # comm bytes per token*batch
    s0: float = 0.0             # SM demand, fixed fraction
    s1: float = 0.0             # SM demand per token*batch
    eta: float = 0.9            # parallel efficiency in (0, 1]
    kind: str = "other"

    def __post_init__(self):
        for name in ("weight_mem", "m0", "m1", "v0", "v1", "s0", "s1"):
            if getattr(self, name) < 0:
                raise ValueError(f"{self.name}: {name} must be >= 0")
        if not (0.0 < self.eta <= 1.0):
            raise ValueError(f"{self.name}: eta must be in (0, 1]")

    def latency_model(self, phase: str) -> LatencyModel:
        if phase not in PHASES:
            raise UnknownPhase(f"unknown phase {phase!r}")
        if phase not in self.phase_models:
            raise UnknownPhase(f"profile {self.name} has no {phase} model")
        return self.phase_models[phase]

    def sm_demand(self, batch: int, seq_len: int) -> float:
        return min(1.0, self.s0 + self.s1 * batch * seq_len)


@dataclass
class ProfileSet:
    """Named operator profiles plus cluster-level link bandwidth and the
    interference model shared by all devices."""

    profiles: dict[str, OperatorProfile]
    link_bandwidth: float = 600e9
    interference: InterferenceParams = field(default_factory=InterferenceParams)

    def get(self, name: str) -> OperatorProfile:
        if name not in self.profiles:
            raise UnknownProfile(f"no profile named {name!r}")
        return self.profiles[name]

    def validate_against(self, dag) -> None:
        """Check that every profile_ref and volume_ref in the DAG resolves."""
        for node in dag.nodes:
            self.get(node.profile_ref)
        for edge in dag.edges:
            self.get(edge.volume_ref)


def op_latency(
    p: OperatorProfile,
    phase: str,
    batch: int,
    seq_len: int,
    parallelism: int,
    sm_share: float = 1.0,
) -> float:
    """Service latency (seconds) of one batch through one layer of the op.

    base(B, L) / (eta * P), inflated by demand/share when the granted SM
    share sits below the operator's SM demand. Above demand the share has
    no effect, matching the flat decode-phase response to SM allocation.
    """
    if batch < 1 or seq_len < 1 or parallelism < 1:
        raise ValueError("batch, seq_len and parallelism must be >= 1")
    if not (0.0 < sm_share <= 1.0):
        raise ValueError(f"sm_share must be in (0, 1], got {sm_share}")
    model = p.latency_model(phase)
    base = model.base_latency(batch, seq_len) / (p.eta * parallelism)
    demand = p.sm_demand(batch, seq_len)
    if demand <= 0.0:
        return base
    effective = min(1.0, sm_share / demand)
    return base / effective


def op_memory(p: OperatorProfile, batch: int, seq_len: int, parallelism: int) -> float:
    """Bytes held by one replica: sharded weights plus transient memory."""
    if batch < 1 or seq_len < 1 or parallelism < 1:
        raise ValueError("batch, seq_len and parallelism must be >= 1")
    return p.weight_mem / parallelism + p.m0 + p.m1 * batch * seq_len


def comm_time(p: OperatorProfile, batch: int, seq_len: int, bandwidth: float) -> float:
    """Downstream transfer time: linear data volume over link bandwidth."""
    if bandwidth <= 0.0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth}")
    return (p.v0 + p.v1 * batch * seq_len) / bandwidth


def interference_factor(
    device_load: float, adding: float, params: InterferenceParams
) -> float:
    """Latency inflation when combined SM demand exceeds device capacity.

    Returns 1.0 whenever total demand fits; above capacity the penalty is
    1 + theta * excess^exponent.
    """
    if device_load < 0.0 or adding < 0.0:
        raise ValueError("SM loads must be >= 0")
    excess = device_load + adding - 1.0
    if excess <= 0.0:
        return 1.0
    return 1.0 + params.theta * excess ** params.exponent


@dataclass(frozen=True)
class FitReport:
    model: LatencyModel
    residual_rms: float
    n_samples: int


def fit_profile(
    samples: list[tuple[str, int, int, int, float]],
    kind: str = "other",
    eta: float = 1.0,
) -> dict[str, FitReport]:
    """Fit per-phase latency models from (phase, B, L, P, latency) samples.

    Latencies are rescaled by eta*P back to the single-device baseline,
    then solved by non-negative least squares on the basis {1, B*L} --
    extended with B*L^2 for attention-kind operators, the only class with
    a quadratic prefill term. Columns are norm-equilibrated before the
    solve so coefficients spanning many decades are recovered accurately.
    """
    by_phase: dict[str, list[tuple[int, int, int, float]]] = {}
    for phase, batch, seq_len, parallelism, latency in samples:
        if phase not in PHASES:
            raise UnknownPhase(f"unknown phase {phase!r} in samples")
        by_phase.setdefault(phase, []).append((batch, seq_len, parallelism, latency))

    reports = {}
    for phase, rows in by_phase.items():
        if len(rows) < 3:
            raise InsufficientSamples(
                f"phase {phase}: need >= 3 samples, got {len(rows)}"
            )
        quadratic = kind == "attention" and phase == "prefill"
        n_cols = 3 if quadratic else 2
        a = np.empty((len(rows), n_cols))
        y = np.empty(len(rows))
        for i, (batch, seq_len, parallelism, latency) in enumerate(rows):
            bl = batch * seq_len
            a[i, 0] = 1.0
            a[i, 1] = bl
            if quadratic:
                a[i, 2] = bl * seq_len
            y[i] = latency * eta * parallelism
        if np.linalg.matrix_rank(a) < n_cols:
            raise DegenerateDesign(
                f"phase {phase}: samples do not span the {n_cols}-term basis "
                "(vary B*L across samples)"
            )
        col_scale = np.linalg.norm(a, axis=0)
        coef, _ = nnls(a / col_scale, y)
        coef = coef / col_scale
        # polish on the positive support with an SVD solve; NNLS pins the
        # active set but can lose digits on badly scaled columns
        support = coef > 0
        if support.any():
            sol, *_ = np.linalg.lstsq(
                a[:, support] / col_scale[support], y, rcond=None
            )
            sol = sol / col_scale[support]
            if (sol >= 0).all():
                coef = np.zeros(n_cols)
                coef[support] = sol
        resid = a @ coef - y
        rms = float(math.sqrt(np.mean(resid**2)))
        c0, c1 = float(coef[0]), float(coef[1])
        c2 = float(coef[2]) if quadratic else 0.0
        reports[phase] = FitReport(LatencyModel(c0, c1, c2), rms, len(rows))
    return reports


# ---------------------------------------------------------------------------
# serialization

def _profile_from_dict(name: str, raw: dict) -> OperatorProfile:
    phase_models = {
        phase: LatencyModel(
            c0=float(raw[phase].get("c0", 0.0)),
            c1=float(raw[phase].get("c1", 0.0)),
            c2=float(raw[phase].get("c2", 0.0)),
        )
        for phase in PHASES
        if phase in raw
    }
    return OperatorProfile(
        name=name,
        phase_models=phase_models,
        weight_mem=float(raw.get("weight_mem", 0.0)),
        m0=float(raw.get("m0", 0.0)),
        m1=float(raw.get("m1", 0.0)),
        v0=float(raw.get("v0", 0.0)),
        v1=float(raw.get("v1", 0.0)),
        s0=float(raw.get("s0", 0.0)),
        s1=float(raw.get("s1", 0.0)),
        eta=float(raw.get("eta", 0.9)),
        kind=raw.get("kind", "other"),
    )


def _profile_to_dict(p: OperatorProfile) -> dict:
    out: dict = {
        phase: {"c0": m.c0, "c1": m.c1, "c2": m.c2}
        for phase, m in sorted(p.phase_models.items())
    }
    out.update(
        weight_mem=p.weight_mem, m0=p.m0, m1=p.m1, v0=p.v0, v1=p.v1,
        s0=p.s0, s1=p.s1, eta=p.eta, kind=p.kind,
    )
    return out


def load_profiles(path: str | Path) -> ProfileSet:
    """Read a profile file: JSON map of name -> coefficients.

    Keys starting with "_" hold set-level settings (_link_bandwidth,
    _interference); everything else is an operator profile.
    """
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    return profiles_from_dict(raw)


def profiles_from_dict(raw: dict) -> ProfileSet:
    link_bw = float(raw.get("_link_bandwidth", 600e9))
    interference = InterferenceParams(
        theta=float(raw.get("_interference", {}).get("theta", 0.5)),
        exponent=float(raw.get("_interference", {}).get("exponent", 1.0)),
    )
    profiles = {
        name: _profile_from_dict(name, body)
        for name, body in raw.items()
        if not name.startswith("_")
    }
    return ProfileSet(
        profiles=profiles, link_bandwidth=link_bw, interference=interference
    )


def profiles_to_dict(pset: ProfileSet) -> dict:
    out: dict = {
        "_link_bandwidth": pset.link_bandwidth,
        "_interference": {
            "theta": pset.interference.theta,
            "exponent": pset.interference.exponent,
        },
    }
    for name in sorted(pset.profiles):
        out[name] = _profile_to_dict(pset.profiles[name])
    return out


def save_profiles(pset: ProfileSet, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(profiles_to_dict(pset), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_samples_csv(path: str | Path) -> dict[str, list[tuple[str, int, int, int, float]]]:
    """Read a measurement sample file, grouped per operator.

    Header: op,phase,batch,seqlen,parallelism,latency_us (latency is
    converted to seconds).
    """
    grouped: dict[str, list[tuple[str, int, int, int, float]]] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"op", "phase", "batch", "seqlen", "parallelism", "latency_us"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise OpscalerError(
                f"sample file {path}: header must contain {sorted(required)}"
            )
        for row in reader:
            grouped.setdefault(row["op"], []).append(
                (
                    row["phase"],
                    int(row["batch"]),
                    int(row["seqlen"]),
                    int(row["parallelism"]),
                    float(row["latency_us"]) * 1e-6,
                )
            )
    if not grouped:
        raise OpscalerError(f"sample file {path}: no data rows")
    return grouped


def infer_kind(op_name: str) -> str:
    """Heuristic operator kind from its name, for fitting from CSV."""
    name = op_name.lower()
    if "attn" in name or "attention" in name:
        return "attention"
    if "moe" in name:
        return "moe_linear"
    if "linear" in name or "mlp" in name or "proj" in name or "qkv" in name:
        return "linear"
    if "norm" in name:
        return "norm"
    if "embed" in name:
        return "embedding"
    if "act" in name or "gelu" in name or "silu" in name or "sigmoid" in name:
        return "activation"
    return "other"
