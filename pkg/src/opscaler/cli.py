"""Command-line entry point.

Subcommands:
    autoscale   plan + place every workload window of a scenario
    sweep       model-level vs operator-level savings across one axis
    fit         fit operator latency models from a measurement CSV

Exit codes: 0 all points feasible, 2 ran but some point violated its SLO,
1 configuration or input error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import metrics, perfmodel, runner, workload
from .autoscaler import AutoscaleParams
from .errors import OpscalerError
from .opgraph import load_dag
from .perfmodel import (
    FitReport,
    ProfileSet,
    fit_profile,
    infer_kind,
    load_profiles,
    load_samples_csv,
    profiles_to_dict,
)
from .placement import load_fleet
from .workload import SynthSpec, load_trace, synth_workload, windowize

BUNDLED_DIR = Path(__file__).parent / "data"


def bundled_path(name: str) -> Path:
    """Resolve a bundled data file (DAGs, profiles, fleets, traces)."""
    p = BUNDLED_DIR / name
    if not p.exists():
        raise OpscalerError(f"no bundled data file named {name!r}")
    return p


def _parse_synth(text: str) -> SynthSpec:
    """Parse 'kind:key=value,key=value' synth specs."""
    kind, _, rest = text.partition(":")
    kwargs = {}
    if rest:
        for pair in rest.split(","):
            key, _, value = pair.partition("=")
            if not _:
                raise OpscalerError(f"--synth: expected key=value, got {pair!r}")
            kwargs[key.strip()] = value.strip()
    mapping = {
        "rate": ("rate", float),
        "duration": ("duration", float),
        "seqlen": ("input_len_median", float),
        "input_median": ("input_len_median", float),
        "input_sigma": ("input_len_sigma", float),
        "output_median": ("output_len_median", float),
        "output_sigma": ("output_len_sigma", float),
        "amplitude": ("amplitude", float),
        "period": ("period", float),
        "burst_factor": ("burst_factor", float),
        "burst_duty": ("burst_duty", float),
    }
    spec_kwargs = {}
    for key, value in kwargs.items():
        if key not in mapping:
            raise OpscalerError(f"--synth: unknown key {key!r}")
        field_name, cast = mapping[key]
        spec_kwargs[field_name] = cast(value)
    if "seqlen" in kwargs and "input_sigma" not in kwargs:
        spec_kwargs["input_len_sigma"] = 0.0  # fixed-length requests
    try:
        return SynthSpec(kind=kind or "constant", **spec_kwargs)
    except (TypeError, ValueError) as exc:
        raise OpscalerError(f"--synth: {exc}") from None


def _resolve(path: str, kind: str) -> Path:
    """Accept a filesystem path or the name of a bundled asset."""
    p = Path(path)
    if p.exists():
        return p
    try:
        return bundled_path(path)
    except OpscalerError:
        raise OpscalerError(f"--{kind}: no such file or bundled asset: {path}")


def _load_scenario(args):
    dag = load_dag(_resolve(args.dag, "dag"))
    profiles = load_profiles(_resolve(args.profiles, "profiles"))
    fleet = load_fleet(_resolve(args.fleet, "fleet"))
    profiles.validate_against(dag)
    return dag, profiles, fleet


def _workload_points(args) -> list[tuple[workload.WorkloadPoint, workload.WorkloadPoint]]:
    if bool(args.trace) == bool(args.synth):
        raise OpscalerError("exactly one of --trace or --synth is required")
    if args.trace:
        records = load_trace(_resolve(args.trace, "trace"))
    else:
        records = synth_workload(_parse_synth(args.synth), args.seed)
        if not records:
            raise OpscalerError("--synth: generated an empty trace")
    return windowize(records, window_len=args.window_len, quantile=args.quantile)


def _params(args, phase: str) -> AutoscaleParams:
    slo = args.slo_prefill if phase == "prefill" else args.slo_decode
    try:
        return AutoscaleParams(slo=slo, epsilon=args.epsilon)
    except ValueError as exc:
        flag = "--slo-prefill" if phase == "prefill" else "--slo-decode"
        raise OpscalerError(f"{flag}/--epsilon: {exc}") from None


def cmd_autoscale(args) -> int:
    dag, profiles, fleet = _load_scenario(args)
    windows = _workload_points(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    rows = [
        "window_start,window_end,phase,qps,seq_len,mode,placement,feasible,"
        "devices,energy_joules,memory_bytes,plan_latency,placed_latency,"
        "objective,fingerprint"
    ]
    any_infeasible = False
    for i, (prefill, decode) in enumerate(windows):
        for point in (prefill, decode):
            tag = f"{i:03d}_{point.phase}"
            if point.qps <= 0.0:
                rows.append(
                    f"{runner._fmt(point.window[0])},{runner._fmt(point.window[1])},"
                    f"{point.phase},0,1,{args.mode},{args.placement},true,"
                    f"0,0,0,0,0,0,"
                )
                continue
            params = _params(args, point.phase)
            result = runner.run_point(
                args.mode, dag, profiles, fleet, point, params,
                placement_mode=args.placement,
            )
            (out / f"plan_{tag}.json").write_text(
                json.dumps(result.plan.to_dict(), indent=2, sort_keys=True) + "\n"
            )
            if result.placement is not None:
                (out / f"placement_{tag}.json").write_text(
                    json.dumps(result.placement.to_dict(), indent=2, sort_keys=True)
                    + "\n"
                )
            ev = result.evaluation
            if not ev.feasible:
                any_infeasible = True
            placed_latency = (
                result.placement.recomputed_latency if result.placement else ""
            )
            rows.append(
                ",".join(
                    [
                        runner._fmt(point.window[0]),
                        runner._fmt(point.window[1]),
                        point.phase,
                        runner._fmt(point.qps),
                        str(point.seq_len),
                        args.mode,
                        args.placement,
                        str(ev.feasible).lower(),
                        str(ev.devices_used),
                        runner._fmt(ev.energy_joules),
                        runner._fmt(ev.memory_bytes),
                        runner._fmt(result.plan.iteration_latency),
                        runner._fmt(placed_latency) if placed_latency != "" else "",
                        str(result.plan.objective),
                        ev.fingerprint,
                    ]
                )
            )
    (out / "metrics.csv").write_text("\n".join(rows) + "\n")
    return 2 if any_infeasible else 0


def cmd_sweep(args) -> int:
    dag, profiles, fleet = _load_scenario(args)
    if not args.sweep:
        raise OpscalerError("--sweep: a sweep axis is required")
    if not args.range:
        raise OpscalerError("--range: comma-separated axis values are required")
    if not args.synth:
        raise OpscalerError("--synth: sweeps take their base point from a synth spec")
    try:
        values = [float(v) for v in args.range.split(",") if v.strip()]
    except ValueError as exc:
        raise OpscalerError(f"--range: {exc}") from None
    spec = _parse_synth(args.synth)
    base_point = workload.WorkloadPoint(
        qps=spec.rate, seq_len=max(1, int(spec.input_len_median)), phase="prefill"
    )
    params = _params(args, "prefill")
    rows = runner.sweep(
        args.sweep, values, dag, profiles, fleet, base_point, params,
        placement_mode=args.placement,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"sweep_{args.sweep}.csv"
    csv_path.write_text(runner.sweep_rows_to_csv(rows))
    any_infeasible = any(
        not (row.feasible_baseline and row.feasible_candidate) for row in rows
    )
    return 2 if any_infeasible else 0


def cmd_fit(args) -> int:
    grouped = perfmodel.load_samples_csv(args.samples)
    out_profiles = {}
    warnings = []
    for op_name in sorted(grouped):
        kind = infer_kind(op_name)
        try:
            reports: dict[str, FitReport] = fit_profile(grouped[op_name], kind=kind)
        except OpscalerError as exc:
            raise OpscalerError(f"operator {op_name}: {exc}") from None
        for phase in ("prefill", "decode"):
            if phase not in reports:
                warnings.append(f"operator {op_name}: no {phase} samples, "
                                f"fitted {'/'.join(sorted(reports))} only")
        out_profiles[op_name] = {
            "kind": kind,
            **{
                phase: {"c0": rep.model.c0, "c1": rep.model.c1, "c2": rep.model.c2}
                for phase, rep in sorted(reports.items())
            },
            "_fit": {
                phase: {"residual_rms": rep.residual_rms, "n_samples": rep.n_samples}
                for phase, rep in sorted(reports.items())
            },
        }
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    text = json.dumps(out_profiles, indent=2, sort_keys=True) + "\n"
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)
    else:
        print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="opscaler",
        description="Operator-level autoscaling and placement planner",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def scenario_flags(p):
        p.add_argument("--dag", required=True, help="DAG spec JSON (path or bundled name)")
        p.add_argument("--profiles", required=True, help="profile pack JSON")
        p.add_argument("--fleet", required=True, help="fleet config JSON")
        p.add_argument("--slo-prefill", type=float, default=0.5, help="TTFT SLO, seconds")
        p.add_argument("--slo-decode", type=float, default=0.05, help="TBT SLO, seconds")
        p.add_argument("--epsilon", type=float, default=0.0, help="SLO slack buffer, seconds")
        p.add_argument("--placement", choices=("shared", "default_stream"),
                       default="shared")
        p.add_argument("--trace", help="request trace CSV")
        p.add_argument("--synth", help="synthetic workload, e.g. constant:rate=30,seqlen=4096")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--window-len", type=float, default=60.0)
        p.add_argument("--quantile", type=float, default=0.95)

    p_auto = sub.add_parser("autoscale", help="plan and place each workload window")
    scenario_flags(p_auto)
    p_auto.add_argument("--mode", choices=("operator", "model", "oracle"),
                        default="operator")

    p_sweep = sub.add_parser("sweep", help="savings sweep across one axis")
    scenario_flags(p_sweep)
    p_sweep.add_argument("--sweep", choices=("seqlen", "qps", "model_scale"),
                         required=True, help="sweep axis")
    p_sweep.add_argument("--range", required=True,
                         help="comma-separated axis values")

    p_fit = sub.add_parser("fit", help="fit latency models from measurement samples")
    p_fit.add_argument("samples", help="CSV: op,phase,batch,seqlen,parallelism,latency_us")
    p_fit.add_argument("--out", help="output profile JSON (stdout when omitted)")

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "autoscale":
            return cmd_autoscale(args)
        if args.command == "sweep":
            return cmd_sweep(args)
        return cmd_fit(args)
    except OpscalerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
