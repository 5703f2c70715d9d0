"""Command line front end.

Three verbs over one JSON config format:

  fairmesh run <config.json>      run a canned experiment, write report + CSVs
  fairmesh compare <config.json>  replay one workload through several schedulers
  fairmesh analyze <report.json>  feasibility check on a measured service matrix

Exit codes: 0 on success, 2 for config problems (the message names the
offending key), 3 for runtime failures.  Reports are dumped with sorted keys
and no timestamps, so rerunning a config gives byte-identical report.json.
The FAIRMESH_OUT environment variable overrides the output directory.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
from pathlib import Path
from typing import Sequence

from . import presets
from .analysis import check_ratio_constraint, required_weights
from .arbitration import empirical_grant_frequencies
from .core import Packet, Trace, latency_stats, throughput_by_flow
from .fairness import Accounting, FairnessReport, rfb_estimate
from .meshsim import MeshConfig, SimReport, run_mesh
from .schedulers import SchedulerBase, SchedulerKind, make_scheduler

OUTPUT_DIR_ENV = "FAIRMESH_OUT"
SCHEMA_VERSION = 1


class ConfigError(Exception):
    """Anything wrong with the input config or report; exit code 2."""


# -- config plumbing -------------------------------------------------------


def _load_json(path: str, what: str = "config") -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"{what} file not found: {path}")
    try:
        obj = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{what} is not valid JSON: {e}") from None
    if not isinstance(obj, dict):
        raise ConfigError(f"{what} must be a JSON object")
    return obj


def _require(cfg: dict, key: str, what: str = "config"):
    if key not in cfg:
        raise ConfigError(f"{what} missing required key: {key}")
    return cfg[key]


def _check_allowed(d: dict, allowed: set[str], what: str) -> None:
    for k in d:
        if k not in allowed:
            raise ConfigError(f"unknown {what} key: {k}")


def _check_schema(cfg: dict) -> None:
    v = _require(cfg, "schema_version")
    if v != SCHEMA_VERSION:
        raise ConfigError(
            f"config key schema_version must be {SCHEMA_VERSION}, got {v!r}"
        )


def _seed_list(cfg: dict, override: int | None) -> list[int]:
    if override is not None:
        return [override]
    seeds = _require(cfg, "seeds")
    ok = isinstance(seeds, list) and seeds and all(
        isinstance(s, int) and not isinstance(s, bool) for s in seeds
    )
    if not ok:
        raise ConfigError("config key seeds must be a non-empty list of integers")
    return seeds


def _output_dir(cfg: dict) -> Path:
    env = os.environ.get(OUTPUT_DIR_ENV)
    d = Path(env) if env else Path(cfg.get("output_dir", "out"))
    d.mkdir(parents=True, exist_ok=True)
    return d


def _dump_json(path: Path, obj: dict) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


# -- workloads and schedulers ----------------------------------------------

_WORKLOAD_DEFAULTS = {
    "pathology": {"horizon": presets.PATHOLOGY_HORIZON},
    "random": {"n_flows": 3, "packets_per_flow": 200, "max_size": 16, "spread": 4000},
    "backlogged-pair": {"packets_per_flow": 500, "max_size": 16},
}


def _normalize_workload(given) -> dict:
    if isinstance(given, str):
        given = {"kind": given}
    if not isinstance(given, dict):
        raise ConfigError("config key workload must be a name or an object")
    kind = given.get("kind")
    if kind not in _WORKLOAD_DEFAULTS:
        names = ", ".join(sorted(_WORKLOAD_DEFAULTS))
        raise ConfigError(f"config key workload.kind must be one of [{names}], got {kind!r}")
    merged = dict(_WORKLOAD_DEFAULTS[kind], kind=kind)
    _check_allowed(given, set(merged), "workload")
    merged.update(given)
    return merged


def _build_workload(w: dict, seed: int) -> list[Packet]:
    if w["kind"] == "pathology":
        return presets.pathology_workload(w["horizon"])
    if w["kind"] == "backlogged-pair":
        return presets.backlogged_pair(seed, w["packets_per_flow"], w["max_size"])
    return presets.random_workload(
        seed, w["n_flows"], w["packets_per_flow"], w["max_size"], w["spread"]
    )


def _int_keys(d: dict) -> dict:
    return {int(k): v for k, v in d.items()}


def _scheduler_kind(name, key: str) -> SchedulerKind:
    try:
        return SchedulerKind(str(name).lower())
    except ValueError:
        names = ", ".join(k.value for k in SchedulerKind)
        raise ConfigError(
            f"config key {key} must use kinds [{names}], got {name!r}"
        ) from None


def _build_scheduler(kind: SchedulerKind, w: dict, params: dict) -> SchedulerBase:
    pathological = w["kind"] == "pathology"
    kw: dict = {}
    if pathological:
        kw["weights"] = dict(presets.PATHOLOGY_WEIGHTS)
        kw["blocked"] = presets.pathology_blocking()
    if "weights" in params:
        kw["weights"] = _int_keys(params["weights"])
    if kind in (SchedulerKind.DRR, SchedulerKind.EBRR):
        q = params.get("quantum", dict(presets.PATHOLOGY_DRR_QUANTA) if pathological else 16)
        kw["quantum"] = _int_keys(q) if isinstance(q, dict) else q
    if kind is SchedulerKind.CARR:
        kw["tau"] = params.get("tau", 2.0)
        kw["demote_rounds"] = params.get("demote_rounds", 2)
    try:
        return make_scheduler(kind, **kw)
    except ValueError as e:
        raise ConfigError(str(e)) from None


def _fm_weights(w: dict, params: dict, pkts: Sequence[Packet]) -> dict[int, float]:
    if "weights" in params:
        return _int_keys(params["weights"])
    if w["kind"] == "pathology":
        return dict(presets.PATHOLOGY_WEIGHTS)
    return {f: 1.0 for f in sorted({p.flow for p in pkts})}


def _run_one_scheduler(
    kind: SchedulerKind, w: dict, params: dict, seed: int
) -> tuple[Trace, FairnessReport, dict]:
    pkts = _build_workload(w, seed)
    sched = _build_scheduler(kind, w, params)
    sched.load(pkts)
    trace = sched.run(horizon=w.get("horizon"))
    report = rfb_estimate(trace, _fm_weights(w, params, pkts))
    summary = {
        "scheduler": kind.value,
        "throughput": {str(f): n for f, n in sorted(throughput_by_flow(trace).items())},
        "latency": {str(f): st for f, st in sorted(latency_stats(trace.events).items())},
        "drops": {str(f): n for f, n in sched.drops().items()},
        "rfb_estimate": report.rfb_estimate,
        "cfb_estimate": report.cfb_estimate,
    }
    return trace, report, summary


def _write_fairness_csvs(outdir: Path, report: FairnessReport) -> None:
    with open(outdir / "fm_windows_size.csv", "w", newline="") as fh:
        report.windows_to_csv(fh, Accounting.PACKET_SIZE)
    with open(outdir / "fm_windows_occupation.csv", "w", newline="") as fh:
        report.windows_to_csv(fh, Accounting.OCCUPATION)


# -- experiments -----------------------------------------------------------

_MESH_PARAM_KEYS = {f.name for f in dataclasses.fields(MeshConfig)} - {"seed"}


def _mesh_config(params: dict, seed: int, defaults: dict) -> MeshConfig:
    merged = dict(defaults)
    merged.update(params)
    if merged.get("trace_links") is not None:
        merged["trace_links"] = [tuple(x) for x in merged["trace_links"]]
    cfg = MeshConfig(seed=seed, **merged)
    try:
        cfg.validate()
    except ValueError as e:
        raise ConfigError(str(e)) from None
    return cfg


def _write_mesh_csvs(outdir: Path, rep: SimReport) -> None:
    with open(outdir / "shares.csv", "w", newline="") as fh:
        rep.shares_csv(fh)
    sink = rep.sink_trace()
    if sink is not None:
        with open(outdir / "trace.csv", "w", newline="") as fh:
            sink.to_csv(fh)


def _exp_standalone(params: dict, seeds: list[int], outdir: Path) -> dict:
    _check_allowed(
        params,
        {"scheduler", "workload", "quantum", "tau", "demote_rounds", "weights"},
        "params",
    )
    w = _normalize_workload(params.get("workload", "random"))
    kind = _scheduler_kind(params.get("scheduler", "drr"), "params.scheduler")
    runs = {}
    for i, seed in enumerate(seeds):
        trace, report, summary = _run_one_scheduler(kind, w, params, seed)
        summary["fairness"] = report.to_dict()
        runs[str(seed)] = summary
        if i == 0:
            with open(outdir / "trace.csv", "w", newline="") as fh:
                trace.to_csv(fh)
            _write_fairness_csvs(outdir, report)
    return runs


def _exp_pathology(params: dict, seeds: list[int], outdir: Path) -> dict:
    _check_allowed(
        params, {"scheduler", "quantum", "tau", "demote_rounds", "horizon"}, "params"
    )
    w = _normalize_workload({"kind": "pathology", "horizon": params.get("horizon", presets.PATHOLOGY_HORIZON)})
    kind = _scheduler_kind(params.get("scheduler", "drr"), "params.scheduler")
    runs = {}
    for i, seed in enumerate(seeds):
        trace, report, summary = _run_one_scheduler(kind, w, params, seed)
        summary["fairness"] = report.to_dict()
        runs[str(seed)] = summary
        if i == 0:
            with open(outdir / "trace.csv", "w", newline="") as fh:
                trace.to_csv(fh)
            _write_fairness_csvs(outdir, report)
    return runs


def _exp_mesh(params: dict, seeds: list[int], outdir: Path, defaults: dict,
              with_feasibility: bool) -> dict:
    _check_allowed(params, _MESH_PARAM_KEYS, "params")
    runs = {}
    for i, seed in enumerate(seeds):
        rep = run_mesh(_mesh_config(params, seed, defaults))
        payload: dict = {"mesh": rep.to_dict()}
        if with_feasibility:
            s = rep.s_matrix()
            payload["feasibility"] = check_ratio_constraint(s).to_dict()
            try:
                rw = required_weights(s)
                payload["required_weights"] = {
                    "from_first_router": rw.from_first_router,
                    "from_second_router": rw.from_second_router,
                }
            except ValueError as e:
                payload["required_weights"] = None
                payload["required_weights_error"] = str(e)
        runs[str(seed)] = payload
        if i == 0:
            _write_mesh_csvs(outdir, rep)
    return runs


_HOTSPOT_DEFAULTS = {
    "k": 8, "packet_len": 4, "buffer_depth": 4, "pattern": "hotspot",
    "rate": 1.0, "arbiter": "round_robin", "policy": "vw",
    "horizon": 200_000, "warmup": 20_000,
}

_EQ13_DEFAULTS = dict(_HOTSPOT_DEFAULTS, arbiter="probabilistic")


def _exp_arb_convergence(params: dict, seeds: list[int], outdir: Path) -> dict:
    _check_allowed(params, {"weights", "trials"}, "params")
    ws = params.get("weights", list(presets.ARB_CONVERGENCE_WEIGHTS))
    if not isinstance(ws, list) or len(ws) < 2 or any(
        not isinstance(x, (int, float)) or x <= 0 for x in ws
    ):
        raise ConfigError("config key params.weights must list at least two positive numbers")
    trials = params.get("trials", presets.ARB_CONVERGENCE_TRIALS)
    if not isinstance(trials, int) or trials < 1:
        raise ConfigError("config key params.trials must be a positive integer")
    expected = [x / sum(ws) for x in ws]
    runs = {}
    rows = []
    for seed in seeds:
        freqs = empirical_grant_frequencies(ws, trials, seed)
        runs[str(seed)] = {
            "frequencies": [float(f) for f in freqs],
            "max_abs_dev": float(max(abs(f - e) for f, e in zip(freqs, expected))),
        }
        rows.extend(
            [i, ws[i], expected[i], float(freqs[i]), seed] for i in range(len(ws))
        )
    with open(outdir / "frequencies.csv", "w", newline="") as fh:
        wcsv = csv.writer(fh)
        wcsv.writerow(["request", "weight", "expected", "frequency", "seed"])
        wcsv.writerows(rows)
    for r in runs.values():
        r.setdefault("weights", ws)
        r.setdefault("trials", trials)
    return runs


# -- verbs -----------------------------------------------------------------

_TOP_KEYS = {"schema_version", "experiment", "seeds", "output_dir", "params"}


def cmd_run(args) -> int:
    cfg = _load_json(args.config)
    _check_schema(cfg)
    _check_allowed(cfg, _TOP_KEYS, "config")
    exp = _require(cfg, "experiment")
    if exp not in presets.EXPERIMENT_KINDS:
        names = ", ".join(presets.EXPERIMENT_KINDS)
        raise ConfigError(f"config key experiment must be one of [{names}], got {exp!r}")
    seeds = _seed_list(cfg, args.seed)
    params = cfg.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError("config key params must be an object")
    outdir = _output_dir(cfg)
    if exp == "standalone-scheduler":
        runs = _exp_standalone(params, seeds, outdir)
    elif exp == "rfb-vs-cfb-pathology":
        runs = _exp_pathology(params, seeds, outdir)
    elif exp == "mesh-hotspot":
        runs = _exp_mesh(params, seeds, outdir, _HOTSPOT_DEFAULTS, with_feasibility=False)
    elif exp == "eq13-feasibility":
        runs = _exp_mesh(params, seeds, outdir, _EQ13_DEFAULTS, with_feasibility=True)
    else:
        runs = _exp_arb_convergence(params, seeds, outdir)
    report = {
        "schema_version": SCHEMA_VERSION,
        "experiment": exp,
        "seeds": seeds,
        "params": params,
        "runs": runs,
    }
    _dump_json(outdir / "report.json", report)
    print(f"wrote {outdir / 'report.json'}")
    return 0


_COMPARE_KEYS = {"schema_version", "schedulers", "workload", "seeds", "output_dir", "params"}


def cmd_compare(args) -> int:
    cfg = _load_json(args.config)
    _check_schema(cfg)
    _check_allowed(cfg, _COMPARE_KEYS, "config")
    names = _require(cfg, "schedulers")
    if not isinstance(names, list) or len(names) < 2:
        raise ConfigError("config key schedulers must list at least two scheduler kinds")
    kinds = [_scheduler_kind(n, "schedulers") for n in names]
    w = _normalize_workload(cfg.get("workload", "pathology"))
    params = cfg.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError("config key params must be an object")
    seeds = _seed_list(cfg, args.seed)
    outdir = _output_dir(cfg)
    runs: dict = {}
    first_rows: list[list] = []
    for i, seed in enumerate(seeds):
        per = {}
        for kind in kinds:
            # the workload is rebuilt from the seed for every scheduler, so
            # each one replays an identical arrival stream
            trace, report, summary = _run_one_scheduler(kind, w, params, seed)
            per[kind.value] = summary
            if i == 0:
                stats = latency_stats(trace.events)
                for f in sorted(throughput_by_flow(trace)):
                    st = stats.get(f, {"mean": 0.0, "max": 0.0})
                    first_rows.append([
                        kind.value, f, summary["throughput"][str(f)],
                        st["mean"], st["max"],
                        summary["rfb_estimate"], summary["cfb_estimate"],
                    ])
        runs[str(seed)] = per
    with open(outdir / "comparison.csv", "w", newline="") as fh:
        wcsv = csv.writer(fh)
        wcsv.writerow([
            "scheduler", "flow", "throughput", "mean_latency", "max_latency",
            "fm_size", "fm_occupation",
        ])
        wcsv.writerows(first_rows)
    report = {
        "schema_version": SCHEMA_VERSION,
        "schedulers": [k.value for k in kinds],
        "workload": w,
        "seeds": seeds,
        "params": params,
        "runs": runs,
    }
    _dump_json(outdir / "report.json", report)
    print(f"wrote {outdir / 'report.json'}")
    return 0


def _s_matrix_from_payload(payload: dict, seed: str) -> dict[int, dict[int, float | None]]:
    sm = payload.get("s_matrix")
    if sm is None and isinstance(payload.get("mesh"), dict):
        sm = payload["mesh"].get("s_matrix")
    if not isinstance(sm, dict):
        raise ConfigError(f"report run {seed} missing required key: s_matrix")
    return {int(f): {int(r): v for r, v in row.items()} for f, row in sm.items()}


def cmd_analyze(args) -> int:
    rep = _load_json(args.report, what="report")
    runs = rep.get("runs")
    if not isinstance(runs, dict) or not runs:
        raise ConfigError("report missing required key: runs")
    per_run = {}
    for seed in sorted(runs):
        s = _s_matrix_from_payload(runs[seed], seed)
        verdict = check_ratio_constraint(s, eps=args.tolerance)
        entry: dict = {"feasibility": verdict.to_dict()}
        try:
            rw = required_weights(s)
            entry["required_weights"] = {
                "from_first_router": rw.from_first_router,
                "from_second_router": rw.from_second_router,
                "consistent": rw.consistent(args.tolerance),
            }
        except ValueError as e:
            entry["required_weights"] = None
            entry["required_weights_error"] = str(e)
        per_run[seed] = entry
    out = {
        "schema_version": SCHEMA_VERSION,
        "source_experiment": rep.get("experiment"),
        "tolerance": args.tolerance,
        "per_run": per_run,
    }
    env = os.environ.get(OUTPUT_DIR_ENV)
    outdir = Path(env) if env else Path(args.report).resolve().parent
    outdir.mkdir(parents=True, exist_ok=True)
    _dump_json(outdir / "analysis.json", out)
    print(json.dumps(out, sort_keys=True, indent=2))
    return 0


# -- entry point -----------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="fairmesh",
        description="fair queueing schedulers and a wormhole mesh simulator",
    )
    sub = p.add_subparsers(dest="verb", required=True)

    run = sub.add_parser("run", help="run one experiment config")
    run.add_argument("config")
    run.add_argument("--seed", type=int, default=None,
                     help="replace the config's seed list with this one seed")
    run.set_defaults(func=cmd_run)

    comp = sub.add_parser("compare", help="same workload through several schedulers")
    comp.add_argument("config")
    comp.add_argument("--seed", type=int, default=None,
                      help="replace the config's seed list with this one seed")
    comp.set_defaults(func=cmd_compare)

    an = sub.add_parser("analyze", help="feasibility check on a run report")
    an.add_argument("report")
    an.add_argument("--tolerance", type=float, default=0.05,
                    help="allowed deviation between occupation ratios")
    an.set_defaults(func=cmd_analyze)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001  anything else is a runtime failure
        print(f"runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
