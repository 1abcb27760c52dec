"""Command-line entry point: validate inputs, run scenario batches, compare runs."""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import metadata
from pathlib import Path
from typing import Optional, Sequence

from .dynamics import GridlockError
from .emissions import RateTableError, bundled_rate_table, load_rate_table
from .engine import (DEFAULT_FLEET, SCENARIOS, ConfigError, ScenarioConfig, load_demand, load_fleet, make_scenario,
                     read_reports, read_trips, run_scenario, write_decisions, write_reports, write_trips)
from .metrics import (MetricsError, compare_scenarios, seed_samples, summarize, time_series, trip_samples,
                      write_series)
from .network import NetworkError, load_network
from .routing import RoutingError
from .state import ProtocolError

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2


def _version() -> str:
    try:
        return metadata.version("ecoroute")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    config: dict
    inputs: dict  # role -> {"path", "sha256"}
    seeds: list
    out_dir: str
    tool_version: str = field(default_factory=_version)

    def write(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=1, sort_keys=True))

    @classmethod
    def read(cls, path: str | Path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text()))


# --- input handling ----------------------------------------------------------------

def _inputs(args) -> dict:
    roles = {"network": args.network, "nodes": getattr(args, "nodes", None), "demand": args.demand,
             "rates": args.rates, "fleet": args.fleet, "config": getattr(args, "config", None)}
    out = {}
    for role, p in roles.items():
        if p is not None:
            out[role] = {"path": str(Path(p).resolve()), "sha256": sha256_file(p)}
    return out


def _load_all(network, nodes, demand, rates, fleet):
    net = load_network(network, nodes)
    dem = load_demand(demand)
    table = load_rate_table(rates) if rates else bundled_rate_table()
    fl = load_fleet(fleet) if fleet else DEFAULT_FLEET
    return net, dem, table, fl


def _validate(args) -> list[str]:
    problems = []
    net = None
    try:
        net = load_network(args.network, args.nodes)
    except (NetworkError, OSError) as exc:
        problems.append(f"network: {exc}")
    if args.rates:
        try:
            table = load_rate_table(args.rates)
        except (RateTableError, OSError) as exc:
            problems.append(f"rates: {exc}")
            table = None
    else:
        table = bundled_rate_table()
    fleet = DEFAULT_FLEET
    if args.fleet:
        try:
            fleet = load_fleet(args.fleet)
        except (ConfigError, OSError) as exc:
            problems.append(f"fleet: {exc}")
            fleet = None
    if table is not None and fleet is not None:
        for f in fleet:
            if f.vehicle_class not in table.classes:
                problems.append(f"fleet: class {f.vehicle_class!r} missing from rate table")
            for y in (f.year_lo, f.year_hi):
                try:
                    table.year_bin(y)
                except RateTableError as exc:
                    problems.append(f"fleet: {exc}")
    if args.demand:
        try:
            dem = load_demand(args.demand)
            if net is not None:
                problems.extend(f"demand: {p}" for p in dem.validate(net))
        except (ConfigError, OSError) as exc:
            problems.append(f"demand: {exc}")
    return problems


def _scenario_ids(text: str) -> list[str]:
    ids = [s.strip().upper() for s in text.split(",") if s.strip()]
    bad = [s for s in ids if s not in SCENARIOS]
    if bad:
        raise ConfigError(f"unknown scenario(s) {bad}; choose from {sorted(SCENARIOS)}")
    return ids


def parse_seeds(text: str) -> list[int]:
    """``"0-9"``, ``"1,2,3"`` or a mix such as ``"0-2,7"``."""
    out: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    if not out:
        raise ConfigError("empty seed list")
    return out


def _base_config(args) -> dict:
    cfg = {}
    if args.config:
        cfg = json.loads(Path(args.config).read_text())
        for k in ("scenario_id", "seed", "fleet", "routing", "objective"):
            cfg.pop(k, None)
    if args.dissemination:
        cfg["dissemination"] = args.dissemination
    if args.gossip_k is not None:
        cfg["gossip_k"] = args.gossip_k
    if args.gridlock_horizon is not None:
        cfg["gridlock_horizon"] = args.gridlock_horizon
    if args.empty_section_policy:
        cfg["empty_section_policy"] = args.empty_section_policy
    return cfg


# --- one run -------------------------------------------------------------------------

def execute_run(job: dict) -> dict:
    """Run one (scenario, seed) and write its directory; returns a status record."""
    out = Path(job["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    cfg = ScenarioConfig.from_dict(job["config"])
    RunManifest(cfg.to_dict(), job["inputs"], [cfg.seed], str(out)).write(out / "manifest.json")
    paths = {r: job["inputs"][r]["path"] if r in job["inputs"] else None
             for r in ("network", "nodes", "demand", "rates", "fleet")}
    net, dem, table, fleet = _load_all(paths["network"], paths["nodes"], paths["demand"], paths["rates"], paths["fleet"])
    try:
        res = run_scenario(net, dem, table, cfg, fleet, dump_dir=out)
    except GridlockError as exc:
        return {"scenario": cfg.scenario_id, "seed": cfg.seed, "status": "gridlock", "error": str(exc),
                "dump": exc.dump_path, "out_dir": str(out)}
    write_trips(res.trips, out / "trips.csv")
    write_reports(res.reports, out / "link_intervals.csv")
    write_decisions(res.decisions, out / "decisions.csv")
    try:
        summary = summarize(res.trips, cfg.scenario_id).to_dict()
    except MetricsError as exc:
        return {"scenario": cfg.scenario_id, "seed": cfg.seed, "status": "empty", "error": str(exc),
                "out_dir": str(out)}
    summary.update({
        "end_time": res.end_time,
        "all_trips": len(res.trips),
        "warmup_trips": sum(1 for t in res.trips if t.warmup),
        "network_ghg_ug": res.sample_ghg_ug,
        "network_nox_ug": res.sample_nox_ug,
        "emergency_events": res.emergency_events,
    })
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True))
    return {"scenario": cfg.scenario_id, "seed": cfg.seed, "status": "ok", "out_dir": str(out)}


def run_batch(jobs: Sequence[dict], workers: int = 1) -> list[dict]:
    if workers <= 1 or len(jobs) <= 1:
        return [execute_run(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(execute_run, jobs))


# --- subcommands ------------------------------------------------------------------------

def cmd_validate(args) -> int:
    problems = _validate(args)
    for p in problems:
        print(f"error: {p}", file=sys.stderr)
    if problems:
        return EXIT_VALIDATION
    print("ok: all inputs valid")
    return EXIT_OK


def cmd_run(args) -> int:
    try:
        problems = _validate(args)
        if problems:
            for p in problems:
                print(f"error: {p}", file=sys.stderr)
            return EXIT_VALIDATION
        scenarios = _scenario_ids(args.scenario)
        seeds = parse_seeds(args.seeds)
        base = _base_config(args)
        inputs = _inputs(args)
        jobs = []
        for sid in scenarios:
            for seed in seeds:
                cfg = make_scenario(sid, seed=seed, **base)
                jobs.append({"config": cfg.to_dict(), "inputs": inputs,
                             "out_dir": str(Path(args.out) / sid / f"seed_{seed}")})
    except (ConfigError, TypeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    Path(args.out).mkdir(parents=True, exist_ok=True)
    RunManifest(base, inputs, seeds, str(Path(args.out).resolve())).write(Path(args.out) / "manifest.json")
    workers = args.jobs if args.jobs is not None else 1
    try:
        results = run_batch(jobs, workers)
    except (RoutingError, ProtocolError, RuntimeError) as exc:
        print(f"error: run aborted: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    failed = [r for r in results if r["status"] != "ok"]
    for r in results:
        line = f"{r['scenario']} seed {r['seed']}: {r['status']} -> {r['out_dir']}"
        if r["status"] != "ok":
            line += f" ({r['error']})"
        print(line)
    return EXIT_RUNTIME if failed else EXIT_OK


def _discover_runs(dirs: Sequence[str]) -> dict[str, list[Path]]:
    runs: dict[str, list[Path]] = {}
    for d in dirs:
        for summ in sorted(Path(d).rglob("summary.json")):
            sid = json.loads(summ.read_text())["scenario_id"]
            runs.setdefault(sid, []).append(summ.parent)
    return runs


def cmd_compare(args) -> int:
    try:
        runs = _discover_runs(args.runs)
        if not runs:
            raise MetricsError("no completed runs found")
        if args.baseline not in runs:
            raise MetricsError(f"baseline {args.baseline!r} not among runs {sorted(runs)}")
        fingerprints = {}
        for sid, dirs in runs.items():
            fps = set()
            for d in dirs:
                inp = RunManifest.read(d / "manifest.json").inputs
                fps.add(tuple(sorted((r, v["sha256"]) for r, v in inp.items())))
            if len(fps) > 1:
                raise MetricsError(f"runs of {sid} used different inputs")
            fingerprints[sid] = fps.pop()
        trips = {sid: [read_trips(d / "trips.csv") for d in dirs] for sid, dirs in runs.items()}
        if len(runs) == 1:
            only = next(iter(trips))
            samples = {only: seed_samples(trips[only]), only + "'": seed_samples(trips[only])}
            fingerprints[only + "'"] = fingerprints[only]
        else:
            samples = {sid: seed_samples(ts) for sid, ts in trips.items()}
        if any(len(v["tt"]) < 2 for v in samples.values()):
            samples = {sid: _pooled_trip_samples(trips[sid.rstrip("'")]) for sid in samples}
        table = compare_scenarios(samples, args.baseline, fingerprints)
    except (MetricsError, OSError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    out = Path(args.out) if args.out else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        table.write(out / "comparison.csv")
        (out / "pct_change.json").write_text(json.dumps(table.pct_change, indent=1, sort_keys=True))
        for sid, dirs in runs.items():
            reps = read_reports(dirs[0] / "link_intervals.csv")
            for metric in ("ghg", "nox", "speed"):
                write_series(time_series(reps, metric), out / f"series_{sid}_{metric}.csv", metric)
    print(f"baseline {args.baseline}")
    for sid in sorted(table.pct_change):
        row = "  ".join(f"{m} {v:+.1f}%" for m, v in sorted(table.pct_change[sid].items()))
        print(f"{sid}: {row}")
    for c in table.tests:
        if c.a == args.baseline:
            print(f"{c.a} vs {c.b} {c.metric}: t={c.t:.3f} p={c.p:.4g}")
    return EXIT_OK


def _pooled_trip_samples(runs):
    pooled: dict[str, list[float]] = {}
    for trips in runs:
        for m, v in trip_samples(trips).items():
            pooled.setdefault(m, []).extend(v)
    return pooled


# --- argument parsing --------------------------------------------------------------------

def _add_inputs(p: argparse.ArgumentParser, required: bool = True) -> None:
    p.add_argument("--network", required=required, help="street-segment CSV")
    p.add_argument("--nodes", help="optional node coordinates CSV (node_id,x_m,y_m)")
    p.add_argument("--demand", required=required, help="OD demand CSV")
    p.add_argument("--rates", help="emission rate table CSV (default: bundled synthetic table)")
    p.add_argument("--fleet", help="fleet composition CSV (default: bundled shares)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ecoroute", description=__doc__)
    ap.add_argument("--version", action="version", version=_version())
    sub = ap.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="check every input file")
    _add_inputs(v, required=False)
    v.set_defaults(func=cmd_validate)

    r = sub.add_parser("run", help="run scenario x seed batches")
    _add_inputs(r)
    r.add_argument("--scenario", default="S1,S2,S3,S4,S5", help="comma-separated scenario ids")
    r.add_argument("--seeds", default="0", help="e.g. 0-9 or 1,2,3")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--config", help="JSON file with scenario config overrides")
    r.add_argument("--dissemination", choices=["idealized", "hop_gossip"], default=None)
    r.add_argument("--gossip-k", type=int, default=None, help="hops per interval for hop_gossip")
    r.add_argument("--gridlock-horizon", type=int, default=None, help="seconds without movement before abort")
    r.add_argument("--empty-section-policy", choices=["zero", "skip"], default=None)
    r.add_argument("--jobs", type=int, default=None, help="concurrent runs (default 1)")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="compare completed runs against a baseline scenario")
    c.add_argument("runs", nargs="+", help="run directories (searched recursively)")
    c.add_argument("--baseline", default="S1")
    c.add_argument("--out", help="directory for comparison.csv and series exports")
    c.set_defaults(func=cmd_compare)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "validate" and not args.network:
        print("error: --network is required", file=sys.stderr)
        return EXIT_VALIDATION
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
