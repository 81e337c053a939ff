"""Command-line entry points: simulate, optimize, mc and report.

Exit codes: 0 on success, 1 on numerical non-convergence, 2 on usage or
parse errors. Defaults can come from an INI config file passed with
--config or through the BOA_PTA_CONFIG environment variable; command-line
flags always win.
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
from pathlib import Path

import numpy as np

from .acquisition import AcquisitionConfig
from .campaign import (
    CampaignConfig,
    cold_start,
    constant_params_mc,
    default_params,
    mc_accelerate,
    random_search,
    read_records,
    speedup_report,
    write_records,
)
from .cepta import CeptaLimits, SolverParams, run_cepta
from .mna import newton_solve, node_voltages, MnaSystem
from .netlist import NetlistError, extract_features, parse_netlist
from .surrogate import load_model, save_model

EXIT_OK = 0
EXIT_NONCONVERGED = 1
EXIT_USAGE = 2

ENV_CONFIG = "BOA_PTA_CONFIG"


def _load_config_file(path: str | None) -> dict:
    if path is None:
        path = os.environ.get(ENV_CONFIG)
    if not path:
        return {}
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise FileNotFoundError(f"config file not found: {path}")
    out: dict = {}
    for section in cp.sections():
        for key, value in cp.items(section):
            out[key] = value
    return out


def _solver_params(args, cfg: dict) -> SolverParams:
    def pick(name, fallback):
        v = getattr(args, name, None)
        if v is not None:
            return float(v)
        if name in cfg:
            return float(cfg[name])
        return fallback

    base = default_params()
    return SolverParams(
        c_pseudo=pick("c_pseudo", base.c_pseudo),
        l_pseudo=pick("l_pseudo", base.l_pseudo),
        r0=pick("r0", base.r0),
        g0=pick("g0", base.g0),
        tau=pick("tau", base.tau),
    )


def _limits(cfg: dict) -> CeptaLimits:
    lim = CeptaLimits()
    if "max_total_nr" in cfg:
        lim.max_total_nr = int(cfg["max_total_nr"])
    if "max_time_steps" in cfg:
        lim.max_time_steps = int(cfg["max_time_steps"])
    if "steady_tol" in cfg:
        lim.steady_tol = float(cfg["steady_tol"])
    return lim


def _campaign_config(args, cfg: dict) -> CampaignConfig:
    acq = AcquisitionConfig(
        kind=getattr(args, "acquisition", None) or cfg.get("acquisition", "mes"),
        ucb_beta=float(cfg.get("ucb_beta", 0.1)),
        restarts=int(cfg.get("restarts", 8)),
    )
    seed = getattr(args, "seed", None)
    if seed is None:
        seed = int(cfg.get("seed", 0))
    tau = float(cfg.get("tau", 1.0))
    defaults = None
    if any(k in cfg for k in ("c_pseudo", "l_pseudo", "r0", "g0")):
        base = default_params()
        defaults = SolverParams(
            float(cfg.get("c_pseudo", base.c_pseudo)),
            float(cfg.get("l_pseudo", base.l_pseudo)),
            float(cfg.get("r0", base.r0)),
            float(cfg.get("g0", base.g0)),
            tau,
        )
    return CampaignConfig(
        seed=int(seed),
        acquisition=acq,
        limits=_limits(cfg),
        tau=tau,
        defaults=defaults,
    )


def _parse_paths(paths) -> list[tuple[str, object]]:
    circuits = []
    for p in paths:
        path = Path(p)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise NetlistError(f"{path}: {exc}") from exc
        try:
            circuits.append((path.stem, parse_netlist(text)))
        except NetlistError as exc:
            raise NetlistError(f"{path}: {exc}") from exc
    return circuits


def cmd_simulate(args) -> int:
    cfg = _load_config_file(args.config)
    try:
        circuits = _parse_paths(args.paths)
        params = _solver_params(args, cfg)
    except (NetlistError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    limits = _limits(cfg)
    all_converged = True
    for name, netlist in circuits:
        features = extract_features(netlist).as_array().tolist()
        if args.method == "nr":
            res = newton_solve(netlist)
            payload = {
                "circuit": name,
                "method": "nr",
                "converged": bool(res.converged),
                "iterations": int(res.iterations),
                "solution": node_voltages(MnaSystem(netlist), res.solution),
                "max_residual": float(res.max_residual),
                "features": features,
            }
            converged = res.converged
        else:
            sim = run_cepta(netlist, params, limits)
            payload = {
                "circuit": name,
                "method": "cepta",
                "converged": bool(sim.converged),
                "iterations": int(sim.total_nr_iterations),
                "time_steps": int(sim.time_steps),
                "solution": sim.voltages(),
                "final_udot": float(sim.final_udot),
                "features": features,
            }
            converged = sim.converged
        line = json.dumps(payload, sort_keys=True)
        if args.out:
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            (out / f"{name}.json").write_text(line + "\n", encoding="utf-8")
        print(line)
        all_converged = all_converged and converged
    return EXIT_OK if all_converged else EXIT_NONCONVERGED


def cmd_optimize(args) -> int:
    cfg = _load_config_file(args.config)
    try:
        paths = list(args.paths)
        if not paths and "circuits" in cfg:
            import glob

            paths = sorted(glob.glob(cfg["circuits"]))
        if not paths:
            raise ValueError("no netlist paths given (flag or config 'circuits')")
        circuits = _parse_paths(paths)
        config = _campaign_config(args, cfg)
        epochs = args.epochs if args.epochs is not None else int(cfg.get("epochs", 20))
        if epochs < 1:
            raise ValueError("epochs must be >= 1")
        warm = load_model(args.warm_model) if args.warm_model else None
    except (NetlistError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    print(
        f"optimize: {len(circuits)} circuits, epochs={epochs}, "
        f"acquisition={config.acquisition.kind}, ucb_beta={config.acquisition.ucb_beta}, "
        f"seed={config.seed}"
    )
    records, model = cold_start(circuits, epochs, config, warm_model=warm)
    write_records(records, out / "trials.jsonl")
    if model is not None:
        save_model(model, out / "model.json")

    default_records = [r for r in records if r.kind == "default"]
    report = speedup_report(default_records, records)
    report.to_csv(out / "summary.csv")
    report.curves_to_csv(out / "curves.csv")
    report.plot(out / "curves.png")
    print(f"mean speed-up over default: {report.mean_speedup:.3f}x")

    if args.baseline == "random":
        rs_records = random_search(circuits, epochs, config)
        write_records(rs_records, out / "trials_random.jsonl")
        vs_random = speedup_report(rs_records, records)
        vs_random.to_csv(out / "summary_vs_random.csv")
        print(f"mean speed-up over random search: {vs_random.mean_speedup:.3f}x")
    return EXIT_OK


def cmd_mc(args) -> int:
    cfg = _load_config_file(args.config)
    try:
        if not 0 < args.variation < 1:
            raise ValueError(f"variation must be in (0, 1), got {args.variation}")
        if args.n < 1:
            raise ValueError("n must be >= 1")
        circuits = _parse_paths([args.path])
        config = _campaign_config(args, cfg)
        warm = load_model(args.warm_model) if args.warm_model else None
    except (NetlistError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    _, netlist = circuits[0]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = mc_accelerate(netlist, args.variation, args.n, config, warm_model=warm)
    blob = report.to_json()
    if args.with_baseline:
        base = constant_params_mc(netlist, args.variation, args.n, config)
        blob["baseline"] = {
            "nc_count": base.nc_count,
            "mean_iterations": base.mean_iterations,
            "std_iterations": base.std_iterations,
        }
    (out / "mc_report.json").write_text(
        json.dumps(blob, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    write_records(report.records, out / "mc_trials.jsonl")
    print(
        f"mc: n={report.n_samples} variation={report.variation} "
        f"#NC={report.nc_count} mean={report.mean_iterations:.2f} "
        f"std={report.std_iterations:.2f}"
    )
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        baseline = read_records(args.baseline)
        method = read_records(args.method)
        report = speedup_report(baseline, method)
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.to_csv(out / "speedup.csv")
    report.curves_to_csv(out / "curves.csv")
    report.plot(out / "curves.png")
    print(
        f"speed-up: mean={report.mean_speedup:.3f}x max={report.max_speedup:.3f}x "
        f"excluded={len(report.excluded)}"
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="boa-pta",
        description="DC operating-point solver with optimized pseudo-transient parameters",
    )
    ap.add_argument("--config", help="INI config file (or set $BOA_PTA_CONFIG)")
    sub = ap.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="solve DC operating points")
    sim.add_argument("paths", nargs="+", help="netlist files")
    sim.add_argument("--method", choices=("nr", "cepta"), default="cepta")
    sim.add_argument("--out", help="directory for per-circuit JSON results")
    for name in ("c_pseudo", "l_pseudo", "r0", "g0", "tau"):
        sim.add_argument(f"--{name.replace('_', '-')}", dest=name, type=float)
    sim.set_defaults(fn=cmd_simulate)

    opt = sub.add_parser("optimize", help="optimize solver parameters per circuit")
    opt.add_argument("paths", nargs="*", help="netlist files (or config 'circuits' glob)")
    opt.add_argument("--epochs", type=int)
    opt.add_argument("--acquisition", choices=("ei", "ucb", "mes"))
    opt.add_argument("--seed", type=int)
    opt.add_argument("--baseline", choices=("none", "random"), default="none")
    opt.add_argument("--warm-model", dest="warm_model", help="surrogate checkpoint")
    opt.add_argument("--out", default="boapta-out")
    opt.set_defaults(fn=cmd_optimize)

    mc = sub.add_parser("mc", help="Monte-Carlo analysis with acceleration")
    mc.add_argument("path", help="base netlist file")
    mc.add_argument("--variation", type=float, required=True)
    mc.add_argument("-n", type=int, required=True, help="number of samples")
    mc.add_argument("--seed", type=int)
    mc.add_argument("--warm-model", dest="warm_model")
    mc.add_argument("--with-baseline", action="store_true")
    mc.add_argument("--out", default="boapta-mc")
    mc.set_defaults(fn=cmd_mc)

    rep = sub.add_parser("report", help="compare two trial logs")
    rep.add_argument("--baseline", required=True, help="baseline trials.jsonl")
    rep.add_argument("--method", required=True, help="method trials.jsonl")
    rep.add_argument("--out", default="boapta-report")
    rep.set_defaults(fn=cmd_report)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else 0
    np.seterr(over="ignore", under="ignore")
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
