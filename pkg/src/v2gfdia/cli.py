"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys

import numpy as np

from . import agc as agc_mod
from .config import ConfigError, ScenarioConfig, load_config, save_config
from .detector import DetectionConfig, feasibility_mask
from .scenario import agc_scenario_from_run, export, run_scenario

logger = logging.getLogger(__name__)


def _apply_overrides(cfg: ScenarioConfig, args) -> ScenarioConfig:
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "attack", None):
        import dataclasses
        cfg.attack = dataclasses.replace(cfg.attack, enabled=args.attack == "on")
    if getattr(args, "control", None):
        cfg.control_enabled = args.control == "on"
    if getattr(args, "out", None):
        cfg.out_dir = args.out
    return cfg


def _cmd_simulate(args) -> int:
    cfg = load_config(args.config) if args.config else ScenarioConfig()
    cfg = _apply_overrides(cfg, args)
    cfg.validate()
    metrics = run_scenario(cfg, collect_measurement_log=args.dump_measurements)
    out = cfg.out_dir or "run_out"
    files = export(metrics, cfg, out)
    if args.save_config:
        save_config(cfg, args.save_config)
    summary = metrics.summary(cfg)
    print(json.dumps({k: summary[k] for k in
                      ("seed", "config_hash", "alarms_aggregate",
                       "alarms_feasibility", "mape_overall",
                       "tracking_ok_fraction")}, indent=2, sort_keys=True))
    print(f"wrote {len(files)} files to {out}")
    return 0


def _cmd_agc(args) -> int:
    cfg = load_config(args.config) if args.config else ScenarioConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    report = agc_mod.scenario_2200(
        cfg.agc, flexibility_true_mw=args.flexibility,
        dispatched_mw=args.dispatched, delivered_mw=args.delivered)
    if args.out:
        agc_mod.write_csv(report.trajectory, cfg.agc, args.out)
    print(json.dumps({
        "dispatched_mw": report.dispatched_mw,
        "delivered_mw": report.delivered_mw,
        "shortfall_mw": round(report.shortfall_mw, 3),
        "residual_after_generators_mw": round(report.residual_after_generators_mw, 3),
        "peak_df1_hz": round(report.peak_df1_hz, 6),
        "peak_df2_hz": round(report.peak_df2_hz, 6),
        "ptie_min_pu": round(report.ptie_min_pu, 6),
    }, indent=2, sort_keys=True))
    return 0


def _cmd_detect(args) -> int:
    specs = {}
    with open(args.specs, "r", encoding="utf-8") as f:
        header = f.readline()
        for line in f:
            ev, q, pc, pd, eta = line.strip().split(",")
            specs[int(ev)] = (float(q), float(pc), float(pd), float(eta))
    rows = []
    with open(args.measurements, "r", encoding="utf-8") as f:
        header = f.readline()  # noqa: F841
        for line in f:
            parts = line.strip().split(",")
            rows.append((int(parts[0]), int(parts[1]), float(parts[2]), float(parts[3])))
    cfg = DetectionConfig(epsilon=args.epsilon)
    t_p_h = args.t_p_s / 3600.0
    last: dict[int, tuple[int, float, float]] = {}
    n_alarms = 0
    gap = args.n_p
    for step, ev, soc, power in rows:
        if ev in last and step - last[ev][0] == gap and ev in specs:
            q, pc, pd, eta = specs[ev]
            bad = feasibility_mask(np.array([last[ev][1]]), np.array([soc]),
                                   np.array([power]), np.array([q]), np.array([pc]),
                                   np.array([pd]), np.array([eta]), t_p_h, cfg)
            if bad[0]:
                n_alarms += 1
                print(f"step={step} kind=feasibility ev={ev} "
                      f"dSoC={soc - last[ev][1]:+.4f} P={power:.3f}")
        last[ev] = (step, soc, power)
    print(f"feasibility alarms: {n_alarms}")
    return 0


def _cmd_report(args) -> int:
    path = f"{args.run_dir}/summary.json"
    with open(path, "r", encoding="utf-8") as f:
        summary = json.load(f)
    keep = {k: v for k, v in summary.items() if k != "config"}
    print(json.dumps(keep, indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="v2gfdia",
        description="V2G coordination testbed with a stealthy measurement-"
                    "fabrication adversary")
    sub = p.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run the full day loop")
    sim.add_argument("--config", help="JSON scenario config")
    sim.add_argument("--seed", type=int)
    sim.add_argument("--attack", choices=("on", "off"))
    sim.add_argument("--control", choices=("on", "off"))
    sim.add_argument("--out", help="output directory")
    sim.add_argument("--dump-measurements", action="store_true")
    sim.add_argument("--save-config", help="write the resolved config here")
    sim.set_defaults(func=_cmd_simulate)

    ag = sub.add_parser("agc", help="two-area frequency scenario")
    ag.add_argument("--config", help="JSON scenario config")
    ag.add_argument("--seed", type=int)
    ag.add_argument("--flexibility", type=float, default=68.2,
                    help="true flexibility bound (MW)")
    ag.add_argument("--dispatched", type=float, default=50.0)
    ag.add_argument("--delivered", type=float, default=25.95)
    ag.add_argument("--out", help="CSV output path")
    ag.set_defaults(func=_cmd_agc)

    det = sub.add_parser("detect", help="replay feasibility checks over a log")
    det.add_argument("--measurements", required=True)
    det.add_argument("--specs", required=True)
    det.add_argument("--t-p-s", type=float, default=300.0)
    det.add_argument("--n-p", type=int, default=15)
    det.add_argument("--epsilon", type=float, default=0.01)
    det.set_defaults(func=_cmd_detect)

    rep = sub.add_parser("report", help="summarize a run directory")
    rep.add_argument("run_dir")
    rep.set_defaults(func=_cmd_report)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        logger.exception("run failed")
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
