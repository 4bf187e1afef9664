"""Command-line entry point.

    fres train        --config run.json --seed 0 --slots 2000 --uav-schedule 0:3,1000:4,1500:3
    fres compare      --methods fres,random,local,remote,ts
    fres oracle-check
    fres placement    --ues 20 --uavs 3
    fres qpb-demo     --ues 4 --uavs 2

Outputs go to ``$FRES_OUTPUT_ROOT/<output_dir>`` (or ``<output_dir>`` when
the variable is unset). Every command first writes the effective config
there.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import replace

from . import agent as ag
from . import checks, experiments
from .channel import build_channel_set
from .config import METHODS, RunConfig, load_config, parse_uav_schedule, save_config
from .env import generate_scenario, scenario_to_dict
from .errors import BudgetExceeded, ConfigError, FresError
from .placement import ls_fcm
from .runtime import output_stem, records_to_csv, run_episode, run_summary


def _seeds(text: str) -> list:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"bad seed list {text!r}") from None


def effective_config(args) -> RunConfig:
    """Config file (if any) with command-line flags applied on top."""
    cfg = load_config(args.config) if args.config else RunConfig()
    ep = cfg.episode
    sizing = args.command != "oracle-check"
    if sizing and args.ues is not None:
        ep = replace(ep, n_ues=args.ues)
    if sizing and args.uavs is not None:
        ep = replace(ep, uav_schedule=[(0, args.uavs)])
    if args.uav_schedule is not None:
        ep = replace(ep, uav_schedule=parse_uav_schedule(args.uav_schedule))
    if args.slots is not None:
        ep = replace(ep, total_slots=args.slots)
    if args.refine_mode is not None:
        ep = replace(ep, refine_mode=args.refine_mode)
    if args.agent is not None:
        ep = replace(ep, agent=args.agent)
    cfg.episode = ep
    if args.seed is not None:
        cfg.seeds = _seeds(args.seed)
    if getattr(args, "methods", None):
        cfg.methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    if args.output_dir is not None:
        cfg.output_dir = args.output_dir
    if args.command == "oracle-check":
        # size flags set the oracle instances here, not the episode
        if args.ues is not None:
            cfg.oracle = replace(cfg.oracle, n_ues=(args.ues, args.ues))
        if args.uavs is not None:
            cfg.oracle = replace(cfg.oracle, m_uavs=(1, args.uavs))
    return RunConfig.from_dict(cfg.to_dict())


def _prepare(cfg: RunConfig, name: str):
    out = cfg.output_path()
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / f"{name}-config.json")
    print(cfg.to_json())
    return out


def cmd_train(cfg: RunConfig) -> int:
    out = _prepare(cfg, "train")
    for seed in cfg.seeds:
        res = run_episode(cfg.episode, seed)
        stem = output_stem("fres", seed, cfg.episode)
        (out / f"{stem}.csv").write_text(records_to_csv(res.records))
        (out / f"{stem}.ckpt.npz").write_bytes(ag.save_agent(res.agent, res.pool))
        summary = run_summary("fres", seed, cfg.episode, res.records)
        summary.update(adjustments=res.adjustments, deployments=res.deployments)
        (out / f"{stem}.json").write_text(json.dumps(summary, indent=2) + "\n")
        print(json.dumps(summary))
    return 0


COMPARE_COLUMNS = ["method", "seeds", "slots", "mean_energy_j", "std_energy_j", "mean_reward", "executed_violations"]


def cmd_compare(cfg: RunConfig) -> int:
    if len(cfg.methods) < 2:
        raise ConfigError("compare needs at least two methods")
    out = _prepare(cfg, "compare")
    result = experiments.compare(cfg.methods, cfg.episode, cfg.seeds, cfg.eval_window, cfg.search)
    result["eval_slots"] = [experiments.eval_slots(cfg.episode, cfg.eval_window)[i] for i in (0, -1)] \
        if cfg.episode.total_slots else []
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COMPARE_COLUMNS)
    for row in result["rows"]:
        w.writerow([row[c] if isinstance(row[c], (str, int)) else format(row[c], ".9g") for c in COMPARE_COLUMNS])
    stem = f"compare-results-{cfg.episode.digest()}"
    (out / f"{stem}.csv").write_text(buf.getvalue())
    (out / f"{stem}.json").write_text(json.dumps(result, indent=2) + "\n")
    sys.stdout.write(buf.getvalue())
    return 0


def cmd_oracle_check(cfg: RunConfig, corrupt_gradient: bool = False) -> int:
    out = _prepare(cfg, "oracle-check")
    o = cfg.oracle
    report = checks.run_all(
        qpb=o.qpb_geometries, gradient=o.gradient_draws, lts_instances=o.lts_instances, lts_iters=o.lts_iters,
        grid=o.grid, n_ues=o.n_ues, m_uavs=o.m_uavs, seed=cfg.seeds[0], corrupt_gradient=corrupt_gradient,
        budget=o.budget, config=cfg.episode.scenario,
    )
    (out / "oracle-check.json").write_text(json.dumps(report, indent=2) + "\n")
    for c in report["checks"]:
        print(f"{c['check']}: {'PASS' if c['passed'] else 'FAIL'}")
    return 0 if report["passed"] else 1


def cmd_placement(cfg: RunConfig) -> int:
    out = _prepare(cfg, "placement")
    ep = cfg.episode
    rows = []
    for seed in cfg.seeds:
        sc = generate_scenario(seed, ep.n_ues, ep.uavs_at(0), ep.scenario)
        s = ep.scenario
        centers = ls_fcm(sc.ue_positions[:, :2], sc.active_uav_count, fuzzifier=s.fcm_fuzzifier,
                         pathloss_exponent=s.fcm_pathloss_exponent, max_iter=s.fcm_max_iter, tol=s.fcm_tol_m, seed=seed)
        rows.append({"seed": seed, "ues_xy_m": sc.ue_positions[:, :2].tolist(), "centers_xy_m": centers.tolist(),
                     "altitude_m": s.uav_altitude_m})
    (out / "placement.json").write_text(json.dumps(rows, indent=2) + "\n")
    for r in rows:
        print(json.dumps({"seed": r["seed"], "centers_xy_m": r["centers_xy_m"]}))
    return 0


def cmd_qpb_demo(cfg: RunConfig) -> int:
    out = _prepare(cfg, "qpb-demo")
    ep = cfg.episode
    report = []
    for seed in cfg.seeds:
        sc = generate_scenario(seed, ep.n_ues, ep.uavs_at(0), ep.scenario)
        ch = build_channel_set(sc)
        report.append({"seed": seed, "scenario": scenario_to_dict(sc), "channels": ch.to_dict()})
        print(f"seed {seed}")
        print(f"{'ue':>3} {'uav':>3} {'irs':>4} {'gain_db':>9} {'rate_mbps':>10}")
        for i in range(sc.n_ues):
            for j in range(sc.active_uav_count):
                print(f"{i:>3} {j + 1:>3} {int(ch.irs_index[i, j]):>4} {ch.gain_db()[i, j]:>9.2f} {ch.rates[i, j] / 1e6:>10.3f}")
    (out / "qpb-demo.json").write_text(json.dumps(report, indent=2) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config; flags override its values")
    common.add_argument("--seed", help="seed or comma-separated seeds")
    common.add_argument("--ues", type=int)
    common.add_argument("--uavs", type=int, help="constant UAV count")
    common.add_argument("--slots", type=int)
    common.add_argument("--uav-schedule", help="slot:count pairs, e.g. 0:3,1000:4,1500:3")
    common.add_argument("--refine-mode", choices=["always", "on-violation", "every-k"])
    common.add_argument("--agent", choices=sorted(ag.AGENT_KINDS))
    common.add_argument("--output-dir")

    p = argparse.ArgumentParser(prog="fres", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="run the online loop and save records and a checkpoint")
    c = sub.add_parser("compare", parents=[common], help="mean/STD energy and traces for several methods")
    c.add_argument("--methods", help=f"comma-separated subset of {','.join(METHODS)}")
    o = sub.add_parser("oracle-check", parents=[common], help="QPB, gradient and LTS oracle checks")
    o.add_argument("--corrupt-gradient", action="store_true", help="negative control: perturb analytic gradients")
    sub.add_parser("placement", parents=[common], help="LS-FCM UAV positions")
    sub.add_parser("qpb-demo", parents=[common], help="per-pair IRS gain report")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = effective_config(args)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "compare":
            return cmd_compare(cfg)
        if args.command == "oracle-check":
            return cmd_oracle_check(cfg, args.corrupt_gradient)
        if args.command == "placement":
            return cmd_placement(cfg)
        return cmd_qpb_demo(cfg)
    except BudgetExceeded as exc:
        print(f"error: budget exceeded: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, FresError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
