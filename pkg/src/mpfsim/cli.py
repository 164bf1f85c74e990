"""Command-line entry point.

Subcommands: ``run``, ``mc``, ``fastloop``, ``classify-delta``, ``replay``.
Exit codes: 0 success, 2 configuration / usage error, 3 run error.
Outputs go to ``--out``, else the config's ``output.dir``, else
``$MPFSIM_OUT``, else ``./mpfsim-out``.  Nothing is written when the
configuration is rejected.  Wall-clock loop times go to ``timing.csv`` only,
so every other file is a pure function of seed, config and controller.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

from . import fastloop, io
from .config import CASES, ConfigError, ScenarioConfig, config_from_dict, load_config
from .controllers import ControllerKind
from .impairment import DelayChannel, LtiChannel, channel_from_spec, classify_passivity, lti_from_channel
from .scenario import World, config_with, generate, monte_carlo, run, summarize

log = logging.getLogger("mpfsim")

EXIT_OK, EXIT_CONFIG, EXIT_RUN = 0, 2, 3
OUT_ENV = "MPFSIM_OUT"
DEFAULT_OUT = "mpfsim-out"
CONTROLLERS = [k.value for k in ControllerKind]

SUMMARY_COLUMNS = ["controller", "runs", "failed", "min_h0", "incomplete_ls", "oob", "max_delta_ac",
                   "mean_delta_ac_gt2", "violations", "mean_min_h0", "p5_min_h0", "worst_completion",
                   "mean_max_delta_ac", "avg_speed_drop_mph"]
TIMING_COLUMNS = ["controller", "mean_loop_ms", "max_loop_ms"]


class UsageError(Exception):
    pass


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mpfsim", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, runs=False):
        sp.add_argument("--config", help="YAML config file")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int, help="scenario seed (master seed for mc)")
        sp.add_argument("--case", choices=CASES, help="impairment case")
        if runs:
            sp.add_argument("--controller", action="append", choices=CONTROLLERS,
                            help="controller(s) to run; repeatable, default all three")
            sp.add_argument("--runs", type=int, default=100)
            sp.add_argument("--jobs", type=int, default=1)
        else:
            sp.add_argument("--controller", choices=CONTROLLERS)

    common(sub.add_parser("run", help="single closed-loop run"))
    common(sub.add_parser("mc", help="Monte Carlo batch"), runs=True)
    rp = sub.add_parser("replay", help="re-run a saved world.json")
    common(rp)
    rp.add_argument("--world", required=True, help="world.json written by 'run'")

    fp = sub.add_parser("fastloop", help="delay stability sweep of the fast loop")
    fp.add_argument("--out")
    fp.add_argument("--mode", choices=["full-mpf", "split-mpf", "both"], default="both")
    fp.add_argument("--k", default=None,
                    help="comma-separated loop gains (default: 1 for full-MPF, 0.1,0.25,0.5 for split)")
    fp.add_argument("--eps", default="0.2", help="comma-separated fast time constants")
    fp.add_argument("--ratios", default="0.25,0.5,1,1.5,1.6,2,5,20,100",
                    help="comma-separated tau_d/eps sweep points")

    cp = sub.add_parser("classify-delta", help="passivity verdict for actuator channels")
    cp.add_argument("channels", nargs="+",
                    help="gain:K | first_order:TAU | delay:TAU | identity")
    cp.add_argument("--out")
    return p


def _floats(text: str, what: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--{what}: expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise UsageError(f"--{what}: empty list")
    return vals


def _out_dir(args, output: dict | None = None) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    if output and output.get("dir"):
        return Path(output["dir"])
    return Path(os.environ.get(OUT_ENV) or DEFAULT_OUT)


def _load(args) -> tuple[ScenarioConfig, dict]:
    cfg, output = load_config(args.config) if args.config else config_from_dict({})
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.case is not None:
        changes["impairment.case"] = args.case
    if isinstance(args.controller, str):
        changes["controller.kind"] = args.controller
    if changes:
        cfg = config_with(cfg, **changes)
    return cfg, output


def _header(cfg: ScenarioConfig, controller: str) -> dict:
    return {"controller": controller, "case": cfg.impairment.case, "seed": cfg.seed}


def cmd_run(args, world: World | None = None) -> int:
    cfg, output = _load(args)
    out = _out_dir(args, output)
    try:
        world = world or generate(cfg)
        metrics, trace = run(world, cfg)
    except Exception as exc:
        log.error("run failed: %s", exc)
        return EXIT_RUN
    out.mkdir(parents=True, exist_ok=True)
    row = {**_header(cfg, cfg.controller.kind), **metrics.as_row(timing=False)}
    if world.seed != cfg.seed:
        row["seed"] = world.seed
    io.write_csv(out / "metrics.csv", [row])
    io.write_csv(out / "timing.csv", [{"controller": cfg.controller.kind,
                                       "mean_loop_ms": metrics.loop_ms_mean,
                                       "max_loop_ms": metrics.loop_ms_max}])
    io.write_json(out / "world.json", world.to_dict())
    io.write_json(out / "config.json", cfg.to_dict())
    if output.get("trajectory", True):
        run_id = f"{cfg.controller.kind}-{world.seed}"
        io.write_jsonl(out / "trajectory.jsonl", trace.records(run_id))
    print(f"{cfg.controller.kind} case={cfg.impairment.case} seed={world.seed}: "
          f"min_h0={metrics.min_h0:.3f} incomplete={metrics.incomplete_lane_changes} "
          f"max_dac={metrics.max_delta_ac:.2f} loop={metrics.loop_ms_mean:.2f}ms -> {out}")
    return EXIT_OK


def cmd_replay(args) -> int:
    try:
        with open(args.world) as fh:
            world = World.from_dict(json.load(fh))
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"{args.world}: cannot load world ({exc})") from None
    return cmd_run(args, world)


def _summary_text(summary: dict, cfg: ScenarioConfig, n_runs: int) -> str:
    lines = [f"{n_runs} MC runs, case {cfg.impairment.case}, master seed {cfg.seed}",
             f"{'controller':<12}{'min h0 [m]':>12}{'incomplete LS':>15}{'OOB [m]':>10}"
             f"{'max dac':>10}{'dac>2 #':>10}{'viol runs':>11}"]
    failed = 0
    for name, s in summary.items():
        failed += s.get("failed", 0)
        if not s.get("runs"):
            lines.append(f"{name:<12}{'all runs failed':>40}")
            continue
        oob = f"{s['oob']:.2f}" if s["oob"] > 0 else "N/A"
        lines.append(f"{name:<12}{s['min_h0']:>12.2f}{s['incomplete_ls']:>15d}{oob:>10}"
                     f"{s['max_delta_ac']:>10.1f}{s['mean_delta_ac_gt2']:>10.1f}{s['violations']:>11d}")
    if failed:
        lines.append(f"note: {failed} run(s) failed; see the error column of runs.csv")
    return "\n".join(lines) + "\n"


def cmd_mc(args) -> int:
    cfg, output = _load(args)
    if args.runs < 1:
        raise UsageError("--runs must be at least 1")
    if args.jobs < 1:
        raise UsageError("--jobs must be at least 1")
    controllers = args.controller or CONTROLLERS
    out = _out_dir(args, output)
    try:
        records = monte_carlo(cfg, args.runs, controllers, cfg.seed, args.jobs)
    except Exception as exc:
        log.error("batch failed: %s", exc)
        return EXIT_RUN
    rows = []
    for r in records:
        row = {"run": r.run, "seed": r.seed, "controller": r.controller,
               "case": cfg.impairment.case, "error": r.error or ""}
        if r.metrics is not None:
            row.update(r.metrics.as_row(timing=False))
        rows.append(row)
    summary = summarize(records)
    out.mkdir(parents=True, exist_ok=True)
    io.write_csv(out / "runs.csv", rows)
    io.write_csv(out / "summary.csv", [{"controller": k, **v} for k, v in summary.items()],
                 SUMMARY_COLUMNS)
    io.write_csv(out / "timing.csv", [{"controller": k, **v} for k, v in summary.items() if v.get("runs")],
                 TIMING_COLUMNS)
    text = _summary_text(summary, cfg, args.runs)
    (out / "summary.txt").write_text(text)
    sys.stdout.write(text)
    if all(r.metrics is None for r in records):
        return EXIT_RUN
    return EXIT_OK


def cmd_fastloop(args) -> int:
    eps_list = _floats(args.eps, "eps")
    ratios = _floats(args.ratios, "ratios")
    if any(e <= 0 for e in eps_list) or any(r < 0 for r in ratios):
        raise UsageError("--eps must be positive and --ratios non-negative")
    modes = ["full-mpf", "split-mpf"] if args.mode == "both" else [args.mode]
    if args.k is not None:
        ks = _floats(args.k, "k")
        if any(k <= 0 for k in ks):
            raise UsageError("--k values must be positive")
        gains = {m: ks for m in modes}
    else:
        gains = {"full-mpf": [1.0], "split-mpf": [0.1, 0.25, 0.5]}
    sweep, bounds = [], []
    for mode in modes:
        for k in gains[mode]:
            for eps in eps_list:
                for ratio in ratios:
                    rep = fastloop.simulate_dde(fastloop.ScalarDde(eps, ratio * eps, k, 0.0, mode))
                    sweep.append({"mode": mode, "k": k, "eps": eps, "tau_over_eps": ratio,
                                  "verdict": rep.verdict.value, "decay_rate": rep.decay_rate})
                hi = max(3.0, max(ratios)) if mode == "split-mpf" else 3.0
                try:
                    b = fastloop.find_stability_boundary(mode, k, eps, 0.1, hi)
                    note = ""
                except fastloop.NoBoundaryError:
                    b, note = math.nan, f"no boundary in [0.1, {hi:g}]: delay-independent"
                bounds.append({"mode": mode, "k": k, "eps": eps, "boundary": b, "note": note})
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    io.write_csv(out / "fastloop.csv", sweep)
    io.write_csv(out / "boundary.csv", bounds)
    for b in bounds:
        val = f"{b['boundary']:.4f}" if math.isfinite(b["boundary"]) else b["note"]
        print(f"{b['mode']:<10} k={b['k']:<6g} eps={b['eps']:<6g} boundary tau/eps = {val}")
    return EXIT_OK


def _parse_channel(text: str):
    kind, _, arg = text.partition(":")
    kind = kind.strip().replace("-", "_")
    try:
        if kind == "delay":
            return DelayChannel(float(arg))
        params = {"gain": "kappa", "first_order": "tau"}
        spec = {"kind": kind}
        if kind in params:
            spec[params[kind]] = float(arg)
        return lti_from_channel(channel_from_spec(spec))
    except (ValueError, TypeError) as exc:
        raise UsageError(f"channel {text!r}: {exc}") from None


def cmd_classify(args) -> int:
    rows = []
    for text in args.channels:
        ch = _parse_channel(text)
        rep = classify_passivity(ch)
        rows.append({"channel": text, "verdict": rep.verdict.value, "nu": rep.nu,
                     "omega_at_min": rep.omega_at_min})
        print(f"{text:<20} {rep.verdict.value:<12} nu={rep.nu:.4g}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        io.write_csv(out / "classify.csv", rows)
    return EXIT_OK


COMMANDS = {"run": cmd_run, "mc": cmd_mc, "replay": cmd_replay, "fastloop": cmd_fastloop,
            "classify-delta": cmd_classify}


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
