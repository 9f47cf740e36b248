"""Command-line front door.

Subcommands: generate (context datasets), signal-opt (fixed-time plan search),
simulate (single scenario with optional trace/rollout export), calibrate
(driver parameter posteriors), evaluate (benefit campaigns). Every run writes
a manifest beside its outputs. Exit codes: 0 success, 1 domain error, 2 usage.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import calibrate as calib
from . import contexts as ctxmod
from . import controllers as controllers_mod
from . import evaluate as evalmod
from . import signal_opt
from .env import EcoDrivingEnv, EpisodeSpec, layout_descriptor
from .kernel import TraceWriter
from .manifest import write_manifest

CAMPAIGN_FORMAT = "greenwave-campaign"


class CliError(Exception):
    pass


def _ensure_writable(paths: list[Path], force: bool) -> None:
    for p in paths:
        if p.exists() and not force:
            raise CliError(f"refusing to overwrite {p} (use --force)")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_generate(args, argv) -> int:
    dist = ctxmod.load_distribution(args.config)
    out = _out_dir(args)
    target = out / "contexts.jsonl"
    _ensure_writable([target], args.force)
    sampler = ctxmod.ContextSampler(dist, args.seed)
    contexts = sampler.take(args.n)
    ctxmod.save_dataset(contexts, target)
    write_manifest(out, "generate", argv, args.seed, [args.config], [target],
                   extra={"n_contexts": args.n})
    print(f"wrote {len(contexts)} contexts to {target}")
    return 0


def cmd_signal_opt(args, argv) -> int:
    contexts = ctxmod.load_dataset(args.config)
    if not contexts:
        raise CliError(f"{args.config}: no contexts to optimize")
    out = _out_dir(args)
    tuned_path = out / "contexts_optimized.jsonl"
    audit_path = out / "signal_opt_audit.jsonl"
    _ensure_writable([tuned_path, audit_path], args.force)
    tuned = []
    with open(audit_path, "w", encoding="utf-8") as audit_fh:
        for ctx in contexts:
            best, audit = signal_opt.optimize_context_plan(
                ctx, n_points=args.grid, seed=args.seed, steps=args.steps)
            tuned.append(best)
            audit_fh.write(json.dumps({
                "context_id": ctx.scenario_id,
                "chosen_green_s": best.green_s,
                "candidates": [c.to_payload() for c in audit],
            }, sort_keys=True) + "\n")
    ctxmod.save_dataset(tuned, tuned_path)
    write_manifest(out, "signal-opt", argv, args.seed, [args.config],
                   [tuned_path, audit_path], extra={"grid": args.grid, "steps": args.steps})
    print(f"optimized {len(tuned)} plans -> {tuned_path}")
    return 0


def _load_actions(path) -> list[dict[int, float]]:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != "greenwave-actions":
        raise CliError(f"{path}: not an actions file")
    return [{int(k): float(v) for k, v in step.items()} for step in payload["steps"]]


def cmd_simulate(args, argv) -> int:
    spec = EpisodeSpec.load(args.episode)
    if args.seed is not None:
        spec.context = ctxmod.reseed(spec.context, args.seed)
    out = _out_dir(args)
    outputs = []
    trace_path = out / "trace.csv" if args.trace else None
    rollout_path = Path(args.rollout_out) if args.rollout_out else None
    _ensure_writable([p for p in (trace_path, rollout_path) if p is not None], args.force)

    replay = _load_actions(args.actions) if args.actions else None
    env = EcoDrivingEnv(spec)
    controller = controllers_mod.make(args.controller)
    controller.begin_episode(env)

    trace_fh = None
    if trace_path is not None:
        trace_fh = open(trace_path, "w", encoding="utf-8")
        env.attach_trace(TraceWriter(trace_fh, spec.context.scenario_id))

    obs = env.reset()
    rollout = {"format": "greenwave-rollout", "version": 1,
               "layout": layout_descriptor(),
               "initial_obs": {str(k): o.flatten() for k, o in obs.items()},
               "steps": []} if rollout_path is not None else None

    step_idx = 0
    done = env.done
    while not done:
        if replay is not None:
            if step_idx >= len(replay):
                raise CliError(f"actions file exhausted at step {step_idx}")
            actions = replay[step_idx]
        else:
            actions = controller.act(obs)
        obs, rewards, done, info = env.step(actions)
        if rollout is not None:
            rollout["steps"].append({
                "obs": {str(k): o.flatten() for k, o in obs.items()},
                "rewards": {str(k): r.to_payload() for k, r in rewards.items()},
                "done": done,
                "exited": sorted(info["exited"]),
                "throughput": info["throughput"],
            })
        step_idx += 1
    if trace_fh is not None:
        trace_fh.close()

    if rollout_path is not None:
        with open(rollout_path, "w", encoding="utf-8") as fh:
            json.dump(rollout, fh, sort_keys=True, separators=(",", ":"))
            fh.write("\n")
        outputs.append(rollout_path)

    log = env.episode_log()
    summary = {"steps": log["steps"], "spawned": log["spawned"], "exited": log["exited"],
               "throughput": log["throughput"]}
    if trace_path is not None:
        outputs.append(trace_path)
    write_manifest(out, "simulate", argv, spec.context.seed,
                   [args.episode] + ([args.actions] if args.actions else []),
                   outputs, extra=summary)
    print(json.dumps(summary))
    return 0


def cmd_calibrate(args, argv) -> int:
    datasets = calib.load_trajectories(args.data)
    out = _out_dir(args)
    report_path = out / "calibration_report.json"
    _ensure_writable([report_path], args.force)
    cfg = calib.ChainConfig(n_iter=args.iters, burn_in=args.burn, n_chains=args.chains)
    fit = calib.fit_population(datasets, config=cfg, seed=args.seed)
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(fit.report_payload(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_manifest(out, "calibrate", argv, args.seed, [args.data], [report_path])
    print(f"calibration report -> {report_path}")
    return 0


def cmd_evaluate(args, argv) -> int:
    with open(args.config, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != CAMPAIGN_FORMAT:
        raise CliError(f"{args.config}: not a campaign spec (format={payload.get('format')!r})")
    body = {k: v for k, v in payload.items() if k not in ("format", "version")}
    camp = evalmod.campaign_from_payload(body)
    if args.seed is not None:
        camp.base_seed = args.seed
    if args.bins is not None:
        camp.bin_width_pct = args.bins
    out = _out_dir(args)
    report_path = out / "eval_report.json"
    hist_path = out / "benefit_histogram.csv"
    _ensure_writable([report_path, hist_path], args.force)
    report = evalmod.run_campaign(camp, workers=args.workers)
    evalmod.save_report(report, report_path)
    evalmod.save_histogram_rows(report, hist_path)
    write_manifest(out, "evaluate", argv, camp.base_seed, [args.config],
                   [report_path, hist_path],
                   extra={"campaign_sha256": report["campaign_sha256"],
                          "coefficients_sha256": report["coefficients_sha256"],
                          "workers": args.workers})
    print(f"eval report -> {report_path} "
          f"(skipped {report['summary']['skipped_contexts']} contexts)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="greenwave",
                                 description="eco-driving simulation suite")
    sub = ap.add_subparsers(dest="subcommand", required=True)

    g = sub.add_parser("generate", help="sample a context dataset from a distribution spec")
    g.add_argument("--config", required=True, help="distribution spec JSON")
    g.add_argument("--n", type=int, default=100)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--force", action="store_true")
    g.set_defaults(fn=cmd_generate)

    s = sub.add_parser("signal-opt", help="exhaustive green-split search per context")
    s.add_argument("--config", required=True, help="context dataset JSONL")
    s.add_argument("--grid", type=int, default=7)
    s.add_argument("--steps", type=int, default=400)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--force", action="store_true")
    s.set_defaults(fn=cmd_signal_opt)

    m = sub.add_parser("simulate", help="run one episode")
    m.add_argument("--episode", required=True, help="episode spec JSON")
    m.add_argument("--controller", default="baseline", choices=controllers_mod.available())
    m.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    m.add_argument("--trace", action="store_true", help="export per-step trace CSV")
    m.add_argument("--actions", default=None, help="replay recorded CV actions (JSON)")
    m.add_argument("--rollout-out", default=None, help="write per-step obs/reward JSON")
    m.add_argument("--out", required=True)
    m.add_argument("--force", action="store_true")
    m.set_defaults(fn=cmd_simulate)

    c = sub.add_parser("calibrate", help="fit driver parameter posteriors")
    c.add_argument("--data", required=True, help="trajectory JSONL")
    c.add_argument("--iters", type=int, default=6000)
    c.add_argument("--burn", type=int, default=2000)
    c.add_argument("--chains", type=int, default=2)
    c.add_argument("--seed", type=int, required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--force", action="store_true")
    c.set_defaults(fn=cmd_calibrate)

    e = sub.add_parser("evaluate", help="run a benefit campaign")
    e.add_argument("--config", required=True, help="campaign spec JSON")
    e.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    e.add_argument("--bins", type=float, default=None, help="histogram bin width (pct points)")
    e.add_argument("--seed", type=int, default=None, help="override the campaign base seed")
    e.add_argument("--out", required=True)
    e.add_argument("--force", action="store_true")
    e.set_defaults(fn=cmd_evaluate)
    return ap


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args, argv)
    except (CliError, ValueError, OSError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
