"""``revolver`` command line: pretrain, transfer, eval, interp, validate-theorem."""

from __future__ import annotations

import os

# Cap BLAS threads before numpy is imported.
_threads = os.environ.get("REVOLVER_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse
import csv
import io
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .reporting import ExportError, RunManifest, export_report, write_atomic
from .robot import DescriptionError, format_robot_description, interpolate
from .seeding import stream
from .sim.env import rollout, write_trajectory_csv
from .theory import validate_theorem
from .transfer import (
    ConfigError,
    Learner,
    RobotCache,
    TrainingError,
    build_pair,
    evaluate,
    fetch_robot,
    load_config,
    make_family,
    pretrain,
    run_baseline,
    run_revolver,
)
from .transfer.config import RunConfig

log = logging.getLogger("revolver")

EXIT_USAGE = 2
EXIT_DIVERGENCE = 3


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _config(args) -> RunConfig:
    cfg = RunConfig() if args.config is None else load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, revolver=replace(cfg.revolver, seed=args.seed))
    return cfg


def _manifest(command: str, cfg: RunConfig | None, args) -> RunManifest:
    m = RunManifest(command)
    if cfg is not None:
        m.config_hash = cfg.digest
        m.seeds = {"master": cfg.revolver.seed}
    m.args = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    return m


def cmd_pretrain(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    _, _, corr = build_pair(cfg)
    cache = RobotCache(corr, 2, cfg.family.id)
    learner, ev = pretrain(
        cfg, args.steps, cache,
        progress=lambda r: log.info("pretrain: %d steps, raw reward %.3f, success %.2f", r.env_steps, r.mean_raw_reward, r.success_rate),
    )
    ckpt = Path(args.checkpoint) if args.checkpoint else out / "expert.npz"
    learner.save(ckpt, {"source": cfg.robots.source, "target": cfg.robots.target, "family": cfg.family.id})
    m = _manifest("pretrain", cfg, args)
    m.timings["wall_time_s"] = round(time.perf_counter() - t0, 3)
    m.args["expert_eval"] = {"mean_reward": ev.mean_reward, "success_rate": ev.success_rate}
    write_atomic(out / "manifest.json", m.to_json())
    print(f"expert on source: mean reward {ev.mean_reward:.4f}, success {ev.success_rate:.3f} -> {ckpt}")
    return 0


def cmd_transfer(args) -> int:
    cfg = _config(args)
    rl = cfg.rl_resolved
    if args.method != "scratch":
        if not args.checkpoint:
            raise ConfigError("missing expert: pass --checkpoint with a pretrained source policy")
        expert = Learner.load(args.checkpoint, rl, cfg.revolver.seed)
    else:
        expert = None
    _, _, corr = build_pair(cfg)
    cache = RobotCache(corr, cfg.revolver.cache_size, cfg.family.id)

    def progress(r):
        log.info("phase %d alpha=%.3f epochs=%d raw=%.3f success=%.2f removed=%d",
                 r.phase, r.alpha, r.epochs_used, r.mean_raw_reward, r.success_rate, r.buffer_removed)

    if args.method == "revolver":
        report = run_revolver(cfg, expert, cache, progress)
    else:
        report = run_baseline(cfg, args.method, expert, cache, progress)
    m = _manifest("transfer", cfg, args)
    export_report(report, args.out, m)
    report.learner.save(Path(args.out) / "final.npz", {"method": args.method, "beta": 1.0})
    f = report.final
    print(f"{args.method}: target mean reward {f.mean_reward:.4f}, success {f.success_rate:.3f}")
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    if not 0.0 <= args.beta <= 1.0:
        raise ConfigError("--beta must lie in [0, 1]")
    learner = Learner.load(args.checkpoint, cfg.rl_resolved, cfg.revolver.seed)
    _, _, corr = build_pair(cfg)
    model = interpolate(corr, args.beta, family_id=cfg.family.id)
    family = make_family(cfg)
    ev = evaluate(learner, model, family, args.episodes or cfg.revolver.eval_episodes, cfg.revolver.seed)
    print(f"beta={args.beta}: mean reward {ev.mean_reward:.4f}, success {ev.success_rate:.3f} over {ev.episodes} episodes")
    if args.trajectory:
        traj = rollout(model, family, lambda o: learner.act(o[None], False)[0], stream(cfg.revolver.seed, "trajectory"))
        write_trajectory_csv(args.trajectory, traj, corr.n_joints)
    return 0


def cmd_interp(args) -> int:
    cfg = _config(args)
    _, _, corr = build_pair(cfg)
    out = Path(args.out) if args.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    for a in args.alphas:
        model = interpolate(corr, a, family_id=cfg.family.id)
        text = format_robot_description(model.tree, header=f"interpolated robot at alpha={a!r}")
        if out:
            write_atomic(out / f"robot_alpha_{a:.4f}.robot", text)
        else:
            sys.stdout.write(text + "\n")
    return 0


def cmd_validate(args) -> int:
    rng = stream(args.seed, "theorem")
    rep = validate_theorem(None, args.alpha, args.deltas, args.h, args.trials, rng)
    rows = [[r.trial, repr(r.delta), repr(r.interval_lo), repr(r.interval_hi), repr(r.alpha_prime), int(r.contained)] for r in rep.rows]
    header = ["trial", "delta", "interval_lo", "interval_hi", "alpha_prime", "contained"]
    if args.out:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        write_atomic(Path(args.out), buf.getvalue())
    for d in rep.deltas:
        print(f"delta={d}: agreement {rep.agreement(d):.3f}")
    print(f"non-decreasing as delta shrinks: {rep.monotone()}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="revolver", description="Policy transfer through interpolated robots.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=False):
        sp.add_argument("--config", help="TOML run configuration")
        sp.add_argument("--seed", type=int, help="override the master seed")
        sp.add_argument("--out", required=out_required, help="output directory")

    sp = sub.add_parser("pretrain", help="train an expert on the source robot")
    common(sp, True)
    sp.add_argument("--checkpoint", help="where to write the expert (default <out>/expert.npz)")
    sp.add_argument("--steps", type=int, help="environment steps (default rl.pretrain_steps)")
    sp.set_defaults(func=cmd_pretrain)

    sp = sub.add_parser("transfer", help="transfer an expert to the target robot")
    common(sp, True)
    sp.add_argument("--checkpoint", help="expert checkpoint for the source robot")
    sp.add_argument("--method", choices=["revolver", "direct", "scratch"], default="revolver")
    sp.set_defaults(func=cmd_transfer)

    sp = sub.add_parser("eval", help="evaluate a checkpoint on the robot at --beta")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--beta", type=float, default=1.0)
    sp.add_argument("--episodes", type=int)
    sp.add_argument("--trajectory", help="write one deterministic episode as CSV")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("interp", help="print or write interpolated robot descriptions")
    common(sp)
    sp.add_argument("--alphas", type=_floats, required=True)
    sp.set_defaults(func=cmd_interp)

    sp = sub.add_parser("validate-theorem", help="check the shaped-window optimum on random tabular MDPs")
    sp.add_argument("--alpha", type=float, default=0.3)
    sp.add_argument("--h", type=float, default=1.0)
    sp.add_argument("--deltas", type=_floats, default=[0.2, 0.1, 0.05])
    sp.add_argument("--trials", type=int, default=200)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", help="CSV path")
    sp.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except TrainingError as e:
        print(f"error: numerical divergence: {e}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (ConfigError, DescriptionError, ExportError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
