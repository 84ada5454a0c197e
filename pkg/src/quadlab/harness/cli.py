"""``quadlab`` command line: train / eval / gradcheck / ablate / relax / bench / export."""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .bench import bench, format_records
from .config import ConfigError, from_sections, apply_overrides, read_sections
from .curves import export_curves
from .gradcheck import COMPONENTS, THRESHOLD, fd_gradcheck
from .run import SchemaError, evaluate_checkpoint, train_all

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"

ABLATIONS = {
    "full": [],
    "no-zero-step": ["learn.use_zero_step=false"],
    "no-buffer-init": ["learn.use_buffer_init=false"],
    "no-n-step": ["learn.use_n_step=false"],
}
RELAX_VARIANTS = ("relaxed_log", "relaxed_exp")


def _resolve_config_path(name):
    if name is None:
        return None
    p = Path(name)
    if p.exists():
        return p
    bundled = CONFIG_DIR / (p.name if p.suffix else p.name + ".cfg")
    if bundled.exists():
        return bundled
    raise ConfigError(f"config {name} not found")


def _load(args, extra=()):
    sections = read_sections(_resolve_config_path(args.config)) if args.config else {}
    overrides = list(extra) + list(args.override or ())
    if getattr(args, "seed", None) is not None:
        overrides.append(f"experiment.seeds={args.seed}")
    if getattr(args, "out", None):
        overrides.append(f"experiment.output_dir={args.out}")
    if getattr(args, "jobs", None):
        overrides.append(f"experiment.jobs={args.jobs}")
    return from_sections(apply_overrides(sections, overrides))


def _add_common(p, seed=True):
    p.add_argument("--config", help="config file or bundled config name (hover, tracking, landing, racing)")
    p.add_argument("--override", action="append", metavar="SECTION.KEY=VALUE",
                   help="override one config value (repeatable)")
    if seed:
        p.add_argument("--seed", type=int, help="run only this seed")
    p.add_argument("--out", help="output directory")


def _report(results):
    for r in results:
        print(f"seed {r['seed']}: steps {r['timestep']}  return {r['mean_return']:.3f}  "
              f"success {r['success_rate']:.2f}  gates {r['gates_passed']:.2f}  "
              f"pos_error {r['pos_error']:.4f}  -> {r['run_dir']}")


def cmd_train(args):
    cfg = _load(args)
    if args.name:
        cfg = replace(cfg, name=args.name)
    _report(train_all(cfg, verbose=args.verbose))
    return 0


def cmd_eval(args):
    cfg = _load(args)
    r = evaluate_checkpoint(cfg, args.run_dir, args.episodes, seed=args.seed or 0)
    print(f"episodes {args.episodes or cfg.eval_episodes}  return {r['mean_return']:.3f}  "
          f"success {r['success_rate']:.2f}  gates {r['gates_passed']:.2f}  pos_error {r['pos_error']:.4f}")
    return 0


def cmd_gradcheck(args):
    worst = 0.0
    for comp in args.component or COMPONENTS:
        err = fd_gradcheck(comp, args.trials, args.eps, seed=args.seed or 0)
        worst = max(worst, err)
        print(f"{comp:<9} max_rel_err {err:.3e}  {'ok' if err <= THRESHOLD else 'FAIL'}")
    return 0 if worst <= THRESHOLD else 1


def cmd_ablate(args):
    for variant, extra in ABLATIONS.items():
        overrides = [f"task.task={args.task}", "learn.algorithm=abpt",
                     f"experiment.name=ablate-{args.task}/{variant}", *extra]
        cfg = _load(args, overrides)
        print(f"== {variant}")
        _report(train_all(cfg, verbose=args.verbose))
    return 0


def cmd_relax(args):
    for variant in RELAX_VARIANTS:
        overrides = ["task.task=racing", f"task.reward_variant={variant}", f"learn.algorithm={args.algorithm}",
                     f"experiment.name=relax/{variant}"]
        cfg = _load(args, overrides)
        if cfg.eval_every == 0:
            cfg = replace(cfg, eval_every=max(1, cfg.log_every * 10))
        print(f"== {variant}")
        _report(train_all(cfg, verbose=args.verbose))
    return 0


def cmd_bench(args):
    recs = bench(tuple(args.batch), args.steps, tuple(args.kernel))
    print(format_records(recs))
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w") as fh:
            fh.write("kernel,batch,mode,steps,seconds,steps_per_s\n")
            for r in recs:
                fh.write(f"{r['kernel']},{r['batch']},{r['mode']},{r['steps']},{r['seconds']:.6f},"
                         f"{r['steps_per_s']:.1f}\n")
    return 0


def cmd_export(args):
    out = export_curves(args.paths, args.out, key=args.key)
    print(f"wrote {out}")
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="quadlab", description="First-order RL for quadrotor control.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train every configured seed")
    _add_common(p)
    p.add_argument("--name", help="experiment name (subdirectory of --out)")
    p.add_argument("--jobs", type=int, help="seeds to run concurrently")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a saved actor")
    _add_common(p)
    p.add_argument("--run-dir", required=True, help="directory holding actor.ckpt")
    p.add_argument("--episodes", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--component", action="append", choices=COMPONENTS)
    p.add_argument("--trials", type=int)
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="ABPT with each component removed")
    _add_common(p)
    p.add_argument("--task", default="racing", choices=("hovering", "tracking", "landing", "racing"))
    p.add_argument("--jobs", type=int)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("relax", help="racing with smooth surrogates of the gate reward")
    _add_common(p)
    p.add_argument("--algorithm", default="shac", choices=("bptt", "shac", "abpt"))
    p.add_argument("--jobs", type=int)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_relax)

    p = sub.add_parser("bench", help="simulator steps per second")
    p.add_argument("--batch", type=int, action="extend", nargs="+", default=None)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--kernel", action="extend", nargs="+", choices=("compiled", "python"), default=None)
    p.add_argument("--out", help="also write the records as CSV")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("export", help="aggregate metrics.csv files across seeds")
    p.add_argument("paths", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--key", default="timestep")
    p.set_defaults(func=cmd_export)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if args.command == "bench":
        args.batch = args.batch or [1, 64, 1024]
        args.kernel = args.kernel or ["compiled", "python"]
    try:
        return args.func(args)
    except (ConfigError, SchemaError, ValueError, OSError) as e:
        print(f"quadlab {args.command}: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
