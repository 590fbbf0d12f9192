"""``locoforge`` command line: bc, train, eval, plot.

Exit codes: 0 success, 1 runtime failure (expert failure, unreadable or
mismatched checkpoint, bad plot input), 2 invalid configuration or usage.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from .bc import ExpertFailure
from .checkpoint import CheckpointError
from .config import ConfigError, RunConfig, load_config

log = logging.getLogger("locoforge")


def _u64(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must lie in [0, 2**64)")
    return v


def build_parser() -> argparse.ArgumentParser:
    from .runner import ABLATIONS

    p = argparse.ArgumentParser(prog="locoforge", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log every iteration")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", type=Path, help="YAML or JSON run configuration")
        sp.add_argument("--seed", type=_u64, help="override run.seed")
        sp.add_argument("--out", type=Path, help="output directory (default: run.output_dir)")

    sp = sub.add_parser("bc", help="collect expert demos and pretrain the actor")
    common(sp)

    sp = sub.add_parser("train", help="constrained PPO training")
    common(sp)
    sp.add_argument("--warm-start", type=Path, help="actor checkpoint from `bc`")
    sp.add_argument("--ablate", choices=ABLATIONS)
    sp.add_argument("--resume", type=Path, help="trainer checkpoint to continue from")

    sp = sub.add_parser("eval", help="evaluate a checkpoint on fixed-velocity cases")
    sp.add_argument("checkpoint", type=Path)
    common(sp)

    sp = sub.add_parser("plot", help="render figures from metrics, reports and traces")
    sp.add_argument("inputs", nargs="+", type=Path,
                    help="metrics .jsonl, eval_report .json and trace .csv files")
    sp.add_argument("--out", type=Path, default=Path("."))
    return p


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    over = {}
    if getattr(args, "seed", None) is not None:
        over["run.seed"] = args.seed
    if getattr(args, "out", None) is not None:
        over["run.output_dir"] = str(args.out)
    return cfg.with_overrides(over) if over else cfg


def cmd_bc(args, threads: int) -> int:
    from .runner import run_bc

    cfg = _config(args)
    res = run_bc(cfg, cfg.run.output_dir, threads)
    print(json.dumps(res, sort_keys=True))
    return 0


def cmd_train(args, threads: int) -> int:
    from .runner import train

    if args.resume is not None:
        cfg = _config(args) if args.config else None
        if cfg is None and (args.seed is not None):
            raise ConfigError("run.seed: cannot change the seed of a resumed run")
        out = args.out or (Path(args.resume).parent)
        tr = train(cfg, out, threads=threads, resume=args.resume)
    else:
        cfg = _config(args)
        out = cfg.run.output_dir
        tr = train(cfg, out, ablate=args.ablate, warm_start=args.warm_start, threads=threads)
    print(json.dumps({"iterations": tr.state.iteration, "output_dir": str(out)}))
    return 0


def cmd_eval(args, threads: int) -> int:
    from .checkpoint import load
    from .config import config_from_dict
    from .runner import run_eval

    if args.config:
        cfg = _config(args)
    else:
        meta, _ = load(args.checkpoint)
        cfg = config_from_dict(meta["config"]) if "config" in meta else RunConfig()
        over = {}
        if args.seed is not None:
            over["run.seed"] = args.seed
        cfg = cfg.with_overrides(over) if over else cfg
    out = args.out or Path(args.checkpoint).parent / "eval"
    summary = run_eval(args.checkpoint, out, cfg, threads)
    for case in summary["cases"]:
        print(f"v_x_cmd={case['vx_cmd']:+.2f}  vel_err={case['vel_error']:.4f}  "
              f"grip_err={case['grip_error']:.4f}  c_arm>0={case['violation']['c_arm']:.4f}  "
              f"survival={case['survival']:.3f}")
    return 0


def cmd_plot(args, threads: int) -> int:
    from .plotting import PlotInputError, plot_joint_violation, plot_tracking, plot_training

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    metrics = [p for p in args.inputs if p.suffix == ".jsonl"]
    reports = [p for p in args.inputs if p.suffix == ".json"]
    traces = [p for p in args.inputs if p.suffix == ".csv"]
    other = [p for p in args.inputs if p.suffix not in (".jsonl", ".json", ".csv")]
    if other:
        raise PlotInputError(f"{other[0]}: unknown input type (expected .jsonl, .json or .csv)")
    written = []
    if metrics:
        written.append(plot_training(metrics, out / "training.png"))
    if reports:
        written.append(plot_joint_violation(reports, out / "joint_violation.png"))
    for t in traces:
        written.append(plot_tracking(t, out / f"tracking_{t.stem}.png"))
    for w in written:
        print(w)
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    from .plotting import PlotInputError
    from .runner import thread_count

    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        threads = thread_count()
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    handlers = {"bc": cmd_bc, "train": cmd_train, "eval": cmd_eval, "plot": cmd_plot}
    try:
        return handlers[args.command](args, threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ExpertFailure as exc:
        print(f"expert failure: {exc}", file=sys.stderr)
        return 1
    except (CheckpointError, PlotInputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
