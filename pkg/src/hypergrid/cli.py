"""Command-line entry point.

Subcommands: train, eval, sweep, gradcheck, param-audit. All share one
JSON config schema (see --help, which lists every key with its default)
plus repeatable dotted --override key=value flags.

Exit codes: 0 success, 1 config/validation failure, 2 runtime or numeric
failure (including gradient-check failures). HYPERGRID_THREADS bounds
sweep worker parallelism.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import audit, config as config_mod, gradcheck, sweep as sweep_mod
from .checkpoint import CheckpointFormatError, load_into_model
from .config import ConfigError
from .harness import NumericError, evaluate, train
from .model import TransformerModel
from .tensor import DimensionError

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


def _config_epilog() -> str:
    lines = ["config keys (JSON file and --override paths) with defaults:"]
    for key, value in config_mod.flatten(config_mod.DEFAULTS):
        lines.append(f"  {key} = {json.dumps(value)}")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hypergrid",
        description="Grid-gated transformer training, evaluation and sweeps.",
        epilog=_config_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in [
        ("train", "multi-task co-training run"),
        ("eval", "evaluate a checkpoint on the dev sets"),
        ("sweep", "grid-size lattice sweep"),
        ("gradcheck", "finite-difference gradient check"),
        ("param-audit", "added-parameter accounting per variant"),
    ]:
        p = sub.add_parser(name, help=helptext, epilog=_config_epilog(),
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--override", action="append", default=[],
                       metavar="KEY=VALUE", help="dotted config override")
        p.add_argument("--out", help="output directory (default: runs/<timestamp>)")
        p.add_argument("--seed", type=int, help="overrides config seed")
        verb = p.add_mutually_exclusive_group()
        verb.add_argument("--quiet", action="store_true")
        verb.add_argument("--verbose", action="store_true")
        if name == "eval":
            p.add_argument("--checkpoint", required=True)
    return parser


def _load(args) -> dict:
    cfg = config_mod.load_config(args.config, args.override)
    if args.seed is not None:
        cfg["seed"] = int(args.seed)
    if args.out is not None:
        cfg["out_dir"] = args.out
    return cfg


def _out_dir(cfg) -> str:
    out = cfg["out_dir"]
    if out is None:
        out = os.path.join("runs", time.strftime("run-%Y%m%d-%H%M%S"))
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "config.json"), "w") as f:
        json.dump(cfg, f, indent=2, sort_keys=True)
    return out


def _say(args, msg):
    if not args.quiet:
        print(msg)


def cmd_train(args) -> int:
    cfg = _load(args)
    model_cfg = config_mod.build_model_config(cfg)
    mixture = config_mod.build_mixture(cfg)
    opt_cfg = config_mod.build_optimizer_config(cfg)
    out = _out_dir(cfg)
    model = TransformerModel(model_cfg, seed=int(cfg["seed"]))
    log = (lambda m: print(m)) if args.verbose else None
    history, _ = train(model, mixture, opt_cfg, int(cfg["train"]["steps"]),
                       int(cfg["train"]["eval_every"]), seed=int(cfg["seed"]),
                       out_dir=out, batch_size=int(cfg["train"]["batch_size"]),
                       log=log)
    best = max(r.macro_avg for r in history)
    _say(args, f"run complete: best macro-average {best:.4f}, "
               f"gate {model_cfg.gate.kind}/{model_cfg.gate.variant}, "
               f"params added {model.added_param_count()}, artifacts in {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load(args)
    model_cfg = config_mod.build_model_config(cfg)
    mixture = config_mod.build_mixture(cfg)
    model = TransformerModel(model_cfg, seed=int(cfg["seed"]))
    load_into_model(args.checkpoint, model)
    scores = {t.name: evaluate(model, t) for t in mixture.tasks}
    macro = float(np.mean(list(scores.values())))
    for name, acc in scores.items():
        _say(args, f"{name:10s} {acc:.4f}")
    _say(args, f"{'macro_avg':10s} {macro:.4f}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args)
    plan = config_mod.build_sweep_plan(cfg)
    out = _out_dir(cfg)
    workers = max(1, int(os.environ.get("HYPERGRID_THREADS", "1")))
    log = (lambda m: print(m)) if args.verbose else None
    result = sweep_mod.run_sweep(plan, out, max_workers=workers, log=log)
    files = sweep_mod.emit_plotdata(result, os.path.join(out, "plotdata"))
    _say(args, f"sweep complete: {len(result.cells)} cells, "
               f"{len(result.invalid)} skipped, {len(files)} plot files in {out}")
    _say(args, "note: with GLUE-style mixtures the published study found small "
               "fan-out grids (around 32) effective; synthetic task trends may differ")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = _load(args)
    model_cfg = config_mod.build_model_config(cfg)
    mixture = config_mod.build_mixture(cfg)
    model = TransformerModel(model_cfg, seed=int(cfg["seed"]))
    gc_cfg = cfg["gradcheck"]
    jitter = float(gc_cfg["jitter"])
    if jitter > 0:  # move off the symmetric init so gradients are informative
        rng = np.random.default_rng(int(gc_cfg["seed"]))
        for p in model.named_parameters().values():
            p.data += rng.normal(0.0, jitter, p.data.shape)
    batch = [mixture.tasks[0].dev[0], mixture.tasks[1].dev[0]]
    reports = gradcheck.check_model(model, batch,
                                    coordinate_budget=int(gc_cfg["budget"]),
                                    seed=int(gc_cfg["seed"]))
    for r in reports:
        _say(args, r.line())
    out = cfg["out_dir"]
    if out is not None:
        os.makedirs(out, exist_ok=True)
        with open(os.path.join(out, "gradcheck.txt"), "w") as f:
            f.write("\n".join(r.line() for r in reports) + "\n")
    if all(r.passed for r in reports):
        _say(args, "gradcheck: all blocks pass")
        return EXIT_OK
    print("gradcheck: FAILED", file=sys.stderr)
    return EXIT_RUNTIME


def cmd_param_audit(args) -> int:
    cfg = _load(args)
    model_cfg = config_mod.build_model_config(cfg)
    print(audit.format_audit(model_cfg))
    return EXIT_OK


_COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "gradcheck": cmd_gradcheck,
    "param-audit": cmd_param_audit,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, DimensionError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, CheckpointFormatError, FloatingPointError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
