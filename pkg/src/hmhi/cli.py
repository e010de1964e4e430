"""Command-line entry point: generate | train | eval | gradcheck.

Every command takes the run configuration from an optional JSON file, then
``--set key=value`` overrides (dotted keys reach nested fields, e.g.
``--set loss.w_dice=0.5``), then the dedicated flags.  The effective
configuration is written to ``<out>/config.json``.

Exit codes: 0 success, 1 usage error, 2 numerical-check failure.
"""
import argparse
import csv
import glob
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import tensor as T
from .checks import run_gradcheck
from .io import load_clip, save_clip, write_probability
from .metrics import MetricReport, write_jsonl
from .pipeline import (HMHINet, RunConfig, load_into, make_optimizer, predict, save_checkpoint,
                       train_step)
from .synth import SCENARIOS, generate_clip
from .tensor import ShapeError

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2

# cell name -> RunConfig overrides; mirrors the memory / interaction / input ablations
GRID = {
    "baseline": dict(memory_levels=(), interaction="off"),
    "memory_only": dict(memory_levels=(2, 4), interaction="off"),
    "memory_l2": dict(memory_levels=(2,), interaction="off"),
    "memory_l4": dict(memory_levels=(4,), interaction="off"),
    "s2h_only": dict(memory_levels=(2, 4), interaction="s2h_only"),
    "h2s_only": dict(memory_levels=(2, 4), interaction="h2s_only"),
    "swapped": dict(memory_levels=(2, 4), interaction="swapped"),
    "image_only": dict(input_mode="image"),
    "flow_only": dict(input_mode="flow"),
    "full": dict(),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------- config

def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _parse_levels(text):
    text = text.strip()
    if not text or text.lower() in ("none", "[]"):
        return ()
    try:
        return tuple(sorted({int(v) for v in text.replace(" ", "").split(",")}))
    except ValueError:
        raise UsageError(f"bad --memory-levels {text!r}; expected e.g. '2,4' or ''") from None


def build_config(args):
    d = RunConfig().to_dict()
    if args.config:
        try:
            with open(args.config) as fp:
                loaded = json.load(fp)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        loaded = loaded.get("config", loaded)  # accept an echoed config.json as-is
        for key, value in loaded.items():
            if isinstance(value, dict) and isinstance(d.get(key), dict):
                d[key].update(value)
            else:
                d[key] = value
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        *path, leaf = key.strip().split(".")
        node = d
        for part in path:
            if not isinstance(node.get(part), dict):
                raise UsageError(f"unknown config section {part!r} in {key!r}")
            node = node[part]
        if leaf not in node:
            raise UsageError(f"unknown config key {key!r}")
        node[leaf] = _parse_value(value)
    flags = {"seed": args.seed, "side": args.side, "length": args.length, "capacity": args.capacity,
             "stride": args.stride, "interaction": args.interaction, "input_mode": args.input_mode,
             "steps": getattr(args, "steps", None)}
    d.update({k: v for k, v in flags.items() if v is not None})
    if args.memory_levels is not None:
        d["memory_levels"] = list(_parse_levels(args.memory_levels))
    try:
        return RunConfig.from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from None


def echo_config(out, command, cfg, extra=None):
    os.makedirs(out, exist_ok=True)
    snapshot = {"command": command, "config": cfg.to_dict(), **(extra or {})}
    with open(os.path.join(out, "config.json"), "w") as fp:
        json.dump(snapshot, fp, indent=2, sort_keys=True)
        fp.write("\n")


def find_manifests(paths):
    found = []
    for p in paths:
        if os.path.isdir(p):
            for f in sorted(glob.glob(os.path.join(p, "*.json"))):
                try:
                    with open(f) as fp:
                        if "frames" in json.load(fp):
                            found.append(f)
                except (OSError, json.JSONDecodeError):
                    continue
        elif os.path.isfile(p):
            found.append(p)
        else:
            raise UsageError(f"no such manifest or directory: {p}")
    if not found:
        raise UsageError(f"no clip manifests found in {paths}")
    return found


def load_clips(paths, cfg):
    clips = []
    for path in find_manifests(paths):
        clip = load_clip(path)
        side = clip.frames[0].shape[1]
        if side != cfg.side or clip.frames[0].shape[2] != cfg.side:
            raise UsageError(f"{path}: clip is {side}px but config side is {cfg.side}")
        clips.append((os.path.splitext(os.path.basename(path))[0], clip))
    return clips


def _window(clip, length):
    if len(clip) < length:
        raise UsageError(f"clip has {len(clip)} frames, training needs {length}")
    if len(clip) == length:
        return clip
    return type(clip)(clip.frames[:length], clip.flows[:length], clip.gt_masks[:length],
                      clip.seed, clip.scenario, max_mag=clip.max_mag)


# ---------------------------------------------------------------- commands

def cmd_generate(args):
    cfg = build_config(args)
    scenarios = SCENARIOS if args.scenario == "mixed" else (args.scenario,)
    echo_config(args.out, "generate", cfg, {"scenario": args.scenario, "count": args.count})
    for i in range(args.count):
        scenario = scenarios[i % len(scenarios)]
        try:
            clip = generate_clip(scenario, cfg.side, cfg.side, cfg.length, cfg.seed + i)
        except (ShapeError, ValueError) as exc:
            raise UsageError(str(exc)) from None
        path = save_clip(clip, args.out, f"clip_{i:03d}")
        print(f"wrote {path} ({scenario}, seed {cfg.seed + i})")
    return EXIT_OK


def train_model(cfg, clips, out=None, log_every=0, init=None):
    """Train on ``clips`` (cycled) for cfg.steps; returns (model, losses, best_step)."""
    model = HMHINet(cfg)
    if init:
        load_into(model, init)
    opt = make_optimizer(model)
    losses, best, best_step = [], np.inf, -1
    writer = None
    if out:
        csv_fp = open(os.path.join(out, "loss.csv"), "w", newline="")
        writer = csv.writer(csv_fp, lineterminator="\n")
        writer.writerow(["step", "loss"])
    t0 = time.perf_counter()
    try:
        for step in range(cfg.steps):
            clip = _window(clips[step % len(clips)], cfg.length)
            loss = train_step(clip, model, opt)
            losses.append(loss)
            if writer:
                writer.writerow([step + 1, repr(loss)])
            if loss < best:
                best, best_step = loss, step + 1
                if out:
                    save_checkpoint(model, os.path.join(out, "best.ckpt"))
            if log_every and (step + 1) % log_every == 0:
                print(f"step {step + 1:5d}  loss {loss:.6f}  ({time.perf_counter() - t0:.1f}s)")
    finally:
        if writer:
            csv_fp.close()
    if out:
        save_checkpoint(model, os.path.join(out, "final.ckpt"))
    return model, losses, best_step


def cmd_train(args):
    cfg = build_config(args)
    clips = [c for _, c in load_clips(args.data, cfg)]
    echo_config(args.out, "train", cfg, {"data": find_manifests(args.data), "init": args.init})
    _, losses, best_step = train_model(cfg, clips, args.out, args.log_every, args.init)
    if losses:
        print(f"trained {len(losses)} steps: first loss {losses[0]:.6f}, final {losses[-1]:.6f}, "
              f"best at step {best_step}")
    return EXIT_OK


def evaluate(model, named_clips, workers=1, oracle=False, dump=None):
    def one(item):
        name, clip = item
        probs = [g.astype(np.float64) for g in clip.gt_masks] if oracle else predict(clip, model)
        rep = MetricReport(name)
        for t, (p, g) in enumerate(zip(probs, clip.gt_masks)):
            rep.add(p, g)
            if dump:
                os.makedirs(os.path.join(dump, name), exist_ok=True)
                write_probability(os.path.join(dump, name, f"prob_{t:03d}.png"), p)
        return rep

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(one, named_clips))
    return [one(item) for item in named_clips]


def _print_summary(rep):
    s = rep.summary()
    print(f"{s['name']:<16s} J&F {s['J&F']:.4f}  J {s['J']:.4f}  F {s['F']:.4f}  "
          f"MAE {s['MAE']:.4f}  Fm {s['Fm']:.4f}  ({s['frames']} frames)")


def cmd_eval(args):
    cfg = build_config(args)
    if args.grid:
        return _eval_grid(args, cfg)
    clips = load_clips(args.data, cfg)
    echo_config(args.out, "eval", cfg, {"data": find_manifests(args.data),
                                        "checkpoint": args.checkpoint, "oracle": args.oracle})
    model = HMHINet(cfg)
    if args.checkpoint:
        try:
            load_into(model, args.checkpoint)
        except (KeyError, ShapeError, OSError) as exc:
            raise UsageError(f"cannot load checkpoint: {exc}") from None
    reports = evaluate(model, clips, args.workers, args.oracle,
                       os.path.join(args.out, "probs") if args.dump_probs else None)
    path = os.path.join(args.out, "metrics.jsonl")
    write_jsonl(reports, path)
    for rep in reports + [MetricReport.aggregate(reports)]:
        _print_summary(rep)
    print(f"wrote {path}")
    return EXIT_OK


def _eval_grid(args, cfg):
    if not args.train_data:
        raise UsageError("--grid needs --train-data")
    cells = args.cells.split(",") if args.cells else list(GRID)
    unknown = [c for c in cells if c not in GRID]
    if unknown:
        raise UsageError(f"unknown grid cell(s) {unknown}; choose from {list(GRID)}")
    train = [c for _, c in load_clips(args.train_data, cfg)]
    evals = load_clips(args.data, cfg)
    echo_config(args.out, "eval --grid", cfg, {"cells": cells, "train_data": find_manifests(args.train_data),
                                               "data": find_manifests(args.data)})
    grid_dir = os.path.join(args.out, "grid")
    os.makedirs(grid_dir, exist_ok=True)
    rows = []
    for cell in cells:
        cell_cfg = cfg.with_overrides(**GRID[cell])
        model, losses, _ = train_model(cell_cfg, train)
        agg = MetricReport.aggregate(evaluate(model, evals, args.workers)).summary()
        agg.pop("per_frame")
        row = {"cell": cell, "overrides": {k: list(v) if isinstance(v, tuple) else v
                                           for k, v in GRID[cell].items()},
               "steps": cell_cfg.steps, "final_loss": losses[-1] if losses else None,
               "eval_clips": len(evals), **{k: agg[k] for k in ("J", "F", "J&F", "MAE", "Fm")}}
        with open(os.path.join(grid_dir, f"{cell}.json"), "w") as fp:
            json.dump(row, fp, indent=2, sort_keys=True)
            fp.write("\n")
        rows.append(row)
        print(f"{cell:<12s} J {row['J']:.4f}  F {row['F']:.4f}  J&F {row['J&F']:.4f}")
    with open(os.path.join(args.out, "ablation.jsonl"), "w") as fp:
        for row in rows:
            fp.write(json.dumps(row, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_gradcheck(args):
    cfg = build_config(args)
    echo_config(args.out, "gradcheck", cfg, {"inject_bug": args.inject_bug, "eps": args.eps,
                                             "tol": args.tol, "model_entries": args.model_entries})
    results = run_gradcheck(seed=cfg.seed, eps=args.eps, tol=args.tol, model_entries=args.model_entries,
                            model=not args.blocks_only, inject_bug=args.inject_bug)
    lines = []
    for name, rep, secs in results:
        w = rep.worst
        status = "PASS" if rep.passed else "FAIL"
        lines.append(f"{status} {name:<22s} worst rel {w.rel_error:.3e} ({w.name})  "
                     f"abs {w.max_abs_error:.3e}")
        print(f"{lines[-1]}  [{secs:.1f}s]")
        if args.verbose or not rep.passed:
            for line in rep.lines():
                if args.verbose or line.startswith("FAIL"):
                    print("    " + line)
    with open(os.path.join(args.out, "gradcheck.txt"), "w") as fp:
        fp.write("\n".join(lines) + "\n")
    ok = all(rep.passed for _, rep, _ in results)
    print("gradcheck " + ("passed" if ok else "FAILED"))
    return EXIT_OK if ok else EXIT_NUMERIC


# ---------------------------------------------------------------- parser

def make_parser():
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("configuration")
    g.add_argument("--config", help="JSON file with RunConfig fields (a config.json echo also works)")
    g.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override any config field; dotted keys for nested fields (repeatable)")
    g.add_argument("--out", default="runs/out", help="output directory (default: runs/out)")
    g.add_argument("--seed", type=int, help="random seed (default 0)")
    g.add_argument("--side", type=int, help="image side, multiple of 16 (default 64)")
    g.add_argument("--length", type=int, help="frames per clip L (default 5)")
    g.add_argument("--capacity", type=int, help="memory capacity N (default 5)")
    g.add_argument("--stride", type=int, help="memory update stride k (default 1)")
    g.add_argument("--interaction", help="standard | swapped | s2h_only | h2s_only | off (default standard)")
    g.add_argument("--memory-levels", help="comma list of pyramid levels with memory (default '2,4'; '' for none)")
    g.add_argument("--input-mode", help="both | image | flow (default both)")

    p = _Parser(prog="hmhi", description="Toy hierarchical-memory video segmentation.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("generate", parents=[common], help="render synthetic clips and manifests")
    s.add_argument("--scenario", default="translate", choices=SCENARIOS + ("mixed",))
    s.add_argument("--count", type=int, default=1, help="number of clips (default 1)")
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("train", parents=[common], help="train on clip manifests")
    s.add_argument("--data", nargs="+", required=True, help="manifest files or directories")
    s.add_argument("--steps", type=int, help="optimizer steps (default 2000)")
    s.add_argument("--init", help="start from this checkpoint")
    s.add_argument("--log-every", type=int, default=100)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint or run the ablation grid")
    s.add_argument("--data", nargs="+", required=True, help="manifest files or directories")
    s.add_argument("--checkpoint", help="checkpoint to evaluate (default: freshly initialised model)")
    s.add_argument("--oracle", action="store_true", help="score the ground-truth masks themselves")
    s.add_argument("--dump-probs", action="store_true", help="write 8-bit probability maps")
    s.add_argument("--workers", type=int, default=1, help="threads over sequences")
    s.add_argument("--grid", action="store_true", help="train and evaluate every ablation cell")
    s.add_argument("--cells", help=f"comma list of grid cells (default all: {','.join(GRID)})")
    s.add_argument("--train-data", nargs="+", help="training manifests for --grid")
    s.add_argument("--steps", type=int, help="training steps per grid cell")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of all gradients")
    s.add_argument("--eps", type=float, default=1e-5)
    s.add_argument("--tol", type=float, default=1e-4)
    s.add_argument("--model-entries", type=int, default=32, help="sampled entries per model tensor")
    s.add_argument("--blocks-only", action="store_true")
    s.add_argument("--inject-bug", action="store_true", help="negative control: corrupt matmul backward")
    s.add_argument("--verbose", action="store_true")
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None):
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"hmhi {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
