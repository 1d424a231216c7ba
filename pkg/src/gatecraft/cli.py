"""Command-line surface: profile, train, prune, extract, finetune, report, sweep.

Exit codes: 0 success, 2 usage or config error, 3 sparsity constraint not met.
All randomness flows from the config seed; outputs land in --out-dir (or the
GATECRAFT_OUT environment variable).
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import os
import sys

import numpy as np

from .arch import ArchDescriptor
from .extract import binarize, extract, write_architecture_report
from .pipeline import (
    PruneRunConfig,
    RunState,
    load_checkpoint,
    run_pipeline,
    save_checkpoint,
)
from .sparsity import exact_profile, mac_budget_from_sparsity

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONSTRAINT = 3

SPARSITY_TOLERANCE = 0.02
DEFAULT_GRID_CAP = 16


class CliError(Exception):
    def __init__(self, message, code=EXIT_USAGE):
        super().__init__(message)
        self.code = code


def _load_json(path, kind):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise CliError(f"{kind} file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise CliError(f"malformed JSON in {path}: line {e.lineno} column {e.colno}: {e.msg}") from None


def _apply_overrides(doc, overrides):
    """Apply key=value pairs with dotted paths onto a parsed JSON document."""
    doc = copy.deepcopy(doc)
    for item in overrides or ():
        if "=" not in item:
            raise CliError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw  # bare strings stay strings
        node = doc
        parts = key.split(".")
        for p in parts[:-1]:
            if not isinstance(node, dict) or p not in node:
                raise CliError(f"override path {key!r} does not exist in the config")
            node = node[p]
        if not isinstance(node, dict) or parts[-1] not in node:
            raise CliError(f"override path {key!r} does not exist in the config")
        node[parts[-1]] = value
    return doc


def _config_from_args(args):
    doc = _load_json(args.config, "config")
    doc = _apply_overrides(doc, getattr(args, "override", None))
    try:
        return PruneRunConfig.from_dict(doc)
    except (ValueError, TypeError) as e:
        raise CliError(f"invalid run config: {e}") from None


def _out_dir(args):
    out = args.out_dir or os.environ.get("GATECRAFT_OUT") or "runs/latest"
    os.makedirs(out, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# subcommands


def cmd_profile(args):
    doc = _load_json(args.arch, "architecture")
    try:
        desc = ArchDescriptor.from_dict(doc)
    except (ValueError, TypeError, KeyError) as e:
        raise CliError(f"invalid architecture description: {e}") from None
    prof = exact_profile(desc, args.seconds)
    print(f"total MACs: {prof.macs} ({prof.macs / 1e9:.2f} GMAC at {args.seconds:g} s)")
    print(f"total params: {prof.params} ({prof.params / 1e6:.2f} M)")
    print(f"cnn mac share: {prof.cnn_mac_share:.1%}")
    print(f"cnn param share: {prof.cnn_param_share:.1%}")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["block_id", "kind", "params", "macs", "mac_share"])
            for b in prof.blocks:
                w.writerow([b.block_id, b.kind, b.params, b.macs, f"{b.macs / prof.macs:.6f}"])
        print(f"per-block profile written to {args.out}")
    return EXIT_OK


def cmd_train(args):
    config = _config_from_args(args)
    out = _out_dir(args)
    result = run_pipeline(config, out, stages=("train",))
    print(f"train: eval accuracy {result.stages['train'].eval_accuracy:.4f}; "
          f"checkpoint {result.stages['train'].checkpoint}")
    return EXIT_OK


def cmd_prune(args):
    config = _config_from_args(args)
    out = _out_dir(args)
    train_ckpt = os.path.join(out, "train.npz")
    if not args.from_scratch and not os.path.exists(train_ckpt):
        raise CliError(
            f"no train-stage checkpoint at {train_ckpt}; run `gatecraft train` first "
            "or pass --from-scratch"
        )
    if args.from_scratch:
        from .model import GatedModel

        model = GatedModel(config.arch, config.num_classes, seed=config.seed,
                           gate_params=config.gate_params())
    else:
        model = load_checkpoint(train_ckpt).model
    result = run_pipeline(config, out, stages=("prune",), model=model)
    gap = result.sparsity_gap
    print(f"prune: sparsity {result.achieved_sparsity:.4f} "
          f"(|gap| {gap:.4f}), extracted MACs {result.extracted_macs}")
    if gap > SPARSITY_TOLERANCE:
        print(f"constraint not met: |s - t| = {gap:.4f} > {SPARSITY_TOLERANCE}", file=sys.stderr)
        return EXIT_CONSTRAINT
    return EXIT_OK


def cmd_finetune(args):
    config = _config_from_args(args)
    out = _out_dir(args)
    ckpt = os.path.join(out, "extracted.npz")
    if not os.path.exists(ckpt):
        raise CliError(f"no extracted checkpoint at {ckpt}; run `gatecraft prune` first")
    model = load_checkpoint(ckpt).model
    result = run_pipeline(config, out, stages=("finetune",), model=model)
    print(f"finetune: eval accuracy {result.stages['finetune'].eval_accuracy:.4f}")
    return EXIT_OK


def cmd_extract(args):
    loaded = load_checkpoint(args.checkpoint)
    if loaded.manifest["pruned"]:
        raise CliError("checkpoint already holds an extracted model")
    model = loaded.model
    mask = binarize(model, loaded.config.threshold)
    extracted = extract(model, mask)
    out = _out_dir(args)
    state = RunState(loaded.config, extracted, None, None, None, None)
    path = os.path.join(out, "extracted.npz")
    save_checkpoint(path, state, stage="extract", step=0)
    rows = write_architecture_report(extracted, os.path.join(out, "architecture.csv"))
    kept = sum(r.kept for r in rows)
    orig = sum(r.original for r in rows)
    print(f"extracted model: {kept}/{orig} units kept; checkpoint {path}")
    return EXIT_OK


def cmd_report(args):
    loaded = load_checkpoint(args.checkpoint)
    if not loaded.manifest["pruned"]:
        raise CliError("architecture reports need an extracted-model checkpoint")
    out = _out_dir(args)
    path = os.path.join(out, "architecture.csv")
    rows = write_architecture_report(loaded.model, path)
    for r in rows:
        print(f"{r.layer_kind:18s} {r.index:3d}  kept {r.kept:5d} / {r.original:5d}  "
              f"mac share {r.kept_mac_share:.3f}")
    print(f"report written to {path}")
    return EXIT_OK


def _parse_grid(spec):
    """--grid 't_cnn=0.2,0.4;t_trans=0.3,0.5' -> (cnn values, trans values)."""
    values = {}
    for part in spec.split(";"):
        if "=" not in part:
            raise CliError(f"grid component {part!r} is not of the form name=v1,v2,...")
        name, vals = part.split("=", 1)
        name = name.strip()
        if name not in ("t_cnn", "t_trans"):
            raise CliError(f"unknown grid axis {name!r}; expected t_cnn and t_trans")
        try:
            values[name] = [float(v) for v in vals.split(",") if v.strip() != ""]
        except ValueError:
            raise CliError(f"grid axis {name!r} has non-numeric values: {vals!r}") from None
    if "t_cnn" not in values or "t_trans" not in values:
        raise CliError("grid needs both t_cnn=... and t_trans=...")
    if not values["t_cnn"] or not values["t_trans"]:
        raise CliError("grid axes must be nonempty")
    return values["t_cnn"], values["t_trans"]


def pareto_flags(points):
    """points: (macs, accuracy) pairs; True where no other point dominates."""
    flags = []
    for i, (ci, mi) in enumerate(points):
        dominated = any(
            cj <= ci and mj >= mi and (cj < ci or mj > mi)
            for j, (cj, mj) in enumerate(points)
            if j != i
        )
        flags.append(not dominated)
    return flags


def cmd_sweep(args):
    config = _config_from_args(args)
    if config.regime.kind != "size_separate":
        raise CliError("sweep requires the separate-sizes regime")
    cnn_grid, trans_grid = _parse_grid(args.grid)
    cells = [(tc, tt) for tc in cnn_grid for tt in trans_grid]
    if len(cells) > args.max_cells:
        raise CliError(f"grid of {len(cells)} cells exceeds the cap of {args.max_cells}")
    out = _out_dir(args)

    rows = []
    for index, (t_cnn, t_trans) in enumerate(cells):
        cell_cfg = _cell_config(config, t_cnn, t_trans, config.seed + index)
        cell_dir = os.path.join(out, f"cell_{index:02d}")
        result = run_pipeline(cell_cfg, cell_dir, stages=("train", "prune"))
        acc = _extracted_accuracy(result.model, cell_cfg)
        rows.append(
            {
                "t_cnn": t_cnn,
                "t_trans": t_trans,
                "macs": result.extracted_macs,
                "accuracy": acc,
                "gap": result.sparsity_gap,
            }
        )
        print(f"cell {index}: t_cnn={t_cnn} t_trans={t_trans} "
              f"macs={result.extracted_macs} acc={acc:.4f}")

    flags = pareto_flags([(r["macs"], r["accuracy"]) for r in rows])
    path = os.path.join(out, "sweep.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_cnn", "t_trans", "macs", "accuracy", "gap", "pareto"])
        for r, f in zip(rows, flags):
            w.writerow([r["t_cnn"], r["t_trans"], r["macs"], repr(r["accuracy"]),
                        repr(r["gap"]), int(f)])
    print(f"sweep results written to {path}")
    return EXIT_OK


def _cell_config(config, t_cnn, t_trans, seed):
    doc = config.to_dict()
    doc["schedule"]["final_target"] = [t_cnn, t_trans]
    doc["seed"] = seed
    return PruneRunConfig.from_dict(doc)


def _extracted_accuracy(model, config):
    from .pipeline import evaluate

    return evaluate(model, config, mode="dense")


# ---------------------------------------------------------------------------
# argument parsing


def build_parser():
    parser = argparse.ArgumentParser(
        prog="gatecraft",
        description="Structured pruning of conv+transformer networks under "
        "constrained sparsity targets.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("profile", help="MAC/param profile of an architecture JSON")
    p.add_argument("arch", help="path to an architecture description JSON")
    p.add_argument("--seconds", type=float, default=10.0, help="virtual audio length")
    p.add_argument("--out", help="write a per-block CSV here")
    p.set_defaults(fn=cmd_profile)

    def run_args(p, ckpt=False):
        p.add_argument("config", help="path to a run config JSON")
        p.add_argument("--out-dir", help="output directory (default $GATECRAFT_OUT or runs/latest)")
        p.add_argument("--override", action="append", metavar="KEY=VALUE",
                       help="dotted-path config override, e.g. schedule.final_target=0.3")

    p = sub.add_parser("train", help="stage 1: train the dense model")
    run_args(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("prune", help="stage 2: constrained pruning + extraction")
    run_args(p)
    p.add_argument("--from-scratch", action="store_true",
                   help="prune an untrained model instead of loading train.npz")
    p.set_defaults(fn=cmd_prune)

    p = sub.add_parser("finetune", help="stage 3: fine-tune the extracted model")
    run_args(p)
    p.set_defaults(fn=cmd_finetune)

    p = sub.add_parser("extract", help="binarize gates and extract a checkpoint")
    p.add_argument("checkpoint", help="path to a gated-model checkpoint")
    p.add_argument("--out-dir")
    p.set_defaults(fn=cmd_extract)

    p = sub.add_parser("report", help="per-layer architecture report of an extracted model")
    p.add_argument("checkpoint", help="path to an extracted-model checkpoint")
    p.add_argument("--out-dir")
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("sweep", help="grid search over separate CNN/transformer targets")
    run_args(p)
    p.add_argument("--grid", required=True, metavar="t_cnn=..,..;t_trans=..,..",
                   help="semicolon-separated axes with comma-separated values")
    p.add_argument("--max-cells", type=int, default=DEFAULT_GRID_CAP)
    p.set_defaults(fn=cmd_sweep)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 2 on usage errors already; normalize other codes
        return EXIT_USAGE if e.code not in (0,) else 0
    try:
        return args.fn(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except Exception as e:  # config/state errors surface as exit 2
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
