"""Command line front end.

Subcommands: train, eval, corrupt-eval, ood-eval, probe, gen-data, gradcheck.

Exit codes: 0 success, 2 configuration problem, 3 numeric failure during
training/evaluation, 4 malformed file or checkpoint, 5 a requested check
failed (gradcheck over tolerance).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import checkpoint as ckpt
from . import config as cfgmod
from . import evaluation as ev
from .datasets import write_idx
from .errors import ConfigError, FormatError, NumericError, TrainingAbort, UsageError
from .gradcheck import run_gradcheck
from .training import METRICS_HEADER, metrics_line, train

GRADCHECK_TOL = 1e-3


def _add_train_overrides(p):
    p.add_argument("--config", help="key = value config file")
    for key in cfgmod.KEYS:
        p.add_argument(f"--{key.replace('_', '-')}", dest=key, default=None,
                       help=f"override {key} (default {cfgmod.DEFAULTS[key]})")


def _resolved_from_args(args) -> cfgmod.RunConfig:
    file_vals = cfgmod.load_config_file(args.config) if args.config else {}
    overrides = {k: getattr(args, k) for k in cfgmod.KEYS if getattr(args, k, None) is not None}
    return cfgmod.resolve(file_vals, overrides)


def _load_model(path):
    config_text, tensors = ckpt.load_checkpoint(path)
    cfg = cfgmod.resolve(cfgmod.parse_kv_text(config_text, source=path))
    ds = cfgmod.build_dataset(cfg.dataset)
    model = cfgmod.build_model(cfg.model, ds, cfg.seed)
    named = dict(model.named_parameters())
    if set(named) != set(tensors):
        raise FormatError(f"{path}: checkpoint tensors do not match the model "
                          f"({sorted(tensors)} vs {sorted(named)})")
    for name, arr in tensors.items():
        if named[name].shape != arr.shape:
            raise FormatError(f"{path}: tensor {name!r} has shape {arr.shape}, "
                              f"model expects {tuple(named[name].shape)}")
        named[name].data = arr.astype(np.float32)
    return model, cfg, ds


def _eval_dataset(args, cfg):
    if getattr(args, "dataset", None):
        return cfgmod.build_dataset(args.dataset)
    return cfgmod.build_dataset(cfg.dataset)


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_train(args) -> int:
    cfg = _resolved_from_args(args)
    ds = cfgmod.build_dataset(cfg.dataset)
    train_ds, val_ds = (ds, None)
    if args.val_fraction > 0:
        from .datasets import split
        train_ds, val_ds = split(ds, (1.0 - args.val_fraction, args.val_fraction), seed=cfg.seed)
    model = cfgmod.build_model(cfg.model, train_ds, cfg.seed)
    os.makedirs(cfg.out_dir, exist_ok=True)
    resolved = cfgmod.render_resolved(cfg)
    with open(os.path.join(cfg.out_dir, "config.resolved"), "w") as fh:
        fh.write(resolved)
    metrics_path = os.path.join(cfg.out_dir, "metrics.csv")
    with open(metrics_path, "w") as fh:
        fh.write(METRICS_HEADER + "\n")
        fh.flush()

        def on_record(rec):
            fh.write(metrics_line(rec) + "\n")
            fh.flush()

        train(model, train_ds, val_ds, cfgmod.to_train_config(cfg), on_record=on_record)
    ckpt_path = os.path.join(cfg.out_dir, "model.semx")
    ckpt.save_checkpoint(ckpt_path, [(n, t.data) for n, t in model.named_parameters()], resolved)
    print(f"trained {cfg.epochs} epochs; checkpoint {ckpt_path}, metrics {metrics_path}")
    return 0


def cmd_eval(args) -> int:
    model, cfg, _ = _load_model(args.checkpoint)
    ds = _eval_dataset(args, cfg)
    payload = {"accuracy": ev.accuracy(model, ds), "dataset": args.dataset or cfg.dataset,
               "checkpoint": args.checkpoint}
    out = args.out or os.path.join(os.path.dirname(args.checkpoint) or ".", "eval.json")
    _write_json(out, payload)
    print(json.dumps(payload, sort_keys=True))
    return 0


def cmd_corrupt_eval(args) -> int:
    model, cfg, _ = _load_model(args.checkpoint)
    ds = _eval_dataset(args, cfg)
    result = ev.corruption_suite_eval(model, ds, seed=args.seed)
    grid = {}
    for (kind, sev), acc in result.cells.items():
        grid.setdefault(kind, {})[str(sev)] = acc
    payload = {"per_kind_per_severity": grid, "mean": result.mean,
               "dataset": args.dataset or cfg.dataset, "checkpoint": args.checkpoint}
    out = args.out or os.path.join(os.path.dirname(args.checkpoint) or ".", "corrupt_eval.json")
    _write_json(out, payload)
    print(json.dumps({"mean": result.mean}, sort_keys=True))
    return 0


def cmd_ood_eval(args) -> int:
    model, cfg, _ = _load_model(args.checkpoint)
    id_ds = cfgmod.build_dataset(args.id_dataset) if args.id_dataset else cfgmod.build_dataset(cfg.dataset)
    ood_ds = cfgmod.build_dataset(args.ood_dataset)
    id_scores = ev.msp_scores(model, id_ds)
    ood_scores = ev.msp_scores(model, ood_ds)
    payload = {
        "auroc": ev.auroc(id_scores, ood_scores),
        "id_dataset": args.id_dataset or cfg.dataset,
        "ood_dataset": args.ood_dataset,
        "id_mean_msp": float(np.mean(id_scores)),
        "ood_mean_msp": float(np.mean(ood_scores)),
    }
    out = args.out or os.path.join(os.path.dirname(args.checkpoint) or ".", "ood_eval.json")
    _write_json(out, payload)
    print(json.dumps({"auroc": payload["auroc"]}, sort_keys=True))
    return 0


def cmd_probe(args) -> int:
    model, cfg, _ = _load_model(args.checkpoint)
    ds = _eval_dataset(args, cfg)
    if not (0 <= args.class_a < ds.class_count) or not (0 <= args.class_b < ds.class_count):
        raise UsageError(f"classes must be < {ds.class_count}")
    if args.class_a == args.class_b:
        raise UsageError("probe needs two distinct classes")
    ids = ds.class_ids()
    idx_a = np.flatnonzero(ids == args.class_a)
    idx_b = np.flatnonzero(ids == args.class_b)
    if idx_a.size < args.pairs or idx_b.size < args.pairs:
        raise UsageError(f"need {args.pairs} samples per class, have "
                         f"{idx_a.size} and {idx_b.size}")
    rng = np.random.default_rng([args.seed, 0x9B])
    sel_a = rng.choice(idx_a, size=args.pairs, replace=False)
    sel_b = rng.choice(idx_b, size=args.pairs, replace=False)
    xa = ds.images.data[sel_a]
    xb = ds.images.data[sel_b]
    if not (0.0 < args.lambda_step <= 1.0):
        raise UsageError(f"lambda-step must lie in (0, 1], got {args.lambda_step}")
    steps = int(round(1.0 / args.lambda_step))
    if abs(steps * args.lambda_step - 1.0) > 1e-9:
        raise UsageError(f"lambda-step must divide 1, got {args.lambda_step}")
    grid = [round(i * args.lambda_step, 10) for i in range(steps + 1)]
    curve = ev.equivariance_gap(model, xa, xb, grid)
    os.makedirs(args.out_dir, exist_ok=True)
    curve_path = os.path.join(args.out_dir, "gap_curve.csv")
    ev.write_gap_curve_csv(curve, curve_path)

    # 2-d projection of the mixed representations across the whole grid
    reps = []
    tags = []
    for lam in grid:
        xm = (lam * xa + (1.0 - lam) * xb).astype(np.float32)
        reps.append(ev._batched_reps(model, xm))
        tags.extend([(lam, args.class_a if lam >= 0.5 else args.class_b)] * args.pairs)
    proj = ev.pca_project(np.concatenate(reps, axis=0))
    proj_path = os.path.join(args.out_dir, "projection.csv")
    with open(proj_path, "w") as fh:
        fh.write("x,y,lambda,class\n")
        for (px, py), (lam, cls) in zip(proj, tags):
            fh.write(f"{float(px)!r},{float(py)!r},{float(lam)!r},{cls}\n")
    print(f"gap curve {curve_path}; projection {proj_path}")
    return 0


def cmd_gen_data(args) -> int:
    ds = cfgmod.build_dataset(args.dataset)
    write_idx(ds, args.out_images, args.out_labels)
    print(f"wrote {ds.n} samples to {args.out_images} / {args.out_labels}")
    return 0


def cmd_gradcheck(args) -> int:
    err, worst, per_tensor = run_gradcheck(seed=args.seed)
    for name in sorted(per_tensor):
        print(f"  {name:12s} rel err {per_tensor[name]:.3e}")
    print(f"max relative gradient error {err:.3e} (worst tensor: {worst}, tolerance {GRADCHECK_TOL:.0e})")
    if err > GRADCHECK_TOL:
        print("gradcheck FAILED", file=sys.stderr)
        return 5
    print("gradcheck passed")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="semix", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model and save checkpoint + metrics")
    _add_train_overrides(t)
    t.add_argument("--val-fraction", type=float, default=0.0,
                   help="carve out a validation split of this fraction")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="clean accuracy of a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--dataset", help="dataset spec (defaults to the training one)")
    e.add_argument("--out", help="where to write eval.json")
    e.set_defaults(fn=cmd_eval)

    c = sub.add_parser("corrupt-eval", help="accuracy over the corruption grid")
    c.add_argument("--checkpoint", required=True)
    c.add_argument("--dataset")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out")
    c.set_defaults(fn=cmd_corrupt_eval)

    o = sub.add_parser("ood-eval", help="MSP AUROC of ID vs OOD datasets")
    o.add_argument("--checkpoint", required=True)
    o.add_argument("--id-dataset")
    o.add_argument("--ood-dataset", required=True)
    o.add_argument("--out")
    o.set_defaults(fn=cmd_ood_eval)

    pr = sub.add_parser("probe", help="equivariance gap curve + 2-d projection")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--dataset")
    pr.add_argument("--class-a", type=int, default=0)
    pr.add_argument("--class-b", type=int, default=1)
    pr.add_argument("--pairs", type=int, default=200)
    pr.add_argument("--lambda-step", type=float, default=0.1)
    pr.add_argument("--seed", type=int, default=0)
    pr.add_argument("--out-dir", required=True)
    pr.set_defaults(fn=cmd_probe)

    g = sub.add_parser("gen-data", help="write a dataset as an IDX pair")
    g.add_argument("--dataset", required=True)
    g.add_argument("--out-images", required=True)
    g.add_argument("--out-labels", required=True)
    g.set_defaults(fn=cmd_gen_data)

    gc = sub.add_parser("gradcheck", help="finite-difference audit of the loss gradient")
    gc.add_argument("--seed", type=int, default=0)
    gc.set_defaults(fn=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 2
    except (TrainingAbort, NumericError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 3
    except FormatError as e:
        print(f"format error: {e}", file=sys.stderr)
        return 4
    except FileNotFoundError as e:
        print(f"format error: missing file {e.filename}", file=sys.stderr)
        return 4


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
