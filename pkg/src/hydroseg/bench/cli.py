"""Command-line entry point: ``hydroseg <command> ...``.

Exit codes: 0 success, 2 bad arguments or configuration, 3 unreadable or
degenerate data, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import re
import sys
from pathlib import Path

import numpy as np

from ..errors import ArgumentError, DegenerateInputError, FormatError, NumericalError, ResourceError
from ..fuse import fuse_majority, propagate
from ..phantom import PhantomConfig, load_dataset, make_dataset, subject_paths, write_dataset
from ..register import RegConfig, register, similarity_array
from ..segnet import TwoStageModel, infer, train_two_stage
from ..volcore import LabelMap, Volume3, read_mvol, write_mvol
from ..warpfield import warp_array
from .ablation import VARIANT_FLAGS, VARIANTS, BenchConfig, PropagationCache, atlases_for, modalities, run_ablation
from .config import apply_overrides, read_config
from .metrics import DiceReport
from .tables import render_tables, to_csv

EXIT_OK, EXIT_ARGS, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _range(text):
    parts = text.split(":")
    try:
        vals = [float(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected NUM or LO:HI, got {text!r}") from None
    if len(vals) == 1:
        return (vals[0], vals[0])
    if len(vals) == 2:
        return tuple(vals)
    raise argparse.ArgumentTypeError(f"expected NUM or LO:HI, got {text!r}")


def _read(path, kind):
    item = read_mvol(path)
    if not isinstance(item, kind):
        raise FormatError(f"{path} holds a {type(item).__name__}, expected a {kind.__name__}")
    return item


def bench_config(args) -> BenchConfig:
    cfg = BenchConfig()
    if getattr(args, "config", None):
        cfg = apply_overrides(cfg, read_config(args.config))
    overrides = {k: getattr(args, k) for k in ("seed", "steps") if getattr(args, k, None) is not None}
    return apply_overrides(cfg, overrides)


# ---------------------------------------------------------------------------
# commands


def cmd_phantom_generate(args):
    cfg = PhantomConfig(dims=(args.dims,) * 3, n_subjects=args.subjects, seed=args.seed,
                        deform_amplitude=args.amplitude, ventricle_scale=args.ventricle)
    subjects = make_dataset(cfg)
    manifest = write_dataset(subjects, args.out)
    print(f"wrote {len(subjects)} subjects to {args.out} ({manifest.name})")


def cmd_register(args):
    f, m = _read(args.fixed, Volume3), _read(args.moving, Volume3)
    cfg = RegConfig(mode=args.mode, lambda_smooth=args.reg_lambda, levels=args.levels, metric=args.metric)
    f1, m1 = f.channel(0), m.channel(0)
    phi = register(f1, m1, cfg)
    write_mvol(phi.to_volume(), args.out)
    fa, ma = f1.data[0].astype(np.float64), m1.data[0].astype(np.float64)
    before = similarity_array(fa, ma, cfg.metric)[0]
    after = similarity_array(fa, warp_array(ma[None], phi.vectors.astype(np.float64))[0], cfg.metric)[0]
    print(f"{cfg.metric}: identity {before:.6g} -> registered {after:.6g}; field written to {args.out}")


def cmd_fuse(args):
    query = _read(args.query, Volume3)
    atlases = load_dataset(args.atlas_dir)
    qpath = Path(args.query).resolve()
    atlases = [s for s in atlases if subject_paths(args.atlas_dir, s.index)[0].resolve() != qpath]
    if args.k < 1 or args.k > len(atlases):
        raise ArgumentError(f"--k must be between 1 and {len(atlases)} (atlases available)")
    reg = RegConfig(lambda_smooth=args.reg_lambda, levels=args.levels)
    props = [propagate((s.image, s.labels), query, reg) for s in atlases[: args.k]]
    consensus, prior = fuse_majority(props)
    write_mvol(prior.to_volume(), args.out_prior)
    write_mvol(consensus, args.out_label)
    print(f"fused {args.k} atlases; prior -> {args.out_prior}, consensus -> {args.out_label}")


def cmd_train(args):
    if args.variant not in VARIANT_FLAGS:
        raise ArgumentError(f"variant must be one of {', '.join(VARIANT_FLAGS)} for training")
    cfg = bench_config(args)
    subjects = load_dataset(args.data)
    hard, _ = VARIANT_FLAGS[args.variant]
    ids = list(range(len(subjects)))
    priors = None
    if hard:
        cache = PropagationCache(subjects, cfg.reg())
        priors = [cache.fuse(atlases_for(i, ids, cfg.k_atlases), i)[1] for i in ids]
    data = [(modalities(s), s.labels) for s in subjects]
    result = train_two_stage(data, priors, cfg.net(args.variant), cfg.sgd(), seed=cfg.seed, steps=cfg.steps,
                             flip=cfg.flip, use_hard=hard, log_every=args.log_every)
    result.model.save(args.out)
    c = result.combined_loss
    print(f"trained {cfg.steps} steps: combined loss {c[0]:.4f} -> {c[-1]:.4f}; checkpoint {args.out}")


def cmd_infer(args):
    model = TwoStageModel.load(args.model)
    cfg = bench_config(args)
    subjects = load_dataset(args.data)
    pos = {s.index: i for i, s in enumerate(subjects)}
    if args.subject not in pos:
        raise ArgumentError(f"subject {args.subject} not found in {args.data}")
    q = pos[args.subject]
    prior = None
    if model.use_hard:
        cache = PropagationCache(subjects, cfg.reg())
        prior = cache.fuse(atlases_for(q, list(range(len(subjects))), cfg.k_atlases), q)[1]
    labels = infer(model, modalities(subjects[q]), prior)
    write_mvol(labels, args.out)
    print(f"labels for subject {args.subject} written to {args.out}")


_SUBJ = re.compile(r"subj_(\d+)_")


def cmd_evaluate(args):
    report = DiceReport("evaluate")
    preds = sorted(Path(args.pred_dir).glob("*.mvol"))
    matched = 0
    for p in preds:
        m = _SUBJ.match(p.name)
        if not m:
            continue
        idx = int(m.group(1))
        truth_path = subject_paths(args.truth_dir, idx)[1]
        if not truth_path.exists():
            raise FormatError(f"no ground truth for {p.name} (looked for {truth_path})")
        report.add(idx, 0, _read(p, LabelMap), _read(truth_path, LabelMap))
        matched += 1
    if not matched:
        raise ArgumentError(f"no subj_<i>_*.mvol label files in {args.pred_dir}")
    Path(args.out).write_text(to_csv([report]))
    print(render_tables([report]), end="")


def cmd_ablation(args):
    cfg = bench_config(args)
    subjects = load_dataset(args.data)
    variants = tuple(args.variants.split(",")) if args.variants else VARIANTS
    reports = run_ablation(subjects, cfg, args.out_dir, variants, log=lambda s: print(s, flush=True))
    print(render_tables(reports), end="")


# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="hydroseg", description="Desk-scale atlas-guided segmentation pipeline.")
    sub = p.add_subparsers(dest="command", required=True)

    ph = sub.add_parser("phantom", help="synthetic dataset tools")
    phs = ph.add_subparsers(dest="action", required=True)
    g = phs.add_parser("generate", help="write a phantom dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--subjects", type=int, default=21)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--dims", type=int, default=32)
    g.add_argument("--amplitude", type=_range, default=(0.0, 3.0), help="NUM or LO:HI voxels")
    g.add_argument("--ventricle", type=_range, default=(1.0, 2.5), help="NUM or LO:HI scale")
    g.set_defaults(func=cmd_phantom_generate)

    r = sub.add_parser("register", help="deformably register two volumes (channel 0)")
    r.add_argument("--fixed", required=True)
    r.add_argument("--moving", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--mode", choices=("direct", "amortized"), default="direct")
    r.add_argument("--lambda", dest="reg_lambda", type=float, default=0.01)
    r.add_argument("--levels", type=int, default=3)
    r.add_argument("--metric", choices=("mse", "ncc"), default="mse")
    r.set_defaults(func=cmd_register)

    f = sub.add_parser("fuse", help="propagate K atlases onto a query and majority-vote")
    f.add_argument("--query", required=True)
    f.add_argument("--atlas-dir", required=True)
    f.add_argument("--k", type=int, default=5)
    f.add_argument("--out-prior", required=True)
    f.add_argument("--out-label", required=True)
    f.add_argument("--lambda", dest="reg_lambda", type=float, default=0.01)
    f.add_argument("--levels", type=int, default=3)
    f.set_defaults(func=cmd_fuse)

    t = sub.add_parser("train", help="train the two-stage segmenter on a dataset directory")
    t.add_argument("--data", required=True)
    t.add_argument("--variant", required=True, choices=tuple(VARIANT_FLAGS))
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--steps", type=int)
    t.add_argument("--config")
    t.add_argument("--log-every", type=int, default=0)
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", help="label one subject with a trained checkpoint")
    i.add_argument("--model", required=True)
    i.add_argument("--subject", type=int, required=True)
    i.add_argument("--data", required=True)
    i.add_argument("--out", required=True)
    i.add_argument("--config")
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("evaluate", help="Dice of predicted label maps against ground truth")
    e.add_argument("--pred-dir", required=True)
    e.add_argument("--truth-dir", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_evaluate)

    a = sub.add_parser("ablation", help="five-fold ablation over all variants")
    a.add_argument("--data", required=True)
    a.add_argument("--out-dir", required=True)
    a.add_argument("--seed", type=int)
    a.add_argument("--steps", type=int)
    a.add_argument("--config")
    a.add_argument("--variants", help=f"comma-separated subset of {','.join(VARIANTS)}")
    a.set_defaults(func=cmd_ablation)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        args.func(args)
    except (ArgumentError, ResourceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARGS
    except (FormatError, DegenerateInputError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
