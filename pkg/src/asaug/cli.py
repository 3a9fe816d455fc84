"""Command-line entry point: ``asaug <command> ...``.

Exit codes: 0 success, 2 usage or configuration error, 1 runtime failure.
"""
import argparse
import hashlib
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import adaptive, config as config_mod, data_io, spatial
from .metrics import evaluate, iou_csv
from .model import CheckpointError, load_checkpoint, save_checkpoint
from .trainer import train, train_config_dict

log = logging.getLogger("asaug")


class UsageError(Exception):
    """Bad input from the user; reported on stderr with exit code 2."""


def _load_config(path):
    if path is None:
        return config_mod.ExperimentConfig()
    if not os.path.isfile(path):
        raise UsageError(f"config not found: {path}")
    try:
        return config_mod.load(path)
    except config_mod.ConfigError as exc:
        raise UsageError(str(exc)) from exc


def _load_manifest(path, what="manifest"):
    if not os.path.isfile(path):
        raise UsageError(f"{what} not found: {path}")
    try:
        return data_io.read_manifest(path)
    except data_io.FormatError as exc:
        raise UsageError(str(exc)) from exc


def _write_text(path, text):
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


def _sha256(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


# -- gen-data ----------------------------------------------------------------------

def _write_split(out_dir, sub, cfg, count, start, ratio, seed):
    os.makedirs(os.path.join(out_dir, sub, "images"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, sub, "masks"), exist_ok=True)
    samples = data_io.generate(cfg, count, start=start)
    pairs = [
        (f"{sub}/images/img_{start + k:05d}.ppm", f"{sub}/masks/mask_{start + k:05d}.pgm")
        for k in range(count)
    ]
    manifest = data_io.split(pairs, ratio, seed, cfg.config_hash())
    labeled = {img for img, mask in manifest.entries if mask is not None}
    for (img, mask), (img_path, mask_path) in zip(samples, pairs):
        data_io.write_image(os.path.join(out_dir, img_path), img)
        if img_path in labeled:
            data_io.write_mask(os.path.join(out_dir, mask_path), mask)
    return manifest


def cmd_gen_data(args):
    cfg = _load_config(args.config)
    out = args.out or os.path.join(cfg.output_dir, "data")
    count = args.count
    if count < 1:
        raise UsageError("--count must be >= 1")
    train_set = _write_split(out, "train", cfg.data, count, 0, cfg.labeled_ratio, cfg.split_seed)
    path = os.path.join(out, "manifest.txt")
    data_io.write_manifest(path, train_set)
    if cfg.val_count > 0:
        val_set = _write_split(out, "val", cfg.data, cfg.val_count, count, 1.0, cfg.split_seed)
        data_io.write_manifest(os.path.join(out, "val_manifest.txt"), val_set)
    print(path)
    return 0


# -- train ---------------------------------------------------------------------------

def _experiment_dict(cfg):
    sections = config_mod.to_sections(cfg)
    return json.loads(json.dumps(sections, default=list))


def _run_training(cfg, manifest, val_manifest, out_dir):
    """Train one configuration and write its artifacts into ``out_dir``."""
    labeled, unlabeled = data_io.load_manifest_samples(manifest)
    val = data_io.load_manifest_samples(val_manifest)[0] if val_manifest is not None else None
    report, teacher, student = train(
        labeled, unlabeled, cfg.train, cfg.data.num_classes, val,
        config_echo=_experiment_dict(cfg),
    )
    os.makedirs(out_dir, exist_ok=True)
    _write_text(os.path.join(out_dir, "report.csv"), report.to_csv())
    _write_text(os.path.join(out_dir, "traces.csv"), report.traces_csv())
    save_checkpoint(os.path.join(out_dir, "teacher.asmd"), teacher)
    save_checkpoint(os.path.join(out_dir, "student.asmd"), student)
    echo = {
        "config": report.config,
        "train": train_config_dict(cfg.train),
        "seed": report.seed,
        "final_checksum": report.final_checksum,
        "student_checksum": report.student_checksum,
        "final_miou": report.final_miou,
    }
    _write_text(os.path.join(out_dir, "config.json"), json.dumps(echo, indent=2, sort_keys=True) + "\n")
    return report


def _check_runnable(cfg, manifest):
    if not manifest.entries:
        raise UsageError("manifest is empty")
    if manifest.labeled_count == 0:
        raise UsageError("manifest has no labeled entries")


def cmd_train(args):
    cfg = _load_config(args.config)
    manifest = _load_manifest(args.manifest)
    _check_runnable(cfg, manifest)
    if cfg.train.mode != "supervised_only" and manifest.unlabeled_count == 0:
        raise UsageError(f"train.mode: {cfg.train.mode} needs unlabeled entries in the manifest")
    val = _load_manifest(args.val_manifest, "validation manifest") if args.val_manifest else None
    out = args.out or os.path.join(cfg.output_dir, "train")
    report = _run_training(cfg, manifest, val, out)
    print(f"final_miou={report.final_miou!r}")
    return 0


# -- eval ------------------------------------------------------------------------------

def cmd_eval(args):
    if not os.path.isfile(args.checkpoint):
        raise UsageError(f"checkpoint not found: {args.checkpoint}")
    try:
        model = load_checkpoint(args.checkpoint)
    except CheckpointError as exc:
        raise UsageError(str(exc)) from exc
    manifest = _load_manifest(args.manifest)
    labeled, _ = data_io.load_manifest_samples(manifest)
    if not labeled:
        raise UsageError("manifest has no labeled entries")
    per_class, mean = evaluate(model, labeled)
    out = args.out or "iou.csv"
    parent = os.path.dirname(out)
    if parent:
        os.makedirs(parent, exist_ok=True)
    _write_text(out, iou_csv(per_class, mean))
    print(f"miou={mean!r}")
    return 0


# -- augment ---------------------------------------------------------------------------

def cmd_augment(args):
    cfg = _load_config(args.eaw_config)
    for path in (args.image, args.probmap):
        if not os.path.isfile(path):
            raise UsageError(f"input not found: {path}")
    try:
        img = data_io.read_image(args.image)
        probs = data_io.read_probmap(args.probmap)
    except data_io.FormatError as exc:
        raise UsageError(str(exc)) from exc
    if probs.shape[1:] != img.shape[:2]:
        raise UsageError(f"probmap is {probs.shape[1]}x{probs.shape[2]}, image is {img.shape[0]}x{img.shape[1]}")
    eaw = cfg.train.eaw
    h = adaptive.mean_entropy(adaptive.pixel_entropy(probs), None, eaw.normalize_entropy, probs.shape[0])
    t = adaptive.sample_transform(h, eaw, np.random.default_rng(args.seed))
    img_t, valid = spatial.apply_to_image(img, t)
    probs_t, _ = spatial.apply_to_probmap(probs, t)
    prefix = args.out_prefix
    parent = os.path.dirname(prefix)
    if parent:
        os.makedirs(parent, exist_ok=True)
    data_io.write_image(prefix + "_image.ppm", img_t)
    data_io.write_probmap(prefix + "_probmap.aspm", probs_t)
    data_io.write_validity(prefix + "_valid.pgm", valid)
    print(json.dumps({"H": h, "rotation_deg": t.rotation_deg, "dx": t.translate_dx, "dy": t.translate_dy}))
    return 0


# -- ablate ----------------------------------------------------------------------------

def _ablation_job(job):
    cfg, manifest_path, val_path, run_dir = job
    manifest = data_io.read_manifest(manifest_path)
    val = data_io.read_manifest(val_path) if val_path else None
    return _run_training(cfg, manifest, val, run_dir).final_miou


def _stats(values):
    mean = float(np.mean(values))
    std = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
    return mean, std


def ablation_criteria(means):
    """Margin checks of the ablation: EAW beats supervised-only and keeps up with fixed mappings."""
    rows = []
    if "eaw" in means and "supervised_only" in means:
        rows.append(("eaw>=supervised_only+0.01", means["eaw"], means["supervised_only"] + 0.01))
    for name in ("fixed", "fixed_high"):
        if "eaw" in means and name in means:
            rows.append((f"eaw>={name}-0.01", means["eaw"], means[name] - 0.01))
    return [(name, lhs, rhs, lhs >= rhs) for name, lhs, rhs in rows]


def cmd_ablate(args):
    cfg = _load_config(args.config)
    manifest = _load_manifest(args.manifest)
    _check_runnable(cfg, manifest)
    if manifest.unlabeled_count == 0:
        raise UsageError("ablation needs unlabeled entries in the manifest")
    if args.val_manifest:
        _load_manifest(args.val_manifest, "validation manifest")
    out = args.out or os.path.join(cfg.output_dir, "ablation")
    jobs, keys = [], []
    for name in cfg.ablation_strategies:
        for seed in cfg.ablation_seeds:
            run_dir = os.path.join(out, "runs", f"{name}_seed{seed}")
            jobs.append((cfg.with_strategy(name, seed), args.manifest, args.val_manifest, run_dir))
            keys.append((name, seed))
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            results = list(pool.map(_ablation_job, jobs))
    else:
        results = [_ablation_job(job) for job in jobs]

    lines = ["strategy,seed,final_miou"]
    lines += [f"{name},{seed},{miou!r}" for (name, seed), miou in zip(keys, results)]
    _write_text(os.path.join(out, "ablation.csv"), "\n".join(lines) + "\n")

    means, table = {}, ["strategy,mean,std,runs"]
    for name in cfg.ablation_strategies:
        vals = [m for (n, _), m in zip(keys, results) if n == name]
        mean, std = _stats(vals)
        means[name] = mean
        table.append(f"{name},{mean!r},{std!r},{len(vals)}")
    _write_text(os.path.join(out, "ablation_summary.csv"), "\n".join(table) + "\n")

    verdict = ["criterion,lhs,rhs,pass"]
    for name, lhs, rhs, ok in ablation_criteria(means):
        verdict.append(f"{name},{lhs!r},{rhs!r},{'PASS' if ok else 'FAIL'}")
        print(f"{'PASS' if ok else 'FAIL'} {name} ({lhs:.4f} vs {rhs:.4f})")
    _write_text(os.path.join(out, "ablation_criteria.csv"), "\n".join(verdict) + "\n")
    for row in table[1:]:
        print(row)
    return 0


# -- entry point -----------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="asaug", description=__doc__.splitlines()[0])
    parser.add_argument("--print-config", action="store_true",
                        help="print the full default configuration and exit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command")

    def with_config(p):
        p.add_argument("--config", help="experiment config file (defaults when omitted)")
        p.add_argument("--print-config", action="store_true", dest="sub_print_config",
                       help="print the resolved configuration and exit")
        return p

    p = with_config(sub.add_parser("gen-data", help="generate a ShapesWorld dataset"))
    p.add_argument("--out")
    p.add_argument("--count", type=int, default=200)
    p.set_defaults(func=cmd_gen_data)

    p = with_config(sub.add_parser("train", help="train one configuration"))
    p.add_argument("--manifest", required=True)
    p.add_argument("--val-manifest")
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on the labeled entries of a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval, config=None)

    p = sub.add_parser("augment", help="apply one entropy-adaptive spatial augmentation")
    p.add_argument("--image", required=True)
    p.add_argument("--probmap", required=True)
    p.add_argument("--eaw-config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_augment, config=None)

    p = with_config(sub.add_parser("ablate", help="train every mapping strategy over several seeds"))
    p.add_argument("--manifest", required=True)
    p.add_argument("--val-manifest")
    p.add_argument("--out")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.print_config or getattr(args, "sub_print_config", False):
            sys.stdout.write(config_mod.dump(_load_config(getattr(args, "config", None))))
            return 0
        if args.command is None:
            parser.print_usage(sys.stderr)
            return 2
        return args.func(args)
    except UsageError as exc:
        print(f"asaug: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"asaug: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
