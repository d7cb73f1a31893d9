"""Command-line entry point: gen-data, train, eval, retarget, ablate.

Exit codes: 0 success, 1 runtime error, 2 usage or validation error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from . import metrics
from .config import ConfigError, load_config
from .motion import PRESETS, MotionDataset, default_clips, load_clip, load_dataset, write_dataset
from .reward import MODES
from .trainer import dataset_hash, load_checkpoint, train

log = logging.getLogger("lococycle")


class UsageError(Exception):
    pass


def worker_count(requested):
    """Workers for a sweep, capped by CROSSLOCO_THREADS (default: logical cores)."""
    cap = os.environ.get("CROSSLOCO_THREADS")
    try:
        limit = int(cap) if cap else (os.cpu_count() or 1)
    except ValueError:
        raise UsageError(f"CROSSLOCO_THREADS must be an integer, got {cap!r}") from None
    return max(1, min(requested, limit))


def _parse_list(text):
    return [p.strip() for p in text.split(",") if p.strip()]


# -- subcommands ----------------------------------------------------------------


def cmd_gen_data(args):
    presets = _parse_list(args.presets) if args.presets else None
    if presets is not None:
        bad = [p for p in presets if p not in PRESETS]
        if bad or not presets:
            raise UsageError(f"unknown preset(s) {', '.join(bad) or '(none given)'}; choose from {', '.join(PRESETS)}")
    clips = default_clips(seed=args.seed, presets=presets)
    manifest = write_dataset(args.out, clips)
    print(f"wrote {len(clips)} clips and {manifest}")
    return 0


def cmd_train(args):
    cfg = load_config(args.config)
    out = train(cfg, resume=args.resume, progress=_progress if args.verbose else None)
    print(f"run written to {out}")
    return 0


def _progress(stats):
    print(f"iter {stats['iteration']:4d}  r_total {stats['r_total']:.4f}  r_root {stats['r_root']:.4f}  "
          f"r_cpd {stats['r_cpd']:.4f}  falls {stats['fall_rate']:.2f}", flush=True)


def cmd_eval(args):
    if args.sd < 1:
        raise UsageError("--sd must be positive")
    dataset = load_dataset(args.dataset)
    out = args.out or os.path.dirname(os.path.abspath(args.checkpoint))
    row, _ = metrics.eval_report(args.checkpoint, dataset, sd=args.sd, seed=args.seed, out_dir=out,
                                 write_rollouts=args.rollouts)
    print(open(os.path.join(out, "report.txt")).read(), end="")
    return 0


def cmd_retarget(args):
    rs, cfg = load_checkpoint(args.checkpoint)
    clip = load_clip(args.clip)
    ds = MotionDataset([clip])
    metrics._check_dims(rs, ds)
    roll = metrics.eval_rollouts(rs, cfg, ds)[0]
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    metrics.write_rollout_csv(args.out, roll, rs.mapper)
    print(f"{len(roll)} steps{' (fell)' if roll.fell else ''} written to {args.out}")
    return 0


def _ablation_job(cfg_dict, mode):
    from .config import config_from_dict

    cfg = config_from_dict(cfg_dict)
    before = dataset_hash(cfg.dataset)
    run_dir = train(cfg)
    ckpt = os.path.join(run_dir, "final.ckpt")
    row, _ = metrics.eval_report(ckpt, load_dataset(cfg.dataset), sd=cfg.eval_sd, seed=cfg.seed, out_dir=run_dir)
    row["checkpoint"] = os.path.join(mode, "final.ckpt")
    return row, before, dataset_hash(cfg.dataset)


def run_ablation(cfg, modes, workers=1):
    """Train and evaluate one run per mode with a shared seed and dataset.

    Runs land in ``<output_dir>/<mode>``; the combined report is written to
    ``<output_dir>``. Returns the report rows in the requested mode order.
    """
    bad = [m for m in modes if m not in MODES]
    if bad or not modes:
        raise UsageError(f"unknown mode(s) {', '.join(bad) or '(none given)'}; choose from {', '.join(MODES)}")
    reference = dataset_hash(cfg.dataset)
    jobs = []
    for m in modes:
        sub = dataclasses.replace(cfg, mode=m, output_dir=os.path.join(cfg.output_dir, m))
        jobs.append((sub.to_dict(), m))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_ablation_job, *zip(*jobs)))
    else:
        results = [_ablation_job(*j) for j in jobs]
    rows = []
    for (row, before, after), m in zip(results, modes):
        if before != reference or after != reference:
            raise RuntimeError(f"dataset changed during the {m} run (manifest hash mismatch)")
        rows.append(row)
    os.makedirs(cfg.output_dir, exist_ok=True)
    metrics.write_report(cfg.output_dir, rows)
    return rows


def cmd_ablate(args):
    cfg = load_config(args.config)
    rows = run_ablation(cfg, _parse_list(args.modes), worker_count(len(_parse_list(args.modes))))
    print(open(os.path.join(cfg.output_dir, "report.txt")).read(), end="")
    return 0 if rows else 1


# -- parser ---------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser():
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = _Parser(prog="lococycle", description="Cycle-consistent motion transfer to a planar quadruped.",
                formatter_class=fmt)
    p.add_argument("-v", "--verbose", action="store_true", help="print per-iteration progress and debug logs")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    g = sub.add_parser("gen-data", help="write the procedural clip dataset", formatter_class=fmt)
    g.add_argument("--out", required=True, help="output dataset directory")
    g.add_argument("--presets", default=",".join(PRESETS), help="comma-separated preset names to include")
    g.add_argument("--seed", type=int, default=0, help="generation seed")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a policy and mappers from a JSON config", formatter_class=fmt)
    t.add_argument("--config", required=True, help="JSON training config")
    t.add_argument("--resume", default=None, help="checkpoint to resume from")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint (ACR, DIV, RTR, fall rate)", formatter_class=fmt)
    e.add_argument("--checkpoint", required=True, help="checkpoint file")
    e.add_argument("--dataset", required=True, help="dataset directory or manifest")
    e.add_argument("--sd", type=int, default=256, help="DIV subset size")
    e.add_argument("--seed", type=int, default=0, help="metric seed")
    e.add_argument("--out", default=None, help="report directory (default: the checkpoint's directory)")
    e.add_argument("--rollouts", action="store_true", help="also write per-clip rollout CSVs")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("retarget", help="roll one clip through a trained policy", formatter_class=fmt)
    r.add_argument("--checkpoint", required=True, help="checkpoint file")
    r.add_argument("--clip", required=True, help="clip JSON file")
    r.add_argument("--out", required=True, help="output trajectory CSV")
    r.set_defaults(func=cmd_retarget)

    a = sub.add_parser("ablate", help="train and compare several reward modes", formatter_class=fmt)
    a.add_argument("--config", required=True, help="base JSON training config")
    a.add_argument("--modes", default=",".join(MODES), help="comma-separated modes")
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
