"""Command-line entry point: ``promp-handshake <subcommand> [options]``.

Exit status is 0 on success, 2 when inputs or configuration are invalid
and 3 on numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import pipeline, predictor
from .control import write_log, read_log
from .errors import HandshakeError, NumericalError, ValidationError
from .kinematics import save_arm_model
from .promp import save_promp
from .synthetic import generate_synthetic_dataset

log = logging.getLogger("promp_handshake")


def _config(args):
    return pipeline.load_config(args.config) if args.config else pipeline.PipelineConfig()


def _out(args, default):
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_synth_data(args):
    out = _out(args, "synthetic")
    paths = generate_synthetic_dataset(out, args.n, seed=args.seed, noise=args.noise, n_left=args.n_left)
    print(f"wrote {len(paths)} recordings to {out}")


def cmd_prepare_data(args):
    cfg = _config(args)
    out = _out(args, "prepared")
    manifest = pipeline.prepare_dataset(args.data, out, cfg.segmentation, args.seed, cfg.test_fraction)
    print(json.dumps(manifest.counts))


def cmd_fit_promp(args):
    cfg = _config(args)
    out = _out(args, "models")
    train = pipeline.load_interactions(args.data, "train")
    prior = pipeline.fit_primitive(train, cfg)
    save_promp(out / "promp.json", prior)
    save_arm_model(out / "arm.json", pipeline.fit_arm_model(train, cfg.end_effector))
    print(f"fitted a {prior.dof}-DoF primitive on {2 * len(train)} demonstrations -> {out}")


def cmd_train_predictor(args):
    cfg = _config(args).predictor
    overrides = {k: v for k, v in (("epochs", args.epochs), ("batch_size", args.batch_size)) if v is not None}
    cfg = replace(cfg, seed=args.seed, **overrides)
    target = Path(args.out or "models")
    if target.suffix != ".json":
        target.mkdir(parents=True, exist_ok=True)
        target = target / "predictor.json"
    else:
        target.parent.mkdir(parents=True, exist_ok=True)
    train = pipeline.load_interactions(args.data, "train")
    weights, curve = pipeline.train_hand_predictor(
        train, cfg, callback=lambda e, v: log.info("epoch %d loss %.6f m^2", e, v))
    predictor.save_weights(target, weights)
    pipeline.write_loss_curve_csv(target.with_name("loss_curve.csv"), curve)
    print(f"final training loss {curve[-1]:.6f} m^2 -> {target}" if curve else f"-> {target}")


def cmd_simulate(args):
    cfg = _config(args)
    out = _out(args, "logs")
    models = Path(args.models)
    prior = models / "promp.json"
    arm = models / "arm.json"
    weights = Path(args.predictor) if args.predictor else models / "predictor.json"
    for it in pipeline.load_interactions(args.data, args.split):
        result = pipeline.run_interaction(it, prior, weights, arm, args.robot, cfg)
        write_log(out / f"{it.name}.jsonl", result)
        pipeline.write_joint_trajectory_csv(out / f"{it.name}.joints.csv", result, it.angles[args.robot])
        print(f"{it.name}: final reaching error {result.final_error:.4f} m")


def cmd_eval(args):
    logs = [read_log(p) for p in sorted(Path(args.logs).glob("*.jsonl"))]
    summary = pipeline.evaluate(logs)
    out = _out(args, args.logs)
    (out / "summary.json").write_text(json.dumps(summary.to_dict(), indent=1))
    pipeline.write_error_histogram_csv(out / "error_histogram.csv", summary)
    print(f"mean {summary.mean:.4f} m, std {summary.std:.4f} m over {summary.count} interactions")


def _common(suppress):
    """Global flags; subcommands re-declare them without defaults so either position works."""
    default = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=default(0))
    common.add_argument("--config", default=default(None), help="versioned JSON pipeline config")
    common.add_argument("--out", default=default(None),
                        help="output directory (or weight file for train-predictor)")
    common.add_argument("-v", "--verbose", action="store_true", default=default(False))
    return common


def build_parser():
    common = _common(suppress=True)
    parser = argparse.ArgumentParser(prog="promp-handshake", parents=[_common(suppress=False)],
                                     description="Learn and replay robot handshake reaching.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", parents=[common], help="generate synthetic recordings")
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--noise", type=float, default=0.0, help="joint noise std (m)")
    p.add_argument("--n-left", type=int, default=0, help="number of left-handed shakes")
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("prepare-data", parents=[common], help="segment recordings and split")
    p.add_argument("--data", required=True, help="directory of .skeleton files")
    p.set_defaults(func=cmd_prepare_data)

    p = sub.add_parser("fit-promp", parents=[common], help="fit the primitive and arm model")
    p.add_argument("--data", required=True, help="prepared dataset directory")
    p.set_defaults(func=cmd_fit_promp)

    p = sub.add_parser("train-predictor", parents=[common], help="train the hand predictor")
    p.add_argument("--data", required=True, help="prepared dataset directory")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.set_defaults(func=cmd_train_predictor)

    p = sub.add_parser("simulate", parents=[common], help="replay held-out interactions")
    p.add_argument("--data", required=True, help="prepared dataset directory")
    p.add_argument("--models", required=True, help="directory with promp.json and arm.json")
    p.add_argument("--predictor", help="weight file (default: MODELS/predictor.json)")
    p.add_argument("--split", default="test", choices=("train", "test"))
    p.add_argument("--robot", type=int, default=0, choices=(0, 1), help="which person plays the robot")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("eval", parents=[common], help="summarize interaction logs")
    p.add_argument("--logs", required=True, help="directory of interaction logs")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ValidationError, HandshakeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
