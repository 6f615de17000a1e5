"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 runtime failure, 4 an
acceptance threshold was missed (or the single episode failed).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ExperimentConfig, apply_overrides, from_dict, load_config
from .errors import BoneMillError, ConfigError
from . import experiments as ex

logger = logging.getLogger("bonemill")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_THRESHOLD = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bonemill", description="Simulated cranial-window milling experiments.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON experiment config (defaults apply to missing keys)")
    common.add_argument("--seed", type=int, help="root seed (unsigned 64-bit)")
    common.add_argument("--out", type=Path, help="output directory (created if missing)")
    common.add_argument("--episodes", type=int, help="evaluations (exp1), trials (exp2) or episodes per level (exp3)")
    common.add_argument("--jobs", type=int, default=None, help="worker processes for exp3 (default: available cores)")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key, e.g. damper.v_max=0.02 (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("exp1", parents=[common], help="calibration accuracy on random validation setpoints")
    sub.add_parser("exp2", parents=[common], help="Monte-Carlo trajectory-centre localisation error")
    sub.add_parser("exp3", parents=[common], help="seeded milling episodes across a completion-noise grid")
    run = sub.add_parser("run", parents=[common], help="one milling episode with a full per-tick trace")
    run.add_argument("--dump-trajectory", action="store_true", help="also write the initial trajectory CSV")
    return parser


def resolve_config(args) -> ExperimentConfig:
    data = load_config(args.config).to_dict() if args.config else ExperimentConfig().to_dict()
    data = apply_overrides(data, args.overrides)
    if args.seed is not None:
        data["seed"] = args.seed
    if args.out is not None:
        data["output_dir"] = str(args.out)
    if args.episodes is not None:
        key = {"exp1": ("exp1", "evaluations"), "exp2": ("exp2", "trials")}.get(args.command)
        if key:
            data[key[0]][key[1]] = args.episodes
        else:
            data["episodes"] = args.episodes
    return from_dict(data)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.jobs is not None and args.jobs < 1:
        print("config error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    jobs = args.jobs or ex.default_jobs()
    out = Path(cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        return _dispatch(args, cfg, out, jobs)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (BoneMillError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def _dispatch(args, cfg: ExperimentConfig, out: Path, jobs: int) -> int:
    if args.command == "exp1":
        result = ex.run_exp1(cfg)
        ex.write_exp1(result, cfg, out)
        s = result.summary()
        print(f"exp1: {s['evaluations']} evaluations, median 2D RMSE {s['median_rmse_2d_px']:.3f} px, "
              f"median 3D RMSE {s['median_rmse_3d_mm']:.3f} mm, central {s['median_central_rmse_mm']:.3f} mm, "
              f"pass fraction {s['pass_fraction']:.2f}")
        return EXIT_OK if result.passed else EXIT_THRESHOLD
    if args.command == "exp2":
        result = ex.run_exp2(cfg)
        ex.write_exp2(result, cfg, out)
        print(f"exp2: {len(result.center_error_px)} trials, centre RMSE {result.center_rmse_px:.3f} px "
              f"(bregma {result.bregma_rmse_px:.3f}, lambda {result.lambda_rmse_px:.3f})")
        return EXIT_OK if result.passed else EXIT_THRESHOLD
    if args.command == "exp3":
        result = ex.run_exp3(cfg, jobs=jobs)
        ex.write_exp3(result, cfg, out)
        for row in result.aggregate():
            print(f"exp3: MAPE {row['mape_pct']:g}%: success {row['success_rate']:.1%} of {row['episodes']}, "
                  f"membrane_damage {row['n_membrane_damage']}, timeout {row['n_timeout']}, "
                  f"calibration_contact {row['n_calibration_contact']}, incomplete {row['n_incomplete']}")
        if not result.records:
            print("exp3: no episodes")
        return EXIT_OK
    outcome, trace = ex.run_single(cfg)
    ex.write_run(outcome, trace, cfg, out, dump_trajectory=args.dump_trajectory)
    print(f"run: {'success' if outcome.success else 'failure (' + outcome.failure_kind + ')'} "
          f"after {outcome.milling_time_s:.1f} s, max overshoot {outcome.max_overshoot_mm:.4f} mm")
    return EXIT_OK if outcome.success else EXIT_THRESHOLD


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
