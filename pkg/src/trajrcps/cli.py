"""Command-line front end: simulate, calibrate, validate and sweep from a JSON config.

Exit codes: 0 success, 1 error, 2 (calibrate only) certificate is vacuous.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from . import serialize
from .calibration import certify
from .config import ExperimentConfig
from .exceptions import RcpsError
from .harness import coverage_experiment, sweep
from .lti import mixing_bound, simulate
from .predictor import residuals

log = logging.getLogger("trajrcps")

EXIT_OK, EXIT_ERROR, EXIT_VACUOUS = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="JSON experiment configuration")
    common.add_argument("--seed", type=int, help="override the master seed")
    common.add_argument("--out", help="output path (default: config 'out', else stdout)")
    common.add_argument("--format", choices=("json", "csv"), help="output format")
    common.add_argument("--trials", type=int, help="override the number of trials")
    common.add_argument("--rule", choices=("iid", "blocked", "weighted"),
                        help="override the calibration rule")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(
        prog="trajrcps",
        description="Risk-controlling prediction sets calibrated on one trajectory.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="simulate a trajectory to CSV")
    sub.add_parser("calibrate", parents=[common], help="calibrate and write a certificate")
    sub.add_parser("validate", parents=[common], help="run a Monte Carlo coverage experiment")
    sub.add_parser("sweep", parents=[common], help="coverage experiments over one axis")
    return parser


def load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config)
    overrides = {}
    for name in ("seed", "out", "format", "trials", "rule"):
        value = getattr(args, name)
        if value is not None:
            overrides[name] = value
    return cfg.replace(**overrides) if overrides else cfg


def _emit(cfg: ExperimentConfig, text: str) -> None:
    if cfg.out:
        serialize.atomic_write_text(cfg.out, text)
    else:
        sys.stdout.write(text)


def cmd_simulate(cfg: ExperimentConfig) -> int:
    traj = simulate(cfg.build_system(), cfg.T, cfg.init, cfg.seed)
    _emit(cfg, serialize.trajectory_csv(traj))
    return EXIT_OK


def calibrate_from_config(cfg: ExperimentConfig):
    system = cfg.build_system() if cfg.system is not None else None
    if cfg.residuals_path:
        res = serialize.read_residuals(cfg.residuals_path)
    else:
        traj = simulate(cfg.build_system(), cfg.T, cfg.init, cfg.seed)
        res = residuals(traj, cfg.build_model())
    bound = None
    if cfg.rule == "blocked" or cfg.lag_k is not None:
        if system is None:
            raise RcpsError("a mixing bound needs 'system' in the configuration")
        bound = mixing_bound(system, cfg.margin, cfg.pair_factor)
    if cfg.rule == "weighted" and cfg.weights is None:
        raise RcpsError("rule 'weighted' requires 'weights'")
    return certify(cfg.rule, res, cfg.loss_spec(), cfg.epsilon, cfg.delta,
                   weights=cfg.weights, lag_k=cfg.lag_k, bound=bound, seed=cfg.seed)


def cmd_calibrate(cfg: ExperimentConfig) -> int:
    cert = calibrate_from_config(cfg)
    record = cert.to_record()
    if cfg.format == "csv":
        text = serialize.csv_text(list(record), [list(record.values())])
    else:
        text = serialize.json_text(record)
    _emit(cfg, text)
    if cert.vacuous:
        log.warning("certificate is vacuous: certified risk %.6g >= B", cert.certified_risk)
        return EXIT_VACUOUS
    return EXIT_OK


def cmd_validate(cfg: ExperimentConfig) -> int:
    report = coverage_experiment(cfg)
    rows = [asdict(r) for r in report.records]
    if cfg.out:
        out = Path(cfg.out)
        trials_csv = out.with_name(out.stem + ".trials.csv")
        if cfg.format == "csv":
            serialize.write_records_csv(out, rows)
        else:
            serialize.write_json(out, report.to_dict())
            serialize.write_records_csv(trials_csv, rows)
    print(report.summary())
    if report.failures:
        first = next(r.error for r in report.records if r.status != "ok")
        log.error("%d trials failed: %s", report.failures, first)
        return EXIT_ERROR
    return EXIT_OK


def cmd_sweep(cfg: ExperimentConfig) -> int:
    rows = sweep(cfg)
    if cfg.format == "json":
        text = serialize.json_text(rows)
    else:
        header = list(rows[0])
        text = serialize.csv_text(header, ([r[k] for k in header] for r in rows))
    _emit(cfg, text)
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "calibrate": cmd_calibrate,
            "validate": cmd_validate, "sweep": cmd_sweep}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        cfg = load_config(args)
        if args.command == "sweep" and cfg.sweep is None:
            raise RcpsError("sweep needs a 'sweep' section with one axis and its grid")
        return COMMANDS[args.command](cfg)
    except (RcpsError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
