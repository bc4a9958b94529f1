"""Command-line entry point: strict JSON configs, studies, run manifests.

Exit-code taxonomy: 0 success; config errors are the 2-class with one
distinct code per failure kind (20 missing file, 21 parse error, 22
unknown key, 23 type mismatch, 24 invalid value); 3 numerical failure;
4 non-convergence of a stopping-rule study.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
import time
from datetime import datetime, timezone
from typing import Union, get_args, get_origin, get_type_hints

import numpy as np

from . import __version__, experiments
from .experiments import SchrodingerConfig, StudyConfig, write_csv
from .stopping import NonMonotoneResidualError

__all__ = ["main", "parse_config", "run"]

EXIT_OK = 0
EXIT_CONFIG_MISSING = 20
EXIT_CONFIG_PARSE = 21
EXIT_CONFIG_UNKNOWN_KEY = 22
EXIT_CONFIG_TYPE = 23
EXIT_CONFIG_VALUE = 24
EXIT_NUMERICAL = 3
EXIT_NONCONVERGENCE = 4


class ConfigError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


_SUBCOMMANDS = {
    "linear-demo": (StudyConfig, experiments.linear_demo, "linear_demo.csv"),
    "rate-study": (StudyConfig, experiments.rate_study, "rate.csv"),
    "stopping-study": (StudyConfig, experiments.stopping_time_study, "stopping.csv"),
    "contraction-study": (StudyConfig, experiments.contraction_study, "contraction.csv"),
    "coverage-study": (StudyConfig, experiments.coverage_study, "coverage.csv"),
    "schrodinger": (SchrodingerConfig, experiments.nonlinear_demo, "nonlinear_demo.csv"),
    "enkf-run": (StudyConfig, experiments.enkf_run, "enkf_run.csv"),
}

#: studies whose stopping rule is expected to converge on every run
_REQUIRE_CONVERGED = {"rate-study", "stopping-study", "contraction-study", "coverage-study"}


def _type_ok(value, annotation) -> bool:
    origin = get_origin(annotation)
    if origin is Union:
        return any(_type_ok(value, arg) for arg in get_args(annotation))
    if annotation is type(None):
        return value is None
    if annotation is float:
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if annotation is int:
        return isinstance(value, int) and not isinstance(value, bool)
    if annotation is bool:
        return isinstance(value, bool)
    if annotation is str:
        return isinstance(value, str)
    if annotation is list or origin is list:
        return isinstance(value, list)
    return True


def _coerce(value, annotation):
    origin = get_origin(annotation)
    if origin is Union:
        for arg in get_args(annotation):
            if _type_ok(value, arg):
                return _coerce(value, arg)
        return value
    if annotation is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    return value


def _parse_override(item: str) -> tuple[str, object]:
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not KEY=VALUE", EXIT_CONFIG_PARSE)
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def parse_config(path: str, overrides=(), schema=StudyConfig):
    """Load a strict JSON config, apply overrides, build the dataclass.

    Unknown keys and wrong types are hard errors; overrides are applied
    after the file values.
    """
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}", EXIT_CONFIG_MISSING)
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(
                f"config parse failure at line {exc.lineno} column {exc.colno}: {exc.msg}",
                EXIT_CONFIG_PARSE,
            ) from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object", EXIT_CONFIG_PARSE)
    for item in overrides:
        key, value = _parse_override(item) if isinstance(item, str) else item
        data[key] = value
    hints = get_type_hints(schema)
    known = {f.name for f in dataclasses.fields(schema)}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(
                f"unknown config key {key!r} for {schema.__name__}", EXIT_CONFIG_UNKNOWN_KEY
            )
        if not _type_ok(value, hints[key]):
            raise ConfigError(
                f"config key {key!r} has type {type(value).__name__}, "
                f"incompatible with {hints[key]}",
                EXIT_CONFIG_TYPE,
            )
    coerced = {k: _coerce(v, hints[k]) for k, v in data.items()}
    try:
        return schema(**coerced)
    except ValueError as exc:
        raise ConfigError(f"invalid config value: {exc}", EXIT_CONFIG_VALUE) from exc


def _config_hash(cfg) -> str:
    payload = json.dumps(dataclasses.asdict(cfg), sort_keys=True).encode()
    return hashlib.sha256(payload).hexdigest()


def run(subcommand: str, cfg, out_dir: str) -> int:
    """Dispatch one study, write its CSV and a manifest, return exit code."""
    schema, study, csv_name = _SUBCOMMANDS[subcommand]
    os.makedirs(out_dir, exist_ok=True)
    started = datetime.now(timezone.utc)
    t0 = time.perf_counter()
    try:
        report = study(cfg)
    except (FloatingPointError, np.linalg.LinAlgError, NonMonotoneResidualError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    wall = time.perf_counter() - t0
    csv_path = os.path.join(out_dir, csv_name)
    write_csv(csv_path, report.columns, report.rows)
    status = "ok"
    code = EXIT_OK
    if subcommand in _REQUIRE_CONVERGED and any(not row["converged"] for row in report.rows):
        status = "non-convergence"
        code = EXIT_NONCONVERGENCE
        print("one or more runs did not reach the threshold; see CSV", file=sys.stderr)
    manifest = {
        "subcommand": subcommand,
        "config": dataclasses.asdict(cfg),
        "config_sha256": _config_hash(cfg),
        "seed": cfg.seed,
        "versions": {
            "python": sys.version.split()[0],
            "numpy": np.__version__,
            "dpstop": __version__,
        },
        "started_at": started.isoformat(),
        "wall_time_s": wall,
        "outputs": [csv_name],
        "status": status,
        "fitted_slope": report.fitted_slope,
        "theory_slope": report.theory_slope,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return code


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dpstop",
        description="Discrepancy-principle stopping studies for Bayesian inverse problems",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in _SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument(
            "--set",
            action="append",
            default=[],
            dest="overrides",
            metavar="KEY=VALUE",
            help="override one config field (repeatable; JSON-parsed value)",
        )
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument(
            "--threads",
            type=int,
            default=os.cpu_count() or 1,
            help="cap on concurrent replicates",
        )
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    schema = _SUBCOMMANDS[args.subcommand][0]
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    overrides.append(f"threads={args.threads}")
    try:
        cfg = parse_config(args.config, overrides, schema)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return exc.code
    return run(args.subcommand, cfg, args.out)


if __name__ == "__main__":
    sys.exit(main())
