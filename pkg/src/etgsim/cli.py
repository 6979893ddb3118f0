"""Command-line entry point: ``etgsim run|compare|validate``.

Exit codes: 0 success, 1 invalid configuration or usage, 2 runtime abort
(protection trip).
"""
from __future__ import annotations

import argparse
import json
import platform
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .config import PRESETS, ConfigError, ScenarioConfig, load_config
from .plant import ProtectionTrip
from .report import (
    energy_report,
    event_report,
    format_summary,
    phase_summaries,
    summarize_pair,
    voltage_band_ok,
    write_error_series,
    write_series,
)
from .scenario import run, run_pair, worker_count

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse would exit with 2
        raise _UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="etgsim", description="Event-triggered DC microgrid simulator.", allow_abbrev=False)
    parser.add_argument("--version", action="version", version=f"etgsim {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="{run,compare,validate}", parser_class=_Parser)
    sub.required = True
    helps = {
        "run": "run one simulation and write series + summary",
        "compare": "run the event-triggered scenario and its baseline, write error series and cost tables",
        "validate": "check a configuration without running it",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text, description=text, allow_abbrev=False)
        p.add_argument("--config", help=f"YAML config file or builtin preset name ({', '.join(PRESETS)})")
        p.add_argument("--preset", choices=PRESETS, help="builtin base configuration")
        p.add_argument("--mode", choices=("event", "periodic"))
        p.add_argument("--delay-ms", type=float, dest="delay_ms", help="message delivery delay in ms")
        p.add_argument("--seed", type=int)
        p.add_argument("--duration-min", type=float, dest="duration_min")
        if name != "validate":
            p.add_argument("--out", required=True, help="output directory")
    return parser


def _load(args: argparse.Namespace) -> tuple[ScenarioConfig, dict]:
    path = None
    preset = args.preset
    if args.config is not None:
        if Path(args.config).is_file():
            path = args.config
        elif args.config in PRESETS:
            preset = args.config
        else:
            raise ConfigError(f"--config: no such file or preset: {args.config!r}")
    if path is None and preset is None:
        raise ConfigError("--config or --preset is required")
    cfg = load_config(path, preset=preset)
    overrides = {
        "mode": args.mode,
        "delay": None if args.delay_ms is None else args.delay_ms / 1000.0,
        "rng_seed": args.seed,
        "duration_min": args.duration_min,
    }
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if overrides:
        cfg = cfg.with_overrides(**overrides)
    return cfg, overrides


def _versions() -> dict[str, str]:
    import numba
    import numpy
    import scipy
    import yaml

    return {
        "etgsim": __version__,
        "python": platform.python_version(),
        "numpy": numpy.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
        "pyyaml": yaml.__version__,
    }


def _write_manifest(out: Path, command: str, args: argparse.Namespace, cfg: ScenarioConfig, overrides: dict,
                    outputs: list[str]) -> None:
    manifest = {
        "command": command,
        "config": args.config,
        "preset": args.preset,
        "config_sha256": cfg.digest(),
        "seed": cfg.rng_seed,
        "overrides": overrides,
        "versions": _versions(),
        "outputs": sorted(outputs),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _stability_line(result) -> str:
    # Phases shorter than the settling window have no settled value.
    settled = [p.settled_voltage_error for p in phase_summaries(result) if np.isfinite(p.settled_voltage_error)]
    worst = max(settled, default=float("nan"))
    band = voltage_band_ok(result)
    verdict = "bounded" if band and not worst >= 2.0 else "DEGRADED"
    return f"stability: {verdict} (voltages within +/-5%: {band}; worst settled mean-voltage error {worst:.4f} V)"


def _cmd_run(args, cfg, overrides) -> int:
    out = Path(args.out)
    result = run(cfg)
    files = write_series(result, out)
    event_report(result).write(out / "event_counts.csv")
    summary = format_summary(result) + "\n" + _stability_line(result) + "\n"
    (out / "summary.txt").write_text(summary)
    names = [p.name for p in files.values()] + ["event_counts.csv", "summary.txt", "manifest.json"]
    _write_manifest(out, "run", args, cfg, overrides, names)
    print(summary, end="")
    return EXIT_OK


def _cmd_compare(args, cfg, overrides) -> int:
    out = Path(args.out)
    event, baseline, errors = run_pair(cfg)
    names = []
    for label, res in (("event", event), ("baseline", baseline)):
        files = write_series(res, out / label)
        names += [f"{label}/{p.name}" for p in files.values()]
        event_report(res).write(out / label / "event_counts.csv")
        names.append(f"{label}/event_counts.csv")
    names += [p.name for p in write_error_series(errors, out).values()]
    energy_report(event, baseline).write(out / "energy_cost.csv")
    summary = (
        "event run\n" + format_summary(event) + "\n\nbaseline run\n" + format_summary(baseline)
        + "\n\n" + summarize_pair(event, baseline, errors) + "\n"
    )
    (out / "summary.txt").write_text(summary)
    names += ["energy_cost.csv", "summary.txt", "manifest.json"]
    _write_manifest(out, "compare", args, cfg, overrides, names)
    print(summary, end="")
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    try:
        worker_count()
        cfg, overrides = _load(args)
    except ConfigError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "validate":
        print(f"ok: {cfg.n} buses, {len(cfg.phases)} phases, {cfg.duration / 60:g} min, mode={cfg.mode}")
        return EXIT_OK
    try:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        if args.command == "run":
            return _cmd_run(args, cfg, overrides)
        return _cmd_compare(args, cfg, overrides)
    except ProtectionTrip as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
