"""Command line entry point.

    omx <subcommand> --config <path> [--seed <u64>] [--out <dir>]

Subcommands: simulate, calibrate, focus, estimate, noise-audit, report.
Exit codes: 0 on success, 2 on configuration errors, 3 on numerical
degeneracies."""

from __future__ import annotations

import argparse
import sys

from .errors import ConfigError, DegeneracyError
from .harness import (
    cmd_calibrate,
    cmd_estimate,
    cmd_focus,
    cmd_noise_audit,
    cmd_report,
    cmd_simulate,
    load_config,
    make_config,
)

_COMMANDS = {
    "simulate": cmd_simulate,
    "calibrate": cmd_calibrate,
    "focus": cmd_focus,
    "estimate": cmd_estimate,
    "noise-audit": cmd_noise_audit,
    "report": cmd_report,
}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="omx",
        description="Shaped-light displacement measurement simulator",
    )
    sub = p.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        c = sub.add_parser(name)
        c.add_argument("--config", required=True, help="JSON configuration file")
        c.add_argument("--seed", type=int, default=None, help="override the master seed")
        c.add_argument("--out", default="run", help="output directory (default: run)")
    return p


def _summarize(command: str, result: dict) -> str:
    if command == "simulate":
        return f"simulate: {result['n_frames']} frames for {', '.join(result['inputs'])}"
    if command == "calibrate":
        return (
            f"calibrate: {result['n_out']}x{result['n_in']} matrix, "
            f"{result['n_dark_rows']} dark rows"
        )
    if command == "focus":
        return f"focus: enhancement {result['enhancement']:.1f}, grain {result['grain_px']:.2f} px"
    if command == "estimate":
        parts = []
        for branch, payload in result.items():
            for rep in payload["reports"]:
                parts.append(f"{branch}/{rep['label']} snr={rep['snr']:.3g}")
        return "estimate: " + ", ".join(parts)
    if command == "noise-audit":
        return f"noise-audit: slope {result['slope']:.4f} over {result['n_frames']} frames"
    return f"report: {len(result['estimators'])} estimator rows, snr_q {result['snr_q']:.3g}"


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            data = dict(cfg.data)
            data["seed"] = int(args.seed)
            cfg = make_config(data)
        result = _COMMANDS[args.command](cfg, args.out)
        print(_summarize(args.command, result))
        return 0
    except ConfigError as exc:
        print(f"omx: {exc}", file=sys.stderr)
        return 2
    except DegeneracyError as exc:
        print(f"omx: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
