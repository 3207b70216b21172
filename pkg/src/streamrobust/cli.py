"""Command line front end.

Subcommands map one-to-one onto the harness: `verify` runs the numerical
check suite, `convergence` and `breakdown` run the experiments and write
their tables plus a manifest into the output directory. Configuration is a
flat INI file, one section per subcommand. Exit codes: 0 on success, 1 when
a check or comparison fails, 2 for usage and configuration errors.

Seed precedence, highest first: `--seed` flag, then the STREAMROBUST_SEED
environment variable, then the config file, then the built-in default. All
output files are comma-delimited text with `#` comment lines and are
byte-identical across re-runs with the same config and seed.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional

from . import __version__
from .bench import (
    BreakdownConfig,
    ConvergenceConfig,
    ExperimentResult,
    breakdown_config_from_mapping,
    breakdown_experiment,
    convergence_config_from_mapping,
    convergence_experiment,
    render_loglog_svg,
    table_svg,
)
from .verify import DEFAULT_SUITE_SEED, CHECK_GROUPS, report_lines, run_suite, suite_passed

ENV_SEED = "STREAMROBUST_SEED"


def _fail_usage(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return 2


def _env_seed() -> Optional[int]:
    raw = os.environ.get(ENV_SEED)
    if raw is None:
        return None
    try:
        value = int(raw)
    except ValueError:
        raise SystemExit(_fail_usage(f"{ENV_SEED} must be an integer, got {raw!r}"))
    if value < 0:
        raise SystemExit(_fail_usage(f"{ENV_SEED} must be nonnegative, got {value}"))
    return value


def _resolve_seed(flag_seed: Optional[int], config_seed: Optional[int], default: int) -> int:
    if flag_seed is not None:
        return flag_seed
    env = _env_seed()
    if env is not None:
        return env
    if config_seed is not None:
        return config_seed
    return default


def _read_config_section(path: Optional[str], section: str) -> Dict[str, str]:
    if path is None:
        return {}
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise SystemExit(_fail_usage(f"cannot read config {path!r}: {exc}"))
    except configparser.Error as exc:
        raise SystemExit(_fail_usage(f"malformed config {path!r}: {exc}"))
    if not parser.has_section(section):
        return {}
    return dict(parser.items(section))


def _write_lines(path: Path, lines: List[str]) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()[:16]


def _write_manifest(out_dir: Path, experiment: str, result: ExperimentResult, seed: int, config_lines: List[str]) -> None:
    lines = [
        f"# streamrobust {__version__}",
        f"# experiment={experiment}",
        f"# config={result.config_digest}",
        f"# seed={seed}",
    ]
    lines.extend(f"# cfg {line}" for line in config_lines)
    lines.append("kind,name,value")
    for label, cell_seed in result.cell_seeds:
        lines.append(f"cell,{label},{cell_seed}")
    for name in sorted(p.name for p in out_dir.iterdir() if p.name != "manifest.csv"):
        lines.append(f"file,{name},{_file_digest(out_dir / name)}")
    _write_lines(out_dir / "manifest.csv", lines)


def _config_lines(cfg) -> List[str]:
    return [f"{key}={value!r}" for key, value in sorted(vars(cfg).items())]


def _prepare_out_dir(raw: str) -> Path:
    out = Path(raw)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# subcommands


def cmd_verify(args: argparse.Namespace) -> int:
    seed = _resolve_seed(args.seed, None, DEFAULT_SUITE_SEED)
    try:
        results = run_suite(seed=seed, only=args.only)
    except KeyError:
        return _fail_usage(
            f"unknown check {args.only!r}; available: {', '.join(CHECK_GROUPS)}"
        )
    passed = suite_passed(results)
    lines = [f"# streamrobust {__version__}", f"# seed={seed}"]
    lines.extend(report_lines(results))
    lines.append(f"# suite={'pass' if passed else 'fail'}")
    for line in lines:
        print(line)
    if args.out is not None:
        out = _prepare_out_dir(args.out)
        _write_lines(out / "verify_report.csv", lines)
    return 0 if passed else 1


def cmd_convergence(args: argparse.Namespace) -> int:
    mapping = _read_config_section(args.config, "convergence")
    cfg, errors = convergence_config_from_mapping(mapping)
    if errors:
        for err in errors:
            print(f"config error: {err}", file=sys.stderr)
        return 2
    assert isinstance(cfg, ConvergenceConfig)
    cfg = replace(cfg, seed=_resolve_seed(args.seed, cfg.seed, cfg.seed))
    out = _prepare_out_dir(args.out)

    result = convergence_experiment(cfg, jobs=args.jobs or os.cpu_count() or 1)
    for table in result.tables:
        stem = f"convergence_{table.name.replace('@', '_')}"
        table.save(out / f"{stem}.csv")
        if args.svg:
            _write_lines(out / f"{stem}.svg", [table_svg(table)])
    _write_manifest(out, "convergence", result, cfg.seed, _config_lines(cfg))
    return 0


def cmd_breakdown(args: argparse.Namespace) -> int:
    mapping = _read_config_section(args.config, "breakdown")
    cfg, errors = breakdown_config_from_mapping(mapping)
    if errors:
        for err in errors:
            print(f"config error: {err}", file=sys.stderr)
        return 2
    assert isinstance(cfg, BreakdownConfig)
    cfg = replace(cfg, seed=_resolve_seed(args.seed, cfg.seed, cfg.seed))
    out = _prepare_out_dir(args.out)

    result = breakdown_experiment(cfg, jobs=args.jobs or os.cpu_count() or 1)
    (table,) = result.tables
    table.save(out / "breakdown.csv")
    if args.svg:
        curves = {}
        etas = [row[0] for row in table.rows]
        for col in range(1, len(table.columns)):
            curves[table.columns[col]] = (etas, [row[col] for row in table.rows])
        _write_lines(out / "breakdown.svg", [render_loglog_svg("breakdown", curves)])
    _write_manifest(out, "breakdown", result, cfg.seed, _config_lines(cfg))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="streamrobust",
        description="Streaming robust regression: verification suite and experiment harness.",
    )
    parser.add_argument("--version", action="version", version=f"streamrobust {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, with_only: bool, with_out_required: bool) -> None:
        p.add_argument("--config", default=None, metavar="PATH", help="INI config file")
        p.add_argument("--seed", type=int, default=None, metavar="U64", help="master seed")
        p.add_argument("--jobs", type=int, default=None, metavar="N", help="parallel cells")
        p.add_argument("--svg", action="store_true", help="also write SVG charts")
        if with_only:
            p.add_argument("--only", default=None, metavar="NAME", help="run one check group")
        if with_out_required:
            p.add_argument("--out", required=True, metavar="DIR", help="output directory")
        else:
            p.add_argument("--out", default=None, metavar="DIR", help="output directory")

    p_verify = sub.add_parser("verify", help="run the numerical verification suite")
    common(p_verify, with_only=True, with_out_required=False)
    p_verify.set_defaults(func=cmd_verify)

    p_conv = sub.add_parser("convergence", help="convergence-rate experiment")
    common(p_conv, with_only=False, with_out_required=True)
    p_conv.set_defaults(func=cmd_convergence)

    p_break = sub.add_parser("breakdown", help="breakdown sweep over corruption levels")
    common(p_break, with_only=False, with_out_required=True)
    p_break.set_defaults(func=cmd_breakdown)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.seed is not None and args.seed < 0:
        return _fail_usage(f"--seed must be nonnegative, got {args.seed}")
    if args.jobs is not None and args.jobs < 1:
        return _fail_usage(f"--jobs must be >= 1, got {args.jobs}")
    try:
        return args.func(args)
    except SystemExit as exc:  # raised by usage helpers
        code = exc.code
        return code if isinstance(code, int) else 2


if __name__ == "__main__":
    sys.exit(main())
