"""Command line entry point.

Exit status: 0 when every check passes, 1 on a numeric check failure or
numeric error, 2 on a usage or configuration error.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path as FsPath
from typing import Optional, Sequence

from .. import __version__
from ..flow import FlowBlowUp
from ..lyapunov import PreconditionError
from .config import KINDS, ConfigError, load_config
from .manifest import atomic_write
from .runner import THREADS_ENV, run
from .suites import SUITES, UnknownSuite, verify

EXIT_OK, EXIT_CHECK_FAILED, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _overrides(pairs: Sequence[str]) -> dict:
    out = {}
    for item in pairs:
        if "=" not in item:
            raise ConfigError("--set", f"expected key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fraclyap", description="Experiments for SDEs driven by fractional Brownian motion.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for kind in KINDS:
        sp = sub.add_parser(kind, help=f"run a {kind} experiment from a config file")
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
        sp.add_argument("--seed", type=int, help="single replicate seed, replaces seeds in the config")
        sp.add_argument("--out", help="output directory (must be new or empty)")
        sp.add_argument("--threads", type=int, help=f"worker threads (default ${THREADS_ENV} or 1)")
    vp = sub.add_parser("verify", help="run a named verification suite")
    vp.add_argument("suite", help="one of: " + ", ".join(SUITES))
    vp.add_argument("--out", help="directory for the JSON report")
    vp.add_argument("--threads", type=int, help="accepted for symmetry; suites run serially")
    return p


def _run_experiment(args) -> int:
    overrides = _overrides(args.set)
    if args.seed is not None:
        overrides["seeds"] = str(args.seed)
    cfg = load_config(args.config, overrides, default_kind=args.command)
    if cfg.kind != args.command:
        raise ConfigError("kind", f"config declares {cfg.kind!r} but the subcommand is {args.command!r}")
    manifest = run(cfg, out=args.out, threads=args.threads)
    for c in manifest.checks:
        print(f"{'PASS' if c['passed'] else 'FAIL'}  {c['name']}")
    print(f"wrote {len(manifest.files)} files and {manifest.config['out']}/manifest.json")
    return EXIT_OK if manifest.passed else EXIT_CHECK_FAILED


def _run_verify(args) -> int:
    report = verify(args.suite)
    for r in report.results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}")
    if args.out:
        out = FsPath(args.out)
        out.mkdir(parents=True, exist_ok=True)
        atomic_write(out / f"verify_{args.suite}.json", report.to_json())
    print(f"suite {args.suite}: {'PASS' if report.passed else 'FAIL'} ({report.wall_time:.1f}s)")
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "verify":
            return _run_verify(args)
        return _run_experiment(args)
    except (ConfigError, UnknownSuite, PreconditionError) as exc:
        msg = exc.args[0] if isinstance(exc, UnknownSuite) else str(exc)
        print(f"fraclyap: error: {msg}", file=sys.stderr)
        return EXIT_USAGE
    except (FloatingPointError, FlowBlowUp, ArithmeticError) as exc:
        print(f"fraclyap: numeric failure in {type(exc).__module__}: {exc}", file=sys.stderr)
        return EXIT_CHECK_FAILED


if __name__ == "__main__":
    sys.exit(main())
