"""``spectral-adv`` command line: train, attack, eval, verify, report.

Exit codes: 0 success, 1 configuration error, 2 runtime error,
3 a verification check above its threshold.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from collections.abc import Sequence
from pathlib import Path

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_VERIFY = 3

THREAD_VARIABLES = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def _u64(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(
            f"seed must be an unsigned 64-bit integer, got {text}"
        )
    return value


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spectral-adv",
        description="Frequency-domain adversarial attacks and adversarial training.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML run configuration")
    common.add_argument("--checkpoint", type=Path, help="model checkpoint (SADV1)")
    common.add_argument(
        "--out", type=Path, help="output directory (default: report.output_dir)"
    )
    common.add_argument(
        "--seed",
        type=_u64,
        help="override the run seed (data, init, and attacks without their own seed)",
    )
    common.add_argument("--threads", type=_positive, help="BLAS thread count")
    common.add_argument(
        "-v", "--verbose", action="count", default=0, help="more logging"
    )

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="standard or adversarial training")
    sub.add_parser("attack", parents=[common], help="per-step attack table and traces")
    sub.add_parser("eval", parents=[common], help="natural and adversarial accuracy")
    sub.add_parser("verify", parents=[common], help="DCT and gradient-transport checks")
    sub.add_parser("report", parents=[common], help="tables and figures")
    return parser


def _limit_threads(threads: int | None) -> None:
    # must run before numpy is imported
    if threads is None:
        return
    for name in THREAD_VARIABLES:
        os.environ[name] = str(threads)


def _configured_threads(args: argparse.Namespace) -> int | None:
    if args.threads is not None:
        return int(args.threads)
    if args.config is None:
        return None
    import tomllib  # noqa: PLC0415

    try:
        value = tomllib.loads(args.config.read_text(encoding="utf-8")).get("threads")
    except (OSError, tomllib.TOMLDecodeError):
        return None  # load_run_config reports it properly
    return value if isinstance(value, int) and value > 0 else None


def run(args: argparse.Namespace) -> int:
    """Execute one parsed command and return its exit code."""
    _limit_threads(_configured_threads(args))

    from spectral_adv import commands  # noqa: PLC0415
    from spectral_adv.exceptions import ConfigError, SpectralAdvError  # noqa: PLC0415
    from spectral_adv.settings import load_run_config  # noqa: PLC0415

    try:
        config = load_run_config(args.config, seed=args.seed, threads=args.threads)
        out = Path(args.out) if args.out else Path(config.report.output_dir)
        if args.command == "train":
            commands.cmd_train(config, out, checkpoint=args.checkpoint)
        elif args.command == "verify":
            report = commands.cmd_verify(config, out, checkpoint=args.checkpoint)
            if not report.passed:
                failed = [c.check for c in report.checks if not c.passed]
                log.error("Verification failed: %s", ", ".join(failed))
                return EXIT_VERIFY
        else:
            if args.checkpoint is None:
                raise ConfigError(f"{args.command} needs --checkpoint")
            handler = {
                "attack": commands.cmd_attack,
                "eval": commands.cmd_eval,
                "report": commands.cmd_report,
            }[args.command]
            handler(config, out, checkpoint=args.checkpoint)
    except ConfigError as exc:
        log.error("Configuration error: %s", exc)
        return EXIT_CONFIG
    except (SpectralAdvError, ValueError, OSError) as exc:
        log.error("%s failed: %s", args.command, exc)
        return EXIT_RUNTIME
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING
    if args.verbose:
        level = logging.DEBUG if args.verbose > 1 else logging.INFO
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    return run(args)


if __name__ == "__main__":
    sys.exit(main())
