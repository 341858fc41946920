import argparse
import json
import os
import sys
from pathlib import Path
from typing import Callable, Dict, List, Sequence

ROOT_DIR = Path(__file__).parent

try:
    from dotenv import load_dotenv

    load_dotenv(dotenv_path=ROOT_DIR / ".env")
except Exception:
    pass

from app.core.job_manager import MANIFEST_NAME, JobManager
from app.services.braid_core import (
    DEFAULT_ENTROPY_ITERS,
    BraidParseError,
    BraidWord,
    NotPure,
    braid_entropy_estimate,
    exponent_sum,
    format_braid,
    linking_number,
    parse_braid,
    permutation,
)
from app.services.braid_trace import DegenerateConfig, UnresolvedCrossing
from app.services.gg_estimator import IllConditionedFit, NoSupportDeclared, SupportsOverlap
from app.services.norm_bounds import PlacementFailed
from app.services.quasimorphism import homogenize, resolve_quasimorphism, seifert_signature, signature_of_closure
from app.services.sphere_geom import SamplingBudgetExceeded
from app.utils.config import apply_overrides, load_config
from app.utils.logging import get_logger, log_event
from app.utils.validation import GGError, InvariantViolation, ValidationError

LOGGER = get_logger("cli")

EXIT_OK = 0
EXIT_OTHER = 1
EXIT_CONFIG = 2
EXIT_DEGENERATE = 3
EXIT_INVARIANT = 4

CONFIG_ERRORS = (ValidationError, BraidParseError, IllConditionedFit, NoSupportDeclared, SupportsOverlap, PlacementFailed, NotPure, ValueError)
DEGENERATE_ERRORS = (SamplingBudgetExceeded, DegenerateConfig, UnresolvedCrossing)


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, InvariantViolation):
        return EXIT_INVARIANT
    if isinstance(exc, DEGENERATE_ERRORS):
        return EXIT_DEGENERATE
    if isinstance(exc, CONFIG_ERRORS):
        return EXIT_CONFIG
    return EXIT_OTHER


def _schedule(text: str) -> List[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _cmd_run(args: argparse.Namespace) -> int:
    config = apply_overrides(load_config(args.config), seed=args.seed, out=args.out)
    job = JobManager(config.output).run(config, workers=args.workers)
    summary = {
        "run_id": job.id,
        "experiment": job.experiment,
        "status": job.status,
        "config_hash": job.config_hash,
        "manifest": os.path.join(config.output, MANIFEST_NAME),
    }
    print(json.dumps(summary, ensure_ascii=True, sort_keys=True))
    return EXIT_OK


def _braid_reduce(w: BraidWord, args: argparse.Namespace) -> str:
    return format_braid(w.reduced())


def _braid_permutation(w: BraidWord, args: argparse.Namespace) -> str:
    return str(permutation(w))


def _braid_expsum(w: BraidWord, args: argparse.Namespace) -> str:
    return str(exponent_sum(w))


def _braid_linking(w: BraidWord, args: argparse.Namespace) -> str:
    i, j = sorted((args.i, args.j))
    return str(linking_number(w, i, j))


def _braid_entropy(w: BraidWord, args: argparse.Namespace) -> str:
    return f"{braid_entropy_estimate(w, iters=args.iters):.6f}"


def _braid_signature(w: BraidWord, args: argparse.Namespace) -> str:
    if args.oracle == "seifert":
        return str(seifert_signature(w))
    return str(signature_of_closure(w))


def _braid_homogenize(w: BraidWord, args: argparse.Namespace) -> str:
    q = resolve_quasimorphism(args.quasimorphism)
    result = homogenize(q, w, args.schedule)
    return f"{result.value:.6f}"


BRAID_COMMANDS: Dict[str, Callable[[BraidWord, argparse.Namespace], str]] = {
    "reduce": _braid_reduce,
    "permutation": _braid_permutation,
    "expsum": _braid_expsum,
    "linking": _braid_linking,
    "entropy": _braid_entropy,
    "signature": _braid_signature,
    "homogenize": _braid_homogenize,
}


def _cmd_braid(args: argparse.Namespace) -> int:
    w = parse_braid(args.word)
    print(BRAID_COMMANDS[args.braid_command](w, args))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gg", description="Quasimorphism averages of Hamiltonian maps on the sphere")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="run one experiment from a JSON config")
    run.add_argument("config")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--out", default=None)
    run.add_argument("--workers", type=int, default=None)
    run.set_defaults(handler=_cmd_run)

    braid = commands.add_parser("braid", help="braid word utilities; words read as 'n; l1 l2 ...'")
    tools = braid.add_subparsers(dest="braid_command", required=True)
    for name in ("reduce", "permutation", "expsum"):
        tools.add_parser(name).add_argument("word")
    linking = tools.add_parser("linking")
    linking.add_argument("i", type=int)
    linking.add_argument("j", type=int)
    linking.add_argument("word")
    entropy = tools.add_parser("entropy")
    entropy.add_argument("word")
    entropy.add_argument("--iters", type=int, default=DEFAULT_ENTROPY_ITERS)
    signature = tools.add_parser("signature")
    signature.add_argument("word")
    signature.add_argument("--oracle", choices=("goeritz", "seifert"), default="goeritz")
    homog = tools.add_parser("homogenize")
    homog.add_argument("quasimorphism")
    homog.add_argument("word")
    homog.add_argument("--schedule", type=_schedule, default=None)
    braid.set_defaults(handler=_cmd_braid)
    return parser


def cli(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except (GGError, ValueError) as exc:
        code = exit_code_for(exc)
        log_event(LOGGER, "command_failed", command=args.command, error=str(exc), exit_code=code)
        print(f"error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(cli())
