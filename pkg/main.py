import argparse
import logging
import sys

from dotenv import load_dotenv

from core import __version__
from handlers.convergence_handler import convergence_command
from handlers.precond_handler import precond_command
from handlers.psweep_handler import psweep_command
from handlers.solve_handler import solve_command
from handlers.validate_handler import validate_command
from utils.logger import setup_logging

logger = logging.getLogger(__name__)


def _add_input(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("path", nargs="?", help="network JSON file")
    parser.add_argument("--cross", type=int, default=None, metavar="K",
                        help="use the cross network refined K times instead of a file")


def _add_discretization(parser: argparse.ArgumentParser, p_default: int = 3) -> None:
    parser.add_argument("--p", type=int, default=p_default, help="polynomial degree")
    parser.add_argument("--s", type=int, default=0, choices=(-1, 0, 1), help="stabilization exponent")
    parser.add_argument("--c", type=float, default=1.0, help="stabilization scale, tau = c h^s")


def _add_solver(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--grid", default=None, help="coarse grid cells nx,ny,nz")
    parser.add_argument("--coarse-policy", default="strict", choices=("strict", "free"))
    parser.add_argument("--tol", type=float, default=None)
    parser.add_argument("--maxit", type=int, default=None)
    parser.add_argument("--threads", type=int, default=None)
    parser.add_argument("--manufactured", action="store_true",
                        help="impose the cross manufactured solution data on the network")
    parser.add_argument("--out", default=None, help="output folder")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hdg-beams", description="HDG solver for Timoshenko beam networks")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    validate = commands.add_parser("validate", help="check a network file")
    _add_input(validate)
    validate.add_argument("--json", action="store_true", help="print the report as JSON")
    validate.set_defaults(handler=validate_command)

    solve = commands.add_parser("solve", help="solve a network")
    _add_input(solve)
    _add_discretization(solve)
    _add_solver(solve)
    solve.add_argument("--precond", default="schwarz", choices=("none", "coarse", "local", "schwarz"))
    solve.add_argument("--local-solver", default="direct", help="direct or cg:<tol>")
    solve.add_argument("--flexible", action="store_true", help="flexible (Polak-Ribiere) PCG")
    solve.set_defaults(handler=solve_command)

    convergence = commands.add_parser("convergence", help="EOC study on the cross network")
    convergence.add_argument("--p", default="1,2", help="degrees, e.g. 1,2,5,6")
    convergence.add_argument("--s", default="-1,0,1", help="stabilization exponents")
    convergence.add_argument("--levels", type=int, default=6)
    convergence.add_argument("--c", type=float, default=1.0)
    convergence.add_argument("--threads", type=int, default=None)
    convergence.add_argument("--out", default=None)
    convergence.set_defaults(handler=convergence_command)

    precond = commands.add_parser("precond", help="residual histories per preconditioner mode")
    _add_input(precond)
    _add_discretization(precond)
    _add_solver(precond)
    precond.add_argument("--modes", default="none,coarse,local,schwarz")
    precond.add_argument("--spectral", action="store_true", help="also report the graph-Laplacian pencil")
    precond.set_defaults(handler=precond_command, tol=None)

    psweep = commands.add_parser("psweep", help="errors against the polynomial degree")
    psweep.add_argument("--level", default="2", help="refinement level(s), e.g. 1,2,3")
    psweep.add_argument("--p-range", default="1-8")
    psweep.add_argument("--s", type=int, default=0, choices=(-1, 0, 1))
    psweep.add_argument("--c", type=float, default=1.0)
    psweep.add_argument("--threads", type=int, default=None)
    psweep.add_argument("--out", default=None)
    psweep.set_defaults(handler=psweep_command)
    return parser


def main(argv=None) -> int:
    load_dotenv()
    setup_logging()
    args = build_parser().parse_args(argv)
    logger.info(f"Running {args.command}")
    return args.handler(args)


if __name__ == "__main__":
    sys.exit(main())
