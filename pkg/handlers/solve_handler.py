import logging

from core.assembly import assemble, recover
from core.config import Settings, StabilizationRule
from core.errors import EXIT_NOT_CONVERGED, EXIT_OK
from core.solver import make_preconditioner, pcg
from core.verify import cross_solution, manufactured_problem
from handlers.common import load_input, out_path, output_folder, run_guarded
from utils.file_manager import FileManager, RunManifest
from utils.progress_tracker import ProgressTracker

logger = logging.getLogger(__name__)


def solve_command(args) -> int:
    """Handle `solve`: assemble, precondition, solve, recover and write results.

    Exit code is 0 iff PCG converged; the report is written either way.
    """

    def body() -> int:
        tracker = ProgressTracker("solve")
        with tracker.phase("parse"):
            net, label = load_input(args.path, args.cross)
            loads = {}
            if args.manufactured:
                net, loads = manufactured_problem(net, cross_solution())
        rule = StabilizationRule(s=args.s, c=args.c)
        config = Settings.solver_config(tol=args.tol, maxit=args.maxit, grid=args.grid, precond=args.precond,
                                        coarse_policy=args.coarse_policy, local_solver=args.local_solver,
                                        flexible=args.flexible or None, threads=args.threads)
        with tracker.phase("assemble"):
            system = assemble(net, args.p, rule, loads, threads=config.threads)
        with tracker.phase("setup"):
            precond, _ = make_preconditioner(system, net, config)
        with tracker.phase("solve"):
            x, report = pcg(system, precond, tol=config.tol, maxit=config.maxit, flexible=config.flexible)
        with tracker.phase("recover"):
            solution = recover(system, x)
        report.timings.update(tracker.timings)

        folder = output_folder(args.out)
        outputs = [
            FileManager.write_json(out_path(folder, "nodal_solution.json"), solution.to_dict()["nodes"]),
            FileManager.write_json(out_path(folder, "edge_coefficients.json"), solution.to_dict()["edges"]),
            FileManager.write_csv(out_path(folder, "solve_report.csv"),
                                  ["iteration", "residual", "plain_residual"], report.rows()),
        ]
        manifest = RunManifest(command="solve", input_path=label, p=args.p,
                               stabilization={"s": rule.s, "c": rule.c}, solver=config.model_dump(),
                               grid=list(config.grid), outputs=outputs, timings_ms=report.timings,
                               extra={"iterations": report.iterations, "converged": report.converged,
                                      "dofs": system.size, "manufactured": bool(args.manufactured)})
        FileManager.write_manifest(folder, manifest)
        tracker.final_status(f"Solved {label}: {system.size} dofs, {report.iterations} iterations")
        if not report.converged:
            logger.error(f"❌ PCG did not reach tol={config.tol:g} in {config.maxit} iterations")
            return EXIT_NOT_CONVERGED
        return EXIT_OK

    return run_guarded("solve", body)
