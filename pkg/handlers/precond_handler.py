import logging

from core.assembly import assemble
from core.config import Settings, StabilizationRule
from core.errors import EXIT_NOT_CONVERGED, EXIT_OK, SolverConfigurationError
from core.solver import make_preconditioner, pcg, spectral_equivalence_report
from core.verify import cross_solution, manufactured_problem
from handlers.common import load_input, out_path, output_folder, run_guarded
from utils.file_manager import FileManager, RunManifest
from utils.progress_tracker import ProgressTracker

logger = logging.getLogger(__name__)

MODES = ("none", "coarse", "local", "schwarz")


def precond_command(args) -> int:
    """Handle `precond`: residual history per preconditioner mode on one system."""

    def body() -> int:
        modes = [m.strip() for m in args.modes.split(",") if m.strip()]
        unknown = [m for m in modes if m not in MODES]
        if unknown or not modes:
            raise SolverConfigurationError(f"unknown preconditioner modes {unknown or args.modes!r}; "
                                           f"choose from {list(MODES)}")
        tracker = ProgressTracker("precond")
        net, label = load_input(args.path, args.cross)
        loads = {}
        if args.cross is not None or args.manufactured:
            net, loads = manufactured_problem(net, cross_solution())
        rule = StabilizationRule(s=args.s, c=args.c)
        with tracker.phase("assemble"):
            system = assemble(net, args.p, rule, loads, threads=args.threads or Settings.threads())

        folder = output_folder(args.out)
        outputs, summary = [], []
        all_converged = True
        for mode in modes:
            config = Settings.solver_config(tol=args.tol, maxit=args.maxit, grid=args.grid, precond=mode,
                                            coarse_policy=args.coarse_policy, threads=args.threads)
            with tracker.phase(f"setup_{mode}"):
                precond, _ = make_preconditioner(system, net, config)
            with tracker.phase(f"solve_{mode}"):
                _, report = pcg(system, precond, tol=config.tol, maxit=config.maxit, flexible=config.flexible)
            outputs.append(FileManager.write_csv(out_path(folder, f"residuals_{mode}.csv"),
                                                 ["iteration", "residual", "plain_residual"], report.rows()))
            summary.append([mode, report.iterations, int(report.converged), report.final_residual])
            all_converged &= report.converged
            print(f"{mode:>8}: {report.iterations} iterations, converged={report.converged}")
        outputs.append(FileManager.write_csv(out_path(folder, "iterations.csv"),
                                             ["mode", "iterations", "converged", "final_residual"], summary))

        extra = {"modes": modes, "dofs": system.size}
        if args.spectral:
            theta_max, theta_min = spectral_equivalence_report(system, net)
            extra.update(theta_max=theta_max, theta_min=theta_min, theta_ratio=theta_max / theta_min)
            print(f"spectral: theta_max={theta_max:.6g} theta_min={theta_min:.6g}")
        FileManager.write_manifest(folder, RunManifest(
            command="precond", input_path=label, p=args.p, stabilization={"s": rule.s, "c": rule.c},
            solver={"tol": args.tol, "maxit": args.maxit, "coarse_policy": args.coarse_policy},
            grid=list(config.grid), outputs=outputs, timings_ms=tracker.timings, extra=extra))
        return EXIT_OK if all_converged else EXIT_NOT_CONVERGED

    return run_guarded("precond", body)
