import logging

from core.config import Settings
from core.errors import EXIT_OK
from core.verify import asymptotic_eoc, convergence_study
from handlers.common import out_path, output_folder, parse_int_list, run_guarded
from utils.file_manager import FileManager, RunManifest
from utils.progress_tracker import ProgressTracker

logger = logging.getLogger(__name__)

CONVERGENCE_HEADER = ["level", "h_max", "err_primal", "err_dual", "eoc_primal", "eoc_dual"]


def convergence_command(args) -> int:
    """Handle `convergence`: one CSV per (p, s) plus a summary of asymptotic EOCs."""

    def body() -> int:
        degrees = parse_int_list(args.p)
        exponents = parse_int_list(args.s)
        threads = args.threads or Settings.threads()
        folder = output_folder(args.out)
        tracker = ProgressTracker("convergence")
        outputs, summary = [], []
        for p in degrees:
            for s in exponents:
                with tracker.phase(f"p{p}_s{s}"):
                    records = convergence_study(p, s, args.levels, c=args.c, threads=threads)
                outputs.append(FileManager.write_csv(out_path(folder, f"convergence_p{p}_s{s}.csv"),
                                                     CONVERGENCE_HEADER, (r.row() for r in records)))
                eoc_primal = asymptotic_eoc(records, "primal")
                eoc_dual = asymptotic_eoc(records, "dual")
                summary.append([p, s, eoc_primal, eoc_dual])
                print(f"p={p} s={s:+d}: EOC primal {eoc_primal:.3f}, dual {eoc_dual:.3f}")
        outputs.append(FileManager.write_csv(out_path(folder, "summary.csv"),
                                             ["p", "s", "eoc_primal", "eoc_dual"], summary))
        FileManager.write_manifest(folder, RunManifest(
            command="convergence", input_path="cross", stabilization={"c": args.c}, outputs=outputs,
            timings_ms=tracker.timings, extra={"p": degrees, "s": exponents, "levels": args.levels}))
        tracker.final_status(f"Convergence study finished ({len(summary)} configurations)")
        return EXIT_OK

    return run_guarded("convergence", body)
