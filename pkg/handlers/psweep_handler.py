import logging

from core.config import Settings
from core.errors import EXIT_OK
from core.verify import p_sweep
from handlers.common import out_path, output_folder, parse_int_list, run_guarded
from utils.file_manager import FileManager, RunManifest
from utils.progress_tracker import ProgressTracker

logger = logging.getLogger(__name__)

PSWEEP_HEADER = ["level", "p", "h_max", "err_primal", "err_dual", "ratio_primal", "ratio_dual"]


def psweep_command(args) -> int:
    """Handle `psweep`: errors against the degree at each requested fixed level."""

    def body() -> int:
        degrees = parse_int_list(args.p_range)
        levels = parse_int_list(args.level)
        threads = args.threads or Settings.threads()
        folder = output_folder(args.out)
        tracker = ProgressTracker("psweep")
        outputs = []
        for level in levels:
            with tracker.phase(f"level{level}"):
                records = p_sweep(level, degrees, s=args.s, c=args.c, threads=threads)
            outputs.append(FileManager.write_csv(out_path(folder, f"psweep_level{level}.csv"),
                                                 PSWEEP_HEADER, (r.row() for r in records)))
            for r in records:
                print(f"level {level} p={r.p}: primal {r.err_primal:.3e}, dual {r.err_dual:.3e}")
        FileManager.write_manifest(folder, RunManifest(
            command="psweep", input_path="cross", stabilization={"s": args.s, "c": args.c}, outputs=outputs,
            timings_ms=tracker.timings, extra={"levels": levels, "p": degrees}))
        return EXIT_OK

    return run_guarded("psweep", body)
