import json
import logging
import math

from core.errors import EXIT_OK
from core.network import graph_laplacian, lambda_min_estimate, mass_operator
from handlers.common import load_input, run_guarded

logger = logging.getLogger(__name__)


def validate_report(net) -> dict:
    """Counts, connectivity, edge-length range and the Friedrichs constant estimate.

    lambda_min is None when every node is Dirichlet.
    """
    lam = lambda_min_estimate(graph_laplacian(net), mass_operator(net), net.dirichlet_mask)
    return {
        "summary": net.summary(),
        "nodes": net.num_nodes,
        "edges": net.num_edges,
        "dirichlet_nodes": len(net.dirichlet_nodes),
        "connected": not net.unreachable_nodes(),
        "h_min": net.h_min,
        "h_max": net.h_max,
        "lambda_min": lam if math.isfinite(lam) else None,
    }


def validate_command(args) -> int:
    """Handle `validate PATH`: print diagnostics, exit 2 on an invalid network."""

    def body() -> int:
        net, label = load_input(args.path, getattr(args, "cross", None))
        report = validate_report(net)
        if args.json:
            print(json.dumps(report, indent=2, allow_nan=False))
        else:
            lam = report["lambda_min"]
            print(f"✅ {label}: {report['summary']}")
            print(f"   h_min = {report['h_min']:.17g}, h_max = {report['h_max']:.17g}")
            print(f"   lambda_min = {'none (no free nodes)' if lam is None else format(lam, '.17g')}")
        logger.info(f"Validated {label}: {report['summary']}")
        return EXIT_OK

    return run_guarded("validate", body)
