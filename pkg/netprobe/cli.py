"""Command line front end: netprobe run | sweep | casestudy | verify.

Exit status is 0 on success, 2 when the reconstruction completed but the
recovered graph differs from the true one, and 1 on any error.
"""

import argparse
import logging
from pathlib import Path
import sys
import unittest

from netprobe.experiment import (
    EXIT_ERROR,
    EXIT_OK,
    SWEEP_PARAMS,
    output_root,
    run_scenario,
    sweep,
)
from netprobe.scenario import ScenarioError, load_scenario, preset_path, with_overrides


logger = logging.getLogger("netprobe")

TESTS_DIR = Path(__file__).resolve().parent.parent / "tests"


def _node_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated node indices, got {text!r}")


def _value_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated numbers, got {text!r}")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="netprobe",
        description="Reconstruct diffusively-coupled networks by steady-state probing.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log at DEBUG level")
    verbs = parser.add_subparsers(dest="verb", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="override the scenario seed")
    common.add_argument("--out", type=Path, help="output root (default: $NETPROBE_OUTPUT_ROOT or ./results)")
    common.add_argument("--kappa", type=float, help="probe size")
    common.add_argument("--epsilon", type=float, help="edge threshold")
    common.add_argument("--parallel-probes", action="store_true", default=None,
                        help="simulate probes independently on a thread pool")
    common.add_argument("--probe-nodes", type=_node_list, help="estimate the rank reachable from these nodes")

    run = verbs.add_parser("run", parents=[common], help="run one scenario")
    run.add_argument("--scenario", type=Path, required=True)

    sw = verbs.add_parser("sweep", parents=[common], help="run a scenario over parameter values")
    sw.add_argument("--scenario", type=Path, required=True)
    sw.add_argument("--param", choices=SWEEP_PARAMS, required=True)
    sw.add_argument("--values", type=_value_list, required=True, help="comma separated values")

    case = verbs.add_parser("casestudy", parents=[common], help="run a shipped case study")
    case.add_argument("name", choices=["lti", "neural"])

    verbs.add_parser("verify", help="run the test suite")
    return parser


def _scenario(args, path):
    s = load_scenario(path)
    return with_overrides(
        s,
        seed=args.seed,
        kappa=args.kappa,
        epsilon=args.epsilon,
        parallel_probes=args.parallel_probes,
        probe_nodes=args.probe_nodes,
    )


def _progress(label, num_done, total, total_time, cell_label):
    if cell_label is None:
        logger.info("%s: %d cells in %.1fs", label, total, total_time)
    else:
        logger.info("%s: %d/%d (%.1fs) next %s", label, num_done, total, total_time, cell_label)


def verify():
    """Discovers and runs tests/; returns an exit status."""
    suite = unittest.defaultTestLoader.discover(str(TESTS_DIR), top_level_dir=str(TESTS_DIR.parent))
    result = unittest.TextTestRunner(verbosity=1).run(suite)
    return EXIT_OK if result.wasSuccessful() else EXIT_ERROR


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )

    if args.verb == "verify":
        return verify()

    out_root = args.out if args.out is not None else output_root()
    try:
        if args.verb == "casestudy":
            s = _scenario(args, preset_path(f"casestudy_{args.name}"))
        else:
            s = _scenario(args, args.scenario)

        if args.verb == "sweep":
            table = sweep(s, args.param, args.values, out_root, callback=_progress)
            print(table.to_string(index=False))
            return EXIT_OK if (table["status"] != EXIT_ERROR).all() else EXIT_ERROR

        outcome = run_scenario(s, out_root)
    except ScenarioError as exc:
        print(f"netprobe: {exc}", file=sys.stderr)
        return EXIT_ERROR

    print(outcome.summary)
    return outcome.status
