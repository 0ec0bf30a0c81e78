"""Runs scenarios end to end and sweeps them over one parameter.

run_scenario builds the network a scenario describes, reconstructs it,
compares the result with the hidden graph, and writes the artifacts:

    graph_true.csv    true edge list (i, j, weight)
    graph_est.csv     recovered edge list
    adjacency_true.csv, adjacency_est.csv
                      n x n weighted adjacency matrices
    probes.csv/.json  probe log and its header
    edge_errors.csv   per-edge comparison
    metrics.json      headline numbers (keys sorted)
    trajectory.csv    sampled probe trajectories (trajectory_stride > 0)

A run that fails part way writes metrics.json with "complete": false and
the failing stage, next to whatever artifacts were already written.

Classes:
    RunOutcome: Exit status, metrics and location of one run.
    ScenarioTester: Tracks the cells of a parameter sweep.

Functions:
    output_root: Default output root (NETPROBE_OUTPUT_ROOT or ./results).
    run_scenario: One scenario, artifacts on disk.
    sweep: One run per parameter value, table on disk.
    casestudy: Run a shipped case-study preset.
"""

from dataclasses import dataclass, replace
import json
import logging
import math
import os
from pathlib import Path
import timeit

import numpy as np
import pandas as pd

from netprobe.analysis import compare, connection_error
from netprobe.graph import write_adjacency_csv, write_edge_csv
from netprobe.model import DomainError, connection_matrix_true
from netprobe.reconstruction import (
    ReconstructionError,
    estimate_reachable_rank,
    reconstruct,
    restricted_probe_samples,
    write_probe_log,
)
from netprobe.scenario import (
    build_network,
    build_system,
    load_scenario,
    preset_path,
    seed_int,
    seed_streams,
    with_overrides,
)
from netprobe.simulator import write_trajectory_csv


logger = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "NETPROBE_OUTPUT_ROOT"
DEFAULT_OUTPUT_ROOT = "results"
RANK_TOL = 1e-6

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_MISMATCH = 2

SWEEP_PARAMS = ("kappa", "sigma", "switch_time")
SWEEP_COLUMNS = [
    "status", "precision", "recall", "max_abs_err", "max_rel_err",
    "max_connection_err", "runtime_sec", "error",
]


def output_root():
    return Path(os.environ.get(OUTPUT_ROOT_ENV, DEFAULT_OUTPUT_ROOT))


@dataclass(frozen=True)
class RunOutcome:
    """Result of run_scenario.

    Attributes:
        status: EXIT_OK, EXIT_MISMATCH (graph differs) or EXIT_ERROR.
        metrics: The dict written to metrics.json.
        out_dir: Directory holding the artifacts.
        summary: One-line summary.
        result: ReconstructionResult, None on error.
    """

    status: int
    metrics: dict
    out_dir: Path
    summary: str
    result: object = None


def _jsonable(value):
    if isinstance(value, (float, np.floating)):
        return None if math.isnan(value) else float(value)
    if isinstance(value, np.integer):
        return int(value)
    return value


def _write_metrics(metrics, out_dir):
    with open(out_dir / "metrics.json", "w") as f:
        json.dump({k: _jsonable(v) for k, v in metrics.items()}, f, indent=2, sort_keys=True)
        f.write("\n")


def run_scenario(s, out_root=None):
    """Reconstructs the network of scenario s and writes the artifacts.

    Args:
        s: A Scenario.
        out_root: Output root; s.output_dir is created below it. Defaults
            to output_root().

    Returns:
        A RunOutcome. Pipeline errors are reported through its status,
        not raised.
    """
    start = timeit.default_timer()
    out_dir = Path(out_root if out_root is not None else output_root()) / s.output_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    algo = s.algorithm
    metrics = {"kappa": algo.kappa, "epsilon": algo.epsilon, "seed": s.seed}

    system = build_system(s)
    write_edge_csv(system.graph, out_dir / "graph_true.csv")
    write_adjacency_csv(system.graph, out_dir / "adjacency_true.csv")
    network = build_network(s, system)
    probe_seed = seed_int(seed_streams(s)["probe"])

    try:
        result = reconstruct(network, algo.kappa, algo.epsilon, seed=probe_seed, method=algo.method)
    except (ReconstructionError, DomainError, ValueError) as exc:
        metrics.update(
            complete=False,
            stage=getattr(exc, "stage", None),
            error=str(exc),
            runtime_sec=timeit.default_timer() - start,
        )
        _write_metrics(metrics, out_dir)
        logger.error("%s failed: %s", s.name, exc)
        return RunOutcome(EXIT_ERROR, metrics, out_dir, f"{s.name}: FAILED {exc}")

    write_edge_csv(result.graph, out_dir / "graph_est.csv")
    write_adjacency_csv(result.graph, out_dir / "adjacency_est.csv")
    write_probe_log(result.log, out_dir / "probes.csv")
    comparison = compare(system.graph, result)
    comparison.edges.to_csv(out_dir / "edge_errors.csv", index=False, float_format="%.17g")
    if algo.trajectory_stride and not algo.oracle:
        write_trajectory_csv(network.trajectory(), out_dir / "trajectory.csv")

    try:
        max_conn = connection_error(result.M, connection_matrix_true(system, result.log.y0))
    except DomainError:
        max_conn = math.nan

    metrics.update(
        complete=True,
        precision=comparison.precision,
        recall=comparison.recall,
        max_abs_err=comparison.max_abs_weight_err,
        max_rel_err=comparison.max_rel_weight_err,
        max_connection_err=max_conn,
        num_edges_true=system.graph.num_edges,
        num_edges_est=result.graph.num_edges,
        branch=result.diagnostics["branch"],
        path=result.diagnostics["path"],
        condition_number=result.diagnostics["condition_number"],
        error_scale=result.diagnostics["error_scale"],
        num_sign_conflicts=len(result.diagnostics["sign_conflicts"]),
    )

    if s.probe_nodes is not None:
        network.reset()
        num = s.probe_samples or 2 * len(s.probe_nodes)
        try:
            samples = restricted_probe_samples(
                network, result.log.w0, s.probe_nodes, num, algo.kappa, seed=probe_seed
            )
            metrics["reachable_rank"] = estimate_reachable_rank(samples, RANK_TOL)
        except ReconstructionError as exc:
            logger.warning("restricted probing failed: %s", exc)
            metrics["reachable_rank"] = None

    metrics["runtime_sec"] = timeit.default_timer() - start
    _write_metrics(metrics, out_dir)

    status = EXIT_OK if comparison.exact else EXIT_MISMATCH
    summary = (
        f"{s.name}: precision={comparison.precision:.4f} recall={comparison.recall:.4f} "
        f"max_rel_err={comparison.max_rel_weight_err:.3g} runtime={metrics['runtime_sec']:.2f}s"
    )
    logger.info(summary)
    return RunOutcome(status, metrics, out_dir, summary, result)


def _cell_scenario(s, param, value):
    label = f"{param}={value:g}"
    cell_dir = f"{s.output_dir}/sweep_{param}/{label}"
    if param == "kappa":
        cell = with_overrides(s, kappa=value)
    elif param == "sigma":
        cell = with_overrides(s, measurement_sigma=value)
    else:
        cell = with_overrides(s, switch_time=value)
        cell = replace(cell, algorithm=replace(cell.algorithm, switch_mode="fixed"))
    return replace(cell, output_dir=cell_dir), label


class ScenarioTester:
    """Runs one scenario across values of a parameter and tracks the results.

    Every cell shares the scenario's seeds, so cells differ only in the
    swept parameter. Results are kept as a dict of lists, one entry per
    cell, so they can go straight into a pandas.DataFrame.

    Attributes:
        scenario: Base Scenario.
        out_root: Output root for every cell.
    """

    def __init__(self, scenario, out_root=None):
        self.scenario = scenario
        self.out_root = out_root
        self._results = {}

    def run_sweep(self, param, values, callback=None):
        """Runs one cell per value.

        A failing cell is recorded (status EXIT_ERROR, error message) and
        the sweep continues.

        Args:
            param: One of SWEEP_PARAMS.
            values: Parameter values, nonempty.
            callback: Called before each cell and once at the end with
                (label, num_done, total, total_time, cell_label); the last
                call has cell_label None.

        Returns:
            Number of cells run.

        Raises:
            ValueError: Unknown param or no values.
        """
        if param not in SWEEP_PARAMS:
            raise ValueError(f"Cannot sweep {param}, expected one of {SWEEP_PARAMS}")
        values = [float(v) for v in values]
        if not values:
            raise ValueError("sweep needs at least one value")
        if param in ("kappa", "switch_time") and min(values) <= 0:
            raise ValueError(f"{param} values must be positive")
        if param == "sigma" and min(values) < 0:
            raise ValueError("sigma values must be >= 0")

        label = f"{self.scenario.name}:{param}"
        self._results = {param: []}
        for k in SWEEP_COLUMNS:
            self._results[k] = []

        total_time = 0.0
        for num_done, value in enumerate(values):
            cell, cell_label = _cell_scenario(self.scenario, param, value)
            if callback:
                callback(label, num_done, len(values), total_time, cell_label)

            outcome = {}
            t = timeit.timeit(
                lambda: outcome.update(cell=self._run_cell(cell)),
                number=1,
            )
            total_time += t
            self._record(param, value, outcome["cell"])

        if callback:
            callback(label, len(values), len(values), total_time, None)
        return len(values)

    def _run_cell(self, cell):
        try:
            return run_scenario(cell, self.out_root)
        except (RuntimeError, ValueError) as exc:
            logger.error("sweep cell %s failed: %s", cell.output_dir, exc)
            return exc

    def _record(self, param, value, outcome):
        self._results[param].append(value)
        if isinstance(outcome, Exception):
            row = {"status": EXIT_ERROR, "error": str(outcome)}
        else:
            row = dict(outcome.metrics, status=outcome.status)
        for k in SWEEP_COLUMNS:
            self._results[k].append(_jsonable(row.get(k)))

    def get_results(self):
        """Returns the sweep table as a DataFrame."""
        return pd.DataFrame(self._results)

    def __repr__(self):
        cells = len(next(iter(self._results.values()), []))
        return f"{self.__class__.__name__}({self.scenario.name}, cells={cells})"


def sweep(s, param, values, out_root=None, callback=None):
    """Runs s once per value of param and writes sweep_<param>.csv.

    Returns:
        The sweep table (one row per value).
    """
    tester = ScenarioTester(s, out_root)
    tester.run_sweep(param, values, callback)
    table = tester.get_results()
    out_dir = Path(out_root if out_root is not None else output_root()) / s.output_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    table.to_csv(out_dir / f"sweep_{param}.csv", index=False, float_format="%.10g")
    return table


def casestudy(name, out_root=None, **overrides):
    """Runs the shipped preset casestudy_<name> (lti or neural)."""
    s = load_scenario(preset_path(f"casestudy_{name}"))
    return run_scenario(with_overrides(s, **overrides), out_root)
