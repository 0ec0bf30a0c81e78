"""Error metrics and diagnostics for reconstructed graphs.

Classes:
    GraphComparison: Edge-detection rates and weight errors vs. ground truth.
    RigidityCheck: Result of rigidity_threshold.
    ErrorScale: Result of measurement_error_scale.

Functions:
    compare: Compare a recovered graph with the true one.
    rigidity_threshold: Entrywise error bound under which thresholding
        at 2m recovers the edge set exactly.
    measurement_error_scale: Propagate output measurement errors to M.
    inverse_probe_bound: A priori bound on ||deltaY^-1||.
    connection_error: max_ij |M_ij - M_true_ij|.
    loglog_slope: Least-squares slope of log y against log x.
"""

from dataclasses import dataclass
import logging
import math

import numpy as np
import pandas as pd

from netprobe.graph import WeightedGraph
from netprobe.reconstruction import error_scale


logger = logging.getLogger(__name__)

UNRELIABLE_RATIO = 0.1
EDGE_ERROR_COLUMNS = ["i", "j", "status", "true_weight", "est_weight", "abs_err", "rel_err"]


@dataclass(frozen=True)
class GraphComparison:
    """How well a recovered graph matches the true one.

    Weight errors are taken over edges present in both graphs; they are
    NaN when there is no such edge.

    Attributes:
        precision: Recovered edges that are true. 1 if none recovered.
        recall: True edges that were recovered. 1 if there are none.
        max_abs_weight_err: max |p - nu|.
        max_rel_weight_err: max |p - nu| / nu.
        edges: DataFrame with EDGE_ERROR_COLUMNS, status one of match,
            missing, spurious.
    """

    precision: float
    recall: float
    max_abs_weight_err: float
    max_rel_weight_err: float
    edges: pd.DataFrame

    @property
    def exact(self):
        """True iff the edge sets are identical."""
        return self.precision == 1.0 and self.recall == 1.0

    def __repr__(self):
        return (
            f"{self.__class__.__name__}(precision={self.precision:.4g}, recall={self.recall:.4g}, "
            f"max_rel_weight_err={self.max_rel_weight_err:.3g})"
        )


def compare(true_graph, est):
    """Compares est (a WeightedGraph or anything with .graph) to true_graph.

    Raises:
        ValueError: Node counts differ.
    """
    est_graph = est if isinstance(est, WeightedGraph) else est.graph
    if est_graph.n != true_graph.n:
        raise ValueError(f"graphs differ in size: {true_graph.n} vs {est_graph.n}")

    truth = true_graph.weight_map()
    found = est_graph.weight_map()
    rows = []
    for pair in sorted(truth.keys() | found.keys()):
        nu, p = truth.get(pair, math.nan), found.get(pair, math.nan)
        if pair not in found:
            status = "missing"
        elif pair not in truth:
            status = "spurious"
        else:
            status = "match"
        rows.append((pair[0], pair[1], status, nu, p, abs(p - nu), abs(p - nu) / nu))
    edges = pd.DataFrame(rows, columns=EDGE_ERROR_COLUMNS)

    matched = edges[edges["status"] == "match"]
    hits = len(matched)
    precision = hits / len(found) if found else 1.0
    recall = hits / len(truth) if truth else 1.0
    if hits:
        max_abs, max_rel = float(matched["abs_err"].max()), float(matched["rel_err"].max())
    else:
        max_abs = max_rel = math.nan
    return GraphComparison(precision, recall, max_abs, max_rel, edges)


@dataclass(frozen=True)
class RigidityCheck:
    """Whether entrywise error m still allows exact edge recovery.

    Attributes:
        valid: m <= min(nu_ij d_ij) / 4.
        epsilon: The threshold 2m to use.
        weight_err_bound: {(i, j): bound on |p_ij - nu_ij|}.
    """

    valid: bool
    epsilon: float
    weight_err_bound: dict


def rigidity_threshold(m, min_nu_d, d=None, gains=None):
    """Checks m against the rigidity condition m <= min_nu_d / 4.

    When it holds, thresholding an M that is within m of the connection
    matrix entrywise at epsilon = 2m recovers the edge set exactly, and
    each weight is within m / d_ij of the truth. With gains b the entries
    are b_i nu_ij d_ij, so the bound is the mean of m / (b_i d_ij) and
    m / (b_j d_ij).

    Args:
        m: Entrywise error bound, >= 0.
        min_nu_d: min over edges of b nu_ij d_ij, > 0.
        d: Optional {(i, j): d_ij} for the per-edge bounds.
        gains: Optional input gains b.

    Raises:
        ValueError: m < 0 or min_nu_d <= 0.
    """
    if not m >= 0:
        raise ValueError(f"error bound m must be >= 0, got {m}")
    if not min_nu_d > 0:
        raise ValueError(f"min_nu_d must be positive, got {min_nu_d}")

    bounds = {}
    for (i, j), dij in (d or {}).items():
        if gains is None:
            bounds[(i, j)] = m / dij
        else:
            bounds[(i, j)] = 0.5 * (m / (gains[i] * dij) + m / (gains[j] * dij))
    return RigidityCheck(m <= 0.25 * min_nu_d, 2.0 * m, bounds)


@dataclass(frozen=True)
class ErrorScale:
    """Propagated measurement error.

    Attributes:
        scale: prefactor * factor.
        factor: ||DeltaY deltaY^-1||_2 (or its bound).
        ratio: ||DeltaY||_2 / ||deltaY||_2.
        reliable: ratio < UNRELIABLE_RATIO.
    """

    scale: float
    factor: float
    ratio: float
    reliable: bool


def measurement_error_scale(delta_y, delta_y_error=None, error_norm=None, graph=None, d=None):
    """Scale of the error in M caused by errors DeltaY on the outputs.

    Pass the error matrix itself as delta_y_error, or only a bound on its
    2-norm as error_norm, in which case ||DeltaY deltaY^-1|| is bounded by
    ||deltaY^-1|| error_norm. The prefactor is
    sqrt(n) (1 + max(nu_ij d_ij) lambda_max) using the recovered graph and
    slopes, or sqrt(n) when they are not given.

    Raises:
        ValueError: Neither or both of delta_y_error and error_norm.
    """
    if (delta_y_error is None) == (error_norm is None):
        raise ValueError("pass exactly one of delta_y_error and error_norm")
    delta_y = np.asarray(delta_y, dtype=float)
    n = delta_y.shape[0]
    norm_dy = np.linalg.norm(delta_y, 2)

    if delta_y_error is not None:
        delta_y_error = np.asarray(delta_y_error, dtype=float)
        err_norm = np.linalg.norm(delta_y_error, 2)
        factor = float(np.linalg.norm(np.linalg.solve(delta_y.T, delta_y_error.T).T, 2))
    else:
        err_norm = float(error_norm)
        factor = float(np.linalg.norm(np.linalg.inv(delta_y), 2) * err_norm)

    prefactor = math.sqrt(n) if graph is None else error_scale(n, 1.0, graph, d)
    ratio = float(err_norm / norm_dy)
    reliable = ratio < UNRELIABLE_RATIO
    if not reliable:
        logger.warning("||DeltaY|| / ||deltaY|| = %.3g, measurement error bound unreliable", ratio)
    return ErrorScale(prefactor * factor, factor, ratio, reliable)


def inverse_probe_bound(kappa, graph, d):
    """Returns kappa^-1 (1 + max(nu_ij d_ij) lambda_max), the size of ||deltaY^-1||."""
    return error_scale(graph.n, 1.0, graph, d) / (math.sqrt(graph.n) * kappa)


def connection_error(M, M_true):
    return float(np.max(np.abs(np.asarray(M) - np.asarray(M_true))))


def loglog_slope(x, y):
    """Slope of the least-squares line through (log x, log y).

    Raises:
        ValueError: Fewer than two points, or a non-positive value.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2 or x.shape != y.shape:
        raise ValueError("need at least two (x, y) points of equal count")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("log-log slope needs positive values")
    slope, _ = np.polyfit(np.log(x), np.log(y), 1)
    return float(slope)
