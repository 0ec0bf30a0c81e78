"""Reconstructs the graph of a diffusively-coupled network from probes.

The network is treated as a black box: it can be driven by a constant
input and its steady-state output read back, and its agents' inverse
steady-state relations, controllers and input gains are known. The graph
and its weights are not.

The pipeline:

    1. Drive the network with a random baseline w0, read y0.
    2. design_probes: perturb each input by kappa (generic branch), or each
       difference e_i - e_n when grad k^-1(y0) = 0 (integrator branch).
    3. collect_probes: read the perturbed outputs, one per probe.
    4. estimate_connection_matrix: invert the probe map to get M, the
       linearization of the steady-state equation at y0.
    5. extract_graph: M_ij < -epsilon marks an edge; its weight follows
       from M_ij, the gain b_i and the controller slope at y0.

Classes:
    ProbePlan, ProbeLog, ReconstructionResult, ExtractedGraph: Data types.
    ProbedNetwork: Black box that integrates the closed loop.
    OracleNetwork: Black box that solves for steady states directly.
    OpCounter: Counts scalar multiply-adds of deltaW_inverse_apply.
    ReconstructionError, IllConditionedProbesError: Pipeline failures.

Functions:
    design_probes, collect_probes, deltaW_inverse_apply,
    estimate_connection_matrix, extract_graph, reconstruct,
    estimate_reachable_rank, restricted_probe_samples, error_scale,
    write_probe_log, read_probe_log.
"""

from dataclasses import dataclass, field
import json
import logging
import math
from pathlib import Path
from typing import NamedTuple

import numpy as np
import pandas as pd
from scipy import linalg

from netprobe.graph import WeightedGraph, weighted_laplacian
from netprobe.model import TOL_GRAD, DomainError, steady_state_residual
from netprobe.simulator import (
    IntegrationError,
    NoiseSpec,
    SimOptions,
    SteadyStateError,
    SteadyStateSample,
    newton_steady_state,
    run_probe_schedule,
    simulate_to_steady_state,
    stack_trajectories,
)


logger = logging.getLogger(__name__)

DEFAULT_KAPPA = 1e-3
DEFAULT_EPSILON = 0.01
MAX_CONDITION = 1e12
TOL_DERIV = 1e-12
BRANCHES = ("generic", "integrator")
CONNECTION_METHODS = ("auto", "cholesky", "direct")
STAGES = ("baseline", "probe", "estimate", "extract")


class ReconstructionError(RuntimeError):
    """A pipeline stage failed.

    Attributes:
        stage: One of baseline, probe, estimate, extract.
        probe_index: Index of the failed probe, for probe failures.
    """

    def __init__(self, msg, stage, probe_index=None):
        super().__init__(f"[{stage}] {msg}")
        self.stage = stage
        self.probe_index = probe_index


class IllConditionedProbesError(ReconstructionError):
    """The probe response matrix is numerically singular."""


@dataclass(frozen=True)
class ProbePlan:
    """Input perturbations for one reconstruction.

    Attributes:
        branch: "generic" or "integrator".
        kappa: Perturbation size.
        delta_ws: n x num_runs array, one perturbation per column.
        J: Projection applied to output differences.
        Q: Regularizer removed from the estimate (zero in the generic branch).
        num_runs: Perturbed runs to execute (n, or n - 1).
    """

    branch: str
    kappa: float
    delta_ws: np.ndarray
    J: np.ndarray
    Q: np.ndarray
    num_runs: int

    @property
    def n(self):
        return self.J.shape[0]


def design_probes(y0, agents, kappa):
    """Chooses the probe perturbations for baseline output y0.

    If max_i |k_i^-1'(y0_i)| < TOL_GRAD the integrator branch is taken:
    perturbations kappa (e_i - e_n), i < n, J = Id - (1/n) 11^T and
    Q = (1/n) 11^T; the pair (kappa 1, kappa 1) is appended later without
    a run. Otherwise perturbations are kappa e_i, J = Id and Q = 0.

    Raises:
        ValueError: n < 2, kappa not positive, or integrator branch with
            unequal input gains.
        DomainError: grad k^-1 not defined at y0.
    """
    y0 = np.asarray(y0, dtype=float)
    n = y0.size
    if n < 2:
        raise ValueError(f"probing needs at least 2 nodes, got {n}")
    if not (math.isfinite(kappa) and kappa > 0):
        raise ValueError(f"kappa must be positive, got {kappa}")
    if len(agents) != n:
        raise ValueError(f"Expect {n} agents, got {len(agents)}")

    grads = np.empty(n)
    for i, (agent, y) in enumerate(zip(agents, y0)):
        agent.check_output(y)
        if y in agent.kinks:
            raise DomainError(f"k^-1 of agent {i} is not differentiable at {y}")
        grads[i] = agent.k_inv_deriv(y)

    if np.max(np.abs(grads)) < TOL_GRAD:
        gains = np.array([a.b for a in agents])
        if not np.allclose(gains, gains[0], rtol=1e-12, atol=0.0):
            raise ValueError("integrator branch needs equal input gains b")
        delta_ws = kappa * (np.eye(n)[:, : n - 1] - np.eye(n)[:, [n - 1]])
        Q = np.full((n, n), 1.0 / n)
        return ProbePlan("integrator", kappa, delta_ws, np.eye(n) - Q, Q, n - 1)

    return ProbePlan("generic", kappa, kappa * np.eye(n), np.eye(n), np.zeros((n, n)), n)


@dataclass(frozen=True)
class ProbeLog:
    """Sealed record of a baseline and its probes.

    Column k of delta_w / delta_y is the k-th record (dw_k, dy_k), with
    dy_k = J (y_k - y0). In the integrator branch the last column is the
    synthetic pair (kappa 1, kappa 1).

    Attributes:
        w0, y0: Baseline input and output.
        kappa: Perturbation size.
        branch: "generic" or "integrator".
        delta_w, delta_y: n x n arrays.
        gains: Agent input gains b.
        converged: One flag per run (baseline first).
        metadata: Free-form dict (seeds, options), JSON-serializable.
    """

    w0: np.ndarray
    y0: np.ndarray
    kappa: float
    branch: str
    delta_w: np.ndarray
    delta_y: np.ndarray
    gains: np.ndarray
    converged: tuple = ()
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("w0", "y0", "delta_w", "delta_y", "gains"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        n = len(self.y0)
        if self.delta_w.shape != (n, n) or self.delta_y.shape != (n, n):
            raise ValueError(f"probe log needs {n} records of size {n}")
        if self.branch not in BRANCHES:
            raise ValueError(f"branch {self.branch} is not one of {BRANCHES}")

    @property
    def n(self):
        return len(self.y0)

    @property
    def records(self):
        """List of (dw_k, dy_k) pairs."""
        return [(self.delta_w[:, k], self.delta_y[:, k]) for k in range(self.n)]

    def to_frame(self):
        """Returns columns probe_index, dw_1..dw_n, dy_1..dy_n."""
        n = self.n
        frame = pd.DataFrame(
            np.hstack([self.delta_w.T, self.delta_y.T]),
            columns=[f"dw_{i + 1}" for i in range(n)] + [f"dy_{i + 1}" for i in range(n)],
        )
        frame.insert(0, "probe_index", np.arange(n))
        return frame

    def __repr__(self):
        return f"{self.__class__.__name__}(n={self.n}, branch={self.branch}, kappa={self.kappa:g})"


def write_probe_log(log, path):
    """Writes log as a CSV file plus a JSON header next to it (same stem)."""
    path = Path(path)
    log.to_frame().to_csv(path, index=False, float_format="%.17g")
    header = {
        "branch": log.branch,
        "kappa": log.kappa,
        "n": log.n,
        "w0": log.w0.tolist(),
        "y0": log.y0.tolist(),
        "gains": log.gains.tolist(),
        "converged": list(log.converged),
        "metadata": log.metadata,
    }
    with open(path.with_suffix(".json"), "w") as f:
        json.dump(header, f, indent=2, sort_keys=True)


def read_probe_log(path):
    """Loads a ProbeLog written by write_probe_log.

    Raises:
        ValueError: The CSV does not match its header.
    """
    path = Path(path)
    with open(path.with_suffix(".json")) as f:
        header = json.load(f)
    frame = pd.read_csv(path, float_precision="round_trip")
    n = header["n"]
    dw_cols = [f"dw_{i + 1}" for i in range(n)]
    dy_cols = [f"dy_{i + 1}" for i in range(n)]
    missing = set(dw_cols + dy_cols) - set(frame.columns)
    if missing or len(frame) != n:
        raise ValueError(f"{path}: expected {n} records with columns dw_*, dy_*")
    frame = frame.sort_values("probe_index")
    return ProbeLog(
        w0=np.array(header["w0"]),
        y0=np.array(header["y0"]),
        kappa=header["kappa"],
        branch=header["branch"],
        delta_w=frame[dw_cols].to_numpy().T,
        delta_y=frame[dy_cols].to_numpy().T,
        gains=np.array(header["gains"]),
        converged=tuple(header["converged"]),
        metadata=header["metadata"],
    )


class ProbedNetwork:
    """Black-box access to a NetworkSystem through its steady states.

    Only the agents, the controllers and the input gains are public; the
    graph stays hidden. Each input continues the trajectory from the
    current state (the switching scheme), unless parallel is set, in which
    case apply_all starts every input from x0.

    Args:
        system: The NetworkSystem to probe.
        opts: SimOptions for every segment.
        noise: NoiseSpec for every segment.
        x0: Initial state, zero by default.
        parallel: Run apply_all on a thread pool.
        max_workers: Thread pool size.
    """

    def __init__(self, system, opts=None, noise=None, x0=None, parallel=False, max_workers=None):
        self._system = system
        self.opts = opts or SimOptions()
        self.noise = noise or NoiseSpec()
        self.x0 = np.zeros(system.n) if x0 is None else np.asarray(x0, dtype=float)
        self.parallel = parallel
        self.max_workers = max_workers
        self.reset()

    @property
    def n(self):
        return self._system.n

    @property
    def agents(self):
        return self._system.agents

    @property
    def couplings(self):
        return self._system.couplings

    @property
    def gains(self):
        return self._system.gains

    def reset(self):
        """Returns the network to x0, restarts the probe counter and drops trajectories."""
        self._state = self.x0.copy()
        self._runs = 0
        self._trajectories = {}

    def trajectory(self):
        """Trajectories of every segment since reset, or None.

        Recorded only when opts.trajectory_stride > 0; see
        stack_trajectories for the layout.
        """
        return stack_trajectories(self._trajectories)

    def apply(self, w):
        """Holds input w until steady state; returns the SteadyStateSample."""
        sample = simulate_to_steady_state(
            self._system, w, self._state, self.opts, self.noise, probe_index=self._runs
        )
        self._state = sample.x
        self._trajectories[self._runs] = sample.trajectory
        self._runs += 1
        return sample

    def apply_all(self, schedule):
        """Applies every input of schedule; returns samples in order."""
        if not self.parallel:
            return [self.apply(w) for w in schedule]
        # Parallel runs still get distinct noise streams.
        noise = NoiseSpec(self.noise.disturbance, self.noise.measurement_sigma,
                          self.noise.seed + self._runs)
        samples = run_probe_schedule(
            self._system, schedule, self.x0, self.opts, noise,
            parallel=True, max_workers=self.max_workers,
        )
        for k, sample in enumerate(samples):
            self._trajectories[self._runs + k] = sample.trajectory
        self._runs += len(samples)
        return samples

    def __repr__(self):
        mode = "parallel" if self.parallel else "sequential"
        return f"{self.__class__.__name__}(n={self.n}, integrator={self.opts.integrator}, {mode})"


class OracleNetwork(ProbedNetwork):
    """A ProbedNetwork whose steady states come from newton_steady_state.

    Newton starts from the current output, so conserved quantities
    (the output mean of an integrator network) follow the same path as a
    switching trajectory. Measurement noise still applies.
    """

    def apply(self, w):
        system = self._system
        y_prev = system.outputs(self._state)
        try:
            y = newton_steady_state(system, w, y_prev)
        except SteadyStateError as exc:
            logger.warning("oracle probe %d: %s", self._runs, exc)
            self._runs += 1
            return SteadyStateSample(y_prev, self._state, 0.0, False, math.inf, math.inf)
        self._state = system.states(y)
        residual_norm = float(np.max(np.abs(steady_state_residual(system, y, w))))
        if self.noise.measurement_sigma > 0:
            rng = self.noise.rng(self._runs, 0)
            y = y + self.noise.measurement_sigma * rng.standard_normal(self.n)
        self._runs += 1
        return SteadyStateSample(y, self._state.copy(), 0.0, True, residual_norm, 0.0)

    def apply_all(self, schedule):
        return [self.apply(w) for w in schedule]


def collect_probes(network, w0, plan=None, kappa=DEFAULT_KAPPA, metadata=None):
    """Runs the baseline w0 and the probe inputs w0 + dw_k.

    Args:
        network: ProbedNetwork (or anything with n, agents, gains, apply,
            apply_all).
        w0: Baseline input.
        plan: ProbePlan. Designed from the baseline output if None.
        kappa: Perturbation size when plan is None.
        metadata: Stored in the log.

    Returns:
        A sealed ProbeLog with n records.

    Raises:
        ReconstructionError: A run failed or did not converge (stage
            baseline or probe, with probe_index).
        DomainError: The baseline output is outside the domain of grad k^-1.
    """
    w0 = np.asarray(w0, dtype=float)
    try:
        base = network.apply(w0)
    except (IntegrationError, SteadyStateError) as exc:
        raise ReconstructionError(str(exc), "baseline") from exc
    if not base.converged:
        raise ReconstructionError(
            f"baseline did not converge (||x'||={base.deriv_norm:.3g})", "baseline"
        )
    y0 = base.y

    if plan is None:
        plan = design_probes(y0, network.agents, kappa)
    if plan.n != network.n:
        raise ValueError(f"plan is for {plan.n} nodes, network has {network.n}")

    schedule = [w0 + plan.delta_ws[:, k] for k in range(plan.num_runs)]
    try:
        samples = network.apply_all(schedule)
    except (IntegrationError, SteadyStateError) as exc:
        raise ReconstructionError(str(exc), "probe") from exc
    for k, sample in enumerate(samples):
        if not sample.converged:
            raise ReconstructionError(
                f"probe {k} did not converge (||x'||={sample.deriv_norm:.3g})", "probe", k
            )

    delta_y = plan.J @ np.column_stack([s.y - y0 for s in samples])
    delta_w = plan.delta_ws
    if plan.branch == "integrator":
        ones = np.full((plan.n, 1), plan.kappa)
        delta_y = np.hstack([delta_y, ones])
        delta_w = np.hstack([delta_w, ones])

    logger.info("collected %d probes (%s branch, kappa=%g)", plan.num_runs, plan.branch, plan.kappa)
    return ProbeLog(
        w0=w0,
        y0=y0,
        kappa=plan.kappa,
        branch=plan.branch,
        delta_w=delta_w,
        delta_y=delta_y,
        gains=network.gains,
        converged=(base.converged,) + tuple(s.converged for s in samples),
        metadata=dict(metadata or {}),
    )


class OpCounter:
    """Tally of scalar multiply-adds."""

    def __init__(self):
        self.count = 0

    def add(self, k):
        self.count += int(k)

    def __repr__(self):
        return f"{self.__class__.__name__}(count={self.count})"


def deltaW_inverse_apply(delta_y, branch, kappa, counter=None):
    """Returns (M')^-1 = deltaY deltaW^-1 without inverting deltaW.

    Generic branch: deltaW = kappa Id. Integrator branch: deltaW = kappa F,
    F = [e_1 - e_n, ..., e_{n-1} - e_n, 1], whose inverse is
    (1/n) xi 1^T + (Id - e_n e_n^T) with xi = (-1, ..., -1, 1). Then
    deltaY F^-1 adds v/n to the first n-1 columns of deltaY and replaces
    the last one by v/n, where v = deltaY xi.

    Args:
        delta_y: n x n array.
        branch: "generic" or "integrator".
        kappa: Perturbation size.
        counter: Optional OpCounter to charge.
    """
    delta_y = np.asarray(delta_y, dtype=float)
    counter = counter or OpCounter()
    n = delta_y.shape[0]
    if delta_y.shape != (n, n):
        raise ValueError(f"deltaY must be square, got {delta_y.shape}")
    if branch not in BRANCHES:
        raise ValueError(f"branch {branch} is not one of {BRANCHES}")

    if branch == "generic":
        counter.add(n * n)
        return delta_y / kappa

    v = delta_y[:, -1] - delta_y[:, :-1].sum(axis=1)
    counter.add(n * n)
    v_over_n = v / n
    counter.add(n)
    out = np.empty_like(delta_y)
    out[:, :-1] = delta_y[:, :-1] + v_over_n[:, None]
    out[:, -1] = v_over_n
    counter.add(n * (n - 1))
    out /= kappa
    counter.add(n * n)
    return out


def _delta_w_matrix(branch, kappa, n):
    if branch == "generic":
        return kappa * np.eye(n)
    f = np.eye(n) - np.eye(n)[:, [n - 1]]
    f[:, -1] = 1.0
    return kappa * f


class _Estimate(NamedTuple):
    matrix: np.ndarray
    path: str
    condition_number: float


def _estimate(log, method):
    if method not in CONNECTION_METHODS:
        raise ValueError(f"method {method} is not one of {CONNECTION_METHODS}")
    n = log.n
    cond = float(np.linalg.cond(log.delta_y))
    if not cond < MAX_CONDITION:
        raise IllConditionedProbesError(
            f"cond(deltaY) = {cond:.3g} exceeds {MAX_CONDITION:g}; "
            f"use a smaller kappa or a new w0 seed",
            "estimate",
        )
    Q = np.full((n, n), 1.0 / n) if log.branch == "integrator" else np.zeros((n, n))

    if method in ("auto", "cholesky"):
        # (M')^-1 B is the inverse of the symmetric B^-1 M'.
        scaled = deltaW_inverse_apply(log.delta_y, log.branch, log.kappa) * log.gains[None, :]
        sym = 0.5 * (scaled + scaled.T)
        try:
            factor = linalg.cho_factor(sym)
            m_prime = log.gains[:, None] * linalg.cho_solve(factor, np.eye(n))
            return _Estimate(m_prime - Q, "cholesky", cond)
        except linalg.LinAlgError as exc:
            if method == "cholesky":
                raise ReconstructionError(f"symmetrized (M')^-1 not positive definite: {exc}",
                                          "estimate") from exc
            logger.warning("symmetrized (M')^-1 not positive definite, solving directly")

    delta_w = _delta_w_matrix(log.branch, log.kappa, n)
    m_prime = np.linalg.solve(log.delta_y.T, delta_w.T).T
    return _Estimate(m_prime - Q, "direct", cond)


def estimate_connection_matrix(log, method="auto"):
    """Estimates the connection matrix M from a ProbeLog.

    method "cholesky" symmetrizes (M')^-1 (after scaling by the gains b) and
    inverts it through a Cholesky factorization; "direct" solves
    M' = deltaW deltaY^-1; "auto" tries cholesky and falls back to direct
    with a warning. Q is subtracted from M' in both cases.

    Raises:
        IllConditionedProbesError: cond(deltaY) above MAX_CONDITION.
        ReconstructionError: method "cholesky" and the matrix is not
            positive definite.
    """
    return _estimate(log, method).matrix


class ExtractedGraph(NamedTuple):
    """Output of extract_graph.

    graph holds the recovered weights p_ij; d maps every detected pair to
    g_ij'(y0_i - y0_j); indeterminate lists detected pairs whose d is
    below TOL_DERIV (reported, but not in graph); sign_conflicts lists
    edges whose two orientations of M disagree in sign.
    """

    graph: WeightedGraph
    weights: dict
    d: dict
    indeterminate: tuple
    sign_conflicts: tuple = ()


def extract_graph(M, epsilon, y0, couplings, gains):
    """Thresholds M into a weighted graph.

    Pair {i, j} is an edge iff min(M_ij, M_ji) < -epsilon. Its weight is the
    mean of -M_ij / (b_i d_ij) and -M_ji / (b_j d_ij), with
    d_ij = g_ij'(y0_i - y0_j) evaluated at i < j. When one orientation is
    not negative the edge keeps the weight of the other one alone and is
    listed in sign_conflicts.

    Raises:
        ValueError: epsilon not positive, or mismatched shapes.
        DomainError: g_ij' not defined at y0_i - y0_j.
    """
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    M = np.asarray(M, dtype=float)
    y0 = np.asarray(y0, dtype=float)
    gains = np.asarray(gains, dtype=float)
    n = M.shape[0]
    if M.shape != (n, n) or y0.shape != (n,) or gains.shape != (n,):
        raise ValueError(f"M, y0 and gains disagree on n: {M.shape}, {y0.shape}, {gains.shape}")

    lower = np.minimum(M, M.T)
    heads, tails = np.nonzero(np.triu(lower < -epsilon, k=1))
    edges, slopes, indeterminate, conflicts = [], {}, [], []
    for i, j in zip(heads.tolist(), tails.tolist()):
        coupling = couplings[(i, j)]
        mu = y0[i] - y0[j]
        if mu in coupling.kinks:
            raise DomainError(f"controller of ({i}, {j}) is not differentiable at {mu}")
        d = float(coupling.g_deriv(mu))
        slopes[(i, j)] = d
        if d < TOL_DERIV:
            logger.warning("edge (%d, %d): controller slope %.3g, weight indeterminate", i, j, d)
            indeterminate.append((i, j))
            continue
        p_ij = -M[i, j] / (gains[i] * d)
        p_ji = -M[j, i] / (gains[j] * d)
        if p_ij > 0 and p_ji > 0:
            p = 0.5 * (p_ij + p_ji)
        else:
            # min(M_ij, M_ji) < -epsilon, so the larger one is positive
            p = max(p_ij, p_ji)
            logger.warning("edge (%d, %d): M_ij=%.3g and M_ji=%.3g differ in sign", i, j, M[i, j], M[j, i])
            conflicts.append((i, j))
        edges.append((i, j, p))

    graph = WeightedGraph(n, tuple(edges))
    return ExtractedGraph(graph, graph.weight_map(), slopes, tuple(indeterminate), tuple(conflicts))


def error_scale(n, kappa, graph, d):
    """Returns sqrt(n) kappa (1 + max(p_ij d_ij) lambda_max), lambda_max of the unweighted Laplacian."""
    if graph.num_edges == 0:
        return math.sqrt(n) * kappa
    unweighted = WeightedGraph(graph.n, tuple((i, j, 1.0) for i, j, _ in graph.edges))
    lam = float(np.linalg.eigvalsh(weighted_laplacian(unweighted))[-1])
    peak = max(w * d[(i, j)] for i, j, w in graph.edges)
    return math.sqrt(n) * kappa * (1.0 + peak * lam)


@dataclass(frozen=True)
class ReconstructionResult:
    """Output of reconstruct.

    Attributes:
        M: Estimated connection matrix.
        graph: Recovered WeightedGraph H (weights are p_ij).
        epsilon: Threshold used.
        d: {(i, j): g_ij'(y0_i - y0_j)} for detected pairs.
        log: The ProbeLog the estimate came from.
        diagnostics: condition_number, path, branch, error_scale,
            indeterminate_edges, sign_conflicts, redraws.
    """

    M: np.ndarray
    graph: WeightedGraph
    epsilon: float
    d: dict
    log: ProbeLog
    diagnostics: dict = field(default_factory=dict)

    def __repr__(self):
        return (
            f"{self.__class__.__name__}({self.graph!r}, epsilon={self.epsilon:g}, "
            f"path={self.diagnostics.get('path')})"
        )


def _integrator_population(agents):
    """True if grad k^-1 vanishes for every agent at the middle of its range."""
    for agent in agents:
        lo, hi = agent.y_range
        mid = 0.0 if not (math.isfinite(lo) and math.isfinite(hi)) else 0.5 * (lo + hi)
        if abs(agent.k_inv_deriv(mid)) >= TOL_GRAD:
            return False
    return True


def reconstruct(network, kappa=DEFAULT_KAPPA, epsilon=DEFAULT_EPSILON, seed=0,
                max_redraws=5, method="auto"):
    """Recovers the graph of network by steady-state probing.

    w0 is standard Gaussian, drawn from default_rng([seed, attempt]); a
    baseline that hits a domain error is redrawn up to max_redraws times.
    For integrator networks w0 is centered, since a drifting consensus
    mode has no steady state.

    Args:
        network: ProbedNetwork (or OracleNetwork).
        kappa: Perturbation size.
        epsilon: Edge threshold.
        seed: Seed of w0.
        max_redraws: Extra baseline draws after a domain error.
        method: Connection-matrix path, see estimate_connection_matrix.

    Returns:
        A ReconstructionResult.

    Raises:
        ReconstructionError: Tagged with the failing stage.
    """
    if not (math.isfinite(kappa) and kappa > 0):
        raise ValueError(f"kappa must be positive, got {kappa}")
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")

    center = _integrator_population(network.agents)
    log = None
    for attempt in range(max_redraws + 1):
        w0 = np.random.default_rng([int(seed), attempt]).standard_normal(network.n)
        if center:
            w0 -= w0.mean()
        network.reset()
        try:
            log = collect_probes(network, w0, kappa=kappa,
                                 metadata={"seed": int(seed), "attempt": attempt})
            break
        except DomainError as exc:
            logger.warning("baseline attempt %d hit a domain error (%s), redrawing w0", attempt, exc)
    if log is None:
        raise ReconstructionError(f"no valid baseline in {max_redraws + 1} draws", "baseline")

    est = _estimate(log, method)
    try:
        extracted = extract_graph(est.matrix, epsilon, log.y0, network.couplings, log.gains)
    except (DomainError, ValueError) as exc:
        raise ReconstructionError(str(exc), "extract") from exc

    diagnostics = {
        "branch": log.branch,
        "path": est.path,
        "condition_number": est.condition_number,
        "error_scale": error_scale(log.n, kappa, extracted.graph, extracted.d),
        "indeterminate_edges": list(extracted.indeterminate),
        "sign_conflicts": list(extracted.sign_conflicts),
        "redraws": log.metadata["attempt"],
    }
    logger.info(
        "recovered %d edges (%s path, cond(deltaY)=%.3g)",
        extracted.graph.num_edges, est.path, est.condition_number,
    )
    return ReconstructionResult(est.matrix, extracted.graph, epsilon, extracted.d, log, diagnostics)


def estimate_reachable_rank(samples, tol=1e-9):
    """Numerical rank of the stacked output differences.

    Counts singular values >= tol * sigma_max; all-zero samples give 0.

    Raises:
        ValueError: No samples.
    """
    samples = [np.asarray(s, dtype=float) for s in samples]
    if not samples:
        raise ValueError("need at least one sample")
    sv = np.linalg.svd(np.column_stack(samples), compute_uv=False)
    if sv[0] == 0.0:
        return 0
    return int(np.sum(sv >= tol * sv[0]))


def restricted_probe_samples(network, w0, nodes, num_samples, kappa=DEFAULT_KAPPA, seed=0):
    """Output differences for random perturbations supported on `nodes`.

    Every perturbation is a Gaussian direction on the chosen nodes, scaled
    to Euclidean norm kappa. Returns the list of y_k - y0.

    Raises:
        ValueError: Empty or out of range nodes, or num_samples < 1.
        ReconstructionError: A run did not converge.
    """
    nodes = sorted({int(i) for i in nodes})
    if not nodes or nodes[0] < 0 or nodes[-1] >= network.n:
        raise ValueError(f"probe nodes {nodes} must be a nonempty subset of 0..{network.n - 1}")
    if num_samples < 1:
        raise ValueError(f"num_samples must be at least 1, got {num_samples}")

    w0 = np.asarray(w0, dtype=float)
    rng = np.random.default_rng(seed)
    base = network.apply(w0)
    if not base.converged:
        raise ReconstructionError("baseline did not converge", "baseline")

    schedule = []
    for _ in range(num_samples):
        direction = rng.standard_normal(len(nodes))
        dw = np.zeros(network.n)
        dw[nodes] = kappa * direction / np.linalg.norm(direction)
        schedule.append(w0 + dw)

    samples = network.apply_all(schedule)
    for k, sample in enumerate(samples):
        if not sample.converged:
            raise ReconstructionError(f"probe {k} did not converge", "probe", k)
    return [s.y - base.y for s in samples]
