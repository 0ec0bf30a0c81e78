"""Integrates a NetworkSystem to steady state under constant inputs.

Three steppers are registered in STEPPERS by the @register_stepper
decorator: fixed-step classical Runge-Kutta ("rk4"), adaptive
Runge-Kutta-Fehlberg 4(5) ("rkf45", the default), and scipy's stiff BDF
("bdf"). A run either stops once ||x'||_inf stays below deriv_tol for
`dwell` accepted steps ("converge" mode), or stops exactly at the switch
time ("fixed" mode).

Classes:
    SimOptions: Stepper, tolerances, stopping rule.
    NoiseSpec: Bounded input disturbance and output measurement noise.
    SteadyStateSample: Result of one simulated segment.
    DisturbanceReport: Result of disturbance_experiment.
    IntegrationError, SteadyStateError: Failures of the two solvers.
    RK4Stepper, RKF45Stepper, BDFStepper: Single-step integrators.

Functions:
    simulate_to_steady_state: Run one constant input to steady state.
    run_probe_schedule: Run a list of inputs, switching or in parallel.
    newton_steady_state: Solve the steady-state equation directly.
    disturbance_experiment: Measure output deviation under disturbance.
    stack_trajectories: Join segment trajectories, tagged by probe index.
    write_trajectory_csv: Dump a sampled trajectory.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
import logging
import math
from typing import Optional

import numpy as np
import pandas as pd
from scipy import integrate

from netprobe.model import (
    DomainError,
    closed_loop_jacobian,
    closed_loop_rhs,
    connection_matrix_true,
    steady_state_residual,
)


logger = logging.getLogger(__name__)

SIM_MODES = ("converge", "fixed")
NEWTON_TOL = 1e-12
NEWTON_MAX_ITER = 50
MIN_STEP = 1e-14


class IntegrationError(RuntimeError):
    """The state became non-finite or the step size underflowed."""


class SteadyStateError(RuntimeError):
    """Newton iteration failed; `last_iterate` holds the final y."""

    def __init__(self, msg, last_iterate=None):
        super().__init__(msg)
        self.last_iterate = last_iterate


@dataclass(frozen=True)
class SimOptions:
    """Options for simulate_to_steady_state.

    Attributes:
        integrator: One of the STEPPERS names: rk4, rkf45, bdf.
        dt: Step of rk4, initial step of rkf45.
        rtol, atol: Error tolerances of rkf45 and bdf.
        deriv_tol: Convergence threshold on ||x'||_inf.
        dwell: Accepted steps the threshold must hold for.
        t_max: Give up converging after this many seconds.
        mode: "converge" or "fixed".
        switch_time: Segment length in fixed mode.
        trajectory_stride: Keep every k-th accepted step (0 keeps none).
    """

    integrator: str = "rkf45"
    dt: float = 1e-2
    rtol: float = 1e-10
    atol: float = 1e-12
    deriv_tol: float = 1e-9
    dwell: int = 10
    t_max: float = 1e4
    mode: str = "converge"
    switch_time: float = 10.0
    trajectory_stride: int = 0

    def __post_init__(self):
        if self.integrator not in STEPPERS:
            raise ValueError(f"integrator {self.integrator} is not one of {sorted(STEPPERS)}")
        if self.mode not in SIM_MODES:
            raise ValueError(f"mode {self.mode} is not one of {SIM_MODES}")
        for name in ("dt", "rtol", "atol", "deriv_tol", "t_max", "switch_time"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive, got {value}")
        if self.dwell < 1:
            raise ValueError(f"dwell must be at least 1, got {self.dwell}")
        if self.trajectory_stride < 0:
            raise ValueError(f"trajectory_stride must be >= 0, got {self.trajectory_stride}")

    @property
    def horizon(self):
        """End time of a segment: switch_time in fixed mode, else t_max."""
        return self.switch_time if self.mode == "fixed" else self.t_max


@dataclass(frozen=True)
class NoiseSpec:
    """Disturbance and measurement noise of a run.

    Attributes:
        disturbance: Bound on ||d(t)||_2. d is drawn uniformly from the
            ball once per accepted step and held for that step.
        measurement_sigma: Std of Gaussian noise added to the sampled y.
        seed: Non-negative integer; streams are derived per probe index.
    """

    disturbance: float = 0.0
    measurement_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.disturbance >= 0:
            raise ValueError(f"disturbance bound must be >= 0, got {self.disturbance}")
        if not self.measurement_sigma >= 0:
            raise ValueError(f"measurement_sigma must be >= 0, got {self.measurement_sigma}")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ValueError(f"noise seed must be a non-negative integer, got {self.seed}")

    def rng(self, probe_index, stream):
        """Generator for (probe_index, stream); stream 0 measures, 1 disturbs."""
        return np.random.default_rng([int(self.seed), int(probe_index), int(stream)])


@dataclass(frozen=True)
class SteadyStateSample:
    """One simulated segment.

    Attributes:
        y: Sampled output (measurement noise included).
        x: Terminal state, the start of the next switching segment.
        t_elapsed: Simulated seconds.
        converged: Stopping rule met (always True in fixed mode).
        residual_norm: ||steady_state_residual||_inf at the noise-free
            output; inf if it lies outside an agent's range.
        deriv_norm: ||x'||_inf at the end of the segment.
        trajectory: DataFrame t, x_1.., y_1.. or None.
    """

    y: np.ndarray
    x: np.ndarray
    t_elapsed: float
    converged: bool
    residual_norm: float
    deriv_norm: float
    trajectory: Optional[pd.DataFrame] = field(default=None, repr=False)


# STEPPERS dict is filled in by @register_stepper decorator

STEPPERS = dict()


def register_stepper(cls):
    """Register class as a stepper, populating STEPPERS."""
    idx = cls.__name__.replace("Stepper", "").lower()
    STEPPERS[idx] = cls
    return cls


@register_stepper
class RK4Stepper:
    """Classical fourth-order Runge-Kutta with fixed step opts.dt.

    Attributes:
        t, x: Current time and state.
        dxdt: fun(x) at the current state.
    """

    def __init__(self, fun, t0, x0, t_bound, opts, jac=None):
        self.fun = fun
        self.t = t0
        self.x = np.array(x0, dtype=float)
        self.t_bound = t_bound
        self.h = opts.dt
        self.dxdt = fun(self.x)

    def refresh(self):
        """Re-evaluates dxdt after the forcing changed."""
        self.dxdt = self.fun(self.x)

    def _clip(self, h):
        """Step to take from t, and whether it lands on t_bound."""
        remaining = self.t_bound - self.t
        if h >= remaining - 1e-12 * max(1.0, abs(self.t_bound)):
            return remaining, True
        return h, False

    def step(self):
        h, last = self._clip(self.h)
        x, fun = self.x, self.fun
        k1 = self.dxdt
        k2 = fun(x + 0.5 * h * k1)
        k3 = fun(x + 0.5 * h * k2)
        k4 = fun(x + h * k3)
        self.x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        self.t = self.t_bound if last else self.t + h
        self.dxdt = fun(self.x)


@register_stepper
class RKF45Stepper(RK4Stepper):
    """Adaptive Runge-Kutta-Fehlberg 4(5).

    Propagates the fourth-order solution; the difference to the fifth-order
    one is the error estimate. A step is accepted when

        max_i |err_i| / (atol + rtol * max(|x_i|, |x_new_i|)) <= 1

    and the next step is scaled by 0.9 * err^(-1/5), clipped to [0.2, 5].
    """

    NODES = (0.0, 1 / 4, 3 / 8, 12 / 13, 1.0, 1 / 2)
    TABLEAU = (
        (),
        (1 / 4,),
        (3 / 32, 9 / 32),
        (1932 / 2197, -7200 / 2197, 7296 / 2197),
        (439 / 216, -8.0, 3680 / 513, -845 / 4104),
        (-8 / 27, 2.0, -3544 / 2565, 1859 / 4104, -11 / 40),
    )
    WEIGHTS = (25 / 216, 0.0, 1408 / 2565, 2197 / 4104, -1 / 5, 0.0)
    ERROR = (1 / 360, 0.0, -128 / 4275, -2197 / 75240, 1 / 50, 2 / 55)

    def __init__(self, fun, t0, x0, t_bound, opts, jac=None):
        super().__init__(fun, t0, x0, t_bound, opts)
        self.rtol = opts.rtol
        self.atol = opts.atol
        self.rejected = 0

    def _stages(self, h):
        ks = [self.dxdt]
        for row in self.TABLEAU[1:]:
            incr = sum(a * k for a, k in zip(row, ks) if a != 0.0)
            ks.append(self.fun(self.x + h * incr))
        return ks

    def step(self):
        while True:
            h, last = self._clip(self.h)
            if h < MIN_STEP:
                raise IntegrationError(f"step size underflow at t={self.t:g}")
            with np.errstate(over="ignore", invalid="ignore"):
                try:
                    ks = self._stages(h)
                except ValueError:
                    ks = None
                if ks is not None:
                    x_new = self.x + h * sum(b * k for b, k in zip(self.WEIGHTS, ks) if b != 0.0)
                    err_vec = h * sum(e * k for e, k in zip(self.ERROR, ks) if e != 0.0)
                    scale = self.atol + self.rtol * np.maximum(np.abs(self.x), np.abs(x_new))
                    err = float(np.max(np.abs(err_vec) / scale))

            if ks is None or not math.isfinite(err) or not np.all(np.isfinite(x_new)):
                self.rejected += 1
                self.h = 0.2 * h
                continue

            factor = 5.0 if err == 0.0 else min(5.0, max(0.2, 0.9 * err ** -0.2))
            if err <= 1.0:
                self.x = x_new
                self.t = self.t_bound if last else self.t + h
                self.dxdt = self.fun(self.x)
                self.h = h * factor
                return
            self.rejected += 1
            self.h = h * factor


@register_stepper
class BDFStepper:
    """scipy.integrate.BDF with the analytic closed-loop Jacobian."""

    def __init__(self, fun, t0, x0, t_bound, opts, jac=None):
        self.fun = fun
        self._solver = integrate.BDF(
            lambda t, x: fun(x),
            t0,
            np.array(x0, dtype=float),
            t_bound,
            rtol=opts.rtol,
            atol=opts.atol,
            jac=None if jac is None else (lambda t, x: jac(x)),
        )
        self.refresh()

    @property
    def t(self):
        return self._solver.t

    @property
    def x(self):
        return self._solver.y

    def refresh(self):
        self.dxdt = self.fun(self._solver.y)

    def step(self):
        message = self._solver.step()
        if self._solver.status == "failed":
            raise IntegrationError(f"BDF failed at t={self.t:g}: {message}")
        self.refresh()


def _vector(v, n, name):
    v = np.asarray(v, dtype=float)
    if v.shape != (n,):
        raise ValueError(f"{name} must have shape ({n},), got {v.shape}")
    return v


def _ball_sample(rng, n, radius):
    """Uniform draw from the Euclidean ball of the given radius in R^n."""
    direction = rng.standard_normal(n)
    norm = np.linalg.norm(direction)
    if norm == 0.0:
        return np.zeros(n)
    return direction * (radius * rng.random() ** (1.0 / n) / norm)


def _trajectory_frame(rows, n):
    columns = ["t"] + [f"x_{i + 1}" for i in range(n)] + [f"y_{i + 1}" for i in range(n)]
    return pd.DataFrame(rows, columns=columns)


def simulate_to_steady_state(sys, w, x0, opts=None, noise=None, probe_index=0):
    """Integrates the closed loop under constant input w, starting at x0.

    In "converge" mode the run stops at the first accepted step after which
    ||x'||_inf < deriv_tol has held for `dwell` consecutive steps; running
    into t_max returns a sample with converged=False (and logs a warning).
    In "fixed" mode the run stops exactly at switch_time.

    Measurement noise is added to the sampled output only; the terminal
    state is noise-free so a switching schedule can continue from it.

    Args:
        sys: NetworkSystem.
        w: Constant input vector.
        x0: Initial state.
        opts: SimOptions, defaults if None.
        noise: NoiseSpec, none if None.
        probe_index: Selects the random streams of this segment.

    Returns:
        A SteadyStateSample.

    Raises:
        ValueError: Wrong dimensions, or a disturbance with the bdf stepper.
        IntegrationError: Non-finite state or step size underflow.
    """
    opts = opts or SimOptions()
    noise = noise or NoiseSpec()
    n = sys.n
    w = _vector(w, n, "w")
    x0 = _vector(x0, n, "x0")
    if noise.disturbance > 0 and opts.integrator == "bdf":
        raise ValueError("the bdf stepper does not support input disturbances")

    forcing = w.copy()
    disturb_rng = noise.rng(probe_index, 1) if noise.disturbance > 0 else None

    def fun(x):
        return closed_loop_rhs(sys, x, forcing)

    jac = None
    if opts.integrator == "bdf" and closed_loop_jacobian(sys, x0) is not None:
        def jac(x):
            return closed_loop_jacobian(sys, x)

    t_bound = opts.horizon
    try:
        stepper = STEPPERS[opts.integrator](fun, 0.0, x0, t_bound, opts, jac=jac)
    except ValueError as exc:
        raise IntegrationError(f"cannot start from x0: {exc}") from exc

    rows = []
    if opts.trajectory_stride:
        rows.append(np.concatenate(([0.0], x0, sys.outputs(x0))))

    steps = 0
    below = 0
    converged = False
    while True:
        if disturb_rng is not None:
            forcing[:] = w + _ball_sample(disturb_rng, n, noise.disturbance)
            stepper.refresh()
        try:
            stepper.step()
        except ValueError as exc:
            raise IntegrationError(f"non-finite state at t={stepper.t:g}: {exc}") from exc
        steps += 1
        if not np.all(np.isfinite(stepper.x)):
            raise IntegrationError(f"non-finite state at t={stepper.t:g}")

        if opts.trajectory_stride and steps % opts.trajectory_stride == 0:
            rows.append(np.concatenate(([stepper.t], stepper.x, sys.outputs(stepper.x))))

        deriv_norm = float(np.max(np.abs(stepper.dxdt)))
        if opts.mode == "converge":
            below = below + 1 if deriv_norm < opts.deriv_tol else 0
            if below >= opts.dwell:
                converged = True
                break
        if stepper.t >= t_bound:
            converged = opts.mode == "fixed"
            break

    if not converged:
        logger.warning(
            "probe %d: no convergence within t_max=%g (||x'||=%.3g)", probe_index, t_bound, deriv_norm
        )
    logger.debug("probe %d: %d steps, t=%g, ||x'||=%.3g", probe_index, steps, stepper.t, deriv_norm)

    x = np.array(stepper.x)
    y = sys.outputs(x)
    try:
        residual_norm = float(np.max(np.abs(steady_state_residual(sys, y, w)), initial=0.0))
    except DomainError:
        residual_norm = math.inf
    if noise.measurement_sigma > 0:
        y = y + noise.measurement_sigma * noise.rng(probe_index, 0).standard_normal(n)

    return SteadyStateSample(
        y=y,
        x=x,
        t_elapsed=float(stepper.t),
        converged=converged,
        residual_norm=residual_norm,
        deriv_norm=deriv_norm,
        trajectory=_trajectory_frame(rows, n) if opts.trajectory_stride else None,
    )


def run_probe_schedule(sys, schedule, x0, opts=None, noise=None, parallel=False, max_workers=None):
    """Runs every input of schedule and returns one sample per input.

    Sequential mode applies the schedule as a switching signal: segment k
    starts at the terminal state of segment k-1. Parallel mode runs every
    input from x0 on a thread pool; results are kept in schedule order.

    Raises:
        ValueError: Empty schedule.
    """
    schedule = list(schedule)
    if not schedule:
        raise ValueError("probe schedule is empty")

    if parallel:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            futures = [
                pool.submit(simulate_to_steady_state, sys, w, x0, opts, noise, k)
                for k, w in enumerate(schedule)
            ]
            return [f.result() for f in futures]

    samples = []
    x = x0
    for k, w in enumerate(schedule):
        sample = simulate_to_steady_state(sys, w, x, opts, noise, probe_index=k)
        samples.append(sample)
        x = sample.x
    return samples


def newton_steady_state(sys, w, y_guess, tol=NEWTON_TOL, max_iter=NEWTON_MAX_ITER):
    """Solves steady_state_residual(sys, y, w) = 0 by damped Newton.

    The Jacobian is the connection matrix at the current iterate. When
    grad k^-1 vanishes (integrator agents) that matrix is singular along
    the ones vector, so (1/n) 11^T is added to it and (1/n) 11^T (y - y_guess)
    to the residual, which pins mean(y) to mean(y_guess) as the ODE does.
    Steps are halved while they leave an output range or fail to reduce
    the residual.

    Returns:
        y with ||residual||_inf < tol.

    Raises:
        DomainError: y_guess outside an agent's output range.
        SteadyStateError: No convergence in max_iter iterations.
    """
    n = sys.n
    w = _vector(w, n, "w")
    anchor = _vector(y_guess, n, "y_guess").copy()
    pinned = sys.is_integrator_point(anchor)

    def augmented(y):
        r = steady_state_residual(sys, y, w)
        if pinned:
            r = r + np.mean(y - anchor)
        return r

    y = anchor.copy()
    r = augmented(y)
    for it in range(max_iter):
        norm = float(np.max(np.abs(r)))
        if norm < tol:
            logger.debug("newton converged in %d iterations (%.3g)", it, norm)
            return y
        jac = connection_matrix_true(sys, y)
        if pinned:
            jac = jac + 1.0 / n
        try:
            step = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError as exc:
            raise SteadyStateError(f"singular Jacobian at iteration {it}", y) from exc

        alpha = 1.0
        while True:
            y_try = y + alpha * step
            try:
                r_try = augmented(y_try)
                if np.max(np.abs(r_try)) < norm or alpha < 1e-3:
                    break
            except DomainError:
                pass
            alpha *= 0.5
            if alpha < 1e-10:
                raise SteadyStateError(f"line search failed at iteration {it}", y)
        y, r = y_try, r_try

    norm = float(np.max(np.abs(r)))
    if norm < tol:
        return y
    raise SteadyStateError(f"no convergence after {max_iter} iterations (residual {norm:.3g})", y)


@dataclass(frozen=True)
class DisturbanceReport:
    """Output deviation from steady state under bounded disturbance.

    Attributes:
        bound: Disturbance bound used.
        y_ss: Undisturbed steady-state output.
        per_trial: sup over the post-transient window of ||y(t) - y_ss||_2.
        sup_deviation: max of per_trial.
        exceed_fraction: {candidate bound: mean fraction of post-transient
            samples whose deviation exceeds it}.
    """

    bound: float
    y_ss: np.ndarray
    per_trial: np.ndarray
    sup_deviation: float
    exceed_fraction: dict

    def to_frame(self):
        return pd.DataFrame({"trial": np.arange(len(self.per_trial)), "sup_deviation": self.per_trial})


def disturbance_experiment(sys, w, bound, trials, opts=None, seed=0, x0=None,
                           transient=None, candidate_bounds=()):
    """Simulates `trials` disturbance realizations and reports deviations.

    Each trial starts from the undisturbed steady state (reached from x0)
    and integrates to opts.switch_time in fixed mode, with a fresh
    disturbance stream (NoiseSpec(bound, seed=seed), probe index = trial)
    and one trajectory row per accepted step. Only rows at t >= transient
    (default 0) count, so the deviation scales linearly with the bound
    for linear agents.

    Raises:
        ValueError: Negative bound or trials < 1.
    """
    if not bound >= 0:
        raise ValueError(f"disturbance bound must be >= 0, got {bound}")
    if trials < 1:
        raise ValueError(f"need at least one trial, got {trials}")
    opts = opts or SimOptions(integrator="rk4", mode="fixed")
    x0 = np.zeros(sys.n) if x0 is None else x0
    transient = 0.0 if transient is None else transient

    reference = simulate_to_steady_state(
        sys, w, x0, replace(opts, mode="converge", trajectory_stride=0)
    )
    y_ss = reference.y
    run_opts = replace(opts, mode="fixed", trajectory_stride=1)
    noise = NoiseSpec(disturbance=bound, seed=seed)
    ycols = [f"y_{i + 1}" for i in range(sys.n)]

    per_trial = np.empty(trials)
    exceed = {c: 0.0 for c in candidate_bounds}
    for k in range(trials):
        traj = simulate_to_steady_state(sys, w, reference.x, run_opts, noise, probe_index=k).trajectory
        window = traj[traj["t"] >= transient]
        dev = np.linalg.norm(window[ycols].to_numpy() - y_ss, axis=1)
        per_trial[k] = dev.max(initial=0.0)
        for c in exceed:
            exceed[c] += float(np.mean(dev > c)) / trials

    logger.info("disturbance %g: sup deviation %.3g over %d trials", bound, per_trial.max(), trials)
    return DisturbanceReport(bound, y_ss, per_trial, float(per_trial.max()), exceed)


def stack_trajectories(trajectories):
    """Concatenates {probe index: trajectory} into one frame.

    The result has a leading "probe" column; t restarts at 0 in every
    segment. Segments without a trajectory are skipped. Returns None when
    no segment has one.
    """
    frames = [
        traj.assign(probe=k)[["probe"] + list(traj.columns)]
        for k, traj in sorted(trajectories.items())
        if traj is not None
    ]
    if not frames:
        return None
    return pd.concat(frames, ignore_index=True)


def write_trajectory_csv(trajectory, path):
    """Writes a trajectory frame (sample.trajectory or stack_trajectories) to path.

    Raises:
        ValueError: No trajectory; the run had trajectory_stride 0.
    """
    if trajectory is None:
        raise ValueError("no trajectory to write; set SimOptions.trajectory_stride")
    trajectory.to_csv(path, index=False, float_format="%.17g")
