"""Unit tests for netprobe.simulator."""

import math
import os
import tempfile
import unittest

import numpy as np
import pandas as pd

import netprobe.graph as gr
import netprobe.model as md
import netprobe.simulator as sim

EDGE = gr.WeightedGraph(2, ((0, 1, 1.0),))


def lti_system(graph, a):
    return md.NetworkSystem(graph, tuple(md.lti_agent(ai) for ai in a))


def lti_equilibrium(sys_graph, a, w):
    return np.linalg.solve(np.diag(a) + gr.weighted_laplacian(sys_graph), w)


class TestOptions(unittest.TestCase):
    """SimOptions and NoiseSpec validation"""

    def test_defaults(self):
        """Defaults are rkf45 with tight tolerances"""
        opts = sim.SimOptions()
        self.assertEqual((opts.integrator, opts.rtol, opts.atol), ("rkf45", 1e-10, 1e-12))
        self.assertEqual((opts.deriv_tol, opts.dwell, opts.mode), (1e-9, 10, "converge"))
        self.assertEqual(set(sim.STEPPERS), {"rk4", "rkf45", "bdf"})

    def test_invalid(self):
        """Non-positive tolerances and unknown names are rejected"""
        bad = [
            {"integrator": "euler"}, {"mode": "forever"}, {"rtol": 0.0},
            {"t_max": -1.0}, {"dwell": 0}, {"dt": float("inf")},
        ]
        for kw in bad:
            with self.subTest(kw=kw):
                self.assertRaises(ValueError, sim.SimOptions, **kw)
        self.assertRaises(ValueError, sim.NoiseSpec, disturbance=-1.0)
        self.assertRaises(ValueError, sim.NoiseSpec, measurement_sigma=-0.1)


class TestSimulate(unittest.TestCase):
    """simulate_to_steady_state"""

    def test_single_lti(self):
        """1/(s + 2) with w = 1 settles at 0.5"""
        sys = lti_system(gr.WeightedGraph(1), [2.0])
        sample = sim.simulate_to_steady_state(sys, [1.0], [0.0])
        self.assertTrue(sample.converged)
        self.assertAlmostEqual(sample.y[0], 0.5, delta=1e-8)
        self.assertLess(sample.residual_norm, 1e-8)

    def test_two_integrators(self):
        """Two coupled integrators with w = (1, -1) settle at (0.5, -0.5)"""
        sys = lti_system(EDGE, [0.0, 0.0])
        sample = sim.simulate_to_steady_state(sys, [1.0, -1.0], [0.0, 0.0])
        self.assertTrue(sample.converged)
        np.testing.assert_allclose(sample.y, [0.5, -0.5], atol=1e-8)

    def test_neural(self):
        """Isolated neuron with w = 2 settles at tanh(2)"""
        sys = md.NetworkSystem(gr.WeightedGraph(1), (md.neural_agent(1.0, 1.0),))
        sample = sim.simulate_to_steady_state(sys, [2.0], [0.0])
        self.assertAlmostEqual(sample.y[0], math.tanh(2.0), delta=1e-8)

    def test_each_stepper(self):
        """Every stepper reaches the linear-solve equilibrium"""
        g = gr.random_graph(6, 0.5, (0.5, 2.0), seed=1)
        a = np.linspace(1.0, 3.0, 6)
        sys = lti_system(g, a)
        w = np.linspace(-1.0, 1.0, 6)
        expected = lti_equilibrium(g, a, w)
        for name in sim.STEPPERS:
            with self.subTest(integrator=name):
                opts = sim.SimOptions(integrator=name, rtol=1e-10, atol=1e-12)
                sample = sim.simulate_to_steady_state(sys, w, np.zeros(6), opts)
                self.assertTrue(sample.converged)
                np.testing.assert_allclose(sample.y, expected, atol=10 * opts.deriv_tol)

    def test_fixed_mode(self):
        """Fixed mode stops exactly at switch_time"""
        sys = lti_system(gr.WeightedGraph(1), [1.0])
        for name in ("rk4", "rkf45"):
            with self.subTest(integrator=name):
                opts = sim.SimOptions(integrator=name, mode="fixed", switch_time=0.37, dt=0.05)
                sample = sim.simulate_to_steady_state(sys, [1.0], [0.0], opts)
                self.assertEqual(sample.t_elapsed, 0.37)
                self.assertTrue(sample.converged)
                self.assertAlmostEqual(sample.y[0], 1.0 - math.exp(-0.37), delta=1e-6)

    def test_not_converged(self):
        """Running into t_max is flagged, not silent"""
        sys = lti_system(gr.WeightedGraph(1), [0.01])
        opts = sim.SimOptions(t_max=1.0)
        with self.assertLogs("netprobe.simulator", level="WARNING"):
            sample = sim.simulate_to_steady_state(sys, [1.0], [0.0], opts)
        self.assertFalse(sample.converged)
        self.assertEqual(sample.t_elapsed, 1.0)

    def test_integration_failure(self):
        """A blowing-up state raises IntegrationError"""
        unstable = md.AgentModel(
            f=lambda x: x ** 3, b=1.0, h=lambda x: x, h_inv=lambda y: y,
            k_inv=lambda y: -(y ** 3), k_inv_deriv=lambda y: -3 * y ** 2,
        )
        sys = md.NetworkSystem(gr.WeightedGraph(1), (unstable,))
        opts = sim.SimOptions(integrator="rk4", dt=0.1, t_max=100.0)
        self.assertRaises(sim.IntegrationError, sim.simulate_to_steady_state, sys, [0.0], [10.0], opts)

    def test_bad_dimensions(self):
        """w and x0 must have n entries"""
        sys = lti_system(EDGE, [1.0, 1.0])
        self.assertRaises(ValueError, sim.simulate_to_steady_state, sys, [1.0], [0.0, 0.0])

    def test_measurement_noise(self):
        """Noise goes on y only, and the same seed gives the same noise"""
        sys = lti_system(gr.WeightedGraph(1), [2.0])
        noise = sim.NoiseSpec(measurement_sigma=1e-3, seed=4)
        a = sim.simulate_to_steady_state(sys, [1.0], [0.0], noise=noise)
        b = sim.simulate_to_steady_state(sys, [1.0], [0.0], noise=noise)
        self.assertEqual(a.y[0], b.y[0])
        self.assertNotAlmostEqual(a.y[0], 0.5, delta=1e-7)
        self.assertAlmostEqual(a.x[0], 0.5, delta=1e-8)

    def test_bdf_rejects_disturbance(self):
        """The bdf stepper does not take disturbances"""
        sys = lti_system(gr.WeightedGraph(1), [1.0])
        opts = sim.SimOptions(integrator="bdf")
        noise = sim.NoiseSpec(disturbance=0.1)
        self.assertRaises(ValueError, sim.simulate_to_steady_state, sys, [0.0], [0.0], opts, noise)

    def test_rk4_deterministic(self):
        """Fixed-step runs with the same seed are bit-identical"""
        g = gr.random_graph(5, 0.6, (0.5, 2.0), seed=2)
        sys = lti_system(g, np.ones(5))
        opts = sim.SimOptions(integrator="rk4", mode="fixed", switch_time=2.0, trajectory_stride=1)
        noise = sim.NoiseSpec(disturbance=0.2, seed=9)
        a = sim.simulate_to_steady_state(sys, np.ones(5), np.zeros(5), opts, noise)
        b = sim.simulate_to_steady_state(sys, np.ones(5), np.zeros(5), opts, noise)
        pd.testing.assert_frame_equal(a.trajectory, b.trajectory)

    def test_integrator_mean_conserved(self):
        """Integrators with w orthogonal to ones keep mean(y) fixed"""
        g = gr.WeightedGraph(6, tuple((i, i + 1, 0.5 + 0.3 * i) for i in range(5)))
        sys = lti_system(g, np.zeros(6))
        w = np.array([1.0, -2.0, 0.5, 0.5, 0.0, 0.0])
        x0 = np.linspace(-1.0, 2.0, 6)
        opts = sim.SimOptions(trajectory_stride=1)
        sample = sim.simulate_to_steady_state(sys, w, x0, opts)
        ycols = [f"y_{i + 1}" for i in range(6)]
        means = sample.trajectory[ycols].mean(axis=1)
        self.assertLess(np.max(np.abs(means - x0.mean())), 1e-9)

    def test_trajectory_csv(self):
        """Trajectory has t, x_i, y_i columns and can be written"""
        sys = lti_system(EDGE, [1.0, 1.0])
        opts = sim.SimOptions(integrator="rk4", mode="fixed", switch_time=1.0, dt=0.1, trajectory_stride=2)
        sample = sim.simulate_to_steady_state(sys, [1.0, 0.0], [0.0, 0.0], opts)
        self.assertEqual(list(sample.trajectory.columns), ["t", "x_1", "x_2", "y_1", "y_2"])
        self.assertEqual(len(sample.trajectory), 6)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "traj.csv")
            sim.write_trajectory_csv(sample.trajectory, path)
            self.assertEqual(len(pd.read_csv(path)), 6)
        no_traj = sim.simulate_to_steady_state(sys, [1.0, 0.0], [0.0, 0.0])
        self.assertRaises(ValueError, sim.write_trajectory_csv, no_traj.trajectory, "unused.csv")

    def test_stack_trajectories(self):
        """Segments are joined in index order behind an index column"""
        sys = lti_system(EDGE, [1.0, 1.0])
        opts = sim.SimOptions(integrator="rk4", mode="fixed", switch_time=1.0, dt=0.1, trajectory_stride=5)
        first = sim.simulate_to_steady_state(sys, [1.0, 0.0], [0.0, 0.0], opts)
        second = sim.simulate_to_steady_state(sys, [0.0, 1.0], first.x, opts)
        stacked = sim.stack_trajectories({1: second.trajectory, 0: first.trajectory, 2: None})
        self.assertEqual(list(stacked.columns), ["probe", "t", "x_1", "x_2", "y_1", "y_2"])
        self.assertEqual(list(stacked["probe"]), [0, 0, 0, 1, 1, 1])
        self.assertEqual(list(stacked["t"][:3]), list(first.trajectory["t"]))
        self.assertIsNone(sim.stack_trajectories({0: None}))


class TestSchedule(unittest.TestCase):
    """run_probe_schedule"""

    def setUp(self):
        self.graph = gr.random_graph(5, 0.6, (0.5, 2.0), seed=3)
        self.a = np.linspace(1.0, 2.0, 5)
        self.sys = lti_system(self.graph, self.a)
        self.schedule = [np.eye(5)[k] for k in range(5)]

    def test_sequential_matches_linear_solve(self):
        """Each switching segment ends at its own equilibrium"""
        samples = sim.run_probe_schedule(self.sys, self.schedule, np.zeros(5))
        for k, sample in enumerate(samples):
            with self.subTest(segment=k):
                np.testing.assert_allclose(sample.y, lti_equilibrium(self.graph, self.a, self.schedule[k]), atol=1e-8)

    def test_sequential_vs_parallel(self):
        """Sequential and parallel modes agree to 1e-6"""
        seq = sim.run_probe_schedule(self.sys, self.schedule, np.zeros(5))
        par = sim.run_probe_schedule(self.sys, self.schedule, np.zeros(5), parallel=True, max_workers=3)
        for k, (s, p) in enumerate(zip(seq, par)):
            with self.subTest(segment=k):
                np.testing.assert_allclose(s.y, p.y, atol=1e-6)

    def test_repeated_input(self):
        """Repeating an input: the second segment starts at equilibrium"""
        w = np.ones(5)
        opts = sim.SimOptions(integrator="rk4", dt=0.01)
        first, second = sim.run_probe_schedule(self.sys, [w, w], np.zeros(5), opts)
        self.assertAlmostEqual(second.t_elapsed, opts.dwell * opts.dt, places=9)
        np.testing.assert_allclose(first.y, second.y, atol=1e-9)

    def test_empty(self):
        """An empty schedule is rejected"""
        self.assertRaises(ValueError, sim.run_probe_schedule, self.sys, [], np.zeros(5))


class TestNewton(unittest.TestCase):
    """newton_steady_state"""

    def test_lti(self):
        """LTI Newton agrees with the linear solve to 1e-12"""
        g = gr.random_graph(10, 0.3, (0.5, 2.0), seed=6)
        a = np.linspace(1.0, 4.0, 10)
        sys = lti_system(g, a)
        w = np.linspace(-2.0, 2.0, 10)
        y = sim.newton_steady_state(sys, w, np.zeros(10))
        np.testing.assert_allclose(y, lti_equilibrium(g, a, w), atol=1e-12)

    def test_constructed_fixed_point(self):
        """w = residual(y*) at zero input gives back y*"""
        g = gr.random_graph(6, 0.6, (0.5, 2.0), seed=7)
        agents = tuple(md.neural_agent(t, 2.0) for t in (1.0, 2.0, 3.0, 4.0, 5.0, 6.0))
        sys = md.NetworkSystem(g, agents, md.tanh_coupling())
        y_star = np.linspace(-0.6, 0.6, 6)
        w = md.steady_state_residual(sys, y_star, np.zeros(6))
        y = sim.newton_steady_state(sys, w, np.zeros(6))
        np.testing.assert_allclose(y, y_star, atol=1e-10)

    def test_matches_simulation(self):
        """Newton and integration agree to 1e-6 on a neural pair"""
        agents = (md.neural_agent(1.0, 2.0), md.neural_agent(2.0, 1.0))
        sys = md.NetworkSystem(gr.WeightedGraph(2, ((0, 1, 3.0),)), agents)
        w = np.array([0.4, -0.3])
        sample = sim.simulate_to_steady_state(sys, w, np.zeros(2))
        y = sim.newton_steady_state(sys, w, np.zeros(2))
        np.testing.assert_allclose(y, sample.y, atol=1e-6)

    def test_integrator_pins_mean(self):
        """Integrator networks keep the mean of the initial guess"""
        g = gr.WeightedGraph(4, ((0, 1, 1.0), (1, 2, 2.0), (2, 3, 1.5)))
        sys = lti_system(g, np.zeros(4))
        w = np.array([1.0, 0.0, 0.0, -1.0])
        guess = np.full(4, 0.25)
        y = sim.newton_steady_state(sys, w, guess)
        self.assertAlmostEqual(y.mean(), 0.25, places=12)
        np.testing.assert_allclose(md.steady_state_residual(sys, y, w), 0.0, atol=1e-11)

    def test_failure(self):
        """No convergence raises SteadyStateError carrying the last iterate"""
        sys = lti_system(EDGE, [1.0, 1.0])
        with self.assertRaises(sim.SteadyStateError) as ctx:
            sim.newton_steady_state(sys, [1.0, 1.0], np.zeros(2), max_iter=0)
        np.testing.assert_array_equal(ctx.exception.last_iterate, np.zeros(2))


class TestDisturbance(unittest.TestCase):
    """disturbance_experiment"""

    def setUp(self):
        self.scalar = lti_system(gr.WeightedGraph(1), [1.0])
        self.opts = sim.SimOptions(integrator="rk4", dt=0.01, mode="fixed", switch_time=10.0)

    def test_zero_disturbance(self):
        """No disturbance: deviation below convergence tolerance"""
        report = sim.disturbance_experiment(self.scalar, [0.0], 0.0, trials=2, opts=self.opts)
        self.assertLess(report.sup_deviation, 1e-9)

    def test_scalar_bound(self):
        """x' = -x + d with |d| <= C stays within C of its steady state"""
        C = 0.5
        report = sim.disturbance_experiment(
            self.scalar, [0.0], C, trials=100, opts=self.opts, seed=3, candidate_bounds=(C, C / 10)
        )
        self.assertLessEqual(report.sup_deviation, C)
        self.assertEqual(report.exceed_fraction[C], 0.0)
        self.assertGreater(report.exceed_fraction[C / 10], 0.0)
        self.assertEqual(len(report.to_frame()), 100)

    def test_halving(self):
        """Halving the bound halves the deviation of a linear network, from t = 0"""
        g = gr.random_graph(4, 0.7, (0.5, 2.0), seed=1)
        sys = lti_system(g, np.ones(4))
        full = sim.disturbance_experiment(sys, np.ones(4), 0.4, trials=3, opts=self.opts, seed=5)
        half = sim.disturbance_experiment(sys, np.ones(4), 0.2, trials=3, opts=self.opts, seed=5)
        self.assertGreater(full.sup_deviation, 0.0)
        self.assertAlmostEqual(half.sup_deviation / full.sup_deviation, 0.5, delta=0.01)
        np.testing.assert_allclose(half.per_trial / full.per_trial, 0.5, atol=0.01)

    def test_invalid(self):
        """Negative bounds and zero trials are rejected"""
        self.assertRaises(ValueError, sim.disturbance_experiment, self.scalar, [0.0], -1.0, 1)
        self.assertRaises(ValueError, sim.disturbance_experiment, self.scalar, [0.0], 1.0, 0)


if __name__ == "__main__":
    unittest.main()
