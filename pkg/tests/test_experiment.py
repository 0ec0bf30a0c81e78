"""Unit tests for netprobe.experiment."""

import json
import os
import tempfile
import unittest
from unittest import mock

import numpy as np
import pandas as pd

import netprobe.experiment as ex
import netprobe.graph as gr
import netprobe.scenario as sc

LONG_TESTS = bool(os.environ.get("NETPROBE_LONG_TESTS"))

TWO_NODES = {"graph": {"n": 2, "edges": [[0, 1, 1.0]]}, "agents": {"params": {"a": 1.0}}}


def read_metrics(out_dir):
    with open(os.path.join(out_dir, "metrics.json")) as f:
        return json.load(f)


class TestRunScenario(unittest.TestCase):
    """run_scenario"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.minimal = sc.load_scenario(sc.preset_path("minimal"))

    def test_minimal(self):
        """The minimal preset is recovered and every artifact is written"""
        outcome = ex.run_scenario(self.minimal, self.tmp.name)
        self.assertEqual(outcome.status, ex.EXIT_OK)
        for name in ("graph_true.csv", "graph_est.csv", "adjacency_true.csv", "adjacency_est.csv",
                     "probes.csv", "probes.json", "edge_errors.csv", "metrics.json"):
            with self.subTest(artifact=name):
                self.assertTrue((outcome.out_dir / name).exists())
        metrics = read_metrics(outcome.out_dir)
        self.assertTrue(metrics["complete"])
        self.assertEqual((metrics["precision"], metrics["recall"]), (1.0, 1.0))
        self.assertLess(metrics["max_rel_err"], 1e-3)
        self.assertIn("minimal: precision=1.0000", outcome.summary)
        self.assertEqual(metrics["num_sign_conflicts"], 0)
        self.assertFalse((outcome.out_dir / "trajectory.csv").exists())

    def test_estimate_file(self):
        """graph_est.csv reads back as the recovered graph"""
        outcome = ex.run_scenario(self.minimal, self.tmp.name)
        back = gr.read_edge_csv(outcome.out_dir / "graph_est.csv", n=2)
        self.assertEqual(back, outcome.result.graph)

    def test_adjacency_files(self):
        """The adjacency artifacts hold the true and recovered weight matrices"""
        outcome = ex.run_scenario(self.minimal, self.tmp.name)
        est = pd.read_csv(outcome.out_dir / "adjacency_est.csv", header=None, float_precision="round_trip")
        np.testing.assert_array_equal(est.to_numpy(), outcome.result.graph.adjacency())
        true = pd.read_csv(outcome.out_dir / "adjacency_true.csv", header=None, float_precision="round_trip")
        self.assertEqual(true.shape, (2, 2))
        self.assertEqual(true.iloc[0, 1], 1.0)

    def test_trajectory_file(self):
        """trajectory_stride writes every segment of the switching signal"""
        algorithm = {"integrator": "rk4", "switch_mode": "fixed", "switch_time": 5.0, "trajectory_stride": 100}
        s = sc.parse_scenario(dict(TWO_NODES, algorithm=algorithm))
        outcome = ex.run_scenario(s, self.tmp.name)
        traj = pd.read_csv(outcome.out_dir / "trajectory.csv")
        self.assertEqual(list(traj.columns), ["probe", "t", "x_1", "x_2", "y_1", "y_2"])
        counts = traj["probe"].value_counts().sort_index()
        self.assertEqual(list(counts.index), [0, 1, 2])
        self.assertEqual(len(set(counts)), 1)
        self.assertEqual(traj["t"].min(), 0.0)

    def test_fixed_switching_accuracy(self):
        """Tight integrator tolerances keep fixed-time switching close to the exact steady states"""
        s = sc.parse_scenario({
            "seed": 11,
            "graph": {"n": 6, "p": 0.6},
            "agents": {"params": {"a": [5.0, 10.0]}},
            "coupling": {"kind": "linear", "params": {"gain": [0.5, 1.0]}},
            "algorithm": {"switch_mode": "fixed", "switch_time": 10.0, "integrator": "rkf45",
                          "rtol": 1e-13, "atol": 1e-15},
        })
        outcome = ex.run_scenario(s, self.tmp.name)
        self.assertEqual(outcome.status, ex.EXIT_OK)
        self.assertLessEqual(outcome.metrics["max_rel_err"], 1e-6)

    def test_deterministic(self):
        """Two runs give the same metrics apart from the runtime"""
        first = read_metrics(ex.run_scenario(self.minimal, os.path.join(self.tmp.name, "a")).out_dir)
        second = read_metrics(ex.run_scenario(self.minimal, os.path.join(self.tmp.name, "b")).out_dir)
        first.pop("runtime_sec")
        second.pop("runtime_sec")
        self.assertEqual(first, second)

    def test_failure(self):
        """A failed baseline is recorded with its stage"""
        s = sc.parse_scenario(dict(TWO_NODES, algorithm={"t_max": 1e-3}))
        with self.assertLogs("netprobe", level="WARNING"):
            outcome = ex.run_scenario(s, self.tmp.name)
        self.assertEqual(outcome.status, ex.EXIT_ERROR)
        metrics = read_metrics(outcome.out_dir)
        self.assertFalse(metrics["complete"])
        self.assertEqual(metrics["stage"], "baseline")
        self.assertTrue((outcome.out_dir / "graph_true.csv").exists())
        self.assertFalse((outcome.out_dir / "graph_est.csv").exists())

    def test_reachable_rank(self):
        """Probe nodes add the reachable rank to the metrics"""
        s = sc.parse_scenario(dict(TWO_NODES, algorithm={"oracle": True}, probe_nodes=[0]))
        outcome = ex.run_scenario(s, self.tmp.name)
        self.assertEqual(outcome.metrics["reachable_rank"], 1)

    def test_output_root(self):
        """The output root comes from the environment"""
        with mock.patch.dict(os.environ, {ex.OUTPUT_ROOT_ENV: self.tmp.name}):
            self.assertEqual(str(ex.output_root()), self.tmp.name)
        with mock.patch.dict(os.environ, clear=True):
            self.assertEqual(str(ex.output_root()), ex.DEFAULT_OUTPUT_ROOT)


class TestSweep(unittest.TestCase):
    """ScenarioTester and sweep"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.scenario = sc.parse_scenario(dict(TWO_NODES, algorithm={"oracle": True}, output_dir="two"))

    def test_single_value(self):
        """A one-value sweep writes a one-row table"""
        table = ex.sweep(self.scenario, "kappa", [0.01], self.tmp.name)
        self.assertEqual(list(table.columns), ["kappa"] + ex.SWEEP_COLUMNS)
        self.assertEqual(len(table), 1)
        self.assertEqual(table["status"][0], ex.EXIT_OK)
        written = pd.read_csv(os.path.join(self.tmp.name, "two", "sweep_kappa.csv"))
        self.assertEqual(len(written), 1)
        self.assertTrue(os.path.exists(os.path.join(self.tmp.name, "two", "sweep_kappa", "kappa=0.01", "metrics.json")))

    def test_failing_cells(self):
        """Failing cells are recorded and the sweep goes on"""
        s = sc.parse_scenario(dict(TWO_NODES, algorithm={"t_max": 1e-3}))
        tester = ex.ScenarioTester(s, self.tmp.name)
        with self.assertLogs("netprobe", level="WARNING"):
            self.assertEqual(tester.run_sweep("kappa", [0.01, 0.1]), 2)
        results = tester.get_results()
        self.assertEqual(list(results["status"]), [ex.EXIT_ERROR, ex.EXIT_ERROR])
        self.assertTrue(all("baseline" in err for err in results["error"]))
        self.assertEqual(repr(tester), "ScenarioTester(scenario, cells=2)")

    def test_callback(self):
        """The callback sees every cell and a final call"""
        calls = []
        tester = ex.ScenarioTester(self.scenario, self.tmp.name)
        tester.run_sweep("sigma", [0.0, 1e-6], callback=lambda *args: calls.append(args))
        self.assertEqual(len(calls), 3)
        self.assertEqual(calls[0][:3], ("scenario:sigma", 0, 2))
        self.assertEqual(calls[0][4], "sigma=0")
        self.assertIsNone(calls[-1][4])
        self.assertEqual(calls[-1][1], 2)

    def test_invalid(self):
        """Unknown parameters and empty or bad values are rejected"""
        tester = ex.ScenarioTester(self.scenario, self.tmp.name)
        self.assertRaises(ValueError, tester.run_sweep, "epsilon", [0.1])
        self.assertRaises(ValueError, tester.run_sweep, "kappa", [])
        self.assertRaises(ValueError, tester.run_sweep, "kappa", [0.0])
        self.assertRaises(ValueError, tester.run_sweep, "sigma", [-1.0])

    def test_switch_time(self):
        """Longer switching intervals give smaller connection errors, one row per value"""
        s = sc.parse_scenario(dict(TWO_NODES, algorithm={"integrator": "rk4"}, output_dir="two"))
        table = ex.sweep(s, "switch_time", [2.0, 5.0, 12.0], self.tmp.name)
        self.assertEqual(list(table["switch_time"]), [2.0, 5.0, 12.0])
        self.assertTrue((table["status"] != ex.EXIT_ERROR).all())
        errors = list(table["max_connection_err"])
        for prev, cur in zip(errors, errors[1:]):
            self.assertLess(cur, prev)
        self.assertLess(errors[-1], 1e-3)


@unittest.skipUnless(LONG_TESTS, "set NETPROBE_LONG_TESTS=1 to run the case studies")
class TestCaseStudies(unittest.TestCase):
    """The shipped case studies recover their graphs exactly"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)

    def test_lti(self):
        """100 LTI agents with static gain controllers"""
        outcome = ex.casestudy("lti", self.tmp.name)
        self.assertEqual(outcome.status, ex.EXIT_OK)
        self.assertLessEqual(outcome.metrics["max_rel_err"], 1e-6)

    def test_neural(self):
        """50 tanh neurons, stiff integration"""
        outcome = ex.casestudy("neural", self.tmp.name)
        self.assertEqual(outcome.status, ex.EXIT_OK)
        self.assertLessEqual(outcome.metrics["max_rel_err"], 1e-4)

    def test_neural_large_kappa(self):
        """kappa = 0.1 finds every edge plus spurious ones"""
        outcome = ex.casestudy("neural", self.tmp.name, kappa=0.1)
        self.assertEqual(outcome.status, ex.EXIT_MISMATCH)
        self.assertEqual(outcome.metrics["recall"], 1.0)
        self.assertLess(outcome.metrics["precision"], 1.0)

    def test_neural_kappa_sweep(self):
        """Smaller probes give smaller weight errors, up to a factor 2"""
        s = sc.load_scenario(sc.preset_path("casestudy_neural"))
        table = ex.sweep(s, "kappa", [1e-2, 3e-3, 1e-3, 3e-4], self.tmp.name)
        errors = list(table["max_rel_err"])
        for prev, cur in zip(errors, errors[1:]):
            self.assertLessEqual(cur, 2.0 * prev)


if __name__ == "__main__":
    unittest.main()
