# benchmarking.py

import timeit

import numpy as np

import netprobe.graph as gr
import netprobe.model as md
import netprobe.reconstruction as rc


def make_log(n, branch="generic", kappa=1e-3, seed=0):
    g = gr.random_graph(n, min(1.0, 8.0 / n), (0.3, 10.0), seed=seed)
    if branch == "generic":
        agents = tuple(md.lti_agent(a) for a in np.random.default_rng(seed).uniform(1.0, 100.0, n))
    else:
        agents = tuple(md.integrator_agent() for _ in range(n))
        g = gr.WeightedGraph(n, g.edges + tuple((i, i + 1, 1.0) for i in range(n - 1) if (i, i + 1) not in g.edge_set()))
    sys = md.NetworkSystem(g, agents)
    return rc.reconstruct(rc.OracleNetwork(sys), kappa=kappa, seed=seed).log


def bench(statement, log, number=5):
    t = timeit.timeit(statement, globals={"rc": rc, "log": log}, number=number)
    print(f"n={log.n:4d} {log.branch:10s} - {statement} \t= {t / number:.5f}s")
    return t


# Sanity check
log = make_log(20)
assert np.allclose(
    rc.estimate_connection_matrix(log, "cholesky"), rc.estimate_connection_matrix(log, "direct"), atol=1e-6
)

print("CONNECTION MATRIX")
for n in (50, 100, 200):
    for branch in ("generic", "integrator"):
        log = make_log(n, branch)
        bench("rc.estimate_connection_matrix(log, 'cholesky')", log)
        bench("rc.estimate_connection_matrix(log, 'direct')", log)

print("DELTA W INVERSE")
for n in (100, 500):
    log = make_log(n, "integrator")
    bench("rc.deltaW_inverse_apply(log.delta_y, log.branch, log.kappa)", log, number=20)
