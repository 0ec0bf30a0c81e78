"""Steady-state probing identification of diffusively-coupled networks.

Modules:
    graph: Weighted graphs, incidence and Laplacian matrices.
    model: Agents, controllers and the closed-loop network.
    simulator: Integration to steady state, Newton steady states.
    reconstruction: Probe design, connection matrix estimate, graph extraction.
    analysis: Comparison against ground truth and error diagnostics.
    scenario, experiment, cli: Scenario files, runs, sweeps and the CLI.
"""

__version__ = "0.1.0"
