"""Loads and validates scenario files, and builds networks from them.

A scenario is a YAML file. Every key is optional except where noted;
unknown keys are errors. Values written [lo, hi] are drawn log-uniformly
(per agent, or per node pair for couplings); scalars are used as is.

    seed: 0                       # split into graph/agents/couplings/probe/noise streams
    graph:
      n: 10
      p: 0.3                      # edge probability
      weight_range: [0.3, 10]     # log-uniform edge weights
      edges: [[0, 1, 2.5], ...]   # explicit edge list; replaces n/p sampling
    agents:
      kind: lti                   # lti | integrator | neural | custom-polynomial
      params: {a: [1, 100]}       # lti: a; neural: tau, b; custom-polynomial: c1, c3, b
    coupling:
      kind: identity              # identity | linear | tanh | polynomial
      params: {}                  # linear/tanh: gain; polynomial: c1, c3
    algorithm:
      kappa: 1.0e-3
      epsilon: 0.01
      method: auto                # auto | cholesky | direct
      switch_mode: converge       # converge | fixed
      switch_time: 10.0
      integrator: rkf45           # rk4 | rkf45 | bdf
      dt: 0.01
      rtol: 1.0e-10
      atol: 1.0e-12
      deriv_tol: 1.0e-9
      dwell: 10
      t_max: 10000.0
      parallel_probes: false
      oracle: false               # Newton steady states instead of integration
      trajectory_stride: 0        # > 0 writes trajectory.csv, every k-th step
    noise:
      measurement_sigma: 0.0
      disturbance: 0.0
    probe_nodes: [0, 1, 2]        # restricted probing (rank estimate)
    probe_samples: null           # defaults to 2 * len(probe_nodes)
    output_dir: run               # relative to the output root

Classes:
    Scenario and its sections GraphSpec, AgentSpec, CouplingSpec,
    AlgorithmSpec, NoiseConfig.
    ScenarioError: Configuration error with key path and file:line.

Functions:
    load_scenario: Parse and validate a YAML file.
    parse_scenario: Validate an already-parsed dict.
    preset_path: Path of a shipped preset.
    with_overrides: Apply command-line overrides.
    seed_streams: Split the scenario seed.
    build_system: NetworkSystem described by a scenario.
    build_network: Black box (ProbedNetwork / OracleNetwork) for it.
"""

from dataclasses import dataclass, field, replace
import logging
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from netprobe.graph import WeightedGraph, log_uniform, random_graph
from netprobe.model import CouplingTable, NetworkSystem, make_agent, make_coupling
from netprobe.reconstruction import (
    CONNECTION_METHODS,
    DEFAULT_EPSILON,
    DEFAULT_KAPPA,
    OracleNetwork,
    ProbedNetwork,
)
from netprobe.simulator import SIM_MODES, STEPPERS, NoiseSpec, SimOptions


logger = logging.getLogger(__name__)

PRESET_DIR = Path(__file__).resolve().parent.parent / "data" / "scenarios"
SEED_STREAMS = ("graph", "agents", "couplings", "probe", "noise")

AGENT_PARAMS = {
    "lti": ("a",),
    "integrator": (),
    "neural": ("tau", "b"),
    "custom-polynomial": ("c1", "c3", "b"),
}
COUPLING_PARAMS = {
    "identity": (),
    "linear": ("gain",),
    "tanh": ("gain",),
    "polynomial": ("c1", "c3"),
}


class ScenarioError(ValueError):
    """Invalid scenario, reported with its key path and file:line."""

    def __init__(self, msg, key=None, location=None):
        prefix = ""
        if location:
            prefix += f"{location}: "
        if key:
            prefix += f"{key}: "
        super().__init__(prefix + msg)
        self.key = key
        self.location = location


@dataclass(frozen=True)
class GraphSpec:
    n: int = 10
    p: float = 0.3
    weight_range: tuple = (0.3, 10.0)
    edges: Optional[tuple] = None


@dataclass(frozen=True)
class AgentSpec:
    kind: str = "lti"
    params: dict = field(default_factory=lambda: {"a": (1.0, 100.0)})


@dataclass(frozen=True)
class CouplingSpec:
    kind: str = "identity"
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class AlgorithmSpec:
    kappa: float = DEFAULT_KAPPA
    epsilon: float = DEFAULT_EPSILON
    method: str = "auto"
    switch_mode: str = "converge"
    switch_time: float = 10.0
    integrator: str = "rkf45"
    dt: float = 1e-2
    rtol: float = 1e-10
    atol: float = 1e-12
    deriv_tol: float = 1e-9
    dwell: int = 10
    t_max: float = 1e4
    parallel_probes: bool = False
    oracle: bool = False
    trajectory_stride: int = 0

    def sim_options(self):
        return SimOptions(
            integrator=self.integrator,
            dt=self.dt,
            rtol=self.rtol,
            atol=self.atol,
            deriv_tol=self.deriv_tol,
            dwell=self.dwell,
            t_max=self.t_max,
            mode=self.switch_mode,
            switch_time=self.switch_time,
            trajectory_stride=self.trajectory_stride,
        )


@dataclass(frozen=True)
class NoiseConfig:
    measurement_sigma: float = 0.0
    disturbance: float = 0.0


@dataclass(frozen=True)
class Scenario:
    """A validated scenario. `source` is the file it came from, if any."""

    seed: int = 0
    graph: GraphSpec = field(default_factory=GraphSpec)
    agents: AgentSpec = field(default_factory=AgentSpec)
    coupling: CouplingSpec = field(default_factory=CouplingSpec)
    algorithm: AlgorithmSpec = field(default_factory=AlgorithmSpec)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    probe_nodes: Optional[tuple] = None
    probe_samples: Optional[int] = None
    output_dir: str = "run"
    source: Optional[str] = None

    @property
    def name(self):
        return Path(self.source).stem if self.source else "scenario"


def _locate(node, path, source):
    """Returns "file:line" of the YAML node at key path, or of its closest parent."""
    if node is None:
        return source
    for key in path:
        child = None
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                if k.value == key:
                    child = v
                    break
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            child = node.value[key]
        if child is None:
            break
        node = child
    return f"{source or '<string>'}:{node.start_mark.line + 1}"


class _Reader:
    """Validates one parsed document, reporting errors against its node tree."""

    def __init__(self, root_node=None, source=None):
        self.root_node = root_node
        self.source = source

    def fail(self, path, msg):
        key = ".".join(str(k) for k in path)
        raise ScenarioError(msg, key, _locate(self.root_node, path, self.source))

    def section(self, raw, path, allowed):
        if raw is None:
            return {}
        if not isinstance(raw, dict):
            self.fail(path, f"expected a mapping, got {type(raw).__name__}")
        unknown = set(raw) - set(allowed)
        if unknown:
            bad = sorted(str(k) for k in unknown)[0]
            self.fail(path + [bad], f"unknown key, expected one of {sorted(allowed)}")
        return raw

    def number(self, raw, path, lo=None, hi=None, positive=False, integer=False):
        if isinstance(raw, bool):
            self.fail(path, f"expected a number, got {raw}")
        if integer and isinstance(raw, int):
            value = raw
        else:
            try:
                value = float(raw)
            except (TypeError, ValueError):
                self.fail(path, f"expected a number, got {raw!r}")
            if not np.isfinite(value):
                self.fail(path, f"expected a finite number, got {raw}")
            if integer:
                if value != int(value):
                    self.fail(path, f"expected an integer, got {raw}")
                value = int(value)
        if positive and not value > 0:
            self.fail(path, f"must be positive, got {raw}")
        if lo is not None and value < lo:
            self.fail(path, f"must be >= {lo}, got {raw}")
        if hi is not None and value > hi:
            self.fail(path, f"must be <= {hi}, got {raw}")
        return value

    def flag(self, raw, path):
        if not isinstance(raw, bool):
            self.fail(path, f"expected true or false, got {raw!r}")
        return raw

    def choice(self, raw, path, options):
        if raw not in options:
            self.fail(path, f"{raw!r} is not one of {sorted(options)}")
        return raw

    def value_or_range(self, raw, path, lo=0.0):
        """Scalar, or [lo, hi] with 0 < lo <= hi for log-uniform draws."""
        if isinstance(raw, (list, tuple)):
            if len(raw) != 2:
                self.fail(path, f"expected [lo, hi], got {raw}")
            a = self.number(raw[0], path + [0], positive=True)
            b = self.number(raw[1], path + [1], positive=True)
            if a > b:
                self.fail(path, f"range [{a}, {b}] is reversed")
            return (a, b)
        return self.number(raw, path, lo=lo)


def parse_scenario(raw, root_node=None, source=None):
    """Validates a parsed scenario document and fills in defaults.

    Raises:
        ScenarioError: Unknown keys or invalid values.
    """
    r = _Reader(root_node, source)
    top = r.section(raw, [], [f.name for f in Scenario.__dataclass_fields__.values() if f.name != "source"])

    seed = r.number(top.get("seed", 0), ["seed"], lo=0, integer=True)

    g = r.section(top.get("graph"), ["graph"], GraphSpec.__dataclass_fields__)
    n = r.number(g.get("n", GraphSpec.n), ["graph", "n"], lo=1, integer=True)
    p = r.number(g.get("p", GraphSpec.p), ["graph", "p"], lo=0.0, hi=1.0)
    wr = r.value_or_range(g.get("weight_range", list(GraphSpec.weight_range)), ["graph", "weight_range"])
    if not isinstance(wr, tuple):
        wr = (wr, wr)
    edges = None
    if g.get("edges") is not None:
        if not isinstance(g["edges"], list):
            r.fail(["graph", "edges"], "expected a list of [i, j, weight]")
        edges = []
        for k, e in enumerate(g["edges"]):
            path = ["graph", "edges", k]
            if not isinstance(e, (list, tuple)) or len(e) != 3:
                r.fail(path, f"expected [i, j, weight], got {e}")
            i = r.number(e[0], path + [0], lo=0, hi=n - 1, integer=True)
            j = r.number(e[1], path + [1], lo=0, hi=n - 1, integer=True)
            w = r.number(e[2], path + [2], positive=True)
            edges.append((i, j, w))
        try:
            WeightedGraph(n, tuple(edges))
        except ValueError as exc:
            r.fail(["graph", "edges"], str(exc))
        edges = tuple(edges)
    elif n < 2:
        r.fail(["graph", "n"], "a random graph needs n >= 2")
    graph = GraphSpec(n, p, wr, edges)

    a = r.section(top.get("agents"), ["agents"], AgentSpec.__dataclass_fields__)
    kind = r.choice(a.get("kind", AgentSpec.kind), ["agents", "kind"], AGENT_PARAMS)
    default_params = AgentSpec().params if kind == "lti" else {}
    raw_params = r.section(a.get("params", default_params), ["agents", "params"], AGENT_PARAMS[kind])
    params = {}
    for name in AGENT_PARAMS[kind]:
        path = ["agents", "params", name]
        if name not in raw_params:
            if name == "b":
                params[name] = 1.0
                continue
            r.fail(path, f"required for {kind} agents")
        params[name] = r.value_or_range(raw_params[name], path)
        if name in ("tau", "b") and params[name] == 0:
            r.fail(path, "must be positive")
    agents = AgentSpec(kind, params)

    c = r.section(top.get("coupling"), ["coupling"], CouplingSpec.__dataclass_fields__)
    ckind = r.choice(c.get("kind", CouplingSpec.kind), ["coupling", "kind"], COUPLING_PARAMS)
    raw_cparams = r.section(c.get("params"), ["coupling", "params"], COUPLING_PARAMS[ckind])
    cparams = {}
    for name in COUPLING_PARAMS[ckind]:
        path = ["coupling", "params", name]
        if name not in raw_cparams:
            if name == "gain":
                cparams[name] = 1.0
                continue
            r.fail(path, f"required for {ckind} couplings")
        cparams[name] = r.value_or_range(raw_cparams[name], path)
    if ckind in ("linear", "tanh") and cparams["gain"] == 0:
        r.fail(["coupling", "params", "gain"], "must be positive")
    coupling = CouplingSpec(ckind, cparams)

    al = r.section(top.get("algorithm"), ["algorithm"], AlgorithmSpec.__dataclass_fields__)
    d = AlgorithmSpec()

    def num(key, **kw):
        return r.number(al.get(key, getattr(d, key)), ["algorithm", key], **kw)

    algorithm = AlgorithmSpec(
        kappa=num("kappa", positive=True),
        epsilon=num("epsilon", positive=True),
        method=r.choice(al.get("method", d.method), ["algorithm", "method"], CONNECTION_METHODS),
        switch_mode=r.choice(al.get("switch_mode", d.switch_mode), ["algorithm", "switch_mode"], SIM_MODES),
        switch_time=num("switch_time", positive=True),
        integrator=r.choice(al.get("integrator", d.integrator), ["algorithm", "integrator"], STEPPERS),
        dt=num("dt", positive=True),
        rtol=num("rtol", positive=True),
        atol=num("atol", positive=True),
        deriv_tol=num("deriv_tol", positive=True),
        dwell=num("dwell", lo=1, integer=True),
        t_max=num("t_max", positive=True),
        parallel_probes=r.flag(al.get("parallel_probes", d.parallel_probes), ["algorithm", "parallel_probes"]),
        oracle=r.flag(al.get("oracle", d.oracle), ["algorithm", "oracle"]),
        trajectory_stride=num("trajectory_stride", lo=0, integer=True),
    )

    nz = r.section(top.get("noise"), ["noise"], NoiseConfig.__dataclass_fields__)
    noise = NoiseConfig(
        measurement_sigma=r.number(nz.get("measurement_sigma", 0.0), ["noise", "measurement_sigma"], lo=0.0),
        disturbance=r.number(nz.get("disturbance", 0.0), ["noise", "disturbance"], lo=0.0),
    )
    if noise.disturbance > 0 and algorithm.integrator == "bdf":
        r.fail(["noise", "disturbance"], "not supported with the bdf integrator")

    probe_nodes = None
    if top.get("probe_nodes") is not None:
        raw_nodes = top["probe_nodes"]
        if not isinstance(raw_nodes, list) or not raw_nodes:
            r.fail(["probe_nodes"], "expected a nonempty list of node indices")
        probe_nodes = tuple(
            r.number(v, ["probe_nodes", k], lo=0, hi=n - 1, integer=True) for k, v in enumerate(raw_nodes)
        )
    probe_samples = None
    if top.get("probe_samples") is not None:
        probe_samples = r.number(top["probe_samples"], ["probe_samples"], lo=1, integer=True)

    output_dir = top.get("output_dir", Scenario.output_dir)
    if not isinstance(output_dir, str) or not output_dir:
        r.fail(["output_dir"], f"expected a directory name, got {output_dir!r}")

    return Scenario(seed, graph, agents, coupling, algorithm, noise, probe_nodes,
                    probe_samples, output_dir, source)


def load_scenario(path):
    """Loads and validates the scenario file at path.

    Raises:
        ScenarioError: Missing file, YAML syntax error, or invalid content.
    """
    path = str(path)
    try:
        with open(path) as f:
            text = f.read()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario: {exc.strerror}", location=path) from exc
    try:
        raw = yaml.safe_load(text)
        root_node = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        location = f"{path}:{mark.line + 1}" if mark else path
        raise ScenarioError(f"invalid YAML: {getattr(exc, 'problem', exc)}", location=location) from exc
    scenario = parse_scenario(raw if raw is not None else {}, root_node, path)
    logger.debug("loaded scenario %s", path)
    return scenario


def preset_path(name):
    """Path of a shipped preset, e.g. preset_path("casestudy_lti").

    Raises:
        ScenarioError: No such preset.
    """
    path = PRESET_DIR / f"{name}.yaml"
    if not path.exists():
        known = sorted(p.stem for p in PRESET_DIR.glob("*.yaml"))
        raise ScenarioError(f"no preset {name!r}, expected one of {known}")
    return path


def with_overrides(s, seed=None, kappa=None, epsilon=None, parallel_probes=None,
                   probe_nodes=None, output_dir=None, measurement_sigma=None, switch_time=None):
    """Returns s with every non-None argument applied (command-line flags)."""
    algorithm = s.algorithm
    for key, value in (("kappa", kappa), ("epsilon", epsilon),
                       ("parallel_probes", parallel_probes), ("switch_time", switch_time)):
        if value is not None:
            algorithm = replace(algorithm, **{key: value})
    noise = s.noise if measurement_sigma is None else replace(s.noise, measurement_sigma=measurement_sigma)

    changes = {"algorithm": algorithm, "noise": noise}
    if seed is not None:
        changes["seed"] = int(seed)
    if probe_nodes is not None:
        bad = [i for i in probe_nodes if not 0 <= i < s.graph.n]
        if bad:
            raise ScenarioError(f"nodes {bad} outside 0..{s.graph.n - 1}", "probe_nodes")
        changes["probe_nodes"] = tuple(probe_nodes)
    if output_dir is not None:
        changes["output_dir"] = output_dir
    return replace(s, **changes)


def seed_streams(s):
    """Independent SeedSequences for SEED_STREAMS, spawned from s.seed."""
    return dict(zip(SEED_STREAMS, np.random.SeedSequence(s.seed).spawn(len(SEED_STREAMS))))


def seed_int(seq):
    """A plain int derived from a SeedSequence."""
    return int(seq.generate_state(1)[0])


def _draw(rng, value, size):
    if isinstance(value, tuple):
        return log_uniform(rng, value[0], value[1], size=size)
    return np.full(size, float(value))


def build_system(s):
    """Samples the NetworkSystem a scenario describes.

    The graph, the agent parameters and the per-pair coupling parameters
    each come from their own seed stream, so changing one section does not
    reshuffle the others.
    """
    streams = seed_streams(s)
    n = s.graph.n
    if s.graph.edges is not None:
        graph = WeightedGraph(n, s.graph.edges)
    else:
        graph = random_graph(n, s.graph.p, s.graph.weight_range, streams["graph"])

    rng = np.random.default_rng(streams["agents"])
    values = {name: _draw(rng, v, n) for name, v in s.agents.params.items()}
    agents = tuple(make_agent(s.agents.kind, **{k: v[i] for k, v in values.items()}) for i in range(n))

    cparams = s.coupling.params
    # Geometric mid-range stands in for pairs without a draw.
    middle = {k: (float(np.sqrt(v[0] * v[1])) if isinstance(v, tuple) else v) for k, v in cparams.items()}
    overrides = {}
    if any(isinstance(v, tuple) for v in cparams.values()):
        rng = np.random.default_rng(streams["couplings"])
        heads, tails = np.triu_indices(n, k=1)
        values = {name: _draw(rng, v, heads.size) for name, v in cparams.items()}
        for e, (i, j) in enumerate(zip(heads.tolist(), tails.tolist())):
            overrides[(i, j)] = make_coupling(s.coupling.kind, **{k: v[e] for k, v in values.items()})
    couplings = CouplingTable(n, make_coupling(s.coupling.kind, **middle), overrides)

    logger.info("built %r with %s agents", graph, s.agents.kind)
    return NetworkSystem(graph, agents, couplings)


def build_network(s, system):
    """Wraps system in the black box the scenario asks for."""
    streams = seed_streams(s)
    noise = NoiseSpec(s.noise.disturbance, s.noise.measurement_sigma, seed_int(streams["noise"]))
    cls = OracleNetwork if s.algorithm.oracle else ProbedNetwork
    return cls(system, s.algorithm.sim_options(), noise, parallel=s.algorithm.parallel_probes)
