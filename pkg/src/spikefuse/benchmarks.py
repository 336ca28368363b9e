"""Benchmark networks, the timing harness, and the cumulative ablation ladder."""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field, replace

import numpy as np

from spikefuse.engine import compile_engine
from spikefuse.frontend import PES, Network, build, ensemble_array
from spikefuse.ir import Model
from spikefuse.passes import PipelineConfig, optimize
from spikefuse.reference import compare, run_reference

BENCHMARKS = ("integrator", "cconv", "pes")

CSV_COLUMNS = (
    "benchmark",
    "dims",
    "batch",
    "planner",
    "tree_depth",
    "unroll",
    "merge",
    "sort",
    "simplify",
    "operator_count",
    "groups_per_step",
    "contiguous_read_fraction",
    "build_time_s",
    "run_time_s",
    "steps",
    "correctness_max_err",
)

INTEGRATOR_TAU = 0.1
READOUT_SYNAPSE = 0.01
PES_LEARNING_RATE = 1e-4
CHECK_MAX_DIMS = 16


class BenchmarkError(Exception):
    pass


@dataclass(frozen=True)
class BenchmarkSpec:
    name: str
    dimensions: int
    neurons_per_dim: int = 50
    steps: int = 1000
    dt: float = 0.001
    seed: int = 0
    batch: int = 1
    config: PipelineConfig = field(default_factory=PipelineConfig)
    unroll: int = 1
    check: bool = False

    def __post_init__(self):
        if self.name not in BENCHMARKS:
            raise BenchmarkError(f"unknown benchmark {self.name!r}; choose from {BENCHMARKS}")
        if self.dimensions < 1:
            raise BenchmarkError("dimensions must be >= 1")
        if self.steps < 1:
            raise BenchmarkError("steps must be >= 1")
        if self.neurons_per_dim < 1 or self.batch < 1 or self.unroll < 1:
            raise BenchmarkError("neurons_per_dim, batch and unroll must be >= 1")


@dataclass
class BenchResult:
    spec: BenchmarkSpec
    operator_count: int
    groups_per_step: int
    contiguous_read_fraction: float
    build_time_s: float
    run_time_s: float
    correctness_max_err: float | None = None

    def row(self) -> dict:
        s, c = self.spec, self.spec.config
        return {
            "benchmark": s.name,
            "dims": s.dimensions,
            "batch": s.batch,
            "planner": c.planner if c.merge else "none",
            "tree_depth": c.tree_depth if c.planner == "tree" and c.merge else 1,
            "unroll": s.unroll,
            "merge": int(c.merge),
            "sort": int(c.sort and c.merge),
            "simplify": int(c.simplify),
            "operator_count": self.operator_count,
            "groups_per_step": self.groups_per_step,
            "contiguous_read_fraction": f"{self.contiguous_read_fraction:.6f}",
            "build_time_s": f"{self.build_time_s:.6f}",
            "run_time_s": f"{self.run_time_s:.6f}",
            "steps": s.steps,
            "correctness_max_err": (
                "" if self.correctness_max_err is None else repr(self.correctness_max_err)
            ),
        }

    def metrics(self) -> dict:
        """Every non-timing field, for determinism checks."""
        row = self.row()
        del row["build_time_s"], row["run_time_s"]
        return row


@dataclass
class Benchmark:
    """A built benchmark network plus handles the evaluators need."""

    network: Network
    probe: str
    inputs: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)


def _unit_vector(rng: np.random.Generator, d: int) -> np.ndarray:
    v = rng.standard_normal(d)
    return v / np.linalg.norm(v)


def integrator(d: int, neurons_per_dim: int = 50, dt: float = 0.001, seed: int = 0,
               tau: float = INTEGRATOR_TAU) -> Benchmark:
    """Recurrent ensemble array integrating a feedable input (default all ones)."""
    net = Network(dt=dt, seed=seed)
    stim = net.node(output=np.ones(d), feedable=True, label="input")
    ea = ensemble_array(net, neurons_per_dim, d, label="memory")
    net.connect(stim, ea.input, transform=tau, synapse=tau)
    net.connect(ea.output, ea.input, synapse=tau)
    out = net.node(size_in=d, label="readout")
    net.connect(ea.output, out, synapse=READOUT_SYNAPSE)
    net.probe(out, key="output")
    return Benchmark(net, "output", {"input": stim})


def dft_matrices(d: int) -> tuple[np.ndarray, np.ndarray]:
    """Real forward (2K x d) and inverse (d x 2K) DFT blocks, K = d//2 + 1.

    Forward rows interleave (Re, Im) per frequency; the inverse includes the
    Hermitian weights and the 1/d factor.
    """
    K = d // 2 + 1
    j = np.arange(d)
    k = np.arange(K)
    angle = 2 * np.pi * np.outer(k, j) / d
    fwd = np.empty((2 * K, d))
    fwd[0::2] = np.cos(angle)
    fwd[1::2] = -np.sin(angle)
    w = np.full(K, 2.0)
    w[0] = 1.0
    if d % 2 == 0:
        w[-1] = 1.0
    inv = np.empty((d, 2 * K))
    inv[:, 0::2] = (w[:, None] * np.cos(angle)).T / d
    inv[:, 1::2] = -(w[:, None] * np.sin(angle)).T / d
    return fwd, inv


def cconv_transforms(d: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Input maps for a and b into 4K two-dimensional product ensembles, and the output map.

    Product ensemble ``4k + p`` receives the pair listed below and decodes its
    product; real and imaginary parts of ``A_k * B_k`` are signed sums of those.
    """
    fwd, inv = dft_matrices(d)
    K = d // 2 + 1
    pairs = ((0, 0, 1.0), (1, 1, -1.0), (0, 1, 1.0), (1, 0, 1.0))  # (a part, b part, sign)
    TA = np.zeros((8 * K, d))
    TB = np.zeros((8 * K, d))
    TO = np.zeros((d, 4 * K))
    for k in range(K):
        for p, (pa, pb, sign) in enumerate(pairs):
            e = 4 * k + p
            TA[2 * e] = fwd[2 * k + pa]
            TB[2 * e + 1] = fwd[2 * k + pb]
            part = 0 if p < 2 else 1  # real for p in {0, 1}, imaginary otherwise
            TO[:, e] = sign * inv[:, 2 * k + part]
    return TA, TB, TO


def circular_convolution(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Direct O(d^2) circular convolution, used as the functional oracle."""
    d = len(a)
    return np.array([sum(a[j] * b[(i - j) % d] for j in range(d)) for i in range(d)])


def cconv(d: int, neurons_per_dim: int = 50, dt: float = 0.001, seed: int = 0,
          input_magnitude: float = 1.0) -> Benchmark:
    """Circular convolution of two feedable vectors through 2-D product ensembles."""
    rng = np.random.default_rng([seed, d])
    a, b = _unit_vector(rng, d), _unit_vector(rng, d)
    net = Network(dt=dt, seed=seed)
    A = net.node(output=a, feedable=True, label="a")
    B = net.node(output=b, feedable=True, label="b")
    TA, TB, TO = cconv_transforms(d)
    n_products = TO.shape[1]
    signs = np.array([[1, 1], [1, -1], [-1, 1], [-1, -1]]) / np.sqrt(2)
    # DFT components of a unit vector reach about 2 in magnitude, not 1
    radius = 2 * input_magnitude * np.sqrt(2)
    products = ensemble_array(
        net, 2 * neurons_per_dim, n_products, ens_dimensions=2, label="product",
        function=lambda x: x[0] * x[1], radius=radius,
        encoders=signs[np.arange(2 * neurons_per_dim) % 4],
    )
    net.connect(A, products.input, transform=TA, synapse=None)
    net.connect(B, products.input, transform=TB, synapse=None)
    out = net.node(size_in=d, label="result")
    net.connect(products.output, out, transform=TO, synapse=READOUT_SYNAPSE)
    net.probe(out, key="output")
    return Benchmark(net, "output", {"a": A, "b": B}, {"a": a, "b": b})


def pes(d: int, neurons_per_dim: int = 50, dt: float = 0.001, seed: int = 0,
        learning_rate: float = PES_LEARNING_RATE) -> Benchmark:
    """An ensemble learns, via PES, to relay its input to an output node."""
    target_value = np.full(d, 0.5 / np.sqrt(d))
    net = Network(dt=dt, seed=seed)
    stim = net.node(output=target_value, feedable=True, label="input")
    target = net.node(output=target_value, feedable=True, label="target")
    pre = net.ensemble(neurons_per_dim * d, d, label="pre")
    out = net.node(size_in=d, label="output")
    error = net.node(size_in=d, label="error")
    net.connect(stim, pre, synapse=None)
    net.connect(pre, out, function=lambda x: np.zeros(d), synapse=0.005,
                learning=PES(error, learning_rate))
    net.connect(out, error, synapse=None)
    net.connect(target, error, transform=-1.0, synapse=None)
    net.probe(out, key="output")
    net.probe(error, key="error")
    return Benchmark(net, "output", {"input": stim, "target": target},
                     {"target": target_value})


BUILDERS = {"integrator": integrator, "cconv": cconv, "pes": pes}


def build_benchmark(spec: BenchmarkSpec) -> Benchmark:
    return BUILDERS[spec.name](spec.dimensions, spec.neurons_per_dim, spec.dt, spec.seed)


def run_bench(spec: BenchmarkSpec) -> BenchResult:
    """Build, optimize, compile, warm up, then time one run of ``spec.steps`` steps."""
    try:
        t0 = time.perf_counter()
        bench = build_benchmark(spec)
        model = build(bench.network)
        opt = optimize(model, spec.config)
        engine = compile_engine(opt.plan, opt.layout, opt.model, spec.batch, spec.unroll)
        build_time = time.perf_counter() - t0

        engine.run(spec.steps)
        engine.reset()
        t0 = time.perf_counter()
        out = engine.run(spec.steps)
        run_time = time.perf_counter() - t0
    except Exception as e:
        raise BenchmarkError(f"{spec.name} d={spec.dimensions}: {e}") from e

    err = None
    if spec.check and spec.dimensions <= CHECK_MAX_DIMS:
        ref = run_reference(model, spec.steps, minibatch_size=spec.batch)
        err = compare(out, ref).max_abs_err
    stats = opt.stats()
    return BenchResult(
        spec,
        operator_count=len(opt.model.operators),
        groups_per_step=stats.groups_per_step,
        contiguous_read_fraction=stats.contiguous_read_fraction,
        build_time_s=build_time,
        run_time_s=run_time,
        correctness_max_err=err,
    )


def ablation_ladder(base: BenchmarkSpec) -> list[BenchmarkSpec]:
    """The cumulative rungs: merge(greedy), +unroll, +tree, +sort, +simplify."""
    depth = base.config.tree_depth if base.config.planner == "tree" else 3
    unroll = base.unroll if base.unroll > 1 else 10
    rungs = [
        (PipelineConfig(simplify=False, planner="greedy", sort=False), 1),
        (PipelineConfig(simplify=False, planner="greedy", sort=False), unroll),
        (PipelineConfig(simplify=False, planner="tree", tree_depth=depth, sort=False), unroll),
        (PipelineConfig(simplify=False, planner="tree", tree_depth=depth, sort=True), unroll),
        (PipelineConfig(simplify=True, planner="tree", tree_depth=depth, sort=True), unroll),
    ]
    return [replace(base, config=c, unroll=u) for c, u in rungs]


def ablation_suite(base: BenchmarkSpec) -> list[BenchResult]:
    return [run_bench(spec) for spec in ablation_ladder(base)]


def write_results_csv(results: list[BenchResult], f) -> None:
    writer = csv.DictWriter(f, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for r in results:
        writer.writerow(r.row())


def results_csv(results: list[BenchResult]) -> str:
    buf = io.StringIO()
    write_results_csv(results, buf)
    return buf.getvalue()


def benchmark_model(spec: BenchmarkSpec) -> Model:
    return build(build_benchmark(spec).network)
