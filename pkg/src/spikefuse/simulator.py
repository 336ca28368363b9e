"""One-call convenience wrapper: network or model -> optimized, compiled engine."""

from __future__ import annotations

from typing import Mapping

import numpy as np

from spikefuse.engine import Engine, compile_engine
from spikefuse.frontend import Network, build
from spikefuse.ir import Model
from spikefuse.passes import OptimizedModel, PipelineConfig, optimize
from spikefuse.probes import ProbeOutput


class Simulator:
    """Build, optimize and compile a network, then run it.

    >>> sim = Simulator(net, minibatch_size=10, unroll=5)
    >>> out = sim.run(1000, feeds={inp: data})
    """

    def __init__(
        self,
        network: Network | Model,
        config: PipelineConfig = PipelineConfig(),
        minibatch_size: int = 1,
        unroll: int = 1,
    ):
        self.network = network if isinstance(network, Network) else None
        self.model = build(network) if isinstance(network, Network) else network
        self.config = config
        self.optimized: OptimizedModel = optimize(self.model, config)
        self.engine: Engine = compile_engine(
            self.optimized.plan,
            self.optimized.layout,
            self.optimized.model,
            minibatch_size=minibatch_size,
            unroll=unroll,
        )

    @property
    def dt(self) -> float:
        return self.model.dt

    @property
    def time(self) -> float:
        return self.engine.time

    def run(self, n_steps: int, feeds: Mapping | None = None) -> ProbeOutput:
        return self.engine.run(n_steps, feeds)

    def run_time(self, seconds: float, feeds: Mapping | None = None) -> ProbeOutput:
        return self.run(int(round(seconds / self.dt)), feeds)

    def reset(self) -> None:
        self.engine.reset()

    def trange(self, n_steps: int) -> np.ndarray:
        return (np.arange(n_steps) + 1) * self.dt
