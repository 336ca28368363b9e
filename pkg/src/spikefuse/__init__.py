"""spikefuse: compile spiking network models into fused, batched numpy kernels."""

from spikefuse.engine import Engine, compile_engine
from spikefuse.frontend import PES, Network, build, ensemble_array
from spikefuse.neurons import LIF, LIFRate, RectifiedLinear
from spikefuse.passes import PipelineConfig, optimize
from spikefuse.reference import compare, run_reference
from spikefuse.simulator import Simulator
from spikefuse.synapses import Lowpass

__version__ = "0.1.0"

__all__ = [
    "LIF",
    "PES",
    "Engine",
    "LIFRate",
    "Lowpass",
    "Network",
    "PipelineConfig",
    "RectifiedLinear",
    "Simulator",
    "build",
    "compare",
    "compile_engine",
    "ensemble_array",
    "optimize",
    "run_reference",
]
