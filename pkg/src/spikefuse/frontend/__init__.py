from spikefuse.frontend.builder import Builder, build
from spikefuse.frontend.decoders import DecoderSolveError, solve_decoders
from spikefuse.frontend.network import (
    PES,
    Connection,
    Ensemble,
    ModelError,
    Network,
    Neurons,
    Node,
    Probe,
)
from spikefuse.frontend.networks import EnsembleArray, ensemble_array

__all__ = [
    "PES",
    "Builder",
    "Connection",
    "DecoderSolveError",
    "Ensemble",
    "EnsembleArray",
    "ModelError",
    "Network",
    "Neurons",
    "Node",
    "Probe",
    "build",
    "ensemble_array",
    "solve_decoders",
]
