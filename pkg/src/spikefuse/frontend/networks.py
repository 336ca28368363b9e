"""Reusable sub-network templates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from spikefuse.frontend.network import Ensemble, Network, Node


@dataclass
class EnsembleArray:
    input: Node
    output: Node
    ensembles: list[Ensemble]


def ensemble_array(
    net: Network,
    n_neurons: int,
    n_ensembles: int,
    ens_dimensions: int = 1,
    label: str = "ea",
    function=None,
    **ens_kwargs,
) -> EnsembleArray:
    """``n_ensembles`` independent ensembles behind passthrough input/output nodes."""
    d = n_ensembles * ens_dimensions
    inp = net.node(size_in=d, label=f"{label}.input")
    ensembles = [
        net.ensemble(n_neurons, ens_dimensions, label=f"{label}.ens{i}", **ens_kwargs)
        for i in range(n_ensembles)
    ]
    size_out = ens_dimensions
    if function is not None:
        size_out = np.atleast_1d(function(np.zeros(ens_dimensions))).shape[0]
    out = net.node(size_in=n_ensembles * size_out, label=f"{label}.output")
    for i, ens in enumerate(ensembles):
        net.connect(inp[i * ens_dimensions : (i + 1) * ens_dimensions], ens, synapse=None)
        net.connect(ens, out[i * size_out : (i + 1) * size_out], synapse=None,
                    function=function)
    return EnsembleArray(inp, out, ensembles)
