"""Lowering of a :class:`Network` to signals and operators."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from spikefuse.frontend.decoders import sample_ball, sample_hypersphere_surface, solve_decoders
from spikefuse.frontend.network import (
    Connection,
    Ensemble,
    ModelError,
    Network,
    Neurons,
    Node,
    _unview,
)
from spikefuse.ir import (
    Copy,
    DotInc,
    FeedSlot,
    Model,
    Operator,
    Reset,
    Signal,
    SignalRef,
    SimNeurons,
    SimPES,
    SimProcess,
    TimeUpdate,
    validate_operators,
)
from spikefuse.synapses import Lowpass


@dataclass
class BuiltEnsemble:
    gain: np.ndarray
    bias: np.ndarray
    encoders: np.ndarray
    max_rates: np.ndarray
    intercepts: np.ndarray
    eval_points: np.ndarray
    activities: np.ndarray
    input: Signal
    current: Signal
    output: Signal
    decoded: Signal | None = None


class Builder:
    """Lowers one network; ``build()`` may be called once."""

    eval_points_per_dim = 500
    reg = 0.1

    def __init__(self, net: Network):
        self.net = net
        self.signals: list[Signal] = []
        self.operators: list[Operator] = []
        self.ensembles: dict[int, BuiltEnsemble] = {}
        self.node_signals: dict[int, Signal] = {}
        self.feeds: dict[int, FeedSlot] = {}
        self.probes: dict[str, SignalRef] = {}
        self.connection_weights: dict[int, Signal] = {}

    def signal(self, shape, label, initial=None, **flags) -> Signal:
        sig = Signal(len(self.signals), tuple(np.atleast_1d(shape)), label, self.net.elem,
                     initial, **flags)
        self.signals.append(sig)
        return sig

    def add(self, cls, **operands) -> Operator:
        op = cls(id=len(self.operators), **operands)
        self.operators.append(op)
        return op

    def build(self) -> Model:
        net = self.net
        net.validate()
        step = self.signal(1, "step")
        time = self.signal(1, "time")
        self.add(TimeUpdate, step=step.ref(), time=time.ref(), dt=net.dt)

        for node in net.nodes:
            self._build_node(node)
        for ens in net.ensembles:
            self._build_ensemble(ens)
        for conn in net.connections:
            self._build_connection(conn)
        for probe in net.probes:
            self.probes[probe.key] = self._probe_ref(probe.target)

        validate_operators(self.operators)
        return Model(self.signals, self.operators, self.probes, self.feeds, net.dt)

    def _build_node(self, node: Node) -> None:
        label = node.label or f"node{node.id}"
        if node.kind == "constant":
            sig = self.signal(node.size_out, label, node.output, constant=True)
        elif node.kind == "feedable":
            sig = self.signal(node.size_out, label, node.output, minibatched=True)
            default = None if node.output is None else np.array(node.output)
            self.feeds[node.id] = FeedSlot(sig, default)
        else:
            sig = self.signal(node.size_out, label, minibatched=True)
            self.add(Reset, dst=sig.ref(), value=0.0)
        self.node_signals[node.id] = sig

    def _build_ensemble(self, ens: Ensemble) -> None:
        n, d = ens.n_neurons, ens.dimensions
        label = ens.label or f"ens{ens.id}"
        rng = np.random.default_rng([self.net.seed, ens.id])
        max_rates = rng.uniform(*ens.max_rates, size=n)
        intercepts = rng.uniform(*ens.intercepts, size=n)
        if ens.encoders is None:
            encoders = sample_hypersphere_surface(rng, n, d)
        else:
            encoders = np.array(ens.encoders, dtype=np.float64).reshape(n, d)
            encoders /= np.linalg.norm(encoders, axis=1, keepdims=True)
        gain, bias = ens.neuron_model.gain_bias(max_rates, intercepts)

        eval_rng = np.random.default_rng([self.net.seed, ens.id, 1])
        eval_points = sample_ball(eval_rng, self.eval_points_per_dim * d, d, ens.radius)
        activities = ens.neuron_model.rates(
            gain * (eval_points @ encoders.T) / ens.radius + bias
        )

        sig_in = self.signal(d, f"{label}.in", minibatched=True)
        current = self.signal(n, f"{label}.J", minibatched=True)
        out = self.signal(n, f"{label}.out", minibatched=True)
        scaled = self.signal((n, d), f"{label}.encoders",
                             encoders * (gain / ens.radius)[:, None],
                             constant=True, trainable=True)
        states = tuple(
            self.signal(n, f"{label}.{name}", minibatched=True).ref()
            for name in ("voltage", "refractory")[: ens.neuron_model.n_states]
        )
        self.add(Reset, dst=sig_in.ref(), value=0.0)
        self.add(Reset, dst=current.ref(), value=bias)
        self.add(DotInc, A=scaled.ref(), X=sig_in.ref(), Y=current.ref())
        self.add(SimNeurons, model=ens.neuron_model, J=current.ref(), out=out.ref(),
                 states=states)
        self.ensembles[ens.id] = BuiltEnsemble(
            gain, bias, encoders, max_rates, intercepts, eval_points, activities,
            sig_in, current, out,
        )

    def decoders(self, ens: Ensemble, start: int, stop: int, function=None) -> np.ndarray:
        built = self.ensembles[ens.id]
        x = built.eval_points[:, start:stop]
        if function is None:
            targets = x
        else:
            targets = np.array([np.atleast_1d(function(p)) for p in x], dtype=np.float64)
        return solve_decoders(built.activities, targets, self.reg)

    def _source(self, conn: Connection) -> tuple[SignalRef, np.ndarray]:
        obj, start, stop = _unview(conn.pre)
        T = conn.transform_matrix()
        if isinstance(obj, Ensemble):
            D = self.decoders(obj, start, stop, conn.function)
            return self.ensembles[obj.id].output.ref(), T @ D.T
        if isinstance(obj, Neurons):
            return self.ensembles[obj.ensemble.id].output[start:stop], T
        return self.node_signals[obj.id][start:stop], T

    def _dest(self, conn: Connection) -> SignalRef:
        obj, start, stop = _unview(conn.post)
        if isinstance(obj, Ensemble):
            return self.ensembles[obj.id].input[start:stop]
        if isinstance(obj, Neurons):
            return self.ensembles[obj.ensemble.id].current[start:stop]
        return self.node_signals[obj.id][start:stop]

    def _build_connection(self, conn: Connection) -> None:
        label = conn.label or f"conn{conn.id}"
        src, W = self._source(conn)
        dest = self._dest(conn)
        if W.shape != (dest.length, src.length):
            raise ModelError(
                f"{conn}: weights {W.shape} do not map {src.length} -> {dest.length}"
            )
        learned = conn.learning is not None
        weights = self.signal(W.shape, f"{label}.weights", W, constant=not learned,
                              trainable=True)
        self.connection_weights[conn.id] = weights
        acc = self.signal(dest.length, f"{label}.acc", minibatched=True)
        self.add(Reset, dst=acc.ref(), value=0.0)
        self.add(DotInc, A=weights.ref(), X=src, Y=acc.ref())
        value = acc
        if conn.synapse:
            value = self.signal(dest.length, f"{label}.filtered", minibatched=True)
            self.add(SimProcess, process=Lowpass(conn.synapse), input=acc.ref(),
                     output=value.ref())
        self.add(Copy, src=value.ref(), dst=dest, inc=True)
        if learned:
            error = self.node_signals[conn.learning.error.id]
            if error.shape != (dest.length,):
                raise ModelError(
                    f"{conn}: error node has {error.shape[0]} dims, expected {dest.length}"
                )
            self.add(SimPES, pre=src, error=error.ref(), weights=weights.ref(),
                     learning_rate=conn.learning.learning_rate, dt=self.net.dt)

    def _probe_ref(self, target) -> SignalRef:
        obj, start, stop = _unview(target)
        if isinstance(obj, Node):
            if obj.id not in self.node_signals:
                raise ModelError(f"probe target {obj!r} was not built")
            return self.node_signals[obj.id][start:stop]
        if isinstance(obj, Neurons):
            return self.ensembles[obj.ensemble.id].output[start:stop]
        if isinstance(obj, Ensemble):
            built = self.ensembles.get(obj.id)
            if built is None:
                raise ModelError(f"probe target {obj!r} was not built")
            if built.decoded is None:
                label = obj.label or f"ens{obj.id}"
                D = self.decoders(obj, 0, obj.dimensions)
                dec_w = self.signal((obj.dimensions, obj.n_neurons), f"{label}.decoders",
                                    D.T, constant=True, trainable=True)
                built.decoded = self.signal(obj.dimensions, f"{label}.decoded",
                                            minibatched=True)
                self.add(Reset, dst=built.decoded.ref(), value=0.0)
                self.add(DotInc, A=dec_w.ref(), X=built.output.ref(), Y=built.decoded.ref())
            return built.decoded[start:stop]
        raise ModelError(f"cannot probe {target!r}")


def build(net: Network) -> Model:
    """Lower ``net`` to a :class:`~spikefuse.ir.Model`."""
    return Builder(net).build()
