"""User-facing model objects."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from spikefuse.neurons import LIF, NeuronModel


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class PES:
    """Online error-driven learning on a decoded connection.

    ``error`` is the node whose value is the error signal (output minus target).
    """

    error: Node
    learning_rate: float = 1e-4


class _Slicable:
    size_out: int

    def __getitem__(self, item):
        if isinstance(item, int):
            item = slice(item, item + 1)
        if not isinstance(item, slice) or item.step not in (None, 1):
            raise ModelError("only contiguous slices of model objects are supported")
        start, stop, _ = item.indices(self.size_out)
        if stop <= start:
            raise ModelError(f"empty slice of {self}")
        return ObjView(self, start, stop)


@dataclass(eq=False)
class Node(_Slicable):
    """Constant, feedable, or passthrough (summing) node.

    * ``output`` given, ``feedable=False``: constant value.
    * ``feedable=True``: the value is supplied per step at run time;
      ``output`` (if given) is the default when no feed is supplied.
    * ``size_in`` given: passthrough whose value is the sum of its inputs.
    """

    id: int
    output: np.ndarray | None = None
    size_in: int = 0
    size_out: int = 0
    feedable: bool = False
    label: str = ""

    def __post_init__(self):
        if self.output is not None:
            self.output = np.atleast_1d(np.asarray(self.output, dtype=np.float64))
            if self.output.ndim != 1:
                raise ModelError("node output must be a vector")
            self.size_out = self.output.shape[0]
        if self.size_in:
            if self.output is not None or self.feedable:
                raise ModelError("a passthrough node cannot also have an output or feed")
            self.size_out = self.size_in
        if self.size_out < 1:
            raise ModelError("node needs an output value, size_out, or size_in")

    @property
    def kind(self) -> str:
        if self.size_in:
            return "passthrough"
        return "feedable" if self.feedable else "constant"

    def __repr__(self):
        return f"Node({self.label or self.id}, {self.kind}, d={self.size_out})"


@dataclass(eq=False)
class Ensemble(_Slicable):
    id: int
    n_neurons: int
    dimensions: int
    radius: float = 1.0
    neuron_model: NeuronModel = field(default_factory=LIF)
    max_rates: tuple[float, float] = (200.0, 400.0)
    intercepts: tuple[float, float] = (-1.0, 1.0)
    encoders: np.ndarray | None = None
    label: str = ""
    # filled in by the builder
    gain: np.ndarray | None = None
    bias: np.ndarray | None = None

    def __post_init__(self):
        if self.n_neurons < 1 or self.dimensions < 1:
            raise ModelError("ensembles need at least one neuron and one dimension")
        if self.radius <= 0:
            raise ModelError("radius must be positive")

    @property
    def size_in(self) -> int:
        return self.dimensions

    @property
    def size_out(self) -> int:
        return self.dimensions

    @property
    def neurons(self) -> Neurons:
        return Neurons(self)

    def __repr__(self):
        return f"Ensemble({self.label or self.id}, n={self.n_neurons}, d={self.dimensions})"


@dataclass(frozen=True, eq=False)
class Neurons(_Slicable):
    ensemble: Ensemble

    @property
    def size_in(self) -> int:
        return self.ensemble.n_neurons

    @property
    def size_out(self) -> int:
        return self.ensemble.n_neurons

    def __eq__(self, other):
        return isinstance(other, Neurons) and other.ensemble is self.ensemble

    def __hash__(self):
        return hash(("neurons", id(self.ensemble)))


@dataclass(frozen=True, eq=False)
class ObjView:
    obj: Node | Ensemble | Neurons
    start: int
    stop: int

    @property
    def size_out(self) -> int:
        return self.stop - self.start

    size_in = size_out


Endpoint = Node | Ensemble | Neurons | ObjView


def _unview(x: Endpoint) -> tuple[Node | Ensemble | Neurons, int, int]:
    if isinstance(x, ObjView):
        return x.obj, x.start, x.stop
    return x, 0, x.size_out


@dataclass(eq=False)
class Connection:
    id: int
    pre: Endpoint
    post: Endpoint
    transform: np.ndarray | float = 1.0
    synapse: float | None = 0.005
    function: Callable | None = None
    learning: PES | None = None
    label: str = ""

    @property
    def pre_obj(self):
        return _unview(self.pre)[0]

    @property
    def post_obj(self):
        return _unview(self.post)[0]

    @property
    def size_mid(self) -> int:
        """Dimensionality after the function (before the transform)."""
        obj, start, stop = _unview(self.pre)
        if self.function is not None:
            if not isinstance(obj, Ensemble):
                raise ModelError(f"{self}: functions are only supported on ensemble sources")
            x = np.zeros(stop - start)
            return np.atleast_1d(np.asarray(self.function(x))).shape[0]
        return stop - start

    def transform_matrix(self) -> np.ndarray:
        size_in = self.size_mid
        size_out = _unview(self.post)[2] - _unview(self.post)[1]
        T = np.asarray(self.transform, dtype=np.float64)
        if T.ndim == 0:
            if size_in != size_out:
                raise ModelError(
                    f"{self}: scalar transform needs equal sizes, got {size_in} -> {size_out}"
                )
            return T * np.eye(size_out)
        if T.ndim == 1:
            T = np.diag(T)
        if T.shape != (size_out, size_in):
            raise ModelError(
                f"{self}: transform shape {T.shape} does not map {size_in} -> {size_out}"
            )
        return T

    def __repr__(self):
        return f"Connection({self.label or self.id}: {self.pre!r} -> {self.post!r})"


@dataclass(eq=False)
class Probe:
    id: int
    target: Endpoint
    key: str

    def __repr__(self):
        return f"Probe({self.key}: {self.target!r})"


@dataclass
class Network:
    """Container for ensembles, nodes, connections and probes."""

    dt: float = 0.001
    seed: int = 0
    elem: int = 64
    ensembles: list[Ensemble] = field(default_factory=list)
    nodes: list[Node] = field(default_factory=list)
    connections: list[Connection] = field(default_factory=list)
    probes: list[Probe] = field(default_factory=list)
    label: str = ""

    def __post_init__(self):
        if self.dt <= 0:
            raise ModelError("dt must be positive")
        self._next_id = 0

    def _id(self) -> int:
        self._next_id += 1
        return self._next_id - 1

    def ensemble(self, n_neurons: int, dimensions: int, **kwargs) -> Ensemble:
        ens = Ensemble(self._id(), n_neurons, dimensions, **kwargs)
        self.ensembles.append(ens)
        return ens

    def node(
        self,
        output=None,
        *,
        size_in: int = 0,
        size_out: int = 0,
        feedable: bool = False,
        label: str = "",
    ) -> Node:
        node = Node(self._id(), output, size_in, size_out, feedable, label)
        self.nodes.append(node)
        return node

    def connect(self, pre: Endpoint, post: Endpoint, **kwargs) -> Connection:
        conn = Connection(self._id(), pre, post, **kwargs)
        self._check_connection(conn)
        self.connections.append(conn)
        return conn

    def probe(self, target: Endpoint, key: str | None = None) -> Probe:
        if not self._owns(_unview(target)[0]):
            raise ModelError(f"probe target {target!r} is not in this network")
        pid = self._id()
        key = key if key is not None else f"probe{len(self.probes)}"
        if any(p.key == key for p in self.probes):
            raise ModelError(f"duplicate probe key {key!r}")
        probe = Probe(pid, target, key)
        self.probes.append(probe)
        return probe

    def _owns(self, obj) -> bool:
        if isinstance(obj, Neurons):
            obj = obj.ensemble
        return any(obj is x for x in self.ensembles) or any(obj is x for x in self.nodes)

    def _check_connection(self, conn: Connection) -> None:
        for end in (conn.pre_obj, conn.post_obj):
            if not self._owns(end):
                raise ModelError(f"{conn}: endpoint {end!r} is not in this network")
        post = conn.post_obj
        if isinstance(post, Node) and post.kind != "passthrough":
            raise ModelError(f"{conn}: cannot connect into {post.kind} node {post!r}")
        if conn.learning is not None:
            if not isinstance(conn.pre_obj, Ensemble):
                raise ModelError(f"{conn}: PES needs a decoded ensemble source")
            if not self._owns(conn.learning.error):
                raise ModelError(f"{conn}: PES error node is not in this network")
        conn.transform_matrix()

    def validate(self) -> None:
        for conn in self.connections:
            self._check_connection(conn)
        for probe in self.probes:
            obj = _unview(probe.target)[0]
            if not self._owns(obj):
                raise ModelError(f"{probe}: target {obj!r} is not in this network")
