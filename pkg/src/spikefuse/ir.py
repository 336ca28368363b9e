"""Signal/Operator intermediate representation and the operator dependency graph.

Operators declare four access lists over :class:`SignalRef` slices:

* ``sets``    -- overwrite the region this step
* ``incs``    -- accumulate into the region after all sets
* ``reads``   -- read the region after all sets and incs
* ``updates`` -- write a value that readers only see on the next step
"""

from __future__ import annotations

import heapq
import json
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, ClassVar, Iterable

import numpy as np

from spikefuse.neurons import LIF, LIFRate, NeuronModel, RectifiedLinear
from spikefuse.synapses import Lowpass

OPERATOR_KINDS = (
    "Reset",
    "Copy",
    "ElementwiseInc",
    "DotInc",
    "SimNeurons",
    "SimProcess",
    "SimPES",
    "TimeUpdate",
)


class IRError(Exception):
    """Malformed signal or operator."""


class BuildError(Exception):
    """The operator list cannot be scheduled (write conflict or cycle)."""


def dtype_for(elem: int) -> np.dtype:
    if elem == 32:
        return np.dtype(np.float32)
    if elem == 64:
        return np.dtype(np.float64)
    raise IRError(f"unsupported element width {elem}")


@dataclass(eq=False)
class Signal:
    """A named tensor value; identity is the integer ``id``."""

    id: int
    shape: tuple[int, ...]
    label: str = ""
    elem: int = 64
    initial: np.ndarray | None = None
    constant: bool = False
    minibatched: bool = False
    trainable: bool = False

    def __post_init__(self):
        self.shape = tuple(int(d) for d in self.shape)
        if not self.shape or any(d < 1 for d in self.shape):
            raise IRError(f"signal {self.id} ({self.label}) has invalid shape {self.shape}")
        if self.initial is not None:
            init = np.array(self.initial, dtype=self.dtype)
            if init.shape != self.shape:
                try:
                    init = np.broadcast_to(init, self.shape).copy()
                except ValueError:
                    raise IRError(
                        f"signal {self.id} initial value shape {init.shape} "
                        f"does not match {self.shape}"
                    ) from None
            init.setflags(write=False)
            self.initial = init
        if self.trainable and self.minibatched:
            raise IRError(f"trainable signal {self.id} cannot be minibatched")

    def __hash__(self):
        return hash(self.id)

    def __eq__(self, other):
        return isinstance(other, Signal) and other.id == self.id

    def __repr__(self):
        return f"Signal({self.id}, {self.label!r}, shape={self.shape})"

    @property
    def dtype(self) -> np.dtype:
        return dtype_for(self.elem)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def trailing(self) -> tuple[int, ...]:
        return self.shape[1:]

    def initial_value(self) -> np.ndarray:
        if self.initial is None:
            return np.zeros(self.shape, dtype=self.dtype)
        return np.array(self.initial, dtype=self.dtype)

    def ref(self, start: int | None = None, stop: int | None = None) -> SignalRef:
        start = 0 if start is None else start
        stop = self.shape[0] if stop is None else stop
        return SignalRef(self, start, stop)

    def __getitem__(self, item: slice) -> SignalRef:
        if not isinstance(item, slice) or item.step not in (None, 1):
            raise IRError("signal views must be contiguous first-axis slices")
        start, stop, _ = item.indices(self.shape[0])
        return SignalRef(self, start, stop)


@dataclass(frozen=True)
class SignalRef:
    """A contiguous first-axis slice ``[start, stop)`` of a signal."""

    signal: Signal
    start: int
    stop: int

    def __post_init__(self):
        if not 0 <= self.start < self.stop <= self.signal.shape[0]:
            raise IRError(
                f"slice [{self.start}, {self.stop}) out of bounds for {self.signal!r}"
            )

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.stop - self.start,) + self.signal.shape[1:]

    @property
    def length(self) -> int:
        return self.stop - self.start

    @property
    def is_full(self) -> bool:
        return self.start == 0 and self.stop == self.signal.shape[0]

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def initial_value(self) -> np.ndarray:
        return self.signal.initial_value()[self.start : self.stop]

    def as_list(self) -> list[int]:
        return [self.signal.id, self.start, self.stop]

    def __repr__(self):
        return f"{self.signal.label or self.signal.id}[{self.start}:{self.stop}]"


def as_ref(x: Signal | SignalRef) -> SignalRef:
    return x.ref() if isinstance(x, Signal) else x


def refs_overlap(a: SignalRef, b: SignalRef) -> bool:
    return a.signal.id == b.signal.id and a.start < b.stop and b.start < a.stop


@dataclass(frozen=True)
class AccessLists:
    sets: tuple[SignalRef, ...] = ()
    incs: tuple[SignalRef, ...] = ()
    reads: tuple[SignalRef, ...] = ()
    updates: tuple[SignalRef, ...] = ()

    def all(self) -> tuple[SignalRef, ...]:
        return self.sets + self.incs + self.reads + self.updates


@dataclass(frozen=True, eq=False)
class Operator:
    """Base class; subclasses fix ``kind`` and their operand fields."""

    id: int

    kind: ClassVar[str] = ""
    # operand slot names in a fixed order; this order defines operand positions
    slots: ClassVar[tuple[str, ...]] = ()

    def operands(self) -> dict[str, SignalRef]:
        return {name: getattr(self, name) for name in self.slots}

    def params(self) -> dict[str, Any]:
        return {}

    def merge_key(self) -> tuple:
        """Scalar parameters that must agree for two operators to merge."""
        return ()

    def access(self) -> AccessLists:
        raise NotImplementedError

    def validate(self) -> None:
        for name in self.slots:
            if not isinstance(getattr(self, name), SignalRef):
                raise IRError(f"{self!r}: operand {name!r} is not a SignalRef")

    def replace(self, **changes) -> Operator:
        fields = {name: getattr(self, name) for name in self.__dataclass_fields__}
        fields.update(changes)
        return type(self)(**fields)

    def __repr__(self):
        ops = ", ".join(f"{k}={v!r}" for k, v in self.operands().items())
        return f"{self.kind}#{self.id}({ops})"


@dataclass(frozen=True, eq=False, repr=False)
class Reset(Operator):
    dst: SignalRef = None
    value: np.ndarray | float = 0.0

    kind: ClassVar[str] = "Reset"
    slots: ClassVar[tuple[str, ...]] = ("dst",)

    def __post_init__(self):
        if isinstance(self.dst, SignalRef):
            value = np.array(self.value, dtype=self.dst.signal.dtype)
            value = np.broadcast_to(value, self.dst.shape).copy()
            value.setflags(write=False)
            object.__setattr__(self, "value", value)

    def params(self):
        return {"value": np.asarray(self.value).tolist()}

    def access(self):
        return AccessLists(sets=(self.dst,))


@dataclass(frozen=True, eq=False, repr=False)
class Copy(Operator):
    src: SignalRef = None
    dst: SignalRef = None
    inc: bool = False

    kind: ClassVar[str] = "Copy"
    slots: ClassVar[tuple[str, ...]] = ("src", "dst")

    def validate(self):
        super().validate()
        if self.src.shape != self.dst.shape:
            raise IRError(f"{self!r}: src shape {self.src.shape} != dst shape {self.dst.shape}")

    def params(self):
        return {"inc": self.inc}

    def merge_key(self):
        return (self.inc,)

    def access(self):
        if self.inc:
            return AccessLists(incs=(self.dst,), reads=(self.src,))
        return AccessLists(sets=(self.dst,), reads=(self.src,))


@dataclass(frozen=True, eq=False, repr=False)
class ElementwiseInc(Operator):
    """``Y += A * X``; ``A`` matches ``X`` or has a single row that broadcasts."""

    A: SignalRef = None
    X: SignalRef = None
    Y: SignalRef = None

    kind: ClassVar[str] = "ElementwiseInc"
    slots: ClassVar[tuple[str, ...]] = ("A", "X", "Y")

    def validate(self):
        super().validate()
        if self.X.shape != self.Y.shape:
            raise IRError(f"{self!r}: X shape {self.X.shape} != Y shape {self.Y.shape}")
        if self.A.shape != self.X.shape and self.A.shape != (1,) + self.X.shape[1:]:
            raise IRError(f"{self!r}: A shape {self.A.shape} incompatible with X {self.X.shape}")

    def access(self):
        return AccessLists(incs=(self.Y,), reads=(self.A, self.X))


@dataclass(frozen=True, eq=False, repr=False)
class DotInc(Operator):
    """``Y += A @ X`` with ``A`` of shape (m, n), ``X`` (n,), ``Y`` (m,)."""

    A: SignalRef = None
    X: SignalRef = None
    Y: SignalRef = None

    kind: ClassVar[str] = "DotInc"
    slots: ClassVar[tuple[str, ...]] = ("A", "X", "Y")

    def validate(self):
        super().validate()
        if len(self.A.shape) != 2 or len(self.X.shape) != 1 or len(self.Y.shape) != 1:
            raise IRError(f"{self!r}: DotInc needs a matrix and two vectors")
        m, n = self.A.shape
        if self.X.shape != (n,) or self.Y.shape != (m,):
            raise IRError(
                f"{self!r}: shapes A{self.A.shape} X{self.X.shape} Y{self.Y.shape} do not align"
            )

    def access(self):
        return AccessLists(incs=(self.Y,), reads=(self.A, self.X))


@dataclass(frozen=True, eq=False, repr=False)
class SimNeurons(Operator):
    model: NeuronModel = None
    J: SignalRef = None
    out: SignalRef = None
    states: tuple[SignalRef, ...] = ()

    kind: ClassVar[str] = "SimNeurons"

    @property
    def slots(self):
        return ("J", "out") + tuple(f"state{i}" for i in range(len(self.states)))

    def operands(self):
        ops = {"J": self.J, "out": self.out}
        ops.update({f"state{i}": s for i, s in enumerate(self.states)})
        return ops

    def validate(self):
        if not isinstance(self.J, SignalRef) or not isinstance(self.out, SignalRef):
            raise IRError(f"{self!r}: J and out must be SignalRefs")
        if len(self.states) != self.model.n_states:
            raise IRError(
                f"{self!r}: {type(self.model).__name__} needs {self.model.n_states} "
                f"state signals, got {len(self.states)}"
            )
        for ref in (self.out,) + tuple(self.states):
            if ref.shape != self.J.shape:
                raise IRError(f"{self!r}: operand shape {ref.shape} != J shape {self.J.shape}")

    def params(self):
        return {"model": type(self.model).__name__, **vars(self.model)}

    def merge_key(self):
        return (self.model,)

    def access(self):
        return AccessLists(sets=(self.out,), reads=(self.J,), updates=tuple(self.states))


@dataclass(frozen=True, eq=False, repr=False)
class SimProcess(Operator):
    """Lowpass filter from ``input`` to ``output``.

    With ``tau > 0`` the output is the filter state and is written as an
    update (one-step delay); with ``tau == 0`` it is set directly.
    """

    process: Lowpass = None
    input: SignalRef = None
    output: SignalRef = None

    kind: ClassVar[str] = "SimProcess"
    slots: ClassVar[tuple[str, ...]] = ("input", "output")

    def validate(self):
        super().validate()
        if self.input.shape != self.output.shape:
            raise IRError(f"{self!r}: input shape {self.input.shape} != output {self.output.shape}")

    def params(self):
        return {"tau": self.process.tau}

    def merge_key(self):
        return (self.process.tau,)

    def access(self):
        if self.process.has_state:
            return AccessLists(reads=(self.input,), updates=(self.output,))
        return AccessLists(sets=(self.output,), reads=(self.input,))


@dataclass(frozen=True, eq=False, repr=False)
class SimPES(Operator):
    """Error-driven update ``W += -(learning_rate*dt/n) * outer(error, pre)``."""

    pre: SignalRef = None
    error: SignalRef = None
    weights: SignalRef = None
    learning_rate: float = 1e-4
    dt: float = 0.001

    kind: ClassVar[str] = "SimPES"
    slots: ClassVar[tuple[str, ...]] = ("pre", "error", "weights")

    def validate(self):
        super().validate()
        if len(self.weights.shape) != 2 or self.weights.shape != (
            self.error.shape[0],
            self.pre.shape[0],
        ):
            raise IRError(
                f"{self!r}: weights {self.weights.shape} must be (error, pre) = "
                f"({self.error.shape[0]}, {self.pre.shape[0]})"
            )

    def params(self):
        return {"learning_rate": self.learning_rate, "dt": self.dt}

    def merge_key(self):
        return (self.learning_rate, self.dt)

    @property
    def scale(self) -> float:
        return -self.learning_rate * self.dt / self.pre.shape[0]

    def access(self):
        return AccessLists(reads=(self.pre, self.error), updates=(self.weights,))


@dataclass(frozen=True, eq=False, repr=False)
class TimeUpdate(Operator):
    step: SignalRef = None
    time: SignalRef = None
    dt: float = 0.001

    kind: ClassVar[str] = "TimeUpdate"
    slots: ClassVar[tuple[str, ...]] = ("step", "time")

    def params(self):
        return {"dt": self.dt}

    def merge_key(self):
        return (self.dt,)

    def access(self):
        return AccessLists(updates=(self.step, self.time))


def access_lists(op: Operator) -> AccessLists:
    """The op's sets/incs/reads/updates lists, after structural validation."""
    try:
        op.validate()
    except (AttributeError, TypeError) as e:
        raise IRError(f"malformed operator {op!r}: {e}") from e
    return op.access()


def validate_operators(ops: Iterable[Operator]) -> None:
    seen = set()
    for op in ops:
        if op.id in seen:
            raise IRError(f"duplicate operator id {op.id}")
        seen.add(op.id)
        acc = access_lists(op)
        for ref in acc.sets + acc.incs + acc.updates:
            if ref.signal.constant:
                raise IRError(f"{op!r} writes constant signal {ref.signal!r}")


@dataclass
class DependencyGraph:
    ops: dict[int, Operator]
    succ: dict[int, set[int]]
    pred: dict[int, set[int]]

    @property
    def nodes(self) -> list[int]:
        return sorted(self.ops)

    @property
    def edges(self) -> set[tuple[int, int]]:
        return {(a, b) for a, bs in self.succ.items() for b in bs}

    def __len__(self):
        return len(self.ops)


# (earlier phase, later phase) pairs that induce an edge on overlapping refs
_PHASE_ORDER = (
    ("sets", "incs"),
    ("sets", "reads"),
    ("incs", "reads"),
    ("sets", "updates"),
    ("incs", "updates"),
    ("reads", "updates"),
)


def build_dependency_graph(ops: Iterable[Operator]) -> DependencyGraph:
    ops = list(ops)
    validate_operators(ops)
    by_signal: dict[int, dict[str, list[tuple[Operator, SignalRef]]]] = defaultdict(
        lambda: defaultdict(list)
    )
    for op in ops:
        acc = op.access()
        for phase in ("sets", "incs", "reads", "updates"):
            for ref in getattr(acc, phase):
                by_signal[ref.signal.id][phase].append((op, ref))

    succ: dict[int, set[int]] = {op.id: set() for op in ops}
    pred: dict[int, set[int]] = {op.id: set() for op in ops}

    for phases in by_signal.values():
        for phase in ("sets", "updates"):
            writers = phases[phase]
            for i, (op_a, ref_a) in enumerate(writers):
                for op_b, ref_b in writers[i + 1 :]:
                    if op_a is not op_b and refs_overlap(ref_a, ref_b):
                        raise BuildError(
                            f"write conflict: {op_a!r} and {op_b!r} both {phase[:-1]} "
                            f"overlapping regions of {ref_a.signal!r}"
                        )
        for early, late in _PHASE_ORDER:
            for op_a, ref_a in phases[early]:
                for op_b, ref_b in phases[late]:
                    if op_a is not op_b and refs_overlap(ref_a, ref_b):
                        succ[op_a.id].add(op_b.id)
                        pred[op_b.id].add(op_a.id)

    graph = DependencyGraph({op.id: op for op in ops}, succ, pred)
    cycle = find_cycle(graph)
    if cycle:
        path = " -> ".join(repr(graph.ops[i]) for i in cycle)
        raise BuildError(f"dependency cycle: {path}")
    return graph


def find_cycle(graph: DependencyGraph) -> list[int] | None:
    """Return one cycle as a closed id path, or None if acyclic."""
    WHITE, GREY, BLACK = 0, 1, 2
    color = dict.fromkeys(graph.ops, WHITE)
    for root in sorted(graph.ops):
        if color[root] != WHITE:
            continue
        stack = [(root, iter(sorted(graph.succ[root])))]
        path = [root]
        color[root] = GREY
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                color[node] = BLACK
                stack.pop()
                path.pop()
            elif color[nxt] == GREY:
                return path[path.index(nxt) :] + [nxt]
            elif color[nxt] == WHITE:
                color[nxt] = GREY
                stack.append((nxt, iter(sorted(graph.succ[nxt]))))
                path.append(nxt)
    return None


def toposort_schedule(graph: DependencyGraph) -> list[int]:
    """Kahn's algorithm, always taking the smallest ready operator id."""
    indeg = {i: len(p) for i, p in graph.pred.items()}
    ready = [i for i, d in indeg.items() if d == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        i = heapq.heappop(ready)
        order.append(i)
        for j in graph.succ[i]:
            indeg[j] -= 1
            if indeg[j] == 0:
                heapq.heappush(ready, j)
    if len(order) != len(graph.ops):
        raise BuildError("dependency graph contains a cycle")
    return order


@dataclass
class FeedSlot:
    """A signal overwritten from user data at the start of every step."""

    signal: Signal
    default: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.signal.size


@dataclass
class Model:
    """A lowered program: signals, operators, probes and feed slots."""

    signals: list[Signal]
    operators: list[Operator]
    probes: dict[str, SignalRef] = field(default_factory=dict)
    feeds: dict[int, FeedSlot] = field(default_factory=dict)
    dt: float = 0.001

    def signal(self, sid: int) -> Signal:
        return self._by_id()[sid]

    def _by_id(self) -> dict[int, Signal]:
        return {s.id: s for s in self.signals}

    def replace_operators(self, operators: list[Operator]) -> Model:
        return Model(self.signals, list(operators), dict(self.probes), dict(self.feeds), self.dt)

    @property
    def elem(self) -> int:
        elems = {s.elem for s in self.signals}
        return elems.pop() if len(elems) == 1 else 64


def _json_param(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    return value


def ir_to_dict(model: Model) -> dict:
    signals = [
        {
            "id": s.id,
            "label": s.label,
            "shape": list(s.shape),
            "elem": s.elem,
            "constant": s.constant,
            "minibatched": s.minibatched,
            "trainable": s.trainable,
        }
        for s in model.signals
    ]
    operators = [
        {
            "id": op.id,
            "kind": op.kind,
            "operands": {k: v.as_list() for k, v in op.operands().items()},
            "params": {k: _json_param(v) for k, v in op.params().items()},
        }
        for op in model.operators
    ]
    return {"signals": signals, "operators": operators}


def dump_ir(model: Model, indent: int | None = None) -> str:
    return json.dumps(ir_to_dict(model), indent=indent, sort_keys=False)


NEURON_MODELS = {"LIF": LIF, "LIFRate": LIFRate, "RectifiedLinear": RectifiedLinear}
