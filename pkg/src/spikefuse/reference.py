"""Naive reference interpreter: the oracle for every optimization.

One dense array per signal, one operator at a time in dependency order,
updates double-buffered until the end of the step, batch as an outer loop.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from spikefuse.ir import (
    Copy,
    DotInc,
    ElementwiseInc,
    Model,
    Operator,
    Reset,
    SignalRef,
    SimNeurons,
    SimPES,
    SimProcess,
    TimeUpdate,
    build_dependency_graph,
    toposort_schedule,
)
from spikefuse.probes import ProbeOutput, normalize_feeds


class ReferenceState:
    def __init__(self, model: Model):
        self.model = model
        self.values = {s.id: s.initial_value() for s in model.signals}
        self.step = 0
        self.time = 0.0

    def view(self, ref: SignalRef) -> np.ndarray:
        return self.values[ref.signal.id][ref.start : ref.stop]


def _execute(op: Operator, st: ReferenceState, pending: list, dt: float) -> None:
    v = st.view
    if isinstance(op, Reset):
        v(op.dst)[...] = op.value
    elif isinstance(op, Copy):
        if op.inc:
            v(op.dst)[...] += v(op.src)
        else:
            v(op.dst)[...] = v(op.src)
    elif isinstance(op, ElementwiseInc):
        v(op.Y)[...] += v(op.A) * v(op.X)
    elif isinstance(op, DotInc):
        v(op.Y)[...] += v(op.A) @ v(op.X)
    elif isinstance(op, SimNeurons):
        result = op.model.step(dt, v(op.J).copy(), *(v(s).copy() for s in op.states))
        v(op.out)[...] = result[0]
        pending.extend(zip(op.states, result[1:]))
    elif isinstance(op, SimProcess):
        if op.process.has_state:
            a, b = op.process.coefficients(dt)
            pending.append((op.output, a * v(op.output) + b * v(op.input)))
        else:
            v(op.output)[...] = v(op.input)
    elif isinstance(op, SimPES):
        delta = np.outer(v(op.error), v(op.pre)) * op.scale
        pending.append((op.weights, v(op.weights) + delta))
    elif isinstance(op, TimeUpdate):
        step = v(op.step) + 1
        pending.append((op.step, step))
        pending.append((op.time, step * op.dt))
    else:
        raise TypeError(f"reference interpreter cannot execute {op!r}")


def run_reference(
    model: Model,
    n_steps: int,
    feeds: Mapping | None = None,
    minibatch_size: int | None = None,
) -> ProbeOutput:
    """Simulate ``n_steps`` and return ``probe key -> (batch, n_steps, dim)``."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if minibatch_size is None:
        sizes = {np.shape(f)[0] for f in (feeds or {}).values()}
        minibatch_size = sizes.pop() if len(sizes) == 1 else 1
    feed_data = normalize_feeds(model, feeds, n_steps, minibatch_size)
    order = toposort_schedule(build_dependency_graph(model.operators))
    by_id = {op.id: op for op in model.operators}
    schedule = [by_id[i] for i in order]

    out = {
        key: np.zeros((minibatch_size, n_steps, ref.size), dtype=ref.signal.dtype)
        for key, ref in model.probes.items()
    }
    for b in range(minibatch_size):
        st = ReferenceState(model)
        for step in range(n_steps):
            for slot_id, slot in model.feeds.items():
                data = feed_data[slot_id]
                value = slot.default if data is None else data[b, step]
                st.values[slot.signal.id][...] = np.reshape(value, slot.signal.shape)
            pending: list = []
            for op in schedule:
                _execute(op, st, pending, model.dt)
            for ref, value in pending:
                st.view(ref)[...] = value
            st.step += 1
            st.time = st.step * model.dt
            for key, ref in model.probes.items():
                out[key][b, step] = st.view(ref).ravel()
    return out


@dataclass(frozen=True)
class Divergence:
    probe: str
    batch: int
    step: int
    dim: int


@dataclass(frozen=True)
class CompareReport:
    max_abs_err: float
    max_rel_err: float
    first_divergence: Divergence | None

    @property
    def ok(self) -> bool:
        return self.first_divergence is None


class CompareError(ValueError):
    pass


def compare(a: ProbeOutput, b: ProbeOutput, rel_tol: float = 0.0, abs_tol: float = 0.0) -> CompareReport:
    """Elementwise comparison; an element diverges when
    ``|a - b| > abs_tol + rel_tol * |b|``."""
    if set(a) != set(b):
        raise CompareError(f"probe keys differ: {sorted(set(a) ^ set(b))}")
    max_abs = 0.0
    max_rel = 0.0
    first = None
    for key in sorted(a):
        x = np.asarray(a[key], dtype=np.float64)
        y = np.asarray(b[key], dtype=np.float64)
        if x.shape != y.shape:
            raise CompareError(f"probe {key!r}: shapes {x.shape} and {y.shape} differ")
        if x.size == 0:
            continue
        with np.errstate(invalid="ignore", divide="ignore"):
            err = np.abs(x - y)
            err[(x == y) | (np.isnan(x) & np.isnan(y))] = 0.0
            err[np.isnan(err)] = np.inf
            rel = np.where(y != 0, err / np.abs(y), np.where(err > 0, np.inf, 0.0))
            rel[err == 0] = 0.0
            bad = (err > 0) & ~(err <= abs_tol + rel_tol * np.abs(y))
        max_abs = max(max_abs, float(err.max()))
        max_rel = max(max_rel, float(rel.max()))
        if first is None and bad.any():
            idx = np.argwhere(bad)[0]
            first = Divergence(key, int(idx[0]), int(idx[1]), int(idx[2]))
    return CompareReport(max_abs, max_rel, first)
