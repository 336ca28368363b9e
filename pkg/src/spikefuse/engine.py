"""Compiled executor: packed base buffers and one fused kernel per operator group.

Every group runs as gather inputs -> compute over the stacked operands ->
scatter (set or accumulate) outputs. Contiguous row sets compile to slices;
anything else to an index array.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

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
    dtype_for,
)
from spikefuse.passes.layout import BaseBufferLayout, as_index
from spikefuse.passes.planning import OpGroup, Plan
from spikefuse.probes import ProbeOutput, normalize_feeds


class CompileError(Exception):
    pass


class RunError(Exception):
    pass


@dataclass(frozen=True)
class Descriptor:
    """Where a stacked operand lives: a buffer and a row slice or index list."""

    buffer: int
    index: slice | np.ndarray
    batched: bool
    n_rows: int
    duplicates: bool = False

    @property
    def contiguous(self) -> bool:
        return isinstance(self.index, slice)


def gather(desc: Descriptor, buffer: np.ndarray) -> np.ndarray:
    """Rows of ``buffer`` in descriptor order (a view on the slice path)."""
    if desc.batched:
        return buffer[:, desc.index]
    return buffer[desc.index]


def scatter(desc: Descriptor, buffer: np.ndarray, values, mode: str) -> None:
    """Overwrite (``mode="set"``) or accumulate (``mode="inc"``) rows of ``buffer``."""
    key = (slice(None), desc.index) if desc.batched else desc.index
    if mode == "set":
        buffer[key] = values
    elif mode == "inc":
        if desc.duplicates:
            if not desc.batched and np.ndim(values) > buffer.ndim:
                raise CompileError("cannot accumulate batched values into a shared buffer")
            np.add.at(buffer, key, values)
        else:
            buffer[key] += values
    else:
        raise ValueError(f"unknown scatter mode {mode!r}")


def _batched_buffers(model: Model, layout: BaseBufferLayout) -> list[bool]:
    """Buffers that need a batch axis.

    Seeds: buffers holding minibatched signals or SimPES weights. Any op that
    reads a batched buffer makes the buffers it writes batched too.
    """
    where = {sid: ts.buffer for sid, ts in layout.placement.items()}
    batched = [False] * len(layout.buffers)
    for s in model.signals:
        if s.minibatched:
            batched[where[s.id]] = True
    for op in model.operators:
        if isinstance(op, SimPES):
            batched[where[op.weights.signal.id]] = True
    changed = True
    while changed:
        changed = False
        for op in model.operators:
            acc = op.access()
            if any(batched[where[r.signal.id]] for r in acc.reads + acc.updates):
                for r in acc.sets + acc.incs + acc.updates:
                    if not batched[where[r.signal.id]]:
                        batched[where[r.signal.id]] = True
                        changed = True
    return batched


class Engine:
    """A compiled, stateful simulation.

    Build with :func:`compile_engine`. ``run`` may be called repeatedly;
    state (buffers, step, time) persists until ``reset``.
    """

    def __init__(
        self,
        plan: Plan,
        layout: BaseBufferLayout,
        model: Model,
        minibatch_size: int = 1,
        unroll: int = 1,
    ):
        if minibatch_size < 1:
            raise CompileError("minibatch_size must be >= 1")
        if unroll < 1:
            raise CompileError("unroll must be >= 1")
        self.plan = plan
        self.layout = layout
        self.model = model
        self.dt = model.dt
        self.minibatch_size = minibatch_size
        self.unroll = unroll
        self.ops = {op.id: op for op in model.operators}
        self.step = 0
        self._check_consistency()

        self.signals = {s.id: s for s in model.signals}
        self.buffer_batched = _batched_buffers(model, layout)
        self.buffers: list[np.ndarray] = []
        self._initial: list[np.ndarray] = []
        for buf, batched in zip(layout.buffers, self.buffer_batched):
            shape = (buf.total_rows,) + buf.trailing
            init = np.zeros(shape, dtype=dtype_for(buf.elem))
            for sid in buf.order:
                rows = layout.placement[sid].rows
                init[rows[0] : rows[-1] + 1] = self.signals[sid].initial_value()
            if batched:
                init = np.broadcast_to(init, (minibatch_size,) + shape).copy()
            self._initial.append(init)
            self.buffers.append(init.copy())
        for buf, arr in zip(layout.buffers, self.buffers):
            if all(self.signals[sid].constant for sid in buf.order):
                arr.setflags(write=False)

        self.kernels: list[Callable[[], None]] = [self._compile_group(g) for g in plan.groups]
        self.probe_descriptors = {
            key: self.descriptor([ref]) for key, ref in model.probes.items()
        }
        self.feed_descriptors = {
            slot_id: self.descriptor([slot.signal.ref()]) for slot_id, slot in model.feeds.items()
        }
        self._programs: dict[int, list[Callable[[], None]]] = {}
        self._feed_data: dict = {}
        self._output: ProbeOutput = {}
        self._local_step = 0

    @property
    def time(self) -> float:
        return self.step * self.dt

    def _check_consistency(self) -> None:
        seen = set()
        for g in self.plan.groups:
            for m in g.members:
                if m not in self.ops:
                    raise CompileError(f"plan references unknown operator {m}")
                if self.ops[m].kind != g.kind:
                    raise CompileError(f"operator {m} is not a {g.kind}")
                seen.add(m)
        if seen != set(self.ops):
            raise CompileError("plan does not cover every operator exactly once")
        missing = {s.id for s in self.model.signals} - set(self.layout.placement)
        if missing:
            raise CompileError(f"signals without placement: {sorted(missing)}")

    # -- descriptors ---------------------------------------------------------

    def descriptor(self, refs: list[SignalRef]) -> Descriptor:
        buffers = {self.layout.placement[r.signal.id].buffer for r in refs}
        if len(buffers) != 1:
            raise CompileError(f"operands {refs} span buffers {sorted(buffers)}")
        (bid,) = buffers
        rows: list[int] = []
        for r in refs:
            rows.extend(self.layout.rows(r))
        return Descriptor(
            bid,
            as_index(rows),
            self.buffer_batched[bid],
            len(rows),
            len(set(rows)) != len(rows),
        )

    def _slot(self, members: list[Operator], name: str) -> Descriptor:
        return self.descriptor([getattr(m, name) for m in members])

    # -- group kernels -------------------------------------------------------

    def _compile_group(self, group: OpGroup) -> Callable[[], None]:
        members = [self.ops[m] for m in group.members]
        compile_fn = {
            Reset: self._reset,
            Copy: self._copy,
            ElementwiseInc: self._elementwise_inc,
            DotInc: self._dot_inc,
            SimNeurons: self._sim_neurons,
            SimProcess: self._sim_process,
            SimPES: self._sim_pes,
            TimeUpdate: self._time_update,
        }[type(members[0])]
        return compile_fn(members)

    def _reset(self, members: list[Reset]):
        dst = self._slot(members, "dst")
        buf = self.buffers[dst.buffer]
        value = np.concatenate([m.value for m in members]).astype(buf.dtype)

        def reset():
            scatter(dst, buf, value, "set")

        return reset

    def _copy(self, members: list[Copy]):
        src, dst = self._slot(members, "src"), self._slot(members, "dst")
        sbuf, dbuf = self.buffers[src.buffer], self.buffers[dst.buffer]
        mode = "inc" if members[0].inc else "set"

        def copy():
            scatter(dst, dbuf, gather(src, sbuf), mode)

        return copy

    def _elementwise_inc(self, members: list[ElementwiseInc]):
        A, X, Y = (self._slot(members, n) for n in ("A", "X", "Y"))
        abuf, xbuf, ybuf = self.buffers[A.buffer], self.buffers[X.buffer], self.buffers[Y.buffer]
        expand = None
        if any(m.A.length != m.X.length for m in members):
            # row index into the gathered A for every gathered X row
            expand, offset = [], 0
            for m in members:
                if m.A.length == m.X.length:
                    expand.extend(range(offset, offset + m.A.length))
                else:
                    expand.extend([offset] * m.X.length)
                offset += m.A.length
            expand = np.asarray(expand, dtype=np.intp)

        def elementwise_inc():
            a = gather(A, abuf)
            if expand is not None:
                a = a[:, expand] if A.batched else a[expand]
            scatter(Y, ybuf, a * gather(X, xbuf), "inc")

        return elementwise_inc

    def _dot_inc(self, members: list[DotInc]):
        A, X, Y = (self._slot(members, n) for n in ("A", "X", "Y"))
        abuf, xbuf, ybuf = self.buffers[A.buffer], self.buffers[X.buffer], self.buffers[Y.buffer]
        k, n = len(members), members[0].A.shape[1]
        row_member = np.repeat(np.arange(k), [m.A.length for m in members])
        x_shape = (self.minibatch_size, k, n) if X.batched else (k, n)
        single = k == 1

        def dot_inc():
            x = gather(X, xbuf).reshape(x_shape)
            x = x if single else x[..., row_member, :]
            scatter(Y, ybuf, (gather(A, abuf) * x).sum(axis=-1), "inc")

        return dot_inc

    def _sim_neurons(self, members: list[SimNeurons]):
        model = members[0].model
        J, out = self._slot(members, "J"), self._slot(members, "out")
        states = [
            self.descriptor([m.states[i] for m in members]) for i in range(model.n_states)
        ]
        jbuf, obuf = self.buffers[J.buffer], self.buffers[out.buffer]
        sbufs = [self.buffers[s.buffer] for s in states]
        dt = self.dt

        def sim_neurons():
            result = model.step(dt, gather(J, jbuf), *(gather(s, b) for s, b in zip(states, sbufs)))
            scatter(out, obuf, result[0], "set")
            for s, b, value in zip(states, sbufs, result[1:]):
                scatter(s, b, value, "set")

        return sim_neurons

    def _sim_process(self, members: list[SimProcess]):
        inp, outp = self._slot(members, "input"), self._slot(members, "output")
        ibuf, obuf = self.buffers[inp.buffer], self.buffers[outp.buffer]
        if not members[0].process.has_state:
            def passthrough():
                scatter(outp, obuf, gather(inp, ibuf), "set")

            return passthrough
        a, b = members[0].process.coefficients(self.dt)

        def lowpass():
            scatter(outp, obuf, a * gather(outp, obuf) + b * gather(inp, ibuf), "set")

        return lowpass

    def _sim_pes(self, members: list[SimPES]):
        pre, err, W = (self._slot(members, n) for n in ("pre", "error", "weights"))
        pbuf, ebuf, wbuf = self.buffers[pre.buffer], self.buffers[err.buffer], self.buffers[W.buffer]
        k, n = len(members), members[0].pre.length
        row_member = np.repeat(np.arange(k), [m.weights.length for m in members])
        p_shape = (self.minibatch_size, k, n) if pre.batched else (k, n)
        scale = members[0].scale

        def sim_pes():
            p = gather(pre, pbuf).reshape(p_shape)[..., row_member, :]
            delta = (gather(err, ebuf)[..., None] * p) * scale
            scatter(W, wbuf, gather(W, wbuf) + delta, "set")

        return sim_pes

    def _time_update(self, members: list[TimeUpdate]):
        step, time = self._slot(members, "step"), self._slot(members, "time")
        sbuf, tbuf = self.buffers[step.buffer], self.buffers[time.buffer]
        dts = np.array([m.dt for m in members], dtype=sbuf.dtype)

        def time_update():
            s = gather(step, sbuf) + 1
            scatter(step, sbuf, s, "set")
            scatter(time, tbuf, s * dts, "set")

        return time_update

    # -- running -------------------------------------------------------------

    def _begin_step(self) -> None:
        i = self._local_step
        B = self.minibatch_size
        for slot_id, desc in self.feed_descriptors.items():
            data = self._feed_data[slot_id]
            slot = self.model.feeds[slot_id]
            if data is None:
                value = np.reshape(slot.default, (1,) + slot.signal.shape)
            else:
                value = data[:, i].reshape((B,) + slot.signal.shape)
            scatter(desc, self.buffers[desc.buffer], value, "set")

    def _end_step(self) -> None:
        i = self._local_step
        for key, desc in self.probe_descriptors.items():
            value = gather(desc, self.buffers[desc.buffer])
            out = self._output[key]
            out[:, i] = value.reshape(out.shape[0], -1) if desc.batched else value.reshape(-1)
        self._local_step += 1
        self.step += 1

    def program(self, n: int) -> list[Callable[[], None]]:
        """The flat callable sequence for one loop iteration of ``n`` steps."""
        if n not in self._programs:
            one = [self._begin_step, *self.kernels, self._end_step]
            self._programs[n] = one * n
        return self._programs[n]

    def run(self, n_steps: int, feeds: Mapping | None = None) -> ProbeOutput:
        """Advance ``n_steps`` and return ``probe key -> (batch, n_steps, dim)``."""
        if n_steps < 1:
            raise RunError("n_steps must be >= 1")
        try:
            self._feed_data = normalize_feeds(self.model, feeds, n_steps, self.minibatch_size)
        except ValueError as e:
            raise RunError(str(e)) from e
        B = self.minibatch_size
        self._output = {
            key: np.zeros((B, n_steps, ref.size), dtype=ref.signal.dtype)
            for key, ref in self.model.probes.items()
        }
        self._local_step = 0
        iterations, remainder = divmod(n_steps, self.unroll)
        body = self.program(self.unroll)
        for _ in range(iterations):
            for fn in body:
                fn()
        if remainder:
            for fn in self.program(remainder):
                fn()
        out, self._output, self._feed_data = self._output, {}, {}
        return out

    def reset(self) -> None:
        for buf, init in zip(self.buffers, self._initial):
            if buf.flags.writeable:
                buf[...] = init
        self.step = 0

    def signal_value(self, sid: int) -> np.ndarray:
        """Current value of a signal: ``(batch, *shape)`` or ``shape`` if shared."""
        ts = self.layout.placement[sid]
        sig = self.signals[sid]
        desc = Descriptor(ts.buffer, as_index(ts.rows), self.buffer_batched[ts.buffer], len(ts.rows))
        return np.array(gather(desc, self.buffers[ts.buffer])).reshape(
            ((self.minibatch_size,) if desc.batched else ()) + sig.shape
        )


def compile_engine(
    plan: Plan,
    layout: BaseBufferLayout,
    model: Model,
    minibatch_size: int = 1,
    unroll: int = 1,
) -> Engine:
    return Engine(plan, layout, model, minibatch_size, unroll)
