"""Seeded random IR programs for property tests and oracle checks.

Generated models are valid by construction. Computed signals are arranged in
levels: each has exactly one full-width setter plus any number of
accumulators, and every operator writing level ``L`` reads only roots
(constants, feeds, updated state) or signals below ``L``. Operators that only
update state are sinks of the dependency graph, so no cycles arise. Updaters
read only bounded signals (constants, feeds, LIF-family outputs), which keeps
the recurrent dynamics from overflowing.
"""

from __future__ import annotations

import numpy as np

from spikefuse.ir import (
    Copy,
    DotInc,
    ElementwiseInc,
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
)
from spikefuse.neurons import LIF, LIFRate, RectifiedLinear
from spikefuse.synapses import Lowpass


class _Gen:
    def __init__(self, rng: np.random.Generator, elem: int, dt: float):
        self.rng = rng
        self.elem = elem
        self.dt = dt
        self.signals: list[Signal] = []
        self.ops: list[Operator] = []
        self.feeds: dict[int, FeedSlot] = {}
        # (ref, level) pools
        self.readable: list[tuple[SignalRef, int]] = []
        self.matrices: list[Signal] = []
        self.bounded: set[int] = set()

    def signal(self, shape, label, **kw) -> Signal:
        sig = Signal(len(self.signals), tuple(shape), label, self.elem, **kw)
        self.signals.append(sig)
        return sig

    def op(self, cls, **kw) -> Operator:
        op = cls(id=len(self.ops), **kw)
        self.ops.append(op)
        return op

    def small(self, shape, scale=0.5) -> np.ndarray:
        return self.rng.uniform(-scale, scale, size=shape)

    def source(self, length: int, below: int, state: bool = True) -> SignalRef | None:
        """A readable ref (possibly a slice) of exactly ``length`` rows.

        ``state=False`` is for updaters: it excludes updated signals (level -2),
        since an updater reading another updater's target would create a
        dependency cycle, and it admits only bounded signals.
        """
        lowest = -2 if state else -1
        fits = [(r, lvl) for r, lvl in self.readable
                if lowest <= lvl < below and r.length >= length
                and (state or r.signal.id in self.bounded)]
        if not fits:
            return None
        ref, _ = fits[self.rng.integers(len(fits))]
        start = ref.start + int(self.rng.integers(ref.length - length + 1))
        return SignalRef(ref.signal, start, start + length)

    def target_slice(self, sig: Signal) -> SignalRef:
        n = sig.shape[0]
        if n > 1 and self.rng.random() < 0.4:
            start = int(self.rng.integers(n))
            stop = int(self.rng.integers(start + 1, n + 1))
            return sig.ref(start, stop)
        return sig.ref()


def random_model(
    seed: int,
    max_ops: int = 200,
    elem: int = 64,
    dt: float = 0.001,
    n_levels: int | None = None,
) -> Model:
    """A random, valid model with at most ``max_ops`` operators."""
    rng = np.random.default_rng(seed)
    g = _Gen(rng, elem, dt)
    sizes = (1, 2, 3, 4, 6)

    def size():
        return int(rng.choice(sizes))

    # roots
    for i in range(int(rng.integers(2, 6))):
        n = size()
        kind = rng.integers(4)
        init = np.ones(n) if kind == 0 else np.zeros(n) if kind == 1 else g.small(n)
        sig = g.signal((n,), f"const{i}", initial=init, constant=True)
        g.bounded.add(sig.id)
        g.readable.append((sig.ref(), -1))
    for i in range(int(rng.integers(0, 3))):
        n = size()
        sig = g.signal((n,), f"feed{i}", minibatched=True)
        g.feeds[sig.id] = FeedSlot(sig, g.small(n))
        g.bounded.add(sig.id)
        g.readable.append((sig.ref(), -1))
    for i in range(int(rng.integers(1, 4))):
        m, n = size(), size()
        g.matrices.append(g.signal((m, n), f"mat{i}", initial=g.small((m, n)) / n, constant=True))

    filters: list[Signal] = []
    for i in range(int(rng.integers(0, 4))):
        n = size()
        sig = g.signal((n,), f"filt{i}", initial=g.small(n), minibatched=True)
        filters.append(sig)
        g.readable.append((sig.ref(), -2))
    learned: list[Signal] = []
    for i in range(int(rng.integers(0, 3))):
        m, n = size(), size()
        w = g.signal((m, n), f"w{i}", initial=g.small((m, n)) / n, trainable=True)
        learned.append(w)
        g.matrices.append(w)
    if rng.random() < 0.5:
        step = g.signal((1,), "step")
        time = g.signal((1,), "time")
        g.op(TimeUpdate, step=step.ref(), time=time.ref(), dt=dt)
        g.readable.append((time.ref(), -2))

    sinks = len(filters) + len(learned)
    budget = max_ops - len(g.ops) - sinks
    n_levels = n_levels or int(rng.integers(2, 7))
    per_level = max(1, budget // (3 * n_levels))
    computed: list[Signal] = []

    for level in range(n_levels):
        for j in range(int(rng.integers(1, per_level + 1))):
            if len(g.ops) + sinks + 2 > max_ops:
                break
            n = size()
            sig = g.signal((n,), f"s{level}_{j}", minibatched=True)
            _set_signal(g, sig, level)
            for _ in range(int(rng.integers(0, 4))):
                if len(g.ops) + sinks >= max_ops:
                    break
                _inc_signal(g, sig, level)
            computed.append(sig)
            g.readable.append((sig.ref(), level))

    top = n_levels + 1
    for f in filters:
        inp = g.source(f.shape[0], top, state=False)
        tau = float(rng.choice([0.005, 0.01, 0.05]))
        if inp is not None:
            g.op(SimProcess, process=Lowpass(tau), input=inp, output=f.ref())
    for w in learned:
        m, n = w.shape
        pre, err = g.source(n, top, state=False), g.source(m, top, state=False)
        if pre is not None and err is not None:
            g.op(SimPES, pre=pre, error=err, weights=w.ref(), learning_rate=float(rng.uniform(0.1, 1.0)), dt=dt)

    probes = {}
    pool = computed + filters + learned + [s for s in g.signals if s.id in g.feeds]
    for k in range(min(len(pool), int(rng.integers(1, 6)))):
        sig = pool[rng.integers(len(pool))]
        probes[f"p{k}"] = g.target_slice(sig)
    if not probes:
        probes["p0"] = g.signals[0].ref()
    return Model(g.signals, g.ops, probes, g.feeds, dt)


def _set_signal(g: _Gen, sig: Signal, level: int) -> None:
    rng = g.rng
    n = sig.shape[0]
    choice = rng.integers(5)
    src = g.source(n, level)
    if choice == 1 and src is not None:
        g.op(Copy, src=src, dst=sig.ref(), inc=False)
    elif choice == 2 and src is not None:
        model = [LIF(amplitude=g.dt), LIFRate(amplitude=g.dt), RectifiedLinear()][rng.integers(3)]
        states = tuple(
            g.signal((n,), f"{sig.label}.state{k}", minibatched=True).ref()
            for k in range(model.n_states)
        )
        g.op(SimNeurons, model=model, J=src, out=sig.ref(), states=states)
        if not isinstance(model, RectifiedLinear):
            g.bounded.add(sig.id)
    elif choice == 3 and src is not None:
        g.op(SimProcess, process=Lowpass(0.0), input=src, output=sig.ref())
    else:
        value = 0.0 if rng.random() < 0.5 else g.small(n)
        g.op(Reset, dst=sig.ref(), value=value)


def _inc_signal(g: _Gen, sig: Signal, level: int) -> None:
    rng = g.rng
    dst = g.target_slice(sig)
    m = dst.length
    choice = rng.integers(3)
    if choice == 0:
        src = g.source(m, level)
        if src is not None:
            g.op(Copy, src=src, dst=dst, inc=True)
    elif choice == 1:
        X = g.source(m, level)
        if X is None:
            return
        consts = [r for r, lvl in g.readable if r.signal.constant]
        if rng.random() < 0.5 and consts:
            c = consts[rng.integers(len(consts))]
            A = SignalRef(c.signal, c.start, c.start + 1) if c.length < m or rng.random() < 0.3 \
                else SignalRef(c.signal, c.start, c.start + m)
        else:
            A = g.source(m if rng.random() < 0.7 else 1, level)
        if A is not None:
            g.op(ElementwiseInc, A=A, X=X, Y=dst)
    else:
        mats = [w for w in g.matrices if w.shape[0] == m]
        if not mats:
            return
        A = mats[rng.integers(len(mats))]
        X = g.source(A.shape[1], level)
        if X is not None:
            g.op(DotInc, A=A.ref(), X=X, Y=dst)
