import dataclasses

import numpy as np
import pytest
from instances import const, connection_chain, vec

from spikefuse.ir import Copy, Model, Signal, SimPES, SimProcess, TimeUpdate
from spikefuse.randmodel import random_model
from spikefuse.reference import CompareError, compare, run_reference
from spikefuse.synapses import Lowpass


class TestCompare:
    def test_self_comparison(self):
        out = run_reference(random_model(0), 20)
        rep = compare(out, out)
        assert rep.ok and rep.max_abs_err == 0.0 and rep.max_rel_err == 0.0

    def test_single_perturbation_located(self):
        a = {"p": np.zeros((2, 5, 3))}
        b = {"p": np.zeros((2, 5, 3))}
        a["p"][1, 3, 2] = 1e-3
        rep = compare(a, b)
        assert not rep.ok and rep.max_abs_err == pytest.approx(1e-3)
        assert (rep.first_divergence.batch, rep.first_divergence.step,
                rep.first_divergence.dim) == (1, 3, 2)
        assert compare(a, b, abs_tol=1e-2).ok

    def test_relative_tolerance(self):
        a, b = {"p": np.full((1, 1, 1), 1.01)}, {"p": np.ones((1, 1, 1))}
        assert not compare(a, b, rel_tol=1e-3).ok
        assert compare(a, b, rel_tol=0.02).ok

    def test_nan_handling(self):
        a = {"p": np.array([[[np.nan]]])}
        assert compare(a, a).ok
        assert not compare(a, {"p": np.zeros((1, 1, 1))}).ok

    def test_mismatched_keys_or_shapes(self):
        with pytest.raises(CompareError):
            compare({"a": np.zeros((1, 1, 1))}, {"b": np.zeros((1, 1, 1))})
        with pytest.raises(CompareError):
            compare({"a": np.zeros((1, 1, 1))}, {"a": np.zeros((1, 2, 1))})


class TestSemantics:
    def test_filtered_chain_closed_form(self):
        tau, dt, steps = 0.01, 0.001, 30
        out = run_reference(connection_chain(tau), steps)
        a = np.exp(-dt / tau)
        target = np.array([[1.0, 2.0], [3.0, 4.0], [0.5, 0.5]]) @ np.array([0.5, -1.0])
        k = np.arange(1, steps + 1)[:, None]
        np.testing.assert_allclose(out["f"][0], (1 - a**k) * target, rtol=1e-12, atol=1e-15)
        # the copy reads the filter before its update
        np.testing.assert_allclose(out["y"][0], (1 - a**(k - 1)) * target, rtol=1e-12, atol=1e-15)

    def test_passthrough_is_immediate(self):
        out = run_reference(connection_chain(0.0), 2)
        np.testing.assert_allclose(out["y"][0, 0], [-1.5, -2.5, -0.25])

    def test_updates_double_buffered(self):
        # two updaters read each other's targets; both see start-of-step values
        a, b = vec(0, 1, initial=[1.0]), vec(1, 1, initial=[0.0])
        W = Signal(2, (1, 1), initial=[[0.0]], trainable=True)
        ops = [
            SimProcess(0, process=Lowpass(0.001), input=a.ref(), output=b.ref()),
            SimPES(1, pre=b.ref(), error=a.ref(), weights=W.ref(), learning_rate=1.0, dt=0.001),
        ]
        out = run_reference(Model([a, b, W], ops, {"b": b.ref(), "W": W.ref()}), 1)
        assert out["W"][0, 0, 0] == 0.0  # pre was 0 at the start of the step
        assert out["b"][0, 0, 0] == pytest.approx(1 - np.exp(-1.0))

    def test_zero_operator_constant_probe(self):
        c = const(0, [2.0, 3.0])
        out = run_reference(Model([c], [], {"c": c.ref()}), 3)
        np.testing.assert_array_equal(out["c"], np.tile([2.0, 3.0], (1, 3, 1)))

    def test_time_update(self):
        step, t = vec(0, 1, minibatched=False), vec(1, 1, minibatched=False)
        m = Model([step, t], [TimeUpdate(0, step=step.ref(), time=t.ref(), dt=0.001)],
                  {"t": t.ref(), "n": step.ref()})
        out = run_reference(m, 3)
        np.testing.assert_allclose(out["t"][0, :, 0], [0.001, 0.002, 0.003])
        np.testing.assert_array_equal(out["n"][0, :, 0], [1, 2, 3])

    def test_zero_steps_rejected(self):
        with pytest.raises(ValueError):
            run_reference(connection_chain(), 0)

    def test_batch_rows_independent(self):
        m = random_model(1)
        if not m.feeds:
            m = random_model(7)
        rng = np.random.default_rng(0)
        feeds = {sid: rng.uniform(-1, 1, (3, 10, slot.size)) for sid, slot in m.feeds.items()}
        batched = run_reference(m, 10, feeds)
        for b in range(3):
            row = run_reference(m, 10, {k: v[b:b + 1] for k, v in feeds.items()})
            for key in row:
                np.testing.assert_array_equal(batched[key][b], row[key][0])


@pytest.mark.parametrize("seed", range(5))
def test_relabeling_invariance(seed):
    m = random_model(seed)
    perm = np.random.default_rng(seed).permutation(len(m.operators))
    ops = [dataclasses.replace(op, id=int(perm[op.id])) for op in m.operators]
    relabeled = Model(m.signals, ops[::-1], m.probes, m.feeds, m.dt)
    a, b = run_reference(m, 30), run_reference(relabeled, 30)
    # accumulation order may differ, so only rounding-level differences are allowed
    assert compare(a, b).max_abs_err < 1e-12


def test_copy_slice_semantics():
    s, d = vec(0, 4, initial=[1.0, 2.0, 3.0, 4.0]), vec(1, 2)
    m = Model([s, d], [Copy(0, src=s[1:3], dst=d.ref())], {"d": d.ref()})
    np.testing.assert_array_equal(run_reference(m, 1)["d"][0, 0], [2.0, 3.0])
