import itertools

import numpy as np
import pytest
from instances import const, elementwise_pair, lookahead_ops, interleaved_blocks, vec

from spikefuse.ir import (
    Copy,
    DotInc,
    ElementwiseInc,
    Reset,
    Signal,
    SimNeurons,
    SimProcess,
    build_dependency_graph,
)
from spikefuse.neurons import RectifiedLinear
from spikefuse.passes import (
    OpGroup,
    Plan,
    PlanError,
    PipelineConfig,
    Reachability,
    apply_meta_block_order,
    contiguity_stats,
    create_base_buffers,
    meta_blocks,
    mergeable,
    optimize,
    plan_greedy,
    plan_tree_search,
    plan_unmerged,
    read_blocks,
    simplify,
    sort_meta_blocks,
    sort_signals_operators,
    validate_plan,
)
from spikefuse.passes.layout import block_rows, is_contiguous
from spikefuse.randmodel import random_model
from spikefuse.reference import compare, run_reference
from spikefuse.synapses import Lowpass


class TestSimplify:
    def test_multiply_by_one_becomes_copy(self):
        x, y = vec(0, 3), vec(1, 3)
        ones = const(2, [1.0, 1.0, 1.0])
        (op,) = simplify([ElementwiseInc(5, A=ones.ref(), X=x.ref(), Y=y.ref())])
        assert isinstance(op, Copy) and op.inc and op.id == 5
        assert op.src == x.ref() and op.dst == y.ref()

    def test_broadcast_one_becomes_copy(self):
        x, y = vec(0, 3), vec(1, 3)
        (op,) = simplify([ElementwiseInc(0, A=const(2, [1.0]).ref(), X=x.ref(), Y=y.ref())])
        assert isinstance(op, Copy)

    def test_constant_copy_becomes_reset(self):
        c, y = const(0, [3.0]), vec(1)
        (op,) = simplify([Copy(0, src=c.ref(), dst=y.ref(), inc=False)])
        assert isinstance(op, Reset)
        np.testing.assert_array_equal(op.value, [3.0])

    def test_constant_slice_transported(self):
        c, y = const(0, [1.0, 2.0, 3.0]), vec(1, 2)
        (op,) = simplify([Copy(0, src=c[1:3], dst=y.ref(), inc=False)])
        np.testing.assert_array_equal(op.value, [2.0, 3.0])

    def test_chained_rewrite_reaches_fixpoint(self):
        # ones * const -> Copy(inc) from a constant; inc copies stay copies
        c, y = const(0, [2.0]), vec(1)
        ones = const(2, [1.0])
        ops = simplify([ElementwiseInc(0, A=ones.ref(), X=c.ref(), Y=y.ref())])
        assert isinstance(ops[0], Copy) and ops[0].inc

    def test_zero_multiply_removed(self):
        x, y = vec(0, 2), vec(1, 2)
        zeros = const(2, [0.0, 0.0])
        Z = Signal(3, (2, 2), initial=0.0, constant=True)
        ops = [
            Reset(0, dst=y.ref()),
            ElementwiseInc(1, A=zeros.ref(), X=x.ref(), Y=y.ref()),
            DotInc(2, A=Z.ref(), X=x.ref(), Y=y.ref()),
        ]
        assert [op.id for op in simplify(ops)] == [0]

    def test_no_pattern_identity(self):
        x, y = vec(0, 2), vec(1, 2)
        ops = [Reset(0, dst=x.ref(), value=1.0), Copy(1, src=x.ref(), dst=y.ref())]
        assert simplify(ops) == ops

    def test_nonconstant_not_rewritten(self):
        a, x, y = vec(0, 2, initial=[1.0, 1.0]), vec(1, 2), vec(2, 2)
        ops = [ElementwiseInc(0, A=a.ref(), X=x.ref(), Y=y.ref())]
        assert simplify(ops) == ops

    def test_semantics_preserved(self):
        x = vec(0, 2)
        y, z = vec(1, 2), vec(2, 2)
        c, ones = const(3, [0.5, -0.5]), const(4, [1.0, 1.0])
        ops = [
            Reset(0, dst=x.ref(), value=[2.0, 3.0]),
            Copy(1, src=c.ref(), dst=y.ref()),
            ElementwiseInc(2, A=ones.ref(), X=x.ref(), Y=y.ref()),
            Copy(3, src=y.ref(), dst=z.ref()),
        ]
        from spikefuse.ir import Model

        model = Model([x, y, z, c, ones], ops, {"z": z.ref()})
        a = run_reference(model, 5)
        b = run_reference(model.replace_operators(simplify(ops)), 5)
        np.testing.assert_array_equal(a["z"], b["z"])


class TestMergeable:
    def test_independent_pair(self):
        ops = {op.id: op for op in elementwise_pair().operators}
        g = build_dependency_graph(ops.values())
        assert mergeable(ops[2], ops[3], g)

    def test_dependent_dotincs(self):
        A = Signal(0, (2, 2), initial=np.eye(2), constant=True)
        x, y, z = vec(1, 2), vec(2, 2), vec(3, 2)
        d0 = DotInc(0, A=A.ref(), X=x.ref(), Y=y.ref())
        d1 = DotInc(1, A=A.ref(), X=y.ref(), Y=z.ref())
        g = build_dependency_graph([d0, d1])
        assert not mergeable(d0, d1, g)

    def test_transitive_dependency(self):
        a, b, c, d = (vec(i) for i in range(4))
        ops = [Copy(0, src=a.ref(), dst=b.ref()), Copy(1, src=b.ref(), dst=c.ref()),
               Copy(2, src=c.ref(), dst=d.ref())]
        g = build_dependency_graph(ops)
        assert Reachability(g).reaches(0, 2)
        assert not mergeable(ops[0], ops[2], g)

    def test_kind_mismatch(self):
        x, y = vec(0, 2), vec(1, 2)
        A = Signal(2, (2, 2), constant=True)
        ops = [Copy(0, src=x.ref(), dst=y.ref(), inc=True),
               DotInc(1, A=A.ref(), X=x.ref(), Y=y.ref())]
        assert not mergeable(*ops, build_dependency_graph(ops))

    def test_parameters_must_match(self):
        x, y, u, v = (vec(i, 2) for i in range(4))
        ops = [SimProcess(0, process=Lowpass(0.01), input=x.ref(), output=y.ref()),
               SimProcess(1, process=Lowpass(0.02), input=u.ref(), output=v.ref())]
        assert not mergeable(*ops, build_dependency_graph(ops))
        J1, o1, J2, o2 = (vec(10 + i, 2) for i in range(4))
        ops = [SimNeurons(0, model=RectifiedLinear(), J=J1.ref(), out=o1.ref()),
               SimNeurons(1, model=RectifiedLinear(amplitude=2.0), J=J2.ref(), out=o2.ref())]
        assert not mergeable(*ops, build_dependency_graph(ops))

    def test_trailing_shape_must_match(self):
        A1, A2 = Signal(0, (2, 3), constant=True), Signal(1, (2, 4), constant=True)
        x1, x2, y1, y2 = vec(2, 3), vec(3, 4), vec(4, 2), vec(5, 2)
        ops = [DotInc(0, A=A1.ref(), X=x1.ref(), Y=y1.ref()),
               DotInc(1, A=A2.ref(), X=x2.ref(), Y=y2.ref())]
        assert not mergeable(*ops, build_dependency_graph(ops))


class TestPlanning:
    def test_lookahead_instance_greedy(self):
        _, ops = lookahead_ops()
        plan = plan_greedy(ops, build_dependency_graph(ops))
        assert [g.members for g in plan.groups] == [(0, 1), (2,), (3,)]

    @pytest.mark.parametrize("depth", [2, 3, 4])
    def test_lookahead_instance_tree(self, depth):
        _, ops = lookahead_ops()
        plan = plan_tree_search(ops, build_dependency_graph(ops), depth)
        assert [g.members for g in plan.groups] == [(2,), (0, 1, 3)]

    def test_independent_ops_single_group(self):
        ops = [Reset(i, dst=vec(i, 2).ref(), value=float(i)) for i in range(6)]
        plan = plan_greedy(ops, build_dependency_graph(ops))
        assert [g.members for g in plan.groups] == [tuple(range(6))]

    def test_chain_one_group_each(self):
        sigs = [vec(i) for i in range(6)]
        ops = [Copy(i, src=sigs[i].ref(), dst=sigs[i + 1].ref()) for i in range(5)]
        g = build_dependency_graph(ops)
        for plan in (plan_greedy(ops, g), plan_tree_search(ops, g, 3)):
            assert [grp.members for grp in plan.groups] == [(i,) for i in range(5)]

    def test_single_operator(self):
        ops = [Reset(0, dst=vec(0).ref())]
        g = build_dependency_graph(ops)
        for n in (1, 2, 3):
            assert [grp.members for grp in plan_tree_search(ops, g, n).groups] == [(0,)]

    def test_greedy_tie_break_lowest_id(self):
        x = [vec(i) for i in range(4)]
        A = Signal(9, (1, 1), constant=True)
        ops = [Copy(5, src=x[0].ref(), dst=x[1].ref()),
               DotInc(2, A=A.ref(), X=x[2].ref(), Y=x[3].ref())]
        plan = plan_greedy(ops, build_dependency_graph(ops))
        assert [g.members for g in plan.groups] == [(2,), (5,)]

    def test_depth_one_is_greedy(self):
        for seed in range(20):
            m = random_model(seed)
            g = build_dependency_graph(m.operators)
            assert plan_tree_search(m.operators, g, 1).groups == plan_greedy(m.operators, g).groups

    def test_tree_never_worse_than_greedy(self):
        for seed in range(40):
            m = random_model(seed)
            g = build_dependency_graph(m.operators)
            greedy = len(plan_greedy(m.operators, g))
            for depth in (2, 3):
                assert len(plan_tree_search(m.operators, g, depth)) <= greedy

    def test_unguarded_lookahead_can_lose(self):
        # the guard exists because plain lookahead is not monotone in depth
        m = random_model(70)
        g = build_dependency_graph(m.operators)
        greedy = len(plan_greedy(m.operators, g))
        assert len(plan_tree_search(m.operators, g, 2, guard=False)) > greedy
        assert len(plan_tree_search(m.operators, g, 2)) == greedy

    def test_plans_valid(self):
        for seed in range(20):
            m = random_model(seed)
            g = build_dependency_graph(m.operators)
            for plan in (plan_greedy(m.operators, g), plan_tree_search(m.operators, g, 3),
                         plan_unmerged(m.operators, g)):
                validate_plan(plan, g)
                reach = Reachability(g)
                for grp in plan.groups:
                    for a, b in itertools.combinations(grp.members, 2):
                        assert mergeable(g.ops[a], g.ops[b], g, reach)

    def test_validate_plan_rejects_edge_violation(self):
        sigs = [vec(i) for i in range(3)]
        ops = [Copy(0, src=sigs[0].ref(), dst=sigs[1].ref()),
               Copy(1, src=sigs[1].ref(), dst=sigs[2].ref())]
        g = build_dependency_graph(ops)
        with pytest.raises(PlanError):
            validate_plan(Plan([OpGroup("Copy", (1,)), OpGroup("Copy", (0,))]), g)
        with pytest.raises(PlanError):
            validate_plan(Plan([OpGroup("Copy", (0,))]), g)

    def test_invalid_depth(self):
        with pytest.raises(ValueError):
            plan_tree_search([], build_dependency_graph([]), 0)


class TestBaseBuffers:
    def test_pair_buffers(self):
        model = elementwise_pair()
        ops = {op.id: op for op in model.operators}
        plan = plan_greedy(model.operators, build_dependency_graph(model.operators))
        layout = create_base_buffers(plan, model.signals, ops)
        groups = sorted(sorted(b.order) for b in layout.buffers)
        assert groups == [[0, 1], [2, 3], [4, 5]]

    def test_singletons(self):
        sigs = [vec(0), vec(1)]
        ops = [Copy(0, src=sigs[0].ref(), dst=sigs[1].ref())]
        plan = plan_greedy(ops, build_dependency_graph(ops))
        layout = create_base_buffers(plan, sigs, {0: ops[0]})
        assert [b.order for b in layout.buffers] == [[0], [1]]

    def test_incompatible_trailing_separate(self):
        a, b = Signal(0, (10, 5), minibatched=True), Signal(1, (10, 6), minibatched=True)
        ops = [Reset(0, dst=a.ref()), Reset(1, dst=b.ref())]
        plan = plan_greedy(ops, build_dependency_graph(ops))
        assert len(plan) == 2
        layout = create_base_buffers(plan, [a, b], {op.id: op for op in ops})
        assert len(layout.buffers) == 2

    def test_placement_tiles_buffer(self):
        m = random_model(3)
        opt = optimize(m)
        for buf in opt.layout.buffers:
            rows = sorted(r for sid in buf.order for r in opt.layout.placement[sid].rows)
            assert rows == list(range(buf.total_rows))
            keys = {(m.signal(s).trailing, m.signal(s).elem, m.signal(s).minibatched,
                     m.signal(s).trainable) for s in buf.order}
            assert len(keys) == 1

    def test_initial_id_order(self):
        model = interleaved_blocks()
        plan = plan_greedy(model.operators, build_dependency_graph(model.operators))
        layout = create_base_buffers(plan, model.signals, {op.id: op for op in model.operators})
        assert layout.buffers[0].order == [0, 1, 2, 3]


def _sorted_layout(model, sort=True):
    return optimize(model, PipelineConfig(sort=sort, simplify=False))


class TestSorting:
    def test_pair_single_gather(self):
        opt = _sorted_layout(elementwise_pair())
        assert [g.kind for g in opt.plan.groups] == ["Reset", "ElementwiseInc"]
        for block in read_blocks(opt.plan, opt.ops):
            assert is_contiguous(block_rows(opt.layout, block))

    def test_interleaved_contiguity(self):
        before = _sorted_layout(interleaved_blocks(), sort=False).stats()
        after = _sorted_layout(interleaved_blocks()).stats()
        assert before.contiguous_read_fraction < 1.0
        assert after.contiguous_read_fraction == 1.0
        assert after.gather_row_count == 0

    def test_single_block_meta(self):
        model = elementwise_pair()
        opt = _sorted_layout(model, sort=False)
        blocks = read_blocks(opt.plan, opt.ops)
        metas = meta_blocks(opt.layout, blocks)
        buf0 = [m for m in metas if m.buffer == opt.layout.placement[0].buffer]
        assert len(buf0) == 1
        assert sort_meta_blocks(buf0, blocks) == buf0

    def test_meta_block_partition(self):
        opt = _sorted_layout(random_model(11), sort=False)
        blocks = read_blocks(opt.plan, opt.ops)
        metas = meta_blocks(opt.layout, blocks)
        seen = [s for m in metas for s in m.signals]
        assert sorted(seen) == sorted(opt.layout.placement)
        membership = {}
        for b in blocks:
            for r in b.refs:
                membership.setdefault(r.signal.id, set()).add(b.id)
        for m in metas:
            for s in m.signals:
                assert membership.get(s, set()) == set(m.membership)

    @pytest.mark.parametrize("k", [2, 3, 4])
    def test_disjoint_blocks_adjacent_for_all_orders(self, k):
        # k groups (distinct neuron models, so unmergeable) each reading 2 signals
        # of one buffer; a merged Reset ties all 2k signals into that buffer
        n = 2 * k
        s = [vec(i, 1) for i in range(n)]
        outs = [vec(n + i, 1) for i in range(n)]
        ops = [Reset(i, dst=s[i].ref()) for i in range(n)]
        for i in range(n):
            model = RectifiedLinear(amplitude=1.0 + i // 2)
            ops.append(SimNeurons(n + i, model=model, J=s[i].ref(), out=outs[i].ref()))
        from spikefuse.ir import Model

        base = Model(s + outs, ops)
        graph = build_dependency_graph(ops)
        plan = plan_greedy(ops, graph)
        layout0 = create_base_buffers(plan, base.signals, graph.ops)
        buf = layout0.placement[0].buffer
        blocks = read_blocks(plan, graph.ops)
        pairs = [list(range(2 * j, 2 * j + 2)) for j in range(k)]
        for perm in itertools.permutations(range(k)):
            order = [sid for j in perm for sid in reversed(pairs[j])]
            layout = layout0.with_orders({buf: order})
            sorted_layout, metas = apply_meta_block_order(layout, blocks)
            assert sorted(m.id for m in metas) == sorted(m.id for m in meta_blocks(layout, blocks))
            final = sorted_layout.buffers[buf].order
            for pair in pairs:
                idx = sorted(final.index(sid) for sid in pair)
                assert idx[1] - idx[0] == 1

    def test_operator_sort_moves_operator(self):
        # signals placed 4,1,2,3: reordering the group makes the read in-order
        xs = [vec(i, 1) for i in range(1, 5)]
        ys = [vec(10 + i, 1) for i in range(1, 5)]
        consts = [const(20 + i, [float(i + 2)]) for i in range(1, 5)]
        ops = [ElementwiseInc(i, A=consts[i].ref(), X=xs[i].ref(), Y=ys[i].ref())
               for i in range(4)]
        graph = build_dependency_graph(ops)
        plan = plan_greedy(ops, graph)
        layout = create_base_buffers(plan, xs + ys + consts, graph.ops)
        bx = layout.placement[1].buffer
        layout = layout.with_orders({bx: [4, 1, 2, 3]})
        x_block = [b for b in read_blocks(plan, graph.ops) if b.operand_position == 1][0]
        assert not is_contiguous(block_rows(layout, x_block))
        new_layout, new_plan, passes = sort_signals_operators(layout, plan, graph.ops)
        new_x = [b for b in read_blocks(new_plan, graph.ops) if b.operand_position == 1][0]
        assert is_contiguous(block_rows(new_layout, new_x))
        stats = contiguity_stats(new_layout, new_plan, graph.ops)
        assert stats.contiguous_read_fraction == 1.0
        assert passes == 2

    def test_operator_sort_fixpoint_one_pass(self):
        opt = _sorted_layout(elementwise_pair())
        layout, plan, passes = sort_signals_operators(opt.layout, opt.plan, opt.ops)
        assert passes == 1 and plan.groups == opt.plan.groups
        assert layout.orders() == opt.layout.orders()

    def test_conflicting_groups_larger_block_wins(self):
        # G1 pairs p1-q1, p2-q2; G2 pairs p1-q2, p2-q1 (plus p3-q3), so both
        # groups cannot read P and Q in order; the larger G2 should win
        p = [vec(i, 1) for i in range(3)]
        q = [const(3 + i, [float(i + 2)]) for i in range(3)]
        y = [vec(6 + i, 1) for i in range(2)]
        z = [Signal(8 + i, (1,), trainable=True) for i in range(3)]
        ops = [
            ElementwiseInc(0, A=q[0].ref(), X=p[0].ref(), Y=y[0].ref()),
            ElementwiseInc(1, A=q[1].ref(), X=p[1].ref(), Y=y[1].ref()),
            ElementwiseInc(2, A=q[1].ref(), X=p[0].ref(), Y=z[0].ref()),
            ElementwiseInc(3, A=q[0].ref(), X=p[1].ref(), Y=z[1].ref()),
            ElementwiseInc(4, A=q[2].ref(), X=p[2].ref(), Y=z[2].ref()),
        ]
        from spikefuse.ir import Model

        opt = optimize(Model(p + q + y + z, ops), PipelineConfig(simplify=False))
        assert sorted(len(g) for g in opt.plan.groups) == [2, 3]
        blocks = read_blocks(opt.plan, opt.ops)
        big = [b for b in blocks if len(opt.plan.groups[b.group]) == 3]
        small = [b for b in blocks if len(opt.plan.groups[b.group]) == 2]
        assert all(is_contiguous(block_rows(opt.layout, b)) for b in big)
        assert not all(is_contiguous(block_rows(opt.layout, b)) for b in small)

    def test_sort_preserves_buffers_and_meta_order(self):
        for seed in range(10):
            m = random_model(seed)
            unsorted = _sorted_layout(m, sort=False)
            opt = _sorted_layout(m)
            before = {sid: ts.buffer for sid, ts in unsorted.layout.placement.items()}
            after = {sid: ts.buffer for sid, ts in opt.layout.placement.items()}
            assert before == after

    def test_permutation_oracle_single_block(self):
        # one group of 8 copies; only the identity placement reads in order
        src = [vec(i, 1) for i in range(8)]
        dst = [vec(8 + i, 1) for i in range(8)]
        ops = [Copy(i, src=src[i].ref(), dst=dst[i].ref()) for i in range(8)]
        graph = build_dependency_graph(ops)
        plan = plan_greedy(ops, graph)
        layout = create_base_buffers(plan, src + dst, graph.ops)
        block = read_blocks(plan, graph.ops)[0]
        buf = layout.placement[0].buffer
        contiguous = 0
        fractions = set()
        for perm in itertools.permutations(range(8)):
            lay = layout.with_orders({buf: list(perm)})
            if is_contiguous(block_rows(lay, block)):
                contiguous += 1
            else:
                fractions.add(contiguity_stats(lay, plan, graph.ops).contiguous_read_fraction)
        assert contiguous == 1
        assert fractions == {0.5}

    def test_all_singletons_fraction_one(self):
        sigs = [vec(i) for i in range(4)]
        ops = [Copy(0, src=sigs[0].ref(), dst=sigs[1].ref()),
               Copy(1, src=sigs[1].ref(), dst=sigs[2].ref())]
        graph = build_dependency_graph(ops)
        plan = plan_unmerged(ops, graph)
        layout = create_base_buffers(plan, sigs, graph.ops)
        assert contiguity_stats(layout, plan, graph.ops).contiguous_read_fraction == 1.0


class TestPipeline:
    def test_config_defaults(self):
        assert PipelineConfig().as_dict() == {
            "simplify": True, "planner": "tree", "tree_depth": 3, "sort": True, "merge": True
        }

    def test_transitive_reserved(self):
        with pytest.raises(NotImplementedError):
            optimize(elementwise_pair(), PipelineConfig(planner="transitive"))

    def test_unknown_planner(self):
        with pytest.raises(ValueError):
            PipelineConfig(planner="magic")

    @pytest.mark.parametrize("seed", range(8))
    def test_passes_preserve_reference_semantics(self, seed):
        m = random_model(seed)
        base = run_reference(m, 50)
        for cfg in (PipelineConfig(), PipelineConfig(merge=False)):
            opt = optimize(m, cfg)
            ordered = [opt.ops[i] for grp in opt.plan.groups for i in grp.members]
            out = run_reference(opt.model.replace_operators(ordered), 50)
            assert compare(out, base).max_abs_err < 1e-12
