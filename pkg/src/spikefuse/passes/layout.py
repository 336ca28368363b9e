"""Base buffers, read blocks, meta-blocks, and signal/operator sorting."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field, replace

import numpy as np

from spikefuse.ir import Model, Operator, Signal, SignalRef
from spikefuse.passes.merge import buffer_key
from spikefuse.passes.planning import OpGroup, Plan


class LayoutError(Exception):
    pass


@dataclass(frozen=True)
class TensorSignal:
    buffer: int
    rows: tuple[int, ...]

    @property
    def contiguous(self) -> bool:
        return is_contiguous(self.rows)


def is_contiguous(rows) -> bool:
    rows = list(rows)
    return not rows or rows == list(range(rows[0], rows[0] + len(rows)))


@dataclass
class BaseBuffer:
    id: int
    elem: int
    trailing: tuple[int, ...]
    minibatched: bool
    trainable: bool
    order: list[int]
    lengths: dict[int, int]

    @property
    def total_rows(self) -> int:
        return sum(self.lengths.values())


@dataclass
class BaseBufferLayout:
    buffers: list[BaseBuffer]
    placement: dict[int, TensorSignal] = field(default_factory=dict)

    def __post_init__(self):
        if not self.placement:
            self._place()

    def _place(self) -> None:
        self.placement = {}
        for buf in self.buffers:
            row = 0
            for sid in buf.order:
                n = buf.lengths[sid]
                self.placement[sid] = TensorSignal(buf.id, tuple(range(row, row + n)))
                row += n

    def buffer_of(self, sid: int) -> BaseBuffer:
        return self.buffers[self.placement[sid].buffer]

    def rows(self, ref: SignalRef) -> tuple[int, ...]:
        return self.placement[ref.signal.id].rows[ref.start : ref.stop]

    def with_orders(self, orders: dict[int, list[int]]) -> BaseBufferLayout:
        buffers = [
            replace(b, order=list(orders.get(b.id, b.order))) for b in self.buffers
        ]
        for old, new in zip(self.buffers, buffers):
            if sorted(old.order) != sorted(new.order):
                raise LayoutError(f"reordering buffer {old.id} changed its signal set")
        return BaseBufferLayout(buffers)

    def orders(self) -> dict[int, list[int]]:
        return {b.id: list(b.order) for b in self.buffers}


def _slot_refs(op: Operator) -> list[SignalRef]:
    return list(op.operands().values())


def create_base_buffers(plan: Plan, signals: list[Signal], ops: dict[int, Operator]) -> BaseBufferLayout:
    """Pack signals accessed at the same operand position of a group into shared buffers.

    Buffers are the connected components of the "co-accessed" relation;
    signals are initially placed in id order and buffers numbered by their
    smallest signal id.
    """
    by_id = {s.id: s for s in signals}
    parent = {s.id: s.id for s in signals}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            if buffer_key(by_id[ra]) != buffer_key(by_id[rb]):
                raise LayoutError(
                    f"incompatible signals {by_id[a]!r} and {by_id[b]!r} co-accessed in one group"
                )
            parent[max(ra, rb)] = min(ra, rb)

    for group in plan.groups:
        columns = zip(*(_slot_refs(ops[m]) for m in group.members))
        for column in columns:
            first = column[0].signal.id
            for ref in column[1:]:
                union(first, ref.signal.id)

    components: dict[int, list[int]] = defaultdict(list)
    for sid in sorted(by_id):
        components[find(sid)].append(sid)
    buffers = []
    for bid, root in enumerate(sorted(components)):
        members = components[root]
        sig = by_id[members[0]]
        buffers.append(
            BaseBuffer(
                bid,
                sig.elem,
                sig.trailing,
                sig.minibatched,
                sig.trainable,
                members,
                {sid: by_id[sid].shape[0] for sid in members},
            )
        )
    return BaseBufferLayout(buffers)


@dataclass(frozen=True)
class ReadBlock:
    """The refs one group accesses at one operand position, in member order."""

    id: int
    group: int
    operand_position: int
    refs: tuple[SignalRef, ...]

    @property
    def size(self) -> int:
        return sum(r.length for r in self.refs)

    @property
    def signal_ids(self) -> list[int]:
        return list(dict.fromkeys(r.signal.id for r in self.refs))


def read_blocks(plan: Plan, ops: dict[int, Operator]) -> list[ReadBlock]:
    blocks = []
    for gi, group in enumerate(plan.groups):
        columns = zip(*(_slot_refs(ops[m]) for m in group.members))
        for pos, column in enumerate(columns):
            blocks.append(ReadBlock(len(blocks), gi, pos, tuple(column)))
    return blocks


@dataclass(frozen=True)
class MetaBlock:
    id: int
    buffer: int
    signals: tuple[int, ...]
    membership: frozenset[int]


def meta_blocks(layout: BaseBufferLayout, blocks: list[ReadBlock]) -> list[MetaBlock]:
    """Partition each buffer's signals by the set of read blocks touching them.

    Meta-blocks are numbered in (buffer, first position in current order) order;
    signals inside a meta-block keep their current relative order.
    """
    membership: dict[int, set[int]] = defaultdict(set)
    for b in blocks:
        for r in b.refs:
            membership[r.signal.id].add(b.id)
    result = []
    for buf in layout.buffers:
        classes: dict[frozenset[int], list[int]] = {}
        for sid in buf.order:
            classes.setdefault(frozenset(membership.get(sid, ())), []).append(sid)
        for members, sids in classes.items():
            result.append(MetaBlock(len(result), buf.id, tuple(sids), members))
    return result


def sort_meta_blocks(metas: list[MetaBlock], blocks: list[ReadBlock]) -> list[MetaBlock]:
    """Order meta-blocks (of one buffer) so read blocks come out as contiguous as possible.

    Starting from the largest read block, repeatedly pick the remaining
    meta-block that best continues the last one chosen, narrowing candidates by:
    containing the active read block; containing every read block of the last
    meta-block; minimal symmetric difference with the last meta-block; then
    membership of the last meta-block's read blocks from largest down.
    Remaining ties go to the lowest meta-block id.
    """
    if not metas:
        return []
    size = {b.id: b.size for b in blocks}

    def by_size(ids) -> list[int]:
        return sorted(ids, key=lambda i: (-size[i], i))

    remaining = sorted(metas, key=lambda m: m.id)
    present = set().union(*(m.membership for m in remaining))
    if not present:
        return remaining
    active = by_size(present)[0]
    current = next(m for m in remaining if active in m.membership)
    out = []
    while remaining:
        X = [m for m in remaining if active in m.membership]
        if not X:
            X = remaining
            in_c = by_size(current.membership)
            active = in_c[0] if in_c else None
        Y = [x for x in X if current.membership <= x.membership] or X
        dist = [len(y.membership ^ current.membership) for y in Y]
        Z = [y for y, d in zip(Y, dist) if d == min(dist)]
        for rb in by_size(current.membership):
            if len(Z) <= 1:
                break
            narrowed = [z for z in Z if rb in z.membership]
            if narrowed:
                Z = narrowed
        chosen = min(Z, key=lambda m: m.id)
        remaining.remove(chosen)
        out.append(chosen)
        current = chosen
    return out


def apply_meta_block_order(layout: BaseBufferLayout, blocks: list[ReadBlock]) -> tuple[BaseBufferLayout, list[MetaBlock]]:
    metas = meta_blocks(layout, blocks)
    per_buffer: dict[int, list[MetaBlock]] = defaultdict(list)
    for m in metas:
        per_buffer[m.buffer].append(m)
    used = set()
    block_buffer = {}
    for b in blocks:
        block_buffer[b.id] = layout.placement[b.refs[0].signal.id].buffer
    orders = {}
    sorted_metas = []
    for bid, ms in per_buffer.items():
        local = [b for b in blocks if block_buffer[b.id] == bid]
        ordered = sort_meta_blocks(ms, local)
        used.update(m.id for m in ordered)
        sorted_metas.extend(ordered)
        orders[bid] = [sid for m in ordered for sid in m.signals]
    assert len(used) == len(metas)
    return layout.with_orders(orders), sorted_metas


def sort_signals_operators(
    layout: BaseBufferLayout,
    plan: Plan,
    ops: dict[int, Operator],
    metas: list[MetaBlock] | None = None,
    max_passes: int = 10,
) -> tuple[BaseBufferLayout, Plan, int]:
    """Settle operator order within groups and signal order within meta-blocks.

    Read blocks are visited smallest first, so larger blocks get the final say
    each pass: a group's members are sorted to follow the block's signal
    order, then every block of that group has its signals sorted to follow the
    new member order without crossing meta-block boundaries. Stops early
    after a pass that changes nothing. Returns ``(layout, plan, passes_run)``.
    """
    blocks = read_blocks(plan, ops)
    if metas is None:
        metas = meta_blocks(layout, blocks)
    meta_of = {sid: m.id for m in metas for sid in m.signals}
    orders = layout.orders()
    buffer_of = {sid: buf for buf, order in orders.items() for sid in order}
    members = plan.member_lists()
    positions = {buf: {sid: i for i, sid in enumerate(order)} for buf, order in orders.items()}

    ordered_blocks = sorted(blocks, key=lambda b: (b.size, b.id))
    blocks_of_group: dict[int, list[ReadBlock]] = defaultdict(list)
    for b in blocks:
        blocks_of_group[b.group].append(b)

    def slot(op_id: int, pos: int) -> SignalRef:
        return _slot_refs(ops[op_id])[pos]

    passes = 0
    for _ in range(max_passes):
        passes += 1
        changed = False
        for b in ordered_blocks:
            g = b.group
            buf = buffer_of[b.refs[0].signal.id]
            pos = positions[buf]

            def row_key(op_id, p=b.operand_position, pos=pos):
                ref = slot(op_id, p)
                return (pos[ref.signal.id], ref.start)

            new_members = sorted(members[g], key=row_key)
            if new_members != members[g]:
                members[g] = new_members
                changed = True
            for c in blocks_of_group[g]:
                if _sort_block_signals(c, members[g], ops, orders, positions, buffer_of, meta_of):
                    changed = True
        if not changed:
            break

    new_plan = Plan([OpGroup(grp.kind, tuple(m)) for grp, m in zip(plan.groups, members)])
    return layout.with_orders(orders), new_plan, passes


def _sort_block_signals(block, member_order, ops, orders, positions, buffer_of, meta_of) -> bool:
    desired = list(dict.fromkeys(
        _slot_refs(ops[m])[block.operand_position].signal.id for m in member_order
    ))
    buf = buffer_of[desired[0]]
    order = orders[buf]
    pos = positions[buf]
    by_meta: dict[int, list[int]] = defaultdict(list)
    for sid in desired:
        by_meta[meta_of[sid]].append(sid)
    changed = False
    for sids in by_meta.values():
        slots = sorted(pos[s] for s in sids)
        for slot_index, sid in zip(slots, sids):
            if order[slot_index] != sid:
                order[slot_index] = sid
                pos[sid] = slot_index
                changed = True
    return changed


@dataclass(frozen=True)
class ContiguityStats:
    contiguous_read_fraction: float
    gather_row_count: int
    groups_per_step: int
    read_blocks: int


def block_rows(layout: BaseBufferLayout, block: ReadBlock) -> list[int]:
    rows: list[int] = []
    for ref in block.refs:
        rows.extend(layout.rows(ref))
    return rows


def contiguity_stats(layout: BaseBufferLayout, plan: Plan, ops: dict[int, Operator]) -> ContiguityStats:
    """Fraction of read blocks whose rows form one ascending slice, plus gather volume."""
    blocks = read_blocks(plan, ops)
    contiguous = 0
    gather_rows = 0
    for b in blocks:
        rows = block_rows(layout, b)
        if is_contiguous(rows):
            contiguous += 1
        else:
            gather_rows += len(rows)
    fraction = contiguous / len(blocks) if blocks else 1.0
    return ContiguityStats(fraction, gather_rows, len(plan), len(blocks))


def layout_signature(layout: BaseBufferLayout) -> list[list[int]]:
    return [list(b.order) for b in layout.buffers]


def as_index(rows) -> slice | np.ndarray:
    rows = list(rows)
    if is_contiguous(rows):
        return slice(rows[0], rows[0] + len(rows)) if rows else slice(0, 0)
    return np.asarray(rows, dtype=np.intp)


def model_ops(model: Model) -> dict[int, Operator]:
    return {op.id: op for op in model.operators}
