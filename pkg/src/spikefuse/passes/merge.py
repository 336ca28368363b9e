"""Mergeability analysis."""

from __future__ import annotations

from spikefuse.ir import DependencyGraph, Operator, Signal, toposort_schedule


def buffer_key(sig: Signal) -> tuple:
    """Signals sharing a base buffer must agree on this key."""
    return (sig.trailing, sig.elem, sig.minibatched, sig.trainable)


def merge_signature(op: Operator) -> tuple:
    """Operators with equal signatures can run as one kernel (if independent)."""
    return (
        op.kind,
        op.merge_key(),
        tuple(buffer_key(ref.signal) for ref in op.operands().values()),
    )


class Reachability:
    """Transitive closure of a dependency graph as per-node bitsets."""

    def __init__(self, graph: DependencyGraph):
        order = toposort_schedule(graph)
        self.index = {op_id: i for i, op_id in enumerate(order)}
        self.reach: dict[int, int] = {}
        for op_id in reversed(order):
            bits = 0
            for s in graph.succ[op_id]:
                bits |= (1 << self.index[s]) | self.reach[s]
            self.reach[op_id] = bits

    def reaches(self, a: int, b: int) -> bool:
        return bool(self.reach[a] >> self.index[b] & 1)

    def dependent(self, a: int, b: int) -> bool:
        return self.reaches(a, b) or self.reaches(b, a)


def mergeable(
    a: Operator,
    b: Operator,
    graph: DependencyGraph,
    reach: Reachability | None = None,
) -> bool:
    """Same kind, parameters and operand layouts, and neither depends on the other."""
    if a.id == b.id:
        raise ValueError("an operator is not mergeable with itself")
    if merge_signature(a) != merge_signature(b):
        return False
    reach = reach if reach is not None else Reachability(graph)
    return not reach.dependent(a.id, b.id)
