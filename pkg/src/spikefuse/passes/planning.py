"""Execution planning: ordering operators into merged groups."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

from spikefuse.ir import DependencyGraph, Operator, toposort_schedule
from spikefuse.passes.merge import merge_signature


class PlanError(Exception):
    pass


@dataclass(frozen=True)
class OpGroup:
    kind: str
    members: tuple[int, ...]

    def __len__(self):
        return len(self.members)


@dataclass
class Plan:
    groups: list[OpGroup] = field(default_factory=list)

    def __len__(self):
        return len(self.groups)

    def __iter__(self):
        return iter(self.groups)

    def group_index(self) -> dict[int, int]:
        return {m: gi for gi, g in enumerate(self.groups) for m in g.members}

    def member_lists(self) -> list[list[int]]:
        return [list(g.members) for g in self.groups]


def validate_plan(plan: Plan, graph: DependencyGraph) -> None:
    """Raise :class:`PlanError` unless the plan covers every op once and respects all edges."""
    where: dict[int, int] = {}
    for gi, group in enumerate(plan.groups):
        kinds = {graph.ops[m].kind for m in group.members}
        if kinds != {group.kind}:
            raise PlanError(f"group {gi} mixes kinds {sorted(kinds)}")
        for m in group.members:
            if m in where:
                raise PlanError(f"operator {m} scheduled twice")
            where[m] = gi
    missing = set(graph.ops) - set(where)
    if missing:
        raise PlanError(f"operators never scheduled: {sorted(missing)}")
    for a, succs in graph.succ.items():
        for b in succs:
            if where[a] >= where[b]:
                raise PlanError(f"edge {a}->{b} violated (groups {where[a]}, {where[b]})")


class _Frontier:
    """Ready-set bookkeeping with undoable scheduling steps.

    Ready operators have no unscheduled predecessors, hence are pairwise
    independent; among them mergeability reduces to equal signatures.
    """

    def __init__(self, graph: DependencyGraph):
        self.graph = graph
        self.signature = {i: merge_signature(op) for i, op in graph.ops.items()}
        self.indeg = {i: len(p) for i, p in graph.pred.items()}
        self.buckets: dict[tuple, set[int]] = defaultdict(set)
        for i, d in self.indeg.items():
            if d == 0:
                self.buckets[self.signature[i]].add(i)
        self.remaining = len(graph.ops)

    def groups(self) -> list[tuple[int, ...]]:
        return [tuple(sorted(b)) for b in self.buckets.values() if b]

    def apply(self, members: tuple[int, ...]) -> list[int]:
        sig = self.signature[members[0]]
        self.buckets[sig].difference_update(members)
        self.remaining -= len(members)
        released = []
        for m in members:
            for s in self.graph.succ[m]:
                self.indeg[s] -= 1
                if self.indeg[s] == 0:
                    released.append(s)
                    self.buckets[self.signature[s]].add(s)
        return released

    def undo(self, members: tuple[int, ...], released: list[int]) -> None:
        for s in released:
            self.buckets[self.signature[s]].discard(s)
        for m in members:
            for s in self.graph.succ[m]:
                self.indeg[s] += 1
        self.buckets[self.signature[members[0]]].update(members)
        self.remaining += len(members)


def _make_group(graph: DependencyGraph, members: tuple[int, ...]) -> OpGroup:
    return OpGroup(graph.ops[members[0]].kind, members)


def _pick_key(score: tuple[int, int], members: tuple[int, ...]) -> tuple:
    return (*score, len(members), -members[0])


def plan_greedy(ops: list[Operator], graph: DependencyGraph) -> Plan:
    """Repeatedly schedule the largest ready mergeable group."""
    return _lookahead(graph, depth=1)


def plan_tree_search(
    ops: list[Operator], graph: DependencyGraph, depth: int = 3, guard: bool = True
) -> Plan:
    """Bounded lookahead planner.

    Every candidate sequence of up to ``depth`` group choices is scored by the
    number of operators it schedules, and among equal totals by how few groups
    it needs; the first group of the best sequence is committed (ties: larger
    first group, then lower smallest member id).
    ``depth=1`` is the greedy planner.

    Lookahead is not monotone: on some graphs it ends with more groups than
    greedy. With ``guard`` the greedy plan is returned in that case.
    """
    plan = _lookahead(graph, depth)
    if guard and depth > 1:
        greedy = _lookahead(graph, 1)
        if len(greedy) < len(plan):
            return greedy
    return plan


def _lookahead(graph: DependencyGraph, depth: int) -> Plan:
    if depth < 1:
        raise ValueError("tree search depth must be >= 1")
    frontier = _Frontier(graph)
    plan = Plan()

    # scores are (operators scheduled, -groups used)
    def best_total(remaining_depth: int) -> tuple[int, int]:
        if remaining_depth == 0 or frontier.remaining == 0:
            return (0, 0)
        best = (0, 0)
        for members in frontier.groups():
            released = frontier.apply(members)
            total, neg_steps = best_total(remaining_depth - 1)
            frontier.undo(members, released)
            best = max(best, (len(members) + total, neg_steps - 1))
            if best == (frontier.remaining, -1):
                break
        return best

    while frontier.remaining:
        options = frontier.groups()
        if not options:
            raise PlanError("no schedulable operators left; graph has a cycle")
        best_key, best_members = None, None
        for members in options:
            if depth > 1:
                released = frontier.apply(members)
                total, neg_steps = best_total(depth - 1)
                frontier.undo(members, released)
                score = (len(members) + total, neg_steps - 1)
            else:
                score = (len(members), -1)
            key = _pick_key(score, members)
            if best_key is None or key > best_key:
                best_key, best_members = key, members
        frontier.apply(best_members)
        plan.groups.append(_make_group(graph, best_members))
    return plan


def plan_unmerged(ops: list[Operator], graph: DependencyGraph) -> Plan:
    """One singleton group per operator, in reference (toposort) order."""
    return Plan([_make_group(graph, (i,)) for i in toposort_schedule(graph)])
