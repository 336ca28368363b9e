"""The optimization pipeline: simplify -> plan -> base buffers -> sort."""

from __future__ import annotations

from dataclasses import dataclass

from spikefuse.ir import DependencyGraph, Model, Operator, build_dependency_graph
from spikefuse.passes.layout import (
    BaseBufferLayout,
    ContiguityStats,
    apply_meta_block_order,
    contiguity_stats,
    create_base_buffers,
    read_blocks,
    sort_signals_operators,
)
from spikefuse.passes.planning import Plan, plan_greedy, plan_tree_search, plan_unmerged, validate_plan
from spikefuse.passes.simplify import simplify

PLANNERS = ("greedy", "tree", "transitive")


@dataclass(frozen=True)
class PipelineConfig:
    simplify: bool = True
    planner: str = "tree"
    tree_depth: int = 3
    sort: bool = True
    merge: bool = True
    max_sort_passes: int = 10

    def __post_init__(self):
        if self.planner not in PLANNERS:
            raise ValueError(f"unknown planner {self.planner!r}; choose from {PLANNERS}")
        if self.tree_depth < 1:
            raise ValueError("tree_depth must be >= 1")

    def as_dict(self) -> dict:
        return {
            "simplify": self.simplify,
            "planner": self.planner,
            "tree_depth": self.tree_depth,
            "sort": self.sort,
            "merge": self.merge,
        }


@dataclass
class OptimizedModel:
    model: Model
    graph: DependencyGraph
    plan: Plan
    layout: BaseBufferLayout
    config: PipelineConfig
    sort_passes: int = 0

    @property
    def ops(self) -> dict[int, Operator]:
        return self.graph.ops

    def stats(self) -> ContiguityStats:
        return contiguity_stats(self.layout, self.plan, self.ops)


def make_plan(ops: list[Operator], graph: DependencyGraph, config: PipelineConfig) -> Plan:
    if not config.merge:
        return plan_unmerged(ops, graph)
    if config.planner == "greedy":
        return plan_greedy(ops, graph)
    if config.planner == "tree":
        return plan_tree_search(ops, graph, config.tree_depth)
    raise NotImplementedError("the transitive-closure planner is reserved but not implemented")


def optimize(model: Model, config: PipelineConfig = PipelineConfig()) -> OptimizedModel:
    ops = simplify(model.operators) if config.simplify else list(model.operators)
    model = model.replace_operators(ops)
    graph = build_dependency_graph(ops)
    plan = make_plan(ops, graph, config)
    validate_plan(plan, graph)
    layout = create_base_buffers(plan, model.signals, graph.ops)
    passes = 0
    if config.sort and config.merge:
        layout, metas = apply_meta_block_order(layout, read_blocks(plan, graph.ops))
        layout, plan, passes = sort_signals_operators(
            layout, plan, graph.ops, metas, config.max_sort_passes
        )
        validate_plan(plan, graph)
    return OptimizedModel(model, graph, plan, layout, config, passes)
