from spikefuse.passes.layout import (
    BaseBuffer,
    BaseBufferLayout,
    ContiguityStats,
    MetaBlock,
    ReadBlock,
    TensorSignal,
    apply_meta_block_order,
    contiguity_stats,
    create_base_buffers,
    meta_blocks,
    read_blocks,
    sort_meta_blocks,
    sort_signals_operators,
)
from spikefuse.passes.merge import Reachability, merge_signature, mergeable
from spikefuse.passes.pipeline import OptimizedModel, PipelineConfig, optimize
from spikefuse.passes.planning import (
    OpGroup,
    Plan,
    PlanError,
    plan_greedy,
    plan_tree_search,
    plan_unmerged,
    validate_plan,
)
from spikefuse.passes.simplify import simplify

__all__ = [
    "BaseBuffer",
    "BaseBufferLayout",
    "ContiguityStats",
    "MetaBlock",
    "OpGroup",
    "OptimizedModel",
    "PipelineConfig",
    "Plan",
    "PlanError",
    "Reachability",
    "ReadBlock",
    "TensorSignal",
    "apply_meta_block_order",
    "contiguity_stats",
    "create_base_buffers",
    "merge_signature",
    "mergeable",
    "meta_blocks",
    "optimize",
    "plan_greedy",
    "plan_tree_search",
    "plan_unmerged",
    "read_blocks",
    "simplify",
    "sort_meta_blocks",
    "sort_signals_operators",
    "validate_plan",
]
