"""Causal-structure tools: d-separation, compact states, pruning checks, identification."""

from .graph import CausalGraph, NodeLookupError, d_separated, latent, unroll
from .identify import (LatentRollouts, RelaxedEstimate, StructureEstimate, edge_f1,
                       false_positives, identify_structure, identify_structure_relaxed,
                       reg_penalty, simulate)
from .prune import (PruneReport, counterexample_spec, greedy, prune_invariance_check,
                    sign_states, tabular_q)
from .report import write_report
from .structure import (CompactPartition, DegenerateStructureWarning, compact_partition,
                        minimal_sufficient_set)

__all__ = [
    "CausalGraph", "NodeLookupError", "d_separated", "latent", "unroll",
    "LatentRollouts", "RelaxedEstimate", "StructureEstimate", "edge_f1", "false_positives",
    "identify_structure", "identify_structure_relaxed", "reg_penalty", "simulate",
    "PruneReport", "counterexample_spec", "greedy", "prune_invariance_check", "sign_states",
    "tabular_q", "write_report",
    "CompactPartition", "DegenerateStructureWarning", "compact_partition", "minimal_sufficient_set",
]
