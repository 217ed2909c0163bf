"""Compact / non-compact latent dims and the minimal sufficient set for control."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ..errors import ContractError
from .graph import CausalGraph, unroll


class DegenerateStructureWarning(UserWarning):
    """No latent dimension can influence any future reward."""


@dataclass(frozen=True)
class CompactPartition:
    compact: frozenset
    non_compact: frozenset

    def __post_init__(self):
        if self.compact & self.non_compact:
            raise ContractError("compact and non-compact sets overlap")

    @property
    def d(self) -> int:
        return len(self.compact) + len(self.non_compact)

    def to_dict(self) -> dict:
        return {"compact": sorted(self.compact), "non_compact": sorted(self.non_compact)}


def compact_partition(masks) -> CompactPartition:
    """Dim i is compact iff it reaches the observation, the reward or another latent dim.

    A self-transition alone does not make a dimension compact: it keeps the
    dimension's own memory but informs nothing else.
    """
    d = masks.d
    off_diag = masks.c_gg * (1 - np.eye(d, dtype=np.int8))
    hit = (masks.c_go == 1) | (masks.c_gr == 1) | (off_diag.any(axis=0))
    comp = frozenset(int(i) for i in np.flatnonzero(hit))
    return CompactPartition(comp, frozenset(range(d)) - comp)


def _dim_of(node: str) -> int | None:
    if node.startswith("g") and "@" in node:
        return int(node[1:node.index("@")])
    return None


def minimal_sufficient_set(graph) -> frozenset:
    """Latent dims with a directed path to some future reward.

    ``graph`` is a :class:`CausalGraph` from :func:`unroll` or a masks object
    (unrolled here over ``d + 1`` slices, enough for any latent chain to
    reach a reward). Emits :class:`DegenerateStructureWarning` when the set
    is empty.
    """
    if not isinstance(graph, CausalGraph):
        graph = unroll(graph, graph.d + 1)
    rewards = [n for n in graph.nodes if n.startswith("r@")]
    if not rewards:
        raise ContractError("graph has no reward node")
    dims = frozenset(_dim_of(n) for n in graph.ancestors(rewards) if _dim_of(n) is not None)
    if not dims:
        warnings.warn("no latent dimension reaches the reward; minimal set is empty",
                      DegenerateStructureWarning, stacklevel=2)
    return dims
