"""Directed acyclic graphs over unrolled latent-MDP variables, and d-separation.

Node names for the unrolled dynamic network are strings::

    g{i}@{t}   latent dimension i at slice t
    a@{t}      action taken at slice t
    r@{t}      reward paid on arrival at slice t (caused by slice t-1)
    o@{t}      observation emitted at slice t

The edge template is ``g@t -> g@t+1``, ``a@t -> g@t+1``, ``r@t -> g@t+1``,
``g@t -> o@t``, ``g@t-1 -> r@t`` and ``a@t-1 -> r@t``, each gated by the
matching structural mask.
"""

from __future__ import annotations

from collections import deque

from ..errors import ContractError, SpecError


class NodeLookupError(ContractError, LookupError):
    """A query named a node the graph does not contain."""


class CausalGraph:
    """Immutable DAG; construction rejects cycles and dangling edge endpoints."""

    def __init__(self, nodes, edges):
        self.nodes = tuple(dict.fromkeys(nodes))
        index = set(self.nodes)
        self.parents = {n: set() for n in self.nodes}
        self.children = {n: set() for n in self.nodes}
        for u, v in edges:
            if u not in index or v not in index:
                raise SpecError(f"edge {u}->{v} names an unknown node")
            if u == v:
                raise SpecError(f"self-loop on {u}")
            self.children[u].add(v)
            self.parents[v].add(u)
        self.order = self._topological_order()

    @property
    def edges(self) -> list:
        return sorted((u, v) for u in self.nodes for v in self.children[u])

    def _topological_order(self) -> tuple:
        indeg = {n: len(self.parents[n]) for n in self.nodes}
        queue = deque(n for n in self.nodes if indeg[n] == 0)
        out = []
        while queue:
            n = queue.popleft()
            out.append(n)
            for c in sorted(self.children[n]):
                indeg[c] -= 1
                if indeg[c] == 0:
                    queue.append(c)
        if len(out) != len(self.nodes):
            raise SpecError("graph contains a directed cycle")
        return tuple(out)

    def _check(self, names) -> set:
        names = {names} if isinstance(names, str) else set(names)
        unknown = names - set(self.parents)
        if unknown:
            raise NodeLookupError(f"unknown nodes: {sorted(unknown)}")
        return names

    def ancestors(self, nodes) -> set:
        """``nodes`` together with everything that has a directed path into them."""
        seen = set(self._check(nodes))
        stack = list(seen)
        while stack:
            for p in self.parents[stack.pop()]:
                if p not in seen:
                    seen.add(p)
                    stack.append(p)
        return seen

    def descendants(self, nodes) -> set:
        seen = set(self._check(nodes))
        stack = list(seen)
        while stack:
            for c in self.children[stack.pop()]:
                if c not in seen:
                    seen.add(c)
                    stack.append(c)
        return seen

    def to_dict(self) -> dict:
        return {"nodes": list(self.nodes), "edges": [list(e) for e in self.edges]}

    @classmethod
    def from_dict(cls, doc: dict) -> "CausalGraph":
        return cls(doc["nodes"], [tuple(e) for e in doc["edges"]])


def latent(i: int, t: int) -> str:
    return f"g{i}@{t}"


def unroll(masks, slices: int = 2) -> CausalGraph:
    """Dynamic network over ``slices`` time slices built from structural masks."""
    if slices < 2:
        raise SpecError("need at least two slices")
    d = masks.d
    nodes, edges = [], []
    for t in range(slices):
        nodes += [latent(i, t) for i in range(d)] + [f"o@{t}"]
        if t < slices - 1:
            nodes.append(f"a@{t}")
        if t > 0:
            nodes.append(f"r@{t}")
    for t in range(slices):
        for i in range(d):
            if masks.c_go[i]:
                edges.append((latent(i, t), f"o@{t}"))
        if t == 0:
            continue
        for i in range(d):
            for j in range(d):
                if masks.c_gg[i, j]:
                    edges.append((latent(j, t - 1), latent(i, t)))
            if masks.c_ag[i]:
                edges.append((f"a@{t - 1}", latent(i, t)))
            if masks.c_rg[i] and t >= 2:
                edges.append((f"r@{t - 1}", latent(i, t)))
            if masks.c_gr[i]:
                edges.append((latent(i, t - 1), f"r@{t}"))
        if masks.c_ar:
            edges.append((f"a@{t - 1}", f"r@{t}"))
    return CausalGraph(nodes, edges)


def d_separated(graph: CausalGraph, X, Y, Z=()) -> bool:
    """True iff every trail between ``X`` and ``Y`` is blocked given ``Z``.

    Reachability over (node, direction) states: a trail may pass a
    non-collider only when it is unobserved, and a collider only when the
    collider or one of its descendants is observed.
    """
    X, Y, Z = graph._check(X), graph._check(Y), graph._check(Z)
    if X & Y or X & Z or Y & Z:
        raise ContractError("X, Y and Z must be disjoint")
    if not X or not Y:
        return True
    opens = graph.ancestors(Z) if Z else set()
    # "up": arrived from a child (moving against edges); "down": arrived from a parent
    queue = deque((x, "up") for x in X)
    seen = set()
    while queue:
        node, way = queue.popleft()
        if (node, way) in seen:
            continue
        seen.add((node, way))
        if node not in Z and node in Y:
            return False
        if way == "up" and node not in Z:
            queue.extend((p, "up") for p in graph.parents[node])
            queue.extend((c, "down") for c in graph.children[node])
        elif way == "down":
            if node not in Z:
                queue.extend((c, "down") for c in graph.children[node])
            if node in opens:
                queue.extend((p, "up") for p in graph.parents[node])
    return True
