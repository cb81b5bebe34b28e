"""State-based stochastic interaction graph.

Each vertex is the full set of components failed in one generation. An edge
``i -> j`` carries ``w_ji``, the empirical probability that state ``j`` is the
next generation given state ``i``. Vertices with no observed successor are
absorbing and get a self-loop of weight one, so every column of the matrix
``W[j, i] = w_ji`` sums to one.

Weights are kept as :class:`fractions.Fraction` so graphs built from counts,
and graphs edited with rational factors, stay exact.
"""

from __future__ import annotations

import csv
import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import TextIO

import numpy as np

from .cascade_data import CascadeDataset, dataset_stats

__all__ = [
    "InteractionGraph",
    "ComponentGraph",
    "ConsistencyError",
    "build_state_graph",
    "stochastic_matrix",
    "build_component_graph",
    "absorb_state",
    "decouple_subgraph",
    "induced_subgraph",
    "write_graph",
    "read_graph",
    "write_matrix_csv",
]

State = tuple  # sorted tuple of component ids


class ConsistencyError(RuntimeError):
    """A matrix or graph violates column stochasticity."""


def _frac(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(x)


@dataclass(frozen=True)
class InteractionGraph:
    """Directed graph over failure states.

    Attributes
    ----------
    vertices : tuple of State
        ``vertices[i]`` is the component set of vertex ``i`` (0-based here,
        1-based in every file and report).
    weights : dict
        ``(src, dst) -> w_{dst,src}`` for every edge, exact.
    counts : dict
        ``(src, dst) -> n_{dst,src}``, observed consecutive-pair counts. Edited
        graphs keep the counts of the graph they came from.
    absorbing : frozenset of int
    """

    vertices: tuple
    weights: dict = field(repr=False)
    counts: dict = field(repr=False)
    absorbing: frozenset

    def __post_init__(self):
        n = len(self.vertices)
        col = defaultdict(Fraction)
        for (i, j), w in self.weights.items():
            if not (0 <= i < n and 0 <= j < n):
                raise ConsistencyError(f"edge ({i}, {j}) outside vertex range")
            if w <= 0 or w > 1:
                raise ConsistencyError(f"edge ({i}, {j}) has weight {w}")
            col[i] += w
        bad = [i for i in range(n) if col[i] != 1]
        if bad:
            raise ConsistencyError(f"out-weights of vertex {bad[0]} sum to {col[bad[0]]}")

    @property
    def n(self) -> int:
        return len(self.vertices)

    @cached_property
    def index(self) -> dict:
        return {s: i for i, s in enumerate(self.vertices)}

    @property
    def edge_count(self) -> int:
        return len(self.weights)

    @property
    def self_loop_count(self) -> int:
        return sum(1 for i, j in self.weights if i == j)

    def out_edges(self, i: int) -> dict:
        """``{dst: weight}`` for edges leaving ``i``."""
        return {j: w for (s, j), w in self.weights.items() if s == i}

    def weight(self, src: int, dst: int) -> Fraction:
        return self.weights.get((src, dst), Fraction(0))

    def components(self, vertices) -> set:
        return {c for v in vertices for c in self.vertices[v]}


def build_state_graph(ds: CascadeDataset) -> InteractionGraph:
    """Estimate the state graph from consecutive generations of every cascade.

    ``w_ji = n_ji / sum_j n_ji``, and a vertex with no observed successor gets
    a self-loop of weight one. Vertices are numbered by first appearance
    (cascade order, then generation order).
    """
    if len(ds) == 0:
        raise ValueError("empty dataset")
    index = {}
    counts = Counter()
    for cas in ds.cascades:
        prev = None
        for gen in cas.generations:
            cur = index.setdefault(gen, len(index))
            if prev is not None:
                counts[prev, cur] += 1
            prev = cur
    vertices = tuple(index)
    totals = Counter()
    for (i, _), n in counts.items():
        totals[i] += n
    weights = {(i, j): Fraction(n, totals[i]) for (i, j), n in sorted(counts.items())}
    absorbing = frozenset(i for i in range(len(vertices)) if totals[i] == 0)
    for k in sorted(absorbing):
        weights[k, k] = Fraction(1)
    return InteractionGraph(vertices, weights, dict(sorted(counts.items())), absorbing)


def stochastic_matrix(g: InteractionGraph, tol: float = 1e-9) -> np.ndarray:
    """Dense left-stochastic matrix with ``W[j, i] = w_ji``."""
    W = np.zeros((g.n, g.n))
    for (i, j), w in g.weights.items():
        W[j, i] = float(w)
    sums = W.sum(axis=0)
    bad = np.flatnonzero(np.abs(sums - 1.0) > tol)
    if bad.size:
        raise ConsistencyError(f"column {bad[0]} of W sums to {sums[bad[0]]!r}")
    return W


@dataclass(frozen=True)
class ComponentGraph:
    """Component-level baseline graph (not stochastic).

    ``w_ji = (# consecutive-generation pairs with i in g and j in g+1) /
    (# generations in which i failed)``.
    """

    pair_counts: dict
    frequency: dict

    @property
    def vertices(self) -> tuple:
        return tuple(sorted(self.frequency))

    @cached_property
    def weights(self) -> dict:
        return {
            (i, j): Fraction(n, self.frequency[i])
            for (i, j), n in sorted(self.pair_counts.items())
        }

    def weight(self, src, dst) -> Fraction:
        return self.weights.get((src, dst), Fraction(0))


def build_component_graph(ds: CascadeDataset) -> ComponentGraph:
    if len(ds) == 0:
        raise ValueError("empty dataset")
    pairs = Counter()
    for cas in ds.cascades:
        for cur, nxt in zip(cas.generations, cas.generations[1:]):
            for i in cur:
                for j in nxt:
                    pairs[i, j] += 1
    freq = dataset_stats(ds).component_failure_frequency
    return ComponentGraph(dict(pairs), dict(freq))


def absorb_state(g: InteractionGraph, vertex: int) -> InteractionGraph:
    """Turn ``vertex`` into an absorbing state: its column becomes ``e_vertex``."""
    if not 0 <= vertex < g.n:
        raise IndexError(f"vertex {vertex} out of range")
    weights = {e: w for e, w in g.weights.items() if e[0] != vertex}
    weights[vertex, vertex] = Fraction(1)
    return InteractionGraph(
        g.vertices, dict(sorted(weights.items())), g.counts, g.absorbing | {vertex}
    )


def decouple_subgraph(g: InteractionGraph, subgraph, factor) -> InteractionGraph:
    """Weaken links flowing into ``subgraph`` from the rest of the graph.

    Every edge from a source outside the subgraph into a subgraph vertex is
    scaled by ``1 - factor``. The removed mass is spread over the source's
    other out-edges in proportion to their weights. A source whose out-edges
    all led into the subgraph keeps the removed mass as a self-loop, so with
    ``factor = 1`` it becomes absorbing.
    """
    sub = set(subgraph)
    if not sub:
        raise ValueError("subgraph must be non-empty")
    if not sub <= set(range(g.n)):
        raise IndexError("subgraph vertex out of range")
    rho = _frac(factor)
    if not 0 <= rho <= 1:
        raise ValueError("factor must be in [0, 1]")
    weights = dict(g.weights)
    absorbing = set(g.absorbing)
    by_src = defaultdict(dict)
    for (i, j), w in g.weights.items():
        by_src[i][j] = w
    for i, out in by_src.items():
        if i in sub:
            continue
        inbound = sum((w for j, w in out.items() if j in sub), Fraction(0))
        if inbound == 0 or rho == 0:
            continue
        removed = rho * inbound
        rest = {j: w for j, w in out.items() if j not in sub}
        rest_total = sum(rest.values(), Fraction(0))
        for j in out:
            if j in sub:
                w = out[j] * (1 - rho)
                if w:
                    weights[i, j] = w
                else:
                    del weights[i, j]
        if rest_total:
            for j, w in rest.items():
                weights[i, j] = w + removed * w / rest_total
        else:
            weights[i, i] = weights.get((i, i), Fraction(0)) + removed
            if weights[i, i] == 1:
                absorbing.add(i)
    return InteractionGraph(
        g.vertices, dict(sorted(weights.items())), g.counts, frozenset(absorbing)
    )


def induced_subgraph(g: InteractionGraph, vertices) -> dict:
    """Edges of ``g`` whose endpoints both lie in ``vertices``, original weights."""
    keep = set(vertices)
    return {(i, j): w for (i, j), w in g.weights.items() if i in keep and j in keep}


# -- serialization ---------------------------------------------------------


def write_graph(g: InteractionGraph, out: TextIO) -> None:
    """Graph file: vertex ids are 1-based; weights printed with 17 digits."""
    edges = []
    for (i, j), w in sorted(g.weights.items()):
        edges.append(
            {
                "src": i + 1,
                "dst": j + 1,
                "count": g.counts.get((i, j), 0),
                "weight": float(format(float(w), ".17g")),
                "exact": f"{w.numerator}/{w.denominator}",
            }
        )
    rec = {
        "vertices": [list(v) for v in g.vertices],
        "edges": edges,
        "absorbing": [k + 1 for k in sorted(g.absorbing)],
    }
    json.dump(rec, out, indent=1)
    out.write("\n")


def read_graph(stream: TextIO) -> InteractionGraph:
    rec = json.load(stream)
    vertices = tuple(tuple(v) for v in rec["vertices"])
    weights, counts = {}, {}
    for e in rec["edges"]:
        key = (e["src"] - 1, e["dst"] - 1)
        weights[key] = Fraction(e["exact"]) if "exact" in e else Fraction(e["weight"]).limit_denominator(10**12)
        if e.get("count"):
            counts[key] = e["count"]
    absorbing = frozenset(k - 1 for k in rec["absorbing"])
    return InteractionGraph(vertices, weights, counts, absorbing)


def write_matrix_csv(W: np.ndarray, out: TextIO) -> None:
    """Row-major CSV; the first line holds N."""
    out.write(f"{W.shape[0]}\n")
    w = csv.writer(out, lineterminator="\n")
    for row in W:
        w.writerow([format(x, ".17g") for x in row])
