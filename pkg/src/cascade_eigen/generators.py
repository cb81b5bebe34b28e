"""Synthetic cascade sources with known ground truth.

Two worlds are provided:

* :class:`GroundTruthChain` -- a Markov chain over failure states with a
  per-state stop probability. Its continuation-conditional transition matrix
  is exactly what :func:`~cascade_eigen.interaction_graph.build_state_graph`
  estimates, which makes it the estimation oracle.
* :class:`ThresholdGrid` -- a toy load-redistribution network in which lines
  trip on overload, so capacity upgrades have a physical meaning.

Randomness is counter based: cascade ``c`` reads a fixed block of the Philox
stream keyed by ``seed``, so any split of the work reproduces the same dataset.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import TextIO

import numpy as np
from numpy.random import Generator, Philox
from scipy.special import ndtri

from .cascade_data import Cascade, CascadeDataset

__all__ = [
    "GroundTruthChain",
    "ThresholdGrid",
    "sample_cascades",
    "conditional_transition_matrix",
    "apply_chain_mitigation",
    "decouple_chain",
    "absorb_chain",
    "exact_ending_distribution",
    "enumerate_path_endings",
    "simulate_grid_cascades",
    "upgrade_capacities",
    "read_chain",
    "write_chain",
    "read_grid",
    "write_grid",
]

NORM_TOL = 1e-12
_MASK64 = (1 << 64) - 1


def _round4(n: int) -> int:
    return -(-n // 4) * 4


def _uniform_block(seed: int, start: int, count: int, width: int) -> np.ndarray:
    """Rows ``start .. start+count-1`` of the per-cascade uniform table.

    ``width`` is a multiple of 4; Philox emits four doubles per counter step.
    """
    bitgen = Philox(key=int(seed) & _MASK64, counter=[start * width // 4, 0, 0, 0])
    return Generator(bitgen).random((count, width))


@dataclass(frozen=True, eq=False)
class GroundTruthChain:
    """Generative failure-state chain.

    ``transitions[i, j]`` is P(next = j | current = i, cascade continues);
    rows of states with ``stop == 1`` are ignored.
    """

    states: tuple
    initial: np.ndarray
    stop: np.ndarray
    transitions: np.ndarray

    def __post_init__(self):
        states = tuple(tuple(sorted(set(int(c) for c in s))) for s in self.states)
        if any(not s for s in states):
            raise ValueError("chain states must be non-empty")
        if len(set(states)) != len(states):
            raise ValueError("chain states must be distinct")
        n = len(states)
        initial = np.asarray(self.initial, dtype=float)
        stop = np.asarray(self.stop, dtype=float)
        T = np.asarray(self.transitions, dtype=float)
        if initial.shape != (n,) or stop.shape != (n,) or T.shape != (n, n):
            raise ValueError("initial/stop/transitions shapes do not match states")
        if (initial < 0).any() or abs(initial.sum() - 1) > NORM_TOL:
            raise ValueError(f"initial distribution sums to {initial.sum()!r}")
        if (stop < 0).any() or (stop > 1).any():
            raise ValueError("stop probabilities must lie in [0, 1]")
        if (T < 0).any():
            raise ValueError("negative transition probability")
        live = stop < 1
        rowsum = T.sum(axis=1)
        bad = np.flatnonzero(live & (np.abs(rowsum - 1) > NORM_TOL))
        if bad.size:
            raise ValueError(f"continuation row {bad[0]} sums to {rowsum[bad[0]]!r}")
        for name, arr in (("states", states), ("initial", initial), ("stop", stop), ("transitions", T)):
            if isinstance(arr, np.ndarray):
                arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return len(self.states)

    def index(self, state) -> int:
        return self.states.index(tuple(sorted(state)))


def conditional_transition_matrix(chain: GroundTruthChain) -> np.ndarray:
    """Left-stochastic matrix over chain states; terminal states self-loop."""
    W = np.array(chain.transitions.T, dtype=float)
    for i in np.flatnonzero(chain.stop >= 1):
        W[:, i] = 0.0
        W[i, i] = 1.0
    return W


def _sample_chunk(chain, start, count, seed, max_generations, cdf_init, cdf_next):
    width = _round4(2 * max_generations - 1)
    u = _uniform_block(seed, start, count, width)
    hist = np.full((count, max_generations), -1, dtype=np.intp)
    cur = (u[:, :1] >= cdf_init[None, :]).sum(axis=1)
    hist[:, 0] = cur
    alive = np.ones(count, dtype=bool)
    for t in range(1, max_generations):
        alive &= u[:, 2 * t - 1] >= chain.stop[cur]
        if not alive.any():
            break
        rows = np.flatnonzero(alive)
        nxt = (u[rows, 2 * t, None] >= cdf_next[cur[rows]]).sum(axis=1)
        cur = cur.copy()
        cur[rows] = nxt
        hist[rows, t] = nxt
    out = []
    for r in range(count):
        row = hist[r]
        length = int((row >= 0).sum())
        out.append(Cascade(start + r, tuple(chain.states[s] for s in row[:length])))
    return out


def _guarded_cdf(p: np.ndarray) -> np.ndarray:
    """Cumulative sums with everything from the last positive entry on set to 2.

    Counting ``u >= cdf`` then never lands on a zero-probability tail state.
    """
    cdf = np.cumsum(p, axis=-1)
    p2 = np.atleast_2d(p)
    c2 = np.atleast_2d(cdf)
    for r in range(p2.shape[0]):
        pos = np.flatnonzero(p2[r] > 0)
        last = pos[-1] if pos.size else 0
        c2[r, last:] = 2.0
    return c2.reshape(cdf.shape)


def sample_cascades(
    chain: GroundTruthChain,
    M: int,
    seed: int,
    max_generations: int = 50,
    workers: int = 1,
    chunk_size: int = 8192,
) -> CascadeDataset:
    """Draw ``M`` cascades from ``chain``.

    Cascade ``c`` starts from ``initial``; after each generation it stops with
    the current state's stop probability, otherwise moves along
    ``transitions``. Cascades are cut at ``max_generations`` generations.
    Single-generation cascades are kept.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    if max_generations < 2:
        raise ValueError("max_generations must be >= 2")
    cdf_init = _guarded_cdf(chain.initial)
    cdf_next = _guarded_cdf(chain.transitions)
    starts = range(0, M, chunk_size)

    def run(start):
        return _sample_chunk(
            chain, start, min(chunk_size, M - start), seed, max_generations, cdf_init, cdf_next
        )

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, starts))
    else:
        parts = [run(s) for s in starts]
    return CascadeDataset(tuple(c for part in parts for c in part))


def _scale_inbound(chain, target, source, rho):
    if not 0 <= rho <= 1:
        raise ValueError("reduction factor must be in [0, 1]")
    # unconditional next-step probabilities
    U = (1 - chain.stop)[:, None] * chain.transitions
    U[np.ix_(source, target)] *= 1 - rho
    # only rows that actually lose mass are rewritten; the rest stay bit-exact
    touched = source & (chain.stop < 1) & (chain.transitions[:, target].sum(axis=1) > 0)
    if rho == 0 or not touched.any():
        return chain
    go = U.sum(axis=1)
    stop = np.array(chain.stop)
    T = np.array(chain.transitions)
    rows = touched & (go > 0)
    stop[touched] = np.clip(1 - go[touched], 0.0, 1.0)
    T[rows] = U[rows] / go[rows, None]
    stop[touched & ~(go > 0)] = 1.0
    return replace(chain, stop=stop, transitions=T)


def apply_chain_mitigation(chain: GroundTruthChain, targeted_components, rho: float) -> GroundTruthChain:
    """Scale every transition into a state containing a targeted component by ``1 - rho``.

    The removed probability becomes extra stop probability of the source.
    """
    comps = set(targeted_components)
    target = np.array([bool(comps.intersection(s)) for s in chain.states])
    return _scale_inbound(chain, target, np.ones(chain.n, dtype=bool), rho)


def decouple_chain(chain: GroundTruthChain, states, rho: float) -> GroundTruthChain:
    """Chain-world counterpart of graph decoupling.

    Transitions from outside the state set into it are scaled by ``1 - rho``;
    the removed mass ends the cascade.
    """
    idx = {chain.index(s) for s in states}
    target = np.array([i in idx for i in range(chain.n)])
    return _scale_inbound(chain, target, ~target, rho)


def absorb_chain(chain: GroundTruthChain, states) -> GroundTruthChain:
    """Make the given states terminal (stop probability one)."""
    stop = np.array(chain.stop)
    for s in states:
        stop[chain.index(s)] = 1.0
    return replace(chain, stop=stop)


def exact_ending_distribution(chain: GroundTruthChain, max_generations: int = 50) -> np.ndarray:
    """``P(ending generation = g)`` for ``g < max_generations`` by forward recursion."""
    p = np.array(chain.initial, dtype=float)
    out = np.zeros(max_generations)
    for g in range(max_generations):
        if g == max_generations - 1:
            out[g] = p.sum()
            break
        out[g] = p @ chain.stop
        p = (p * (1 - chain.stop)) @ chain.transitions
    return out


def enumerate_path_endings(chain: GroundTruthChain, depth: int, max_generations: int = 50):
    """Exhaustively enumerate state paths up to ``depth`` transitions.

    Returns
    -------
    endings : ndarray, shape (depth,)
        ``endings[g]`` = P(cascade ends at generation g), for g < depth.
    tail : float
        P(ending generation >= depth), i.e. probability of paths still alive
        after ``depth`` transitions.
    """
    endings = np.zeros(depth)
    tail = 0.0
    succ = [
        [(j, float(chain.transitions[i, j])) for j in np.flatnonzero(chain.transitions[i] > 0)]
        for i in range(chain.n)
    ]
    stop = [float(s) for s in chain.stop]

    stack = [(int(s), 0, float(p)) for s in np.flatnonzero(chain.initial > 0) for p in [chain.initial[s]]]
    while stack:
        s, g, prob = stack.pop()
        if g == depth:
            tail += prob
            continue
        if g == max_generations - 1:
            endings[g] += prob
            continue
        endings[g] += prob * stop[s]
        go = prob * (1 - stop[s])
        if go > 0:
            for j, pj in succ[s]:
                stack.append((j, g + 1, go * pj))
    return endings, tail


# -- chain files -----------------------------------------------------------


def write_chain(chain: GroundTruthChain, out: TextIO) -> None:
    rec = {
        "states": [list(s) for s in chain.states],
        "initial": chain.initial.tolist(),
        "stop": chain.stop.tolist(),
        "transitions": chain.transitions.tolist(),
    }
    json.dump(rec, out)
    out.write("\n")


def read_chain(stream: TextIO) -> GroundTruthChain:
    rec = json.load(stream)
    return GroundTruthChain(
        tuple(tuple(s) for s in rec["states"]),
        np.array(rec["initial"], dtype=float),
        np.array(rec["stop"], dtype=float),
        np.array(rec["transitions"], dtype=float),
    )


# -- threshold grid ----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ThresholdGrid:
    """Lines with per-unit load and capacity; a tripped line's load moves to
    its surviving neighbors, split equally and scaled by ``alpha``."""

    line_ids: tuple
    load: np.ndarray
    capacity: np.ndarray
    neighbors: dict = field(repr=False)
    alpha: float = 1.0

    def __post_init__(self):
        ids = tuple(int(i) for i in self.line_ids)
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate line id")
        load = np.asarray(self.load, dtype=float)
        cap = np.asarray(self.capacity, dtype=float)
        if load.shape != (len(ids),) or cap.shape != (len(ids),):
            raise ValueError("load/capacity length must match line_ids")
        if (load < 0).any() or (cap <= 0).any():
            raise ValueError("loads must be >= 0 and capacities > 0")
        if (load > cap).any():
            raise ValueError("initial load exceeds capacity")
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must be in (0, 1]")
        known = set(ids)
        nbrs = {int(k): frozenset(int(x) for x in v) for k, v in self.neighbors.items()}
        for k in ids:
            nbrs.setdefault(k, frozenset())
        for k, vs in nbrs.items():
            if k not in known or not vs <= known:
                raise ValueError(f"adjacency of line {k} references unknown lines")
            if k in vs:
                raise ValueError(f"line {k} is adjacent to itself")
            for v in vs:
                if k not in nbrs[v]:
                    raise ValueError(f"adjacency not symmetric between {k} and {v}")
        object.__setattr__(self, "line_ids", ids)
        object.__setattr__(self, "load", load)
        object.__setattr__(self, "capacity", cap)
        object.__setattr__(self, "neighbors", nbrs)

    @property
    def n(self) -> int:
        return len(self.line_ids)


def _grid_cascade(grid, pos, nbr_idx, u, jitter, max_generations):
    n = grid.n
    z = ndtri(u[1 : n + 1]) if jitter else np.zeros(n)
    load = grid.load * np.maximum(0.0, 1.0 + jitter * z)
    first = min(int(u[0] * n), n - 1)
    failed = np.zeros(n, dtype=bool)
    failed[first] = True
    gens = [[first]]
    while len(gens) < max_generations:
        for f in gens[-1]:
            alive = [k for k in nbr_idx[f] if not failed[k]]
            if alive:
                load[alive] += grid.alpha * load[f] / len(alive)
        nxt = np.flatnonzero(~failed & (load > grid.capacity))
        if nxt.size == 0:
            break
        failed[nxt] = True
        gens.append(nxt.tolist())
    return tuple(tuple(grid.line_ids[k] for k in g) for g in gens)


def simulate_grid_cascades(
    grid: ThresholdGrid,
    M: int,
    seed: int,
    load_jitter: float = 0.0,
    max_generations: int = 50,
) -> CascadeDataset:
    """Trip one uniformly random line per cascade and propagate overloads.

    Loads are first jittered multiplicatively with relative standard deviation
    ``load_jitter`` (clamped at zero). Each generation, every newly tripped
    line hands ``alpha`` times its load to its surviving neighbors in equal
    shares (dropped if none survive); surviving lines above capacity trip next.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    pos = {k: i for i, k in enumerate(grid.line_ids)}
    nbr_idx = [sorted(pos[v] for v in grid.neighbors[k]) for k in grid.line_ids]
    width = _round4(grid.n + 1)
    cascades = []
    chunk = 4096
    for start in range(0, M, chunk):
        count = min(chunk, M - start)
        u = _uniform_block(seed, start, count, width)
        for r in range(count):
            gens = _grid_cascade(grid, pos, nbr_idx, u[r], load_jitter, max_generations)
            cascades.append(Cascade(start + r, gens))
    return CascadeDataset(tuple(cascades))


def upgrade_capacities(grid: ThresholdGrid, lines, factor: float = 1.2) -> ThresholdGrid:
    """Multiply the capacity of each listed line by ``factor``."""
    if factor <= 0:
        raise ValueError("factor must be positive")
    pos = {k: i for i, k in enumerate(grid.line_ids)}
    cap = np.array(grid.capacity)
    for k in lines:
        if k not in pos:
            raise KeyError(f"unknown line id {k}")
        cap[pos[k]] *= factor
    return replace(grid, capacity=cap)


def write_grid(grid: ThresholdGrid, out: TextIO) -> None:
    rec = {
        "alpha": grid.alpha,
        "lines": [
            {
                "line_id": k,
                "load": float(grid.load[i]),
                "capacity": float(grid.capacity[i]),
                "neighbors": sorted(grid.neighbors[k]),
            }
            for i, k in enumerate(grid.line_ids)
        ],
    }
    json.dump(rec, out, indent=1)
    out.write("\n")


def read_grid(stream: TextIO) -> ThresholdGrid:
    rec = json.load(stream)
    lines = rec["lines"]
    return ThresholdGrid(
        tuple(r["line_id"] for r in lines),
        np.array([r["load"] for r in lines], dtype=float),
        np.array([r["capacity"] for r in lines], dtype=float),
        {r["line_id"]: r["neighbors"] for r in lines},
        float(rec.get("alpha", 1.0)),
    )
