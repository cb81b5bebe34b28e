"""Small reference datasets, chains and grids used by tests and examples."""

from __future__ import annotations

import numpy as np

from .cascade_data import CascadeDataset
from .generators import GroundTruthChain, ThresholdGrid

__all__ = [
    "three_line_dataset",
    "two_cascade_dataset",
    "cycle_with_leak_matrix",
    "corridor_chain",
    "CORRIDOR_RING",
    "CORRIDOR_CYCLE",
    "path_grid",
    "mesh_grid",
    "six_state_chain",
    "random_binary_stop_chain",
]


def three_line_dataset() -> CascadeDataset:
    """Four cascades over lines 1-3; line 1 and 3 fail together once."""
    return CascadeDataset.from_lists([
        [[1], [3], [2]],
        [[2], [1, 3]],
        [[2], [1]],
        [[3], [2]],
    ])


def two_cascade_dataset() -> CascadeDataset:
    """Two cascades sharing their initial failure {3}."""
    return CascadeDataset.from_lists([
        [[3], [4], [2, 3]],
        [[3], [6], [1, 2, 3]],
    ])


def cycle_with_leak_matrix(stay: float = 0.8) -> np.ndarray:
    """States a -> b -> c -> a with probability ``stay``; the rest leaks to absorbing d."""
    W = np.zeros((4, 4))
    for src, dst in ((0, 1), (1, 2), (2, 0)):
        W[dst, src] = stay
        W[3, src] = 1 - stay
    W[3, 3] = 1.0
    return W


# Corridor chain layout (indices into corridor_chain().states)
CORRIDOR_RING = tuple(range(0, 6))
CORRIDOR_CYCLE = tuple(range(6, 9))
_ENTRIES = tuple(range(9, 15))
_RING_EXITS = tuple(range(15, 27))
_OTHER_EXITS = tuple(range(27, 30))


def corridor_chain() -> GroundTruthChain:
    """30-state chain with a slow-decaying corridor.

    * ring states 0-5 (lines 0-5): circulant moves forward 0.45, skip 0.2,
      back 0.2; each leaks 0.075 to two private exits. Perron root 0.85.
    * cycle states 6-8 (lines 6-8): 6 -> 7 -> 8 -> 6 with 0.7, leak 0.1 to
      each of the three shared exits. Eigenvalues 0.7 and 0.7 at +-120 deg.
    * entry states 9-14 (two lines each) start every cascade.
    * exit states 15-29 (two lines each) are terminal.
    """
    states = [(k,) for k in range(6)] + [(6,), (7,), (8,)]
    states += [(10 + 2 * k, 11 + 2 * k) for k in range(6)]
    states += [(30 + 2 * k, 31 + 2 * k) for k in range(15)]
    n = len(states)
    T = np.zeros((n, n))
    for i in range(6):
        T[i, (i + 1) % 6] = 0.45
        T[i, (i + 2) % 6] = 0.2
        T[i, (i - 1) % 6] = 0.2
        T[i, _RING_EXITS[2 * i]] = 0.075
        T[i, _RING_EXITS[2 * i + 1]] = 0.075
    for a, b in ((6, 7), (7, 8), (8, 6)):
        T[a, b] = 0.7
        for x in _OTHER_EXITS:
            T[a, x] = 0.1
    x12, x13, x14 = _OTHER_EXITS
    e = _ENTRIES
    T[e[0], [0, x12]] = [0.5, 0.5]
    T[e[1], [2, 6, x13]] = [0.4, 0.2, 0.4]
    T[e[2], [4, x14]] = [0.5, 0.5]
    T[e[3], [6, x12]] = [0.4, 0.6]
    T[e[4], [1, x13]] = [0.3, 0.7]
    T[e[5], [3, 7, x14]] = [0.4, 0.1, 0.5]
    stop = np.zeros(n)
    stop[list(_RING_EXITS + _OTHER_EXITS)] = 1.0
    initial = np.zeros(n)
    initial[list(e)] = 1 / 6
    initial /= initial.sum()
    return GroundTruthChain(tuple(states), initial, stop, T)


def six_state_chain() -> GroundTruthChain:
    """Small chain with intermediate stop probabilities and a 2-cycle."""
    states = ((1,), (2,), (3,), (1, 2), (4,), (5,))
    T = np.array([
        [0.0, 0.6, 0.4, 0.0, 0.0, 0.0],
        [0.3, 0.0, 0.0, 0.5, 0.2, 0.0],
        [0.0, 0.5, 0.0, 0.0, 0.0, 0.5],
        [0.0, 0.0, 0.0, 0.0, 0.7, 0.3],
        [0.0, 0.0, 0.0, 0.0, 0.0, 1.0],
        [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    ])
    stop = np.array([0.1, 0.2, 0.3, 0.4, 0.5, 1.0])
    initial = np.array([0.5, 0.2, 0.3, 0.0, 0.0, 0.0])
    return GroundTruthChain(states, initial, stop, T)


def random_binary_stop_chain(n_states: int = 10, seed: int = 0, n_terminal: int = 3) -> GroundTruthChain:
    """Random chain whose stop probabilities are all 0 or 1.

    The last ``n_terminal`` states are terminal; every other state reaches a
    terminal one with probability at least 0.25 per step so cascades stay short.
    """
    rng = np.random.default_rng(seed)
    n = n_states
    live = n - n_terminal
    T = np.zeros((n, n))
    for i in range(live):
        k = rng.integers(2, 4)
        dst = rng.choice(np.delete(np.arange(n), i), size=k, replace=False)
        w = rng.dirichlet(np.ones(k))
        T[i, dst] = w
        if not (dst >= live).any():
            T[i] *= 0.75
            T[i, live + rng.integers(n_terminal)] += 0.25
    stop = np.zeros(n)
    stop[live:] = 1.0
    initial = np.zeros(n)
    initial[:live] = rng.dirichlet(np.ones(live))
    states = tuple((k,) if k < n // 2 else (k, k + 100) for k in range(n))
    return GroundTruthChain(states, initial, stop, T)


def path_grid(middle_load: float = 0.99, end_load: float = 0.1) -> ThresholdGrid:
    """Lines 1 - 2 - 3 in series, unit capacities, alpha = 1."""
    return ThresholdGrid(
        (1, 2, 3),
        np.array([end_load, middle_load, end_load]),
        np.ones(3),
        {1: [2], 2: [1, 3], 3: [2]},
        1.0,
    )


def mesh_grid(n_lines: int = 20, seed: int = 0, alpha: float = 0.9) -> ThresholdGrid:
    """Ring of ``n_lines`` lines with a few random chords and loads at 55-95% of capacity."""
    rng = np.random.default_rng(seed)
    nbrs = {k: {(k - 1) % n_lines, (k + 1) % n_lines} for k in range(n_lines)}
    for _ in range(n_lines // 4):
        a, b = rng.choice(n_lines, size=2, replace=False)
        nbrs[int(a)].add(int(b))
        nbrs[int(b)].add(int(a))
    load = rng.uniform(0.55, 0.95, size=n_lines)
    return ThresholdGrid(tuple(range(n_lines)), load, np.ones(n_lines), nbrs, alpha)
