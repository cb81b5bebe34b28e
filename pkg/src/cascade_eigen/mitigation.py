"""Mitigation plans derived from modal information, and their evaluation.

Plans name a set of lines (and, for graph-level strategies, a set of states).
They are applied by re-running a generator: in the chain world a targeted
line lowers every transition into a state containing it by ``rho``; in the
grid world it raises the line's capacity by ``factor``.
"""

from __future__ import annotations

import csv
import enum
import json
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, TextIO

import numpy as np

from .cascade_data import CascadeDataset, DatasetStats, ending_metrics
from .generators import (
    GroundTruthChain,
    ThresholdGrid,
    absorb_chain,
    apply_chain_mitigation,
    decouple_chain,
    upgrade_capacities,
)
from .interaction_graph import InteractionGraph
from .spectral import Mode, SpectralAnalysis, participation

__all__ = [
    "Strategy",
    "MitigationPlan",
    "EvaluationReport",
    "InboundWeights",
    "StrategyPreconditionError",
    "select_top_states",
    "lines_of_states",
    "plan_strategy",
    "inbound_weight_sum",
    "evaluate",
    "large_probability_via",
    "apply_plan_to_chain",
    "apply_plan_to_grid",
    "write_plan",
    "write_evaluation_csv",
]


class StrategyPreconditionError(ValueError):
    """The inputs cannot support the requested strategy."""


class Strategy(str, enum.Enum):
    RANDOM = "random"
    EIGEN = "eigen"
    MOST_FREQUENT = "mf"
    DECOUPLE = "decouple"
    ABSORB = "absorb"


@dataclass(frozen=True)
class MitigationPlan:
    strategy: Strategy
    targeted_lines: tuple
    targeted_states: tuple = ()
    S: int | None = None
    parameters: dict = field(default_factory=dict)

    @property
    def S_prime(self) -> int:
        return len(self.targeted_lines)


def select_top_states(mode: Mode, S: int | None = None, threshold: float | None = None) -> list:
    """Vertices with the largest eigenvector moduli.

    Pass either ``S`` (count) or ``threshold`` (keep entries with modulus
    strictly above it). Ties go to the lower vertex id.
    """
    if (S is None) == (threshold is None):
        raise ValueError("give exactly one of S or threshold")
    mod = np.abs(np.asarray(mode.vector))
    order = sorted(range(mod.size), key=lambda j: (-round(float(mod[j]), 12), j))
    if threshold is not None:
        return [j for j in order if mod[j] > threshold]
    if S < 1:
        raise ValueError("S must be >= 1")
    if S > mod.size:
        warnings.warn(f"S={S} exceeds vertex count {mod.size}; truncating", stacklevel=2)
    return order[:S]


def lines_of_states(graph: InteractionGraph, states) -> set:
    return {c for v in states for c in graph.vertices[v]}


class InboundWeights(NamedTuple):
    per_vertex: dict
    total: float
    share: dict


def inbound_weight_sum(graph: InteractionGraph, subgraph) -> InboundWeights:
    """S_w of each subgraph vertex: summed weight of edges entering it from outside."""
    sub = set(subgraph)
    if not sub:
        raise ValueError("subgraph must be non-empty")
    per = {j: 0.0 for j in sorted(sub)}
    for (i, j), w in graph.weights.items():
        if j in sub and i not in sub:
            per[j] += float(w)
    total = sum(per.values())
    share = {j: (s / total if total else 0.0) for j, s in per.items()}
    return InboundWeights(per, total, share)


def _need(value, what, strategy):
    if value is None:
        raise StrategyPreconditionError(f"strategy {strategy.value} needs {what}")
    return value


def plan_strategy(
    strategy,
    *,
    analysis: SpectralAnalysis | None = None,
    graph: InteractionGraph | None = None,
    stats: DatasetStats | None = None,
    universe=None,
    S: int | None = None,
    S_prime: int | None = None,
    threshold: float | None = None,
    seed: int | None = None,
    eps: float = 0.5,
    target: str = "subgraph",
    diagonal_threshold: float = 0.5,
    **parameters,
) -> MitigationPlan:
    """Build a mitigation plan.

    ``eigen``
        Lines of the top-``S`` states (or entries above ``threshold``) of the
        largest positive transient mode.
    ``random``
        ``S_prime`` lines drawn without replacement from ``universe``.
    ``mf``
        The ``S_prime`` most frequently failed lines (ties: lower id).
    ``decouple``
        States participating (``|v| >= eps``) in the largest complex mode, or
        only its vertex with the largest S_w when ``target="max_sw"``.
    ``absorb``
        Non-absorbing states whose self-loop weight is at least
        ``diagonal_threshold``.

    Extra keyword arguments (``rho``, ``factor``...) are recorded in the plan.
    """
    strategy = Strategy(strategy)
    params = dict(parameters)
    if strategy is Strategy.EIGEN:
        analysis = _need(analysis, "a spectral analysis", strategy)
        graph = _need(graph, "the interaction graph", strategy)
        mode = analysis.top_positive()
        if mode is None:
            raise StrategyPreconditionError("no transient positive mode exists")
        if S is None and threshold is None:
            raise StrategyPreconditionError("strategy eigen needs S or a threshold")
        states = select_top_states(mode, S=S, threshold=threshold if S is None else None)
        if threshold is not None and S is None:
            params["threshold"] = threshold
        lines = lines_of_states(graph, states)
        return MitigationPlan(strategy, tuple(sorted(lines)), tuple(states), len(states), params)
    if strategy is Strategy.RANDOM:
        universe = sorted(_need(universe, "the component universe", strategy))
        k = _need(S_prime, "S_prime", strategy)
        seed = _need(seed, "a seed", strategy)
        if k > len(universe):
            raise StrategyPreconditionError(f"S_prime={k} exceeds universe size {len(universe)}")
        rng = np.random.default_rng(seed)
        lines = rng.choice(np.array(universe), size=k, replace=False)
        params["seed"] = seed
        return MitigationPlan(strategy, tuple(sorted(int(x) for x in lines)), (), S, params)
    if strategy is Strategy.MOST_FREQUENT:
        stats = _need(stats, "dataset statistics", strategy)
        k = _need(S_prime, "S_prime", strategy)
        freq = stats.component_failure_frequency
        ranked = sorted(freq, key=lambda c: (-freq[c], c))
        return MitigationPlan(strategy, tuple(sorted(ranked[:k])), (), S, params)
    if strategy is Strategy.DECOUPLE:
        analysis = _need(analysis, "a spectral analysis", strategy)
        graph = _need(graph, "the interaction graph", strategy)
        top = analysis.top_complex(1)
        if not top:
            raise StrategyPreconditionError("no transient complex mode exists")
        states = [p.vertex for p in participation(top[0], eps)]
        if target == "max_sw":
            sw = inbound_weight_sum(graph, states).per_vertex
            states = [max(sw, key=lambda j: (sw[j], -j))]
        params.update(eps=eps, target=target)
        lines = lines_of_states(graph, states)
        return MitigationPlan(strategy, tuple(sorted(lines)), tuple(sorted(states)), S, params)
    # ABSORB
    graph = _need(graph, "the interaction graph", strategy)
    states = [i for i in range(graph.n)
              if i not in graph.absorbing and graph.weight(i, i) >= diagonal_threshold]
    if not states:
        raise StrategyPreconditionError(
            f"no transient state has a self-loop weight >= {diagonal_threshold}")
    params["diagonal_threshold"] = diagonal_threshold
    lines = lines_of_states(graph, states)
    return MitigationPlan(strategy, tuple(sorted(lines)), tuple(states), S, params)


def apply_plan_to_chain(plan: MitigationPlan, chain: GroundTruthChain,
                        graph: InteractionGraph | None = None, rho: float = 0.2) -> GroundTruthChain:
    """Re-parameterize a ground-truth chain according to ``plan``.

    Line strategies lower transitions into states containing a targeted line.
    ``decouple`` cuts transitions entering the targeted states from outside and
    ``absorb`` makes them terminal; both need ``graph`` to map vertices to
    chain states.
    """
    rho = plan.parameters.get("rho", rho)
    if plan.strategy in (Strategy.DECOUPLE, Strategy.ABSORB):
        if graph is None:
            raise ValueError("graph needed to map targeted states onto the chain")
        states = [graph.vertices[v] for v in plan.targeted_states]
        if plan.strategy is Strategy.DECOUPLE:
            return decouple_chain(chain, states, rho)
        return absorb_chain(chain, states)
    return apply_chain_mitigation(chain, plan.targeted_lines, rho)


def apply_plan_to_grid(plan: MitigationPlan, grid: ThresholdGrid, factor: float = 1.2) -> ThresholdGrid:
    """Upgrade the capacity of every targeted line present in the grid."""
    factor = plan.parameters.get("factor", factor)
    known = set(grid.line_ids)
    return upgrade_capacities(grid, [k for k in plan.targeted_lines if k in known], factor)


@dataclass(frozen=True)
class EvaluationReport:
    baseline_distribution: dict
    mitigated_distribution: dict
    baseline_large: float
    mitigated_large: float
    baseline_count: int
    mitigated_count: int
    large_threshold: int = 3

    @property
    def reduction(self) -> float:
        """``1 - mitigated/baseline`` large-cascade probability (may be negative)."""
        if self.baseline_large == 0:
            return 0.0 if self.mitigated_large == 0 else float("-inf")
        return 1.0 - self.mitigated_large / self.baseline_large

    @property
    def reduction_pct(self) -> float:
        return 100.0 * self.reduction


def evaluate(baseline: CascadeDataset, mitigated: CascadeDataset, large_threshold: int = 3) -> EvaluationReport:
    base_dist, base_large = ending_metrics(baseline, large_threshold)
    mit_dist, mit_large = ending_metrics(mitigated, large_threshold)
    return EvaluationReport(base_dist, mit_dist, base_large, mit_large,
                            len(baseline), len(mitigated), large_threshold)


def large_probability_via(ds: CascadeDataset, states, large_threshold: int = 3) -> float:
    """Fraction of cascades that are large and pass through any of ``states``."""
    if len(ds) == 0:
        raise ValueError("empty dataset")
    targets = {tuple(s) for s in states}
    hits = sum(
        1 for c in ds.cascades
        if c.ending_generation > large_threshold and targets.intersection(c.generations)
    )
    return hits / len(ds)


def write_plan(plan: MitigationPlan, out: TextIO) -> None:
    """Plan file; state ids are 1-based."""
    rec = {
        "strategy": plan.strategy.value,
        "S": plan.S,
        "S_prime": plan.S_prime,
        "parameters": plan.parameters,
        "targeted_states": [v + 1 for v in plan.targeted_states],
        "targeted_lines": sorted(plan.targeted_lines),
    }
    json.dump(rec, out, indent=1, sort_keys=True)
    out.write("\n")


def _mean_ending(dist):
    return sum(g * p for g, p in dist.items())


def write_evaluation_csv(report: EvaluationReport, out: TextIO,
                         baseline_dist_out: TextIO | None = None,
                         mitigated_dist_out: TextIO | None = None) -> None:
    """``metric,baseline,mitigated,reduction_pct`` plus optional distribution CSVs."""
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["metric", "baseline", "mitigated", "reduction_pct"])
    w.writerow(["large_cascade_probability", repr(report.baseline_large),
                repr(report.mitigated_large), repr(report.reduction_pct)])
    b, m = _mean_ending(report.baseline_distribution), _mean_ending(report.mitigated_distribution)
    w.writerow(["mean_ending_generation", repr(b), repr(m), repr(100 * (1 - m / b) if b else 0.0)])
    w.writerow(["cascade_count", report.baseline_count, report.mitigated_count, ""])
    for dist, dest in ((report.baseline_distribution, baseline_dist_out),
                       (report.mitigated_distribution, mitigated_dist_out)):
        if dest is None:
            continue
        dw = csv.writer(dest, lineterminator="\n")
        dw.writerow(["ending_generation", "probability"])
        for g, p in sorted(dist.items()):
            dw.writerow([g, repr(p)])
