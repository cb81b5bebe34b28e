"""Eigen-analysis of cascading failures in networked systems.

Cascade datasets are turned into a weighted state graph whose column-stochastic
matrix is decomposed into modes. The modes drive mitigation planning and are
checked against synthetic ground-truth generators.
"""

from .cascade_data import Cascade, CascadeDataset, read_cascades, write_cascades
from .interaction_graph import InteractionGraph, build_state_graph, stochastic_matrix
from .spectral import ModeKind, SpectralAnalysis, classify_modes, eigendecompose

__all__ = [
    "Cascade",
    "CascadeDataset",
    "read_cascades",
    "write_cascades",
    "InteractionGraph",
    "build_state_graph",
    "stochastic_matrix",
    "ModeKind",
    "SpectralAnalysis",
    "classify_modes",
    "eigendecompose",
]
__version__ = "0.1.0"
