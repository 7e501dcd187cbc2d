"""Locally Markov walks on finite graphs.

The package builds the total chain of a walk whose successive exits from
each vertex follow a local Markov chain, and checks its stationary law,
time reversal, spectra and mixing behaviour numerically.
"""

__version__ = "0.1.0"

from .graph import Graph, complete_graph, cycle_graph, path_graph
from .local_chain import LocalChainSpec, build_q_system, make_spec, preset
from .arbor import UnicycleIndex, enumerate_unicycles
from .total_chain import build_total_P, stationary_mu, time_reversal_total

__all__ = [
    "Graph",
    "LocalChainSpec",
    "UnicycleIndex",
    "build_q_system",
    "build_total_P",
    "complete_graph",
    "cycle_graph",
    "enumerate_unicycles",
    "make_spec",
    "path_graph",
    "preset",
    "stationary_mu",
    "time_reversal_total",
]
