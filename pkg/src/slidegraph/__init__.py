"""Out-of-core graph analytics on a single machine.

Edges are preprocessed into destination-grouped CSR shards; vertex programs
run over them with all vertex values held in memory, skipping shards with no
active sources and caching (optionally compressed) shards within a budget.
"""

__version__ = "0.1.0"

from .apps import SSSP, ConnectedComponents, PageRank, make_program
from .engine import Engine, EngineOptions, IterationStats, RunResult, VertexProgram, run
from .graph import DegreeTable, Edge, GraphMeta, validate_meta
from .preprocess import compute_intervals, count_degrees, preprocess

__all__ = [
    "ConnectedComponents",
    "DegreeTable",
    "Edge",
    "Engine",
    "EngineOptions",
    "GraphMeta",
    "IterationStats",
    "PageRank",
    "RunResult",
    "SSSP",
    "VertexProgram",
    "compute_intervals",
    "count_degrees",
    "make_program",
    "preprocess",
    "run",
    "validate_meta",
]
