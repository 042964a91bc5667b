"""Training-free composed image retrieval: dual-pathway search, verifier-scored
fusion and reliability-gated refinement."""

from .core import (CirError, ComposedQuery, FusionMode, Pathway, PipelineConfig, load_config_file,
                   validate_config)
from .index import EmbeddingIndex, build_index, load_index, read_embeddings, write_embeddings
from .pipeline import QueryResult, QueryTrace, read_traces, run_batch, run_query, write_traces

__version__ = "0.1.0"

__all__ = [
    "CirError", "ComposedQuery", "EmbeddingIndex", "FusionMode", "Pathway", "PipelineConfig", "QueryResult",
    "QueryTrace", "build_index", "load_config_file", "load_index", "read_embeddings", "read_traces",
    "run_batch", "run_query", "validate_config", "write_embeddings", "write_traces",
]
