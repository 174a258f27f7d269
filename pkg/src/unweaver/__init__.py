"""Entity-centric retrieval-augmented generation engine.

Documents are chunked, per-chunk entity mentions are merged into
equivalence classes, and queries retrieve chunks either through a
multi-winner approval election over the class/chunk incidence structure
or through budgeted alignment solvers (proportional-fairness dual ascent,
constrained least squares).
"""

from .alignment import (
    AlignmentProblem,
    AlignmentSolution,
    aligned_retrieve,
    gram,
    lu_solve,
    matmul,
    matvec,
    project_query,
    pseudoinverse,
    solve_cls,
    solve_utility,
    transpose,
)
from .corpus import Chunk, Document, SegmentConfig, load_corpus, segment, segment_corpus
from .embedding import EmbedConfig, embed, fnv1a_64, stub_vector
from .errors import (
    BackendError,
    ChunkIdOutOfRange,
    DimensionMismatch,
    EmptyDocument,
    IndexEmpty,
    IoError,
    MalformedOutput,
    NonConvergence,
    SchemaVersionMismatch,
    SingularSystem,
    UnweaverError,
)
from .extraction import EntityMention, ExtractorConfig, extract, extract_all, shorten
from .gateway import (
    ChatRequest,
    ChatResponse,
    EmbedRequest,
    EmbedResponse,
    ModelGateway,
    TokenUsage,
    answer_prompt,
    estimate_tokens,
    stub_answer,
)
from .index import (
    EquivalenceClass,
    IncidenceMatrix,
    Index,
    IndexConfig,
    build_classes,
    build_incidence,
    build_index,
    load_index,
    normalize_name,
    save_index,
)
from .retrieval import (
    ElectionConfig,
    RetrievalResult,
    SimilarityConfig,
    committee_score,
    elect_chunks,
    filter_ballots,
    retrieve,
    top_k_classes,
)

__version__ = "0.1.0"

__all__ = [
    "AlignmentProblem",
    "AlignmentSolution",
    "BackendError",
    "ChatRequest",
    "ChatResponse",
    "Chunk",
    "ChunkIdOutOfRange",
    "DimensionMismatch",
    "Document",
    "ElectionConfig",
    "EmbedConfig",
    "EmbedRequest",
    "EmbedResponse",
    "EmptyDocument",
    "EntityMention",
    "EquivalenceClass",
    "ExtractorConfig",
    "IncidenceMatrix",
    "Index",
    "IndexConfig",
    "IndexEmpty",
    "IoError",
    "MalformedOutput",
    "ModelGateway",
    "NonConvergence",
    "RetrievalResult",
    "SchemaVersionMismatch",
    "SegmentConfig",
    "SimilarityConfig",
    "SingularSystem",
    "TokenUsage",
    "UnweaverError",
    "aligned_retrieve",
    "answer_prompt",
    "build_classes",
    "build_incidence",
    "build_index",
    "committee_score",
    "elect_chunks",
    "embed",
    "estimate_tokens",
    "extract",
    "extract_all",
    "filter_ballots",
    "fnv1a_64",
    "gram",
    "load_corpus",
    "load_index",
    "lu_solve",
    "matmul",
    "matvec",
    "normalize_name",
    "project_query",
    "pseudoinverse",
    "retrieve",
    "save_index",
    "segment",
    "segment_corpus",
    "shorten",
    "solve_cls",
    "solve_utility",
    "stub_answer",
    "stub_vector",
    "top_k_classes",
    "transpose",
]
