"""Deep-research engine for locally stored multimodal document collections."""

__version__ = "0.1.0"

from .chunking import Chunk, GranularityLevel, Modality
from .corpus import Document, LayoutElement, PageRecord, ingest_document
from .gateway import EmbeddingVector, ModelGateway, MultiVector
from .index import IndexEntry, SearchFilter, VectorIndex, maxsim_score
from .retrieval import Paradigm, RankedEvidence, RetrievalRequest, retrieve

__all__ = [
    "Chunk",
    "Document",
    "EmbeddingVector",
    "GranularityLevel",
    "IndexEntry",
    "LayoutElement",
    "Modality",
    "ModelGateway",
    "MultiVector",
    "PageRecord",
    "Paradigm",
    "RankedEvidence",
    "RetrievalRequest",
    "SearchFilter",
    "VectorIndex",
    "ingest_document",
    "maxsim_score",
    "retrieve",
]
