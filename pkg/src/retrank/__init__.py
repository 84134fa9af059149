"""Two-stage visual retrieve-and-rerank engine for knowledge-based VQA."""

from .errors import (
    DataError,
    EmptyCompletionError,
    EvecFormatError,
    RetrankError,
    StatusError,
    TransportError,
)
from .evec import load_embeddings, save_embeddings
from .index import (
    EmbeddingMatrix,
    RetrievalCandidate,
    normalize,
    search_topk,
    search_topk_batch,
)
from .kb import (
    ArticleEntry,
    IngestReport,
    KnowledgeBase,
    SectionRecord,
    SECTION_SEPARATOR,
    export,
    ingest,
)
from .llm import AnswerRequest, AnswerResult, EndpointConfig, generate_answer
from .metrics import (
    EvalRecord,
    EvalReport,
    evaluate,
    recall_at_k,
    relaxed_accuracy,
    vqa_accuracy,
)
from .mining import (
    LossConfig,
    LossResult,
    TrainExample,
    contrastive_loss,
    mine_negatives,
)
from .prompts import PromptTemplate, get_template, render_prompt
from .rerank import (
    QueryTokenSet,
    RankedSection,
    RerankConfig,
    SectionEmbedding,
    SectionEmbeddingStore,
    dedup_entry_urls,
    maxsim,
    propagate_visual,
    rerank,
)
from .stub import StubLLM

__version__ = "0.1.0"

__all__ = [
    "AnswerRequest",
    "AnswerResult",
    "ArticleEntry",
    "DataError",
    "EmbeddingMatrix",
    "EmptyCompletionError",
    "EndpointConfig",
    "EvalRecord",
    "EvalReport",
    "EvecFormatError",
    "IngestReport",
    "KnowledgeBase",
    "LossConfig",
    "LossResult",
    "PromptTemplate",
    "QueryTokenSet",
    "RankedSection",
    "RerankConfig",
    "RetrankError",
    "RetrievalCandidate",
    "SECTION_SEPARATOR",
    "SectionEmbedding",
    "SectionEmbeddingStore",
    "SectionRecord",
    "StatusError",
    "StubLLM",
    "TrainExample",
    "TransportError",
    "contrastive_loss",
    "dedup_entry_urls",
    "evaluate",
    "export",
    "generate_answer",
    "get_template",
    "ingest",
    "load_embeddings",
    "maxsim",
    "mine_negatives",
    "normalize",
    "propagate_visual",
    "recall_at_k",
    "relaxed_accuracy",
    "render_prompt",
    "rerank",
    "save_embeddings",
    "search_topk",
    "search_topk_batch",
    "vqa_accuracy",
]
