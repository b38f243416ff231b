"""Desk-scale scene text retrieval: joint detection and similarity learning."""

from .augment import EditOp, EditOperatorRatios, augment, augment_query_set, sample_operators
from .config import ModelConfig, TrainConfig
from .detection import ProposalSet
from .errors import (
    DegenerateInputError,
    InvalidInputError,
    TrainingFailureError,
    UndefinedAPError,
)
from .phoc import PHOCVector, phoc_dimension, phoc_encode, phoc_rank
from .retrieval import (
    GalleryIndex,
    RetrievalResult,
    annotate,
    average_precision,
    detection_f_measure,
    index_gallery,
    load_index,
    mean_ap,
    rank_gallery,
    save_index,
    score_image,
)
from .similarity import (
    Charset,
    SequenceFeature,
    SimilarityMatrix,
    Word,
    cosine_matrix,
    levenshtein,
    normalized_similarity,
    target_matrix,
)
from .synthgen import (
    GalleryManifest,
    RenderConfig,
    SceneSample,
    TextInstance,
    generate_dataset,
    load_manifest,
    render_sample,
    save_manifest,
)
from .training import TrainResult, build_queries, loss_similarity, loss_total, match_proposals, train

__version__ = "0.1.0"
