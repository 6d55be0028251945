"""Semantic dependency parsing as labeled directed-graph prediction.

A BiLSTM encoder feeds head/dep projections into a biaffine edge scorer and
a biaffine labeler over every ordered word pair; edges with non-negative
score are kept and take their best label. Everything runs on a small
reverse-mode autodiff core over numpy float64 arrays.

Typical use:

    from sdparse import read_sdp, build_vocab, ModelConfig, train

    graphs = read_sdp("train.sdp")
    result = train(graphs, dev_graphs, ModelConfig(), seed=1, out_dir="run/")
    predictions = [result.parser.parse(g) for g in dev_graphs]
"""

from .autodiff import (
    AdamState,
    DimensionError,
    Tape,
    Tensor,
    adam_step,
    backward,
    gradcheck,
    zero_grad,
)
from .checkpoint import CheckpointError, load_tensors, save_tensors
from .data import (
    Batch,
    SdpParseError,
    SemanticGraph,
    Token,
    TOP_LABEL,
    Vocabulary,
    batch_by_tokens,
    build_vocab,
    bundled_corpus,
    find_cycle,
    is_dag,
    read_sdp,
    write_sdp,
)
from .evaluation import AlignmentError, EvalReport, score_graphs
from .layers import (
    BiaffineParams,
    BiLstmLayer,
    CharEncoderParams,
    EmbeddingTable,
    FnnParams,
    LstmParams,
    PretrainedEmbeddings,
    biaffine,
    bilinear,
    bilstm,
    char_encode,
    embed,
    fnn_head,
)
from .model import ConfigError, ModelConfig, Parser, ScoreSet, load_model, save_model
from .study import StudyResult, VariantSpec, figure_variants, rank_sum, run_study
from .training import TrainingDiverged, TrainingRun, TrainResult, evaluate_dev, train

__version__ = "0.1.0"

__all__ = [
    "AdamState", "AlignmentError", "Batch", "BiaffineParams", "BiLstmLayer",
    "CharEncoderParams", "CheckpointError", "ConfigError", "DimensionError",
    "EmbeddingTable", "EvalReport", "FnnParams", "LstmParams", "ModelConfig",
    "Parser", "PretrainedEmbeddings", "ScoreSet", "SdpParseError",
    "SemanticGraph", "StudyResult", "Tape", "Tensor", "Token", "TOP_LABEL",
    "TrainResult", "TrainingDiverged", "TrainingRun", "VariantSpec",
    "Vocabulary", "adam_step", "backward", "batch_by_tokens", "biaffine",
    "bilinear", "bilstm", "build_vocab", "bundled_corpus", "char_encode",
    "embed", "evaluate_dev", "figure_variants", "find_cycle", "fnn_head",
    "gradcheck", "is_dag", "load_model", "load_tensors", "rank_sum",
    "read_sdp", "run_study", "save_model", "save_tensors", "score_graphs",
    "train", "write_sdp", "zero_grad",
]
