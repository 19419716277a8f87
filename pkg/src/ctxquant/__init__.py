"""Contextual quantization of token embeddings for late-interaction re-ranking."""

from .baseline import (
    CodebookSet,
    KMeansConfig,
    ProductQuantizer,
    ResidualQuantizer,
    decode_baseline,
    encode_baseline,
    train_pq,
    train_rq,
)
from .network import (
    CQParams,
    GumbelConfig,
    compose,
    decode_delta,
    encoder_forward,
    quantize_document,
    reconstruct_document,
    soft_decode_delta,
)
from .scoring import RerankRequest, ScoredDoc, maxsim_score, rerank, teacher_scores
from .storage import (
    SpaceModel,
    becr_ratio,
    pack_codes,
    read_embeddings,
    read_model,
    read_store,
    space_report,
    unpack_codes,
    write_embeddings,
    write_model,
    write_store,
)
from .train import (
    ContextualQuantizer,
    LossKind,
    RankTriple,
    TrainConfig,
    adam_step,
    backward,
    gradcheck,
    loss_margin_mse,
    loss_mse,
    loss_pairwise_ce,
    train_cq,
)
from .types import (
    DocIndepTable,
    DocumentCodes,
    DocumentTokens,
    QuantizerMode,
    QuantizerSpec,
    make_quantizer_spec,
)

__version__ = "0.1.0"
