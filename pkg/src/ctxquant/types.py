"""Core value types and validation helpers.

All containers here are plain immutable-by-convention dataclasses over
numpy arrays; validation happens at construction so downstream code can
assume shapes and finiteness.
"""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import BadCode, BadParam, DimMismatch, NonDivisible, NonFinite, UnknownToken


class QuantizerMode(str, Enum):
    PRODUCT = "product"
    ADDITIVE = "additive"


@dataclass(frozen=True)
class QuantizerSpec:
    """Dimension bookkeeping for a codebook quantizer.

    M codebooks of K codewords each; codewords have dimension h, which is
    D/M in product mode (concatenation) and D in additive mode (sum).
    """

    mode: QuantizerMode
    M: int
    K: int
    D: int
    h: int
    bits_per_entry: int

    def __post_init__(self):
        if self.mode is QuantizerMode.PRODUCT and self.M * self.h != self.D:
            raise BadParam(f"product mode needs M*h == D, got {self.M}*{self.h} != {self.D}")
        if self.mode is QuantizerMode.ADDITIVE and self.h != self.D:
            raise BadParam("additive mode needs h == D")


def make_quantizer_spec(mode, M, K, D):
    """Build a QuantizerSpec, deriving h and bits_per_entry."""
    mode = QuantizerMode(mode)
    if M < 1 or D < 1:
        raise BadParam(f"M and D must be positive, got M={M}, D={D}")
    if K < 2:
        raise BadParam(f"K must be at least 2, got {K}")
    if mode is QuantizerMode.PRODUCT:
        if D % M != 0:
            raise NonDivisible(f"M={M} does not divide D={D}")
        h = D // M
    else:
        h = D
    bits = int(K - 1).bit_length()
    return QuantizerSpec(mode=mode, M=M, K=K, D=D, h=h, bits_per_entry=bits)


def check_finite(arr, name="array"):
    if not np.all(np.isfinite(arr)):
        raise NonFinite(f"{name} contains NaN or Inf")
    return arr


def check_embedding_vector(x, dim=None, name="vector"):
    """Validate and return a 1-D float64 embedding vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimMismatch(f"{name} must be 1-D, got shape {x.shape}")
    if dim is not None and x.shape[0] != dim:
        raise DimMismatch(f"{name} has dim {x.shape[0]}, expected {dim}")
    return check_finite(x, name)


def check_embedding_matrix(X, dim=None, name="matrix"):
    """Validate and return a 2-D float64 embedding matrix (rows x D)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DimMismatch(f"{name} must be 2-D, got shape {X.shape}")
    if dim is not None and X.shape[1] != dim:
        raise DimMismatch(f"{name} has dim {X.shape[1]}, expected {dim}")
    return check_finite(X, name)


def validate_code(code, spec):
    """Validate a single code against its spec; returns an int64 array."""
    code = np.asarray(code, dtype=np.int64)
    if code.shape != (spec.M,):
        raise BadCode(f"code must have length {spec.M}, got shape {code.shape}")
    if np.any(code < 0) or np.any(code >= spec.K):
        raise BadCode(f"code entries must lie in [0, {spec.K})")
    return code


def validate_codes(codes, spec):
    """Validate an (N, M) array of codes."""
    codes = np.asarray(codes, dtype=np.int64)
    if codes.ndim != 2 or codes.shape[1] != spec.M:
        raise BadCode(f"codes must have shape (N, {spec.M}), got {codes.shape}")
    if codes.size and (codes.min() < 0 or codes.max() >= spec.K):
        raise BadCode(f"code entries must lie in [0, {spec.K})")
    return codes


@dataclass(frozen=True)
class DocumentTokens:
    """A document's token ids with one embedding row per token."""

    doc_id: int
    token_ids: np.ndarray
    embeddings: np.ndarray

    def __post_init__(self):
        ids = np.asarray(self.token_ids, dtype=np.uint16)
        emb = check_embedding_matrix(self.embeddings, name="embeddings")
        if ids.shape[0] != emb.shape[0]:
            raise DimMismatch(
                f"{ids.shape[0]} token ids but {emb.shape[0]} embedding rows"
            )
        object.__setattr__(self, "token_ids", ids)
        object.__setattr__(self, "embeddings", emb)

    @property
    def n_tokens(self):
        return int(self.token_ids.shape[0])


@dataclass(frozen=True)
class DocumentCodes:
    """Compressed document: token ids plus one M-entry code per token."""

    doc_id: int
    token_ids: np.ndarray
    codes: np.ndarray  # (n_tokens, M) int64

    def __post_init__(self):
        ids = np.asarray(self.token_ids, dtype=np.uint16)
        codes = np.asarray(self.codes, dtype=np.int64)
        if codes.ndim != 2 or codes.shape[0] != ids.shape[0]:
            raise DimMismatch(
                f"{ids.shape[0]} token ids but code array shape {codes.shape}"
            )
        object.__setattr__(self, "token_ids", ids)
        object.__setattr__(self, "codes", codes)

    @property
    def n_tokens(self):
        return int(self.token_ids.shape[0])


@dataclass(frozen=True)
class DocIndepTable:
    """Document-independent embedding per vocabulary entry (V x D)."""

    rows: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rows", check_embedding_matrix(self.rows, name="table"))

    @property
    def vocab_size(self):
        return int(self.rows.shape[0])

    @property
    def dim(self):
        return int(self.rows.shape[1])

    def lookup(self, token_ids):
        ids = np.asarray(token_ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= self.vocab_size):
            raise UnknownToken(
                f"token id out of range for vocab size {self.vocab_size}"
            )
        return self.rows[ids]
