"""Neural contextual quantizer: encoder, codebook decoder, composition.

The encoder maps (token embedding, document-independent embedding) pairs
to discrete codes through a Gumbel-softmax relaxation; the decoder
rebuilds the document-dependent part from codebooks and a feed-forward
composition layer merges it back with the document-independent part.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadCode,
    BadDistribution,
    BadParam,
    DimMismatch,
    NonFinite,
)
from .rng import SplitMix64, derive_seed
from .types import (
    DocumentCodes,
    QuantizerMode,
    check_embedding_matrix,
    check_embedding_vector,
    validate_code,
    validate_codes,
)

_NOISE_CLIP = 1e-10
_PROB_FLOOR = 1e-10


@dataclass(frozen=True)
class GumbelConfig:
    """Relaxation settings: temperature, noise seed, hard/soft switch.

    Noise is injected only in soft mode; hard mode (inference) is
    deterministic with the formula collapsing to normalized activations.
    """

    tau: float = 1.0
    seed: int = 0
    hard: bool = False
    noise: bool = True  # soft mode only; hard mode is always noise-free

    def __post_init__(self):
        if not self.tau > 0:
            raise BadParam("tau must be positive")


@dataclass
class CQParams:
    """All trainable tensors of the contextual quantizer."""

    spec: "QuantizerSpec"
    w0: np.ndarray  # (H, in_dim)
    b0: np.ndarray  # (H,)
    w1: np.ndarray  # (M, K, H)
    b1: np.ndarray  # (M, K)
    w2: np.ndarray  # (D, 2D)
    b2: np.ndarray  # (D,)
    codebooks: np.ndarray  # (M, K, h)
    use_position: bool = False

    def __post_init__(self):
        spec = self.spec
        if (spec.M * spec.K) % 2 != 0:
            raise BadParam("M*K must be even (hidden width is M*K/2)")
        H = self.hidden_dim
        in_dim = self.encoder_input_dim
        shapes = {
            "w0": (H, in_dim),
            "b0": (H,),
            "w1": (spec.M, spec.K, H),
            "b1": (spec.M, spec.K),
            "w2": (spec.D, 2 * spec.D),
            "b2": (spec.D,),
            "codebooks": (spec.M, spec.K, spec.h),
        }
        for name, expect in shapes.items():
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != expect:
                raise BadParam(f"{name} must have shape {expect}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise NonFinite(f"{name} contains NaN or Inf")
            setattr(self, name, arr)

    @property
    def hidden_dim(self):
        return (self.spec.M * self.spec.K) // 2

    @property
    def encoder_input_dim(self):
        return (3 if self.use_position else 2) * self.spec.D


@dataclass(frozen=True)
class EncoderTrace:
    """Intermediate encoder activations for one token."""

    h: np.ndarray
    a: np.ndarray  # (M, K), nonnegative
    p: np.ndarray  # (M, K), rows on the simplex
    code: np.ndarray  # (M,)

    def __post_init__(self):
        if np.any(self.a < 0):
            raise BadDistribution("activations must be nonnegative")
        sums = self.p.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > 1e-6) or np.any(self.p < 0):
            raise BadDistribution("p rows must be probability vectors")


def softplus(x):
    """log(1 + exp(x)), overflow-safe."""
    return np.logaddexp(0.0, x)


def gumbel_from_uniform(u):
    """Gumbel noise -log(-log(u)) with u clamped away from {0, 1}."""
    u = np.clip(u, _NOISE_CLIP, 1.0 - _NOISE_CLIP)
    return -np.log(-np.log(u))


def sample_gumbel_noise(shape, seed):
    return gumbel_from_uniform(SplitMix64(seed).uniform(shape))


def position_features(positions, dim):
    """Sinusoidal position feature of width dim (even/odd interleave)."""
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 1)
    half = (dim + 1) // 2
    freq = np.exp(-np.log(10000.0) * np.arange(half) * 2.0 / dim)
    angles = positions * freq[None, :]
    out = np.zeros((positions.shape[0], dim))
    out[:, 0::2] = np.sin(angles)[:, : out[:, 0::2].shape[1]]
    out[:, 1::2] = np.cos(angles)[:, : out[:, 1::2].shape[1]]
    return out


def encoder_activations(params, E_t, E_bar, positions=None):
    """Batch encoder front half: returns (x, h, z1, a).

    x is the concatenated input, h the tanh hidden layer, z1 the
    pre-softplus logits of shape (N, M, K), a = softplus(z1).
    """
    spec = params.spec
    E_t = check_embedding_matrix(E_t, dim=spec.D, name="E_t")
    E_bar = check_embedding_matrix(E_bar, dim=spec.D, name="E_bar")
    if E_t.shape[0] != E_bar.shape[0]:
        raise DimMismatch("E_t and E_bar must have the same number of rows")
    parts = [E_t, E_bar]
    if params.use_position:
        if positions is None:
            positions = np.zeros(E_t.shape[0])
        parts.append(position_features(positions, spec.D))
    x = np.concatenate(parts, axis=1)
    h = np.tanh(x @ params.w0.T + params.b0)
    z1 = np.einsum("mkH,nH->nmk", params.w1, h) + params.b1[None, :, :]
    a = softplus(z1)
    if not np.all(np.isfinite(a)):
        raise NonFinite("encoder activations overflowed")
    return x, h, z1, a


def code_probs(a, eps, tau):
    """Gumbel-softmax distribution over codewords.

    p_j is proportional to (a_j + eps_j)**(1/tau); with eps = 0 and
    tau = 1 this is exactly a_j / sum(a).  The noisy activation is
    floored at a tiny positive value before the log.
    """
    q = np.maximum(a + eps, _PROB_FLOOR)
    t = np.log(q) / tau
    t = t - t.max(axis=-1, keepdims=True)
    e = np.exp(t)
    return e / e.sum(axis=-1, keepdims=True)


def encoder_forward(params, e_t, e_bar, g, position=None):
    """Run the encoder on one token and return its trace."""
    spec = params.spec
    e_t = check_embedding_vector(e_t, dim=spec.D, name="e_t")
    e_bar = check_embedding_vector(e_bar, dim=spec.D, name="e_bar")
    positions = None if position is None else [position]
    _, h, _, a = encoder_activations(params, e_t[None], e_bar[None], positions)
    if g.hard or not g.noise:
        eps = 0.0
    else:
        eps = sample_gumbel_noise((1, spec.M, spec.K), g.seed)
    p = code_probs(a, eps, g.tau)
    code = np.argmax(p, axis=-1)
    return EncoderTrace(h=h[0], a=a[0], p=p[0], code=code[0])


def _decode_codes(spec, books, codes):
    codes = validate_codes(codes, spec)
    if spec.mode is QuantizerMode.PRODUCT:
        parts = [books[m][codes[:, m]] for m in range(spec.M)]
        return np.concatenate(parts, axis=1)
    out = np.zeros((codes.shape[0], spec.D))
    for m in range(spec.M):
        out += books[m][codes[:, m]]
    return out


def decode_delta(params, code):
    """Hard decode: pick one codeword per book, concatenate or sum."""
    code = validate_code(code, params.spec)
    return _decode_codes(params.spec, params.codebooks, code[None, :])[0]


def decode_delta_matrix(params, codes):
    return _decode_codes(params.spec, params.codebooks, codes)


def _check_simplex(p):
    sums = p.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > 1e-6) or np.any(p < -1e-12):
        raise BadDistribution("each p row must be a probability vector")


def soft_decode_delta_matrix(params, p):
    """Soft decode for a batch: p has shape (N, M, K)."""
    spec = params.spec
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 3 or p.shape[1:] != (spec.M, spec.K):
        raise DimMismatch(f"p must have shape (N, {spec.M}, {spec.K})")
    _check_simplex(p)
    chat = np.einsum("nmk,mkh->nmh", p, params.codebooks)
    if spec.mode is QuantizerMode.PRODUCT:
        return chat.reshape(p.shape[0], spec.D)
    return chat.sum(axis=1)


def soft_decode_delta(params, p):
    """Probability-weighted codeword mixture in place of the argmax pick."""
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (params.spec.M, params.spec.K):
        raise DimMismatch(f"p must have shape ({params.spec.M}, {params.spec.K})")
    return soft_decode_delta_matrix(params, p[None])[0]


def compose_matrix(params, delta_hat, E_bar):
    spec = params.spec
    delta_hat = check_embedding_matrix(delta_hat, dim=spec.D, name="delta_hat")
    E_bar = check_embedding_matrix(E_bar, dim=spec.D, name="E_bar")
    u = np.concatenate([delta_hat, E_bar], axis=1)
    return np.tanh(u @ params.w2.T + params.b2)


def compose(params, delta_hat, e_bar):
    """One feed-forward layer merging the decoded delta with the base."""
    delta_hat = check_embedding_vector(delta_hat, dim=params.spec.D, name="delta_hat")
    e_bar = check_embedding_vector(e_bar, dim=params.spec.D, name="e_bar")
    return compose_matrix(params, delta_hat[None], e_bar[None])[0]


def quantize_document(params, doc, table, g):
    """Deterministically encode every token of a document (hard mode)."""
    if not g.hard:
        raise BadParam("offline document encoding requires hard mode")
    spec = params.spec
    E_bar = table.lookup(doc.token_ids)
    if doc.n_tokens == 0:
        return DocumentCodes(doc_id=doc.doc_id, token_ids=doc.token_ids,
                             codes=np.zeros((0, spec.M), dtype=np.int64))
    positions = np.arange(doc.n_tokens) if params.use_position else None
    _, _, _, a = encoder_activations(params, doc.embeddings, E_bar, positions)
    p = code_probs(a, 0.0, g.tau)
    codes = np.argmax(p, axis=-1)
    return DocumentCodes(doc_id=doc.doc_id, token_ids=doc.token_ids, codes=codes)


def reconstruct_document(params, codes, table):
    """Decode + compose every token; returns an (n_tokens, D) matrix."""
    E_bar = table.lookup(codes.token_ids)
    if codes.n_tokens == 0:
        return np.zeros((0, params.spec.D))
    delta = decode_delta_matrix(params, codes.codes)
    return compose_matrix(params, delta, E_bar)
