"""Losses, analytic gradients, Adam, and the two-phase training loop.

Gradients are derived by hand for the small quantizer network and are
checked against central finite differences in the test suite; the
Gumbel noise is treated as a constant during differentiation
(reparameterization), so the soft relaxation is differentiable
end-to-end.
"""

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np
from sklearn.base import BaseEstimator

from .errors import (
    BadParam,
    EmptyBatch,
    HardModeGradient,
    NonFinite,
    ShapeMismatch,
)
from .network import (
    CQParams,
    GumbelConfig,
    _PROB_FLOOR,
    code_probs,
    compose_matrix,
    encoder_activations,
    sample_gumbel_noise,
    soft_decode_delta_matrix,
)
from .rng import SplitMix64, derive_seed
from .scoring import maxsim_score_with_grad
from .types import QuantizerMode, check_embedding_matrix, make_quantizer_spec


class LossKind(str, Enum):
    MSE = "mse"
    PAIRWISE_CE = "pairwise-ce"
    MARGIN_MSE = "margin-mse"


@dataclass(frozen=True)
class TrainConfig:
    """Two-phase schedule: MSE warm-up, then ranking-loss fine-tune.

    Defaults follow the reported training recipe; tests and the CLI
    override step counts to desk scale.
    """

    warmup_lr: float = 1e-4
    warmup_batch: int = 128
    warmup_steps: int = 200_000
    finetune_lr: float = 3e-6
    pairs_per_batch: int = 32
    finetune_steps: int = 800
    loss: LossKind = LossKind.MARGIN_MSE
    seed: int = 0
    sample_size: int = 500_000
    # relaxation temperature, annealed geometrically over the warm-up;
    # keeping both ends at 1.0 gives a constant temperature
    tau_start: float = 1.0
    tau_end: float = 1.0
    finetune_noise: bool = True  # inject Gumbel noise in the fine-tune phase

    def __post_init__(self):
        if self.warmup_lr <= 0 or self.finetune_lr <= 0:
            raise BadParam("learning rates must be positive")
        if self.warmup_steps < 0 or self.finetune_steps < 0:
            raise BadParam("step counts must be nonnegative")
        if self.tau_start <= 0 or self.tau_end <= 0:
            raise BadParam("temperatures must be positive")

    def tau_at(self, step):
        """Geometric interpolation from tau_start to tau_end."""
        if self.warmup_steps <= 1:
            return self.tau_end
        frac = step / (self.warmup_steps - 1)
        return float(self.tau_start * (self.tau_end / self.tau_start) ** frac)


@dataclass(frozen=True)
class RankTriple:
    """A query with one positive and one negative document."""

    query_embeddings: np.ndarray  # (l, D)
    pos_doc: "DocumentTokens"
    neg_doc: "DocumentTokens"


@dataclass
class Gradients:
    w0: np.ndarray
    b0: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    codebooks: np.ndarray

    @classmethod
    def zeros_like(cls, params):
        return cls(
            w0=np.zeros_like(params.w0),
            b0=np.zeros_like(params.b0),
            w1=np.zeros_like(params.w1),
            b1=np.zeros_like(params.b1),
            w2=np.zeros_like(params.w2),
            b2=np.zeros_like(params.b2),
            codebooks=np.zeros_like(params.codebooks),
        )

    def add_(self, other):
        for name in _TENSORS:
            getattr(self, name).__iadd__(getattr(other, name))
        return self


_TENSORS = ("w0", "b0", "w1", "b1", "w2", "b2", "codebooks")


# ---------------------------------------------------------------------------
# losses


def loss_pairwise_ce(f_pos_hat, f_neg_hat):
    """Pairwise softmax cross-entropy with the positive doc as target."""
    if not (np.isfinite(f_pos_hat) and np.isfinite(f_neg_hat)):
        raise NonFinite("scores must be finite")
    # -log(exp(f+)/(exp(f+) + exp(f-))) = log(1 + exp(f- - f+))
    return float(np.logaddexp(0.0, f_neg_hat - f_pos_hat))


def loss_margin_mse(f_pos, f_neg, f_pos_hat, f_neg_hat):
    """Squared difference between teacher and student score margins."""
    vals = (f_pos, f_neg, f_pos_hat, f_neg_hat)
    if not all(np.isfinite(v) for v in vals):
        raise NonFinite("scores must be finite")
    diff = (f_pos - f_neg) - (f_pos_hat - f_neg_hat)
    return float(diff * diff)


# ---------------------------------------------------------------------------
# soft forward / backward


def forward_soft(params, E_t, E_bar, eps, tau=1.0, positions=None):
    """Soft forward pass for a batch; returns (Y, cache)."""
    spec = params.spec
    x, h, z1, a = encoder_activations(params, E_t, E_bar, positions)
    p = code_probs(a, eps, tau)
    q = np.maximum(a + eps, _PROB_FLOOR)
    chat = np.einsum("nmk,mkh->nmh", p, params.codebooks)
    if spec.mode is QuantizerMode.PRODUCT:
        delta = chat.reshape(p.shape[0], spec.D)
    else:
        delta = chat.sum(axis=1)
    u = np.concatenate([delta, E_bar], axis=1)
    Y = np.tanh(u @ params.w2.T + params.b2)
    cache = {
        "x": x, "h": h, "z1": z1, "a": a, "eps": eps, "tau": tau,
        "p": p, "q": q, "delta": delta, "u": u, "Y": Y,
    }
    return Y, cache


def backward_soft(params, cache, dY):
    """Backpropagate dL/dY through compose, soft decode, and encoder."""
    spec = params.spec
    x, h, z1, a = cache["x"], cache["h"], cache["z1"], cache["a"]
    p, q, u, Y = cache["p"], cache["q"], cache["u"], cache["Y"]
    tau = cache["tau"]
    D = spec.D

    dz2 = dY * (1.0 - Y * Y)
    gw2 = dz2.T @ u
    gb2 = dz2.sum(axis=0)
    du = dz2 @ params.w2
    ddelta = du[:, :D]

    if spec.mode is QuantizerMode.PRODUCT:
        dchat = ddelta.reshape(-1, spec.M, spec.h)
    else:
        dchat = np.repeat(ddelta[:, None, :], spec.M, axis=1)

    gC = np.einsum("nmk,nmh->mkh", p, dchat)
    dp = np.einsum("nmh,mkh->nmk", dchat, params.codebooks)

    # softmax over log(q)/tau
    dt = p * (dp - np.sum(dp * p, axis=-1, keepdims=True))
    dq = dt / (tau * q)
    da = np.where(a + cache["eps"] > _PROB_FLOOR, dq, 0.0)
    dz1 = da / (1.0 + np.exp(-z1))  # softplus' = sigmoid

    gw1 = np.einsum("nmk,nH->mkH", dz1, h)
    gb1 = dz1.sum(axis=0)
    dh = np.einsum("nmk,mkH->nH", dz1, params.w1)
    dpre0 = dh * (1.0 - h * h)
    gw0 = dpre0.T @ x
    gb0 = dpre0.sum(axis=0)

    return Gradients(w0=gw0, b0=gb0, w1=gw1, b1=gb1, w2=gw2, b2=gb2, codebooks=gC)


def _batch_arrays(batch):
    if len(batch) == 0:
        raise EmptyBatch("batch must be nonempty")
    E_t = np.stack([np.asarray(b[0], dtype=np.float64) for b in batch])
    E_bar = np.stack([np.asarray(b[1], dtype=np.float64) for b in batch])
    return E_t, E_bar


def loss_mse(model, batch, g=None):
    """Sum of squared reconstruction errors over the batch (soft path)."""
    E_t, E_bar = _batch_arrays(batch)
    eps = _noise_for(g, len(batch), model.spec)
    tau = g.tau if g is not None else 1.0
    Y, _ = forward_soft(model, E_t, E_bar, eps, tau)
    return float(np.sum((E_t - Y) ** 2))


def _noise_for(g, n, spec):
    if g is None or g.hard or not g.noise:
        return 0.0
    return sample_gumbel_noise((n, spec.M, spec.K), g.seed)


def backward(model, batch, loss=LossKind.MSE, g=None):
    """Analytic parameter gradients of the MSE loss on a token batch."""
    if g is not None and g.hard:
        raise HardModeGradient("gradients require the soft (hard=False) path")
    if loss is not LossKind.MSE:
        raise BadParam("backward on a token batch is defined for the MSE loss; "
                       "use backward_ranking for pairwise losses")
    E_t, E_bar = _batch_arrays(batch)
    eps = _noise_for(g, len(batch), model.spec)
    tau = g.tau if g is not None else 1.0
    Y, cache = forward_soft(model, E_t, E_bar, eps, tau)
    dY = 2.0 * (Y - E_t)
    return backward_soft(model, cache, dY)


def student_score_soft(model, query, doc, table, eps, tau=1.0):
    """Differentiable student MaxSim score; returns (score, cache, dY-hook)."""
    E_bar = table.lookup(doc.token_ids)
    positions = np.arange(doc.n_tokens) if model.use_position else None
    Y, cache = forward_soft(model, doc.embeddings, E_bar, eps, tau, positions)
    score, dY_unit = maxsim_score_with_grad(query, Y)
    return score, cache, dY_unit


def backward_ranking(model, triples, teacher_scores, table, loss, g):
    """Gradients of a ranking loss over a batch of triples.

    teacher_scores is a list of (f_pos, f_neg) pairs aligned with
    triples; it is only consulted for the margin loss.
    """
    if g is not None and g.hard:
        raise HardModeGradient("gradients require the soft (hard=False) path")
    if loss is LossKind.MSE:
        raise BadParam("use backward() for the MSE loss")
    if len(triples) == 0:
        raise EmptyBatch("triple batch must be nonempty")
    total = Gradients.zeros_like(model)
    loss_value = 0.0
    tau = g.tau if g is not None else 1.0
    for i, triple in enumerate(triples):
        seed = derive_seed(g.seed, i) if g is not None and g.noise else None
        spec = model.spec
        eps_p = (sample_gumbel_noise((triple.pos_doc.n_tokens, spec.M, spec.K),
                                     derive_seed(seed, 0)) if seed is not None else 0.0)
        eps_n = (sample_gumbel_noise((triple.neg_doc.n_tokens, spec.M, spec.K),
                                     derive_seed(seed, 1)) if seed is not None else 0.0)
        fp, cache_p, dYp_unit = student_score_soft(
            model, triple.query_embeddings, triple.pos_doc, table, eps_p, tau)
        fn, cache_n, dYn_unit = student_score_soft(
            model, triple.query_embeddings, triple.neg_doc, table, eps_n, tau)
        if loss is LossKind.MARGIN_MSE:
            tp, tn = teacher_scores[i]
            loss_value += loss_margin_mse(tp, tn, fp, fn)
            resid = (tp - tn) - (fp - fn)
            dfp, dfn = -2.0 * resid, 2.0 * resid
        else:
            loss_value += loss_pairwise_ce(fp, fn)
            p_pos = 1.0 / (1.0 + np.exp(fn - fp))
            dfp, dfn = p_pos - 1.0, 1.0 - p_pos
        total.add_(backward_soft(model, cache_p, dfp * dYp_unit))
        total.add_(backward_soft(model, cache_n, dfn * dYn_unit))
    return loss_value, total


# ---------------------------------------------------------------------------
# parameter init, flattening, Adam


def init_cq_params(spec, seed, use_position=False, codebooks=None):
    """Scaled-uniform init; codebooks may be supplied (e.g. from k-means)."""
    rng = SplitMix64(derive_seed(seed, 0xC0DE))
    in_dim = (3 if use_position else 2) * spec.D
    H = (spec.M * spec.K) // 2

    def uni(shape, fan_in, fan_out):
        r = np.sqrt(6.0 / (fan_in + fan_out))
        return (rng.uniform(shape) * 2.0 - 1.0) * r

    if codebooks is None:
        codebooks = uni((spec.M, spec.K, spec.h), spec.K, spec.h)
    return CQParams(
        spec=spec,
        w0=uni((H, in_dim), in_dim, H),
        b0=np.zeros(H),
        w1=uni((spec.M, spec.K, H), H, spec.K),
        b1=np.zeros((spec.M, spec.K)),
        w2=uni((spec.D, 2 * spec.D), 2 * spec.D, spec.D),
        b2=np.zeros(spec.D),
        codebooks=np.asarray(codebooks, dtype=np.float64),
        use_position=use_position,
    )


def params_to_vector(params):
    return np.concatenate([getattr(params, n).ravel() for n in _TENSORS])


def grads_to_vector(grads):
    return np.concatenate([getattr(grads, n).ravel() for n in _TENSORS])


def vector_to_params(vec, template):
    out = {}
    off = 0
    for name in _TENSORS:
        arr = getattr(template, name)
        out[name] = vec[off : off + arr.size].reshape(arr.shape).copy()
        off += arr.size
    return replace(template, **out)


@dataclass
class AdamState:
    m: Gradients
    v: Gradients
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params):
        return cls(m=Gradients.zeros_like(params), v=Gradients.zeros_like(params))


def adam_step(state, params, grads, lr):
    """One Adam update with bias correction; pure (returns new objects)."""
    t = state.t + 1
    new_m, new_v, new_p = {}, {}, {}
    for name in _TENSORS:
        g = getattr(grads, name)
        p = getattr(params, name)
        if g.shape != p.shape:
            raise ShapeMismatch(f"gradient {name} has shape {g.shape}, expected {p.shape}")
        m = state.beta1 * getattr(state.m, name) + (1 - state.beta1) * g
        v = state.beta2 * getattr(state.v, name) + (1 - state.beta2) * g * g
        mhat = m / (1 - state.beta1**t)
        vhat = v / (1 - state.beta2**t)
        new_m[name] = m
        new_v[name] = v
        new_p[name] = p - lr * mhat / (np.sqrt(vhat) + state.eps)
    next_params = replace(params, **new_p)
    next_state = AdamState(m=Gradients(**new_m), v=Gradients(**new_v), t=t,
                           beta1=state.beta1, beta2=state.beta2, eps=state.eps)
    return next_params, next_state


# ---------------------------------------------------------------------------
# gradient checking


def finite_difference_gradcheck(model, loss_fn, grad_fn, step=1e-4):
    """Max relative error of analytic vs central-difference gradients.

    loss_fn(params) -> scalar; grad_fn(params) -> Gradients.  The
    relative error denominator is max(|a|, |b|, 1e-8) per entry.
    """
    analytic = grads_to_vector(grad_fn(model))
    vec = params_to_vector(model)
    numeric = np.empty_like(vec)
    for i in range(vec.size):
        up, down = vec.copy(), vec.copy()
        up[i] += step
        down[i] -= step
        numeric[i] = (loss_fn(vector_to_params(up, model))
                      - loss_fn(vector_to_params(down, model))) / (2 * step)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


def gradcheck(seed=0, M=2, K=4, D=8, n_samples=4, step=1e-4):
    """MSE-loss gradcheck on a freshly initialized random model."""
    spec = make_quantizer_spec("product", M, K, D)
    model = init_cq_params(spec, seed)
    rng = SplitMix64(derive_seed(seed, 1))
    E_t = rng.gaussian((n_samples, D)) * 0.5
    E_bar = rng.gaussian((n_samples, D)) * 0.5
    batch = [(E_t[i], E_bar[i], 0) for i in range(n_samples)]

    def loss_fn(p):
        return loss_mse(p, batch)

    def grad_fn(p):
        return backward(p, batch, LossKind.MSE)

    return finite_difference_gradcheck(model, loss_fn, grad_fn, step)


# ---------------------------------------------------------------------------
# the training loop


def train_cq(tokens_e, tokens_bar, table, triples, teacher, cfg, spec,
             use_position=False, init_codebooks=None):
    """Two-phase training; fully deterministic given cfg.seed.

    Phase 1 minimizes the reconstruction MSE on token (E(t), E(t-bar))
    pairs.  Phase 2 freezes the encoder and fine-tunes decoder +
    composition with the configured ranking loss against cached teacher
    scores.
    """
    tokens_e = check_embedding_matrix(tokens_e, dim=spec.D, name="tokens_e")
    tokens_bar = check_embedding_matrix(tokens_bar, dim=spec.D, name="tokens_bar")
    if tokens_e.shape[0] == 0:
        raise EmptyBatch("training corpus must be nonempty")
    n = tokens_e.shape[0]
    if n > cfg.sample_size:
        idx = SplitMix64(derive_seed(cfg.seed, 0x5A)).shuffle(n)[: cfg.sample_size]
        tokens_e, tokens_bar = tokens_e[idx], tokens_bar[idx]
        n = cfg.sample_size

    model = init_cq_params(spec, cfg.seed, use_position, init_codebooks)

    state = AdamState.for_params(model)
    batch_size = min(cfg.warmup_batch, n)
    for step in range(cfg.warmup_steps):
        srng = SplitMix64(derive_seed(cfg.seed, 1, step))
        idx = srng.randint(n, batch_size)
        eps = sample_gumbel_noise((batch_size, spec.M, spec.K),
                                  derive_seed(cfg.seed, 2, step))
        Y, cache = forward_soft(model, tokens_e[idx], tokens_bar[idx], eps,
                                cfg.tau_at(step))
        dY = 2.0 * (Y - tokens_e[idx])
        grads = backward_soft(model, cache, dY)
        model, state = adam_step(state, model, grads, cfg.warmup_lr)

    if cfg.finetune_steps == 0 or cfg.loss is LossKind.MSE:
        return model

    if not triples:
        raise EmptyBatch("ranking fine-tune requires triples")
    cached = [(teacher(t.query_embeddings, t.pos_doc),
               teacher(t.query_embeddings, t.neg_doc)) for t in triples]

    state = AdamState.for_params(model)
    for step in range(cfg.finetune_steps):
        srng = SplitMix64(derive_seed(cfg.seed, 3, step))
        pick = srng.randint(len(triples), min(cfg.pairs_per_batch, len(triples)))
        batch = [triples[i] for i in pick]
        scores = [cached[i] for i in pick]
        g = GumbelConfig(tau=cfg.tau_end, seed=derive_seed(cfg.seed, 4, step),
                         noise=cfg.finetune_noise)
        _, grads = backward_ranking(model, batch, scores, table, cfg.loss, g)
        # encoder frozen in the fine-tune phase
        grads.w0[:] = 0.0
        grads.b0[:] = 0.0
        grads.w1[:] = 0.0
        grads.b1[:] = 0.0
        model, state = adam_step(state, model, grads, cfg.finetune_lr)
    return model


class ContextualQuantizer(BaseEstimator):
    """sklearn-style wrapper around MSE-only contextual quantizer training.

    fit() expects the token embeddings X and the aligned
    document-independent embeddings X_bar.
    """

    def __init__(self, mode="product", n_books=4, n_codewords=16,
                 steps=2000, lr=1e-3, batch_size=128, seed=0,
                 kmeans_init=True, tau_start=1.0, tau_end=0.05):
        self.mode = mode
        self.n_books = n_books
        self.n_codewords = n_codewords
        self.steps = steps
        self.lr = lr
        self.batch_size = batch_size
        self.seed = seed
        self.kmeans_init = kmeans_init
        self.tau_start = tau_start
        self.tau_end = tau_end

    def fit(self, X, X_bar):
        from .baseline import KMeansConfig, train_pq, train_rq

        X = check_embedding_matrix(X, name="X")
        X_bar = check_embedding_matrix(X_bar, dim=X.shape[1], name="X_bar")
        spec = make_quantizer_spec(self.mode, self.n_books, self.n_codewords, X.shape[1])
        init_books = None
        if self.kmeans_init:
            resid = X - X_bar
            kcfg = KMeansConfig(iterations=10, seed=self.seed)
            try:
                if spec.mode is QuantizerMode.PRODUCT:
                    init_books = train_pq(resid, spec, kcfg).books
                else:
                    init_books = train_rq(resid, spec, kcfg).books
            except Exception:
                init_books = None
        cfg = TrainConfig(warmup_lr=self.lr, warmup_batch=self.batch_size,
                          warmup_steps=self.steps, finetune_steps=0,
                          loss=LossKind.MSE, seed=self.seed,
                          sample_size=max(X.shape[0], 1),
                          tau_start=self.tau_start, tau_end=self.tau_end)
        self.params_ = train_cq(X, X_bar, None, [], None, cfg, spec)
        return self

    def transform(self, X, X_bar):
        """Hard codes for (X, X_bar) pairs; shape (N, M)."""
        self._check_fitted()
        _, _, _, a = encoder_activations(self.params_, X, X_bar)
        p = code_probs(a, 0.0, 1.0)
        return np.argmax(p, axis=-1)

    def reconstruct(self, codes, X_bar):
        """Decode codes and compose with the base embeddings."""
        from .network import decode_delta_matrix

        self._check_fitted()
        delta = decode_delta_matrix(self.params_, np.asarray(codes))
        return compose_matrix(self.params_, delta, X_bar)

    def reconstruction_mse(self, X, X_bar):
        X = check_embedding_matrix(X, name="X")
        rec = self.reconstruct(self.transform(X, X_bar), X_bar)
        return float(np.mean(np.sum((X - rec) ** 2, axis=1)))

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise BadParam("quantizer is not fitted")
