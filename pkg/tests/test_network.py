"""Tests for the neural encoder, codebook decoder, and composition layer."""

import numpy as np
import pytest

from ctxquant.errors import BadDistribution, BadParam, DimMismatch
from ctxquant.network import (
    CQParams,
    GumbelConfig,
    code_probs,
    compose,
    compose_matrix,
    decode_delta,
    decode_delta_matrix,
    encoder_activations,
    encoder_forward,
    gumbel_from_uniform,
    position_features,
    quantize_document,
    reconstruct_document,
    sample_gumbel_noise,
    soft_decode_delta,
    soft_decode_delta_matrix,
    softplus,
)
from ctxquant.rng import SplitMix64
from ctxquant.train import init_cq_params
from ctxquant.types import DocIndepTable, DocumentTokens, make_quantizer_spec


def zero_params(mode="product", M=2, K=4, D=8, codebooks=None):
    spec = make_quantizer_spec(mode, M, K, D)
    H = (M * K) // 2
    if codebooks is None:
        codebooks = np.zeros((M, K, spec.h))
    return CQParams(
        spec=spec,
        w0=np.zeros((H, 2 * D)), b0=np.zeros(H),
        w1=np.zeros((M, K, H)), b1=np.zeros((M, K)),
        w2=np.zeros((D, 2 * D)), b2=np.zeros(D),
        codebooks=codebooks,
    )


class TestBuildingBlocks:
    def test_softplus_at_zero(self):
        assert softplus(0.0) == pytest.approx(np.log(2.0))

    def test_softplus_overflow_safe(self):
        assert softplus(1000.0) == pytest.approx(1000.0)
        assert softplus(-1000.0) == pytest.approx(0.0, abs=1e-12)

    def test_gumbel_at_exp_minus_one(self):
        # u = 1/e gives -log(-log(u)) = -log(1) = 0 exactly
        assert gumbel_from_uniform(np.exp(-1.0)) == pytest.approx(0.0, abs=1e-12)

    def test_gumbel_clamps_endpoints(self):
        assert np.isfinite(gumbel_from_uniform(0.0))
        assert np.isfinite(gumbel_from_uniform(1.0))

    def test_sample_gumbel_noise_deterministic(self):
        a = sample_gumbel_noise((3, 2, 4), 42)
        b = sample_gumbel_noise((3, 2, 4), 42)
        assert np.array_equal(a, b)

    def test_position_features_at_zero(self):
        feat = position_features([0], 8)[0]
        assert np.allclose(feat[0::2], 0.0)  # sin(0)
        assert np.allclose(feat[1::2], 1.0)  # cos(0)

    def test_position_features_bounded(self):
        feat = position_features(np.arange(50), 16)
        assert np.all(np.abs(feat) <= 1.0 + 1e-12)


class TestCodeProbs:
    def test_ratio_example(self):
        # with eps = 0 and tau = 1 the distribution is a / sum(a)
        p = code_probs(np.array([1.0, 2.0, 4.0, 1.0]), 0.0, 1.0)
        assert np.allclose(p, [0.125, 0.25, 0.5, 0.125])

    def test_rows_on_simplex(self):
        a = softplus(SplitMix64(0).gaussian((5, 3, 4)))
        p = code_probs(a, 0.0, 1.0)
        assert np.allclose(p.sum(axis=-1), 1.0)
        assert np.all(p >= 0)

    def test_low_temperature_sharpens(self):
        a = np.array([1.0, 2.0, 4.0, 1.0])
        p = code_probs(a, 0.0, 0.05)
        assert p[2] > 0.999
        assert np.argmax(p) == np.argmax(a)

    def test_floor_handles_tiny_activations(self):
        p = code_probs(np.array([0.0, 0.0, 1.0]), 0.0, 1.0)
        assert np.all(np.isfinite(p))
        assert p[2] == pytest.approx(1.0, abs=1e-9)


class TestEncoder:
    def test_zero_weights_give_uniform_codes(self):
        params = zero_params()
        _, h, z1, a = encoder_activations(params, np.ones((3, 8)), np.ones((3, 8)))
        assert np.allclose(h, 0.0)
        assert np.allclose(a, np.log(2.0))  # softplus(0)
        p = code_probs(a, 0.0, 1.0)
        assert np.allclose(p, 1.0 / 4.0)

    def test_row_count_mismatch(self):
        params = zero_params()
        with pytest.raises(DimMismatch):
            encoder_activations(params, np.zeros((2, 8)), np.zeros((3, 8)))

    def test_forward_trace_fields(self):
        params = init_cq_params(make_quantizer_spec("product", 2, 4, 8), seed=0)
        rng = SplitMix64(1)
        trace = encoder_forward(params, rng.gaussian(8), rng.gaussian(8),
                                GumbelConfig(seed=5))
        assert trace.code.shape == (2,)
        assert np.all((trace.code >= 0) & (trace.code < 4))
        assert np.allclose(trace.p.sum(axis=-1), 1.0)

    def test_hard_mode_is_noise_free_argmax(self):
        params = init_cq_params(make_quantizer_spec("product", 2, 4, 8), seed=0)
        rng = SplitMix64(2)
        e_t, e_bar = rng.gaussian(8), rng.gaussian(8)
        t1 = encoder_forward(params, e_t, e_bar, GumbelConfig(hard=True, seed=1))
        t2 = encoder_forward(params, e_t, e_bar, GumbelConfig(hard=True, seed=999))
        assert np.array_equal(t1.code, t2.code)
        assert np.array_equal(t1.code, np.argmax(t1.a, axis=-1))

    def test_noise_off_soft_matches_hard_code(self):
        params = init_cq_params(make_quantizer_spec("product", 2, 4, 8), seed=3)
        rng = SplitMix64(4)
        e_t, e_bar = rng.gaussian(8), rng.gaussian(8)
        soft = encoder_forward(params, e_t, e_bar, GumbelConfig(noise=False))
        hard = encoder_forward(params, e_t, e_bar, GumbelConfig(hard=True))
        assert np.array_equal(soft.code, hard.code)


class TestDecoder:
    def test_product_decode_concatenates(self):
        books = np.array([
            [[1.0, 2.0], [3.0, 4.0]],
            [[5.0, 6.0], [7.0, 8.0]],
        ])
        params = zero_params(M=2, K=2, D=4, codebooks=books)
        out = decode_delta(params, [1, 0])
        assert np.array_equal(out, [3.0, 4.0, 5.0, 6.0])

    def test_additive_decode_sums(self):
        books = np.array([
            [[1.0, 2.0], [3.0, 4.0]],
            [[10.0, 20.0], [30.0, 40.0]],
        ])
        params = zero_params(mode="additive", M=2, K=2, D=2, codebooks=books)
        out = decode_delta(params, [1, 1])
        assert np.array_equal(out, [33.0, 44.0])

    def test_soft_decode_is_mixture(self):
        books = np.array([[[0.0, 0.0], [4.0, 8.0]]])
        params = zero_params(M=1, K=2, D=2, codebooks=books)
        out = soft_decode_delta(params, np.array([[0.25, 0.75]]))
        assert np.allclose(out, [3.0, 6.0])

    def test_soft_decode_onehot_equals_hard(self):
        params = init_cq_params(make_quantizer_spec("product", 2, 4, 8), seed=0)
        p = np.zeros((3, 2, 4))
        codes = np.array([[1, 3], [0, 0], [2, 1]])
        for i, c in enumerate(codes):
            p[i, np.arange(2), c] = 1.0
        assert np.allclose(soft_decode_delta_matrix(params, p),
                           decode_delta_matrix(params, codes))

    def test_soft_decode_rejects_non_simplex(self):
        params = zero_params(M=1, K=2, D=2)
        with pytest.raises(BadDistribution):
            soft_decode_delta(params, np.array([[0.5, 0.9]]))


class TestComposition:
    def test_zero_weights_give_zero_output(self):
        params = zero_params()
        out = compose(params, np.ones(8), np.ones(8))
        assert np.allclose(out, 0.0)

    def test_matches_reference_formula(self):
        params = init_cq_params(make_quantizer_spec("product", 2, 4, 8), seed=7)
        rng = SplitMix64(8)
        delta, e_bar = rng.gaussian(8), rng.gaussian(8)
        expect = np.tanh(params.w2 @ np.concatenate([delta, e_bar]) + params.b2)
        assert np.allclose(compose(params, delta, e_bar), expect)

    def test_output_bounded(self):
        params = init_cq_params(make_quantizer_spec("product", 2, 4, 8), seed=7)
        out = compose_matrix(params, SplitMix64(0).gaussian((20, 8)) * 10,
                             SplitMix64(1).gaussian((20, 8)) * 10)
        assert np.all(np.abs(out) <= 1.0)  # tanh saturates to 1.0 in float64


class TestDocumentPipeline:
    def _setup(self):
        spec = make_quantizer_spec("product", 2, 4, 8)
        params = init_cq_params(spec, seed=0)
        table = DocIndepTable(rows=SplitMix64(1).gaussian((16, 8)) * 0.3)
        doc = DocumentTokens(doc_id=7, token_ids=[3, 1, 15],
                             embeddings=SplitMix64(2).gaussian((3, 8)) * 0.3)
        return params, table, doc

    def test_quantize_requires_hard_mode(self):
        params, table, doc = self._setup()
        with pytest.raises(BadParam):
            quantize_document(params, doc, table, GumbelConfig(hard=False))

    def test_quantize_then_reconstruct_shapes(self):
        params, table, doc = self._setup()
        codes = quantize_document(params, doc, table, GumbelConfig(hard=True))
        assert codes.codes.shape == (3, 2)
        assert codes.doc_id == 7
        rec = reconstruct_document(params, codes, table)
        assert rec.shape == (3, 8)

    def test_quantize_is_deterministic(self):
        params, table, doc = self._setup()
        a = quantize_document(params, doc, table, GumbelConfig(hard=True, seed=0))
        b = quantize_document(params, doc, table, GumbelConfig(hard=True, seed=123))
        assert np.array_equal(a.codes, b.codes)

    def test_empty_document(self):
        params, table, _ = self._setup()
        doc = DocumentTokens(doc_id=0, token_ids=[], embeddings=np.zeros((0, 8)))
        codes = quantize_document(params, doc, table, GumbelConfig(hard=True))
        assert codes.codes.shape == (0, 2)
        assert reconstruct_document(params, codes, table).shape == (0, 8)

    def test_matches_per_token_path(self):
        # the batched document path must agree with encoding tokens one
        # at a time through the single-vector front end
        params, table, doc = self._setup()
        batched = quantize_document(params, doc, table, GumbelConfig(hard=True))
        e_bars = table.lookup(doc.token_ids)
        for i in range(doc.n_tokens):
            trace = encoder_forward(params, doc.embeddings[i], e_bars[i],
                                    GumbelConfig(hard=True))
            assert np.array_equal(trace.code, batched.codes[i])


class TestCQParamsValidation:
    def test_wrong_shape_rejected(self):
        spec = make_quantizer_spec("product", 2, 4, 8)
        with pytest.raises(BadParam):
            CQParams(spec=spec, w0=np.zeros((3, 3)), b0=np.zeros(4),
                     w1=np.zeros((2, 4, 4)), b1=np.zeros((2, 4)),
                     w2=np.zeros((8, 16)), b2=np.zeros(8),
                     codebooks=np.zeros((2, 4, 4)))

    def test_odd_mk_rejected(self):
        spec = make_quantizer_spec("product", 1, 3, 8)
        with pytest.raises(BadParam):
            CQParams(spec=spec, w0=np.zeros((1, 16)), b0=np.zeros(1),
                     w1=np.zeros((1, 3, 1)), b1=np.zeros((1, 3)),
                     w2=np.zeros((8, 16)), b2=np.zeros(8),
                     codebooks=np.zeros((1, 3, 8)))
