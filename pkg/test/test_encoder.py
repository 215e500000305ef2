"""Tests for the encoder contract, ReferenceEncoder and the backend factory."""

import sys

import numpy as np
import pytest

from src.config_manager import BackendSpec
from src.encoder import (
    CLS_TOKEN, PAD_TOKEN, SEP_TOKEN, UNK_TOKEN,
    ReferenceEncoder, TokenizedText, Vocabulary, basic_tokenize, build_vocabulary, create_backend, score,
)
from src.exceptions import ConfigError, EncoderError, UnsupportedCapabilityError, ValidationError


class TestVocabulary:
    """Test vocabulary construction."""

    def test_specials_first_then_sorted(self):
        """Test [PAD]=0, [UNK]=1, [CLS]=2, [SEP]=3, then sorted tokens."""
        vocab = build_vocabulary(["b a", "c, a"])
        assert vocab.tokens == [PAD_TOKEN, UNK_TOKEN, CLS_TOKEN, SEP_TOKEN, ",", "a", "b", "c"]

    def test_basic_tokenize(self):
        """Test lowercase word runs and single punctuation."""
        assert basic_tokenize("COVID-19 vaccines!") == ["covid", "-", "19", "vaccines", "!"]

    def test_rejects_missing_specials(self):
        """Test the special prefix is required."""
        with pytest.raises(EncoderError):
            Vocabulary(["a", "b"])


class TestTokenize:
    """Test ReferenceEncoder tokenization."""

    def test_structure(self, encoder):
        """Test [CLS] content [SEP] with special and attention masks."""
        tok = encoder.tokenize("Vaccine trials")
        assert tok.tokens == (CLS_TOKEN, "vaccine", "trials", SEP_TOKEN)
        assert tok.special_mask == (True, False, False, True)
        assert all(tok.attention_mask)
        assert tok.content_positions() == [1, 2]

    def test_unknown_word_maps_to_unk(self, encoder):
        """Test out-of-vocabulary words become [UNK]."""
        assert encoder.tokenize("zebra virus").tokens[1] == UNK_TOKEN

    def test_truncation(self, vocabulary):
        """Test content is cut to max_seq_len - 2 tokens."""
        enc = ReferenceEncoder.create(vocabulary, embedding_dim=4, max_seq_len=5, seed=1)
        tok = enc.tokenize("the virus emerged in bats and spread")
        assert len(tok) == 5
        assert tok.tokens[-1] == SEP_TOKEN

    def test_empty_text(self, encoder):
        """Test text without content tokens raises."""
        with pytest.raises(EncoderError):
            encoder.tokenize("   ")

    def test_title_span_validated(self, encoder):
        """Test title spans may not cover special tokens."""
        tok = encoder.tokenize("vaccine trials")
        with pytest.raises(EncoderError):
            tok.with_title_span((0, 2))
        assert tok.with_title_span((1, 2)).title_span == (1, 2)


class TestForward:
    """Test pooling and the closed-form gradient."""

    def test_encode_is_mean_of_content_outputs(self, encoder):
        """Test pooled vector averages positions 1..L-2 only."""
        tok = encoder.tokenize("virus wave")
        outputs = encoder.forward_outputs(encoder.embed(tok), tok)
        np.testing.assert_allclose(encoder.encode("virus wave"), outputs[1:3].mean(axis=0), rtol=0, atol=1e-12)

    @staticmethod
    def _numeric_gradient(encoder, tok, x, fixed, h=1e-5):
        numeric = np.zeros_like(x)
        for i in range(x.shape[0]):
            for j in range(x.shape[1]):
                plus, minus = x.copy(), x.copy()
                plus[i, j] += h
                minus[i, j] -= h
                numeric[i, j] = (score(fixed, encoder.forward_pooled(plus, tok))
                                 - score(fixed, encoder.forward_pooled(minus, tok))) / (2 * h)
        return numeric

    def test_gradient_matches_finite_differences(self, encoder):
        """Test central differences (h=1e-5) agree within 1e-6 on real embeddings."""
        q_vec = encoder.encode("where did the virus come from", role="query")
        tok = encoder.tokenize("bats spread the virus")
        x = encoder.embed(tok)
        grad = encoder.gradient_wrt_embeddings(tok, x, q_vec)
        np.testing.assert_allclose(grad, self._numeric_gradient(encoder, tok, x, q_vec), atol=1e-6)

    def test_gradient_on_random_inputs(self, encoder, vocabulary):
        """Test 20 random 5-token inputs with entries in [-1, 1] against central differences."""
        rng = np.random.default_rng(31)
        words = vocabulary.tokens[4:]
        for _ in range(20):
            tok = encoder.tokenize(" ".join(rng.choice(words, size=5)))
            assert len(tok.content_positions()) == 5
            x = rng.uniform(-1.0, 1.0, size=(len(tok), encoder.embedding_dim))
            fixed = rng.uniform(-1.0, 1.0, size=encoder.embedding_dim)
            grad = encoder.gradient_wrt_embeddings(tok, x, fixed)
            np.testing.assert_allclose(grad, self._numeric_gradient(encoder, tok, x, fixed), atol=1e-6)

    def test_encode_composes_the_pipeline(self, encoder):
        """Test encode equals forward_pooled(embed(tokenize(t)), tokenize(t)) exactly."""
        for text in ("virus wave", "Vaccine trials measured efficacy", "zebra bats"):
            tok = encoder.tokenize(text)
            np.testing.assert_array_equal(encoder.encode(text), encoder.forward_pooled(encoder.embed(tok), tok))

    def test_pooling_ignores_excluded_rows(self, encoder):
        """Test perturbing [CLS], [SEP] and unattended rows leaves the pooled vector unchanged."""
        base = encoder.tokenize("virus wave")
        pad_id = encoder.pad_id
        tok = TokenizedText(
            token_ids=base.token_ids + (pad_id, pad_id),
            tokens=base.tokens + (PAD_TOKEN, PAD_TOKEN),
            special_mask=base.special_mask + (False, False),
            attention_mask=base.attention_mask + (False, False),
        )
        x = encoder.embed(tok)
        pooled = encoder.forward_pooled(x, tok)
        rng = np.random.default_rng(5)
        for row in (0, 3, 4, 5):
            perturbed = x.copy()
            perturbed[row] += rng.uniform(-1.0, 1.0, size=encoder.embedding_dim)
            np.testing.assert_array_equal(encoder.forward_pooled(perturbed, tok), pooled)
        np.testing.assert_allclose(pooled, encoder.encode("virus wave"), rtol=0, atol=1e-15)

    def test_zero_embeddings_give_zero_rows(self, vocabulary, encoder):
        """Test zero token and position tables embed every input as zero rows."""
        d = encoder.embedding_dim
        zero = ReferenceEncoder(vocabulary, np.zeros((len(vocabulary), d)), np.zeros((16, d)),
                                encoder.W, encoder.b, seed=0)
        tok = zero.tokenize("vaccine trials measured efficacy")
        np.testing.assert_array_equal(zero.embed(tok), np.zeros((len(tok), d)))
        np.testing.assert_array_equal(zero.encode("bats virus"), np.tanh(encoder.b))

    def test_special_rows_have_zero_gradient(self, encoder):
        """Test [CLS] and [SEP] rows do not reach the pooled vector."""
        tok = encoder.tokenize("vaccine efficacy")
        grad = encoder.gradient_wrt_embeddings(tok, encoder.embed(tok), np.ones(8))
        assert np.all(grad[0] == 0) and np.all(grad[-1] == 0)

    def test_wrong_shape_input(self, encoder):
        """Test embeddings must be L x d."""
        tok = encoder.tokenize("virus")
        with pytest.raises(ValidationError):
            encoder.forward_pooled(np.zeros((2, 8)), tok)

    def test_score_dimension_mismatch(self):
        """Test score rejects vectors of different sizes."""
        with pytest.raises(ValidationError):
            score(np.ones(3), np.ones(4))

    def test_parameters_read_only(self, encoder):
        """Test parameters cannot be modified in place."""
        with pytest.raises(ValueError):
            encoder.E[0, 0] = 1.0


class TestDeterminism:
    """Test seeding and fingerprints."""

    def test_same_seed_same_fingerprint(self, vocabulary, encoder):
        """Test two encoders from one seed are identical."""
        twin = ReferenceEncoder.create(vocabulary, embedding_dim=8, max_seq_len=64, seed=7)
        assert twin.fingerprint == encoder.fingerprint
        np.testing.assert_array_equal(twin.encode("stock returns"), encoder.encode("stock returns"))

    def test_different_seed_different_fingerprint(self, encoder, other_encoder):
        """Test seeds change the fingerprint."""
        assert encoder.fingerprint != other_encoder.fingerprint
        assert encoder.fingerprint.startswith("reference:")


class TestPersistence:
    """Test save/load of parameter files."""

    def test_round_trip(self, tmp_path, encoder):
        """Test a saved encoder loads with the same fingerprint and outputs."""
        path = tmp_path / "enc.bin"
        encoder.save(path)
        loaded = ReferenceEncoder.load(path)
        assert loaded.fingerprint == encoder.fingerprint
        np.testing.assert_array_equal(loaded.encode("virus"), encoder.encode("virus"))

    def test_truncated_file(self, tmp_path, encoder):
        """Test a truncated file raises EncoderError."""
        path = tmp_path / "enc.bin"
        encoder.save(path)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(EncoderError, match="corrupted"):
            ReferenceEncoder.load(path)

    def test_bad_magic(self, tmp_path):
        """Test a foreign file raises EncoderError."""
        path = tmp_path / "enc.bin"
        path.write_bytes(b"\x00" * 64)
        with pytest.raises(EncoderError):
            ReferenceEncoder.load(path)


class TestFactory:
    """Test create_backend."""

    def test_reference_from_texts(self, documents):
        """Test the reference backend builds its vocabulary from texts."""
        spec = BackendSpec(embedding_dim=8, max_seq_len=64, seed=7)
        backend = create_backend(spec, run_seed=0, texts=[d.full_text() for d in documents])
        assert isinstance(backend, ReferenceEncoder)
        assert backend.seed == 7

    def test_reference_from_params(self, tmp_path, encoder):
        """Test params_path loads a saved encoder."""
        encoder.save(tmp_path / "enc.bin")
        backend = create_backend(BackendSpec(params_path=str(tmp_path / "enc.bin")), run_seed=0)
        assert backend.fingerprint == encoder.fingerprint

    def test_reference_without_texts(self):
        """Test a reference backend needs texts or a parameter file."""
        with pytest.raises(ConfigError):
            create_backend(BackendSpec(), run_seed=0)

    def test_external_without_extras(self, monkeypatch):
        """Test missing torch surfaces as UnsupportedCapabilityError."""
        monkeypatch.setitem(sys.modules, "torch", None)
        with pytest.raises(UnsupportedCapabilityError):
            create_backend(BackendSpec(kind="external"), run_seed=0)
