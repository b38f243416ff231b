import numpy as np
import pytest

from oracles import normalized_sim, random_word
from wordseek.augment import (
    EditOp,
    EditOperatorRatios,
    apply_operators,
    augment,
    augment_query_set,
    high_similarity_mass,
    sample_operators,
    similarity_histogram,
)
from wordseek.errors import InvalidInputError
from wordseek.similarity import LATIN_LOWER, Word, normalized_similarity, words_from_texts

KEEP_ONLY = EditOperatorRatios(0, 0, 0, 1)
PAPER_RATIOS = EditOperatorRatios(1, 1, 1, 5)


class TestRatios:
    def test_all_zero_rejected(self):
        with pytest.raises(InvalidInputError):
            EditOperatorRatios(0, 0, 0, 0)

    def test_negative_rejected(self):
        with pytest.raises(InvalidInputError):
            EditOperatorRatios(-1, 1, 1, 1)

    def test_probabilities_normalized(self):
        p = PAPER_RATIOS.probabilities()
        assert p.sum() == pytest.approx(1.0)
        assert p == pytest.approx([0.125, 0.125, 0.125, 0.625])


class TestSampleOperators:
    def test_degenerate_distribution(self, rng):
        ops = sample_operators(5, KEEP_ONLY, rng)
        assert ops == (EditOp.KEEP,) * 5

    def test_length_validated(self, rng):
        with pytest.raises(InvalidInputError):
            sample_operators(0, KEEP_ONLY, rng)

    def test_deterministic_for_fixed_seed(self):
        a = sample_operators(50, PAPER_RATIOS, np.random.default_rng(7))
        b = sample_operators(50, PAPER_RATIOS, np.random.default_rng(7))
        assert a == b

    def test_empirical_frequencies(self):
        rng = np.random.default_rng(99)
        ops = sample_operators(100_000, PAPER_RATIOS, rng)
        expected = {
            EditOp.INSERT: 0.125,
            EditOp.DELETE: 0.125,
            EditOp.REPLACE: 0.125,
            EditOp.KEEP: 0.625,
        }
        for op, p in expected.items():
            freq = sum(o is op for o in ops) / len(ops)
            assert abs(freq - p) < 0.01


class TestApplyOperators:
    def test_true_to_cute(self, make_word, charset):
        # replace t->c, replace r->u, replace u->t, keep e
        ops = (EditOp.REPLACE, EditOp.REPLACE, EditOp.REPLACE, EditOp.KEEP)
        chars = [charset.index_of(c) for c in "cut"]
        out = apply_operators(make_word("true"), ops, chars)
        assert "".join(charset.symbol_at(i) for i in out) == "cute"

    def test_insert_appends_original_then_random(self, make_word, charset):
        out = apply_operators(make_word("a"), (EditOp.INSERT,), [charset.index_of("z")])
        assert [charset.symbol_at(i) for i in out] == ["a", "z"]

    def test_all_delete_gives_empty(self, make_word):
        assert apply_operators(make_word("ab"), (EditOp.DELETE, EditOp.DELETE), []) == ()

    def test_length_mismatch(self, make_word):
        with pytest.raises(InvalidInputError):
            apply_operators(make_word("ab"), (EditOp.KEEP,), [])


class TestAugment:
    def test_all_keep_is_identity(self, make_word, charset, rng):
        for text in ("a", "google", "xyz"):
            w = make_word(text)
            assert augment(w, KEEP_ONLY, charset, rng).indices == w.indices

    def test_never_empty_even_under_delete_pressure(self, make_word, charset):
        rng = np.random.default_rng(3)
        delete_heavy = EditOperatorRatios(0, 100, 0, 1)
        for _ in range(50):
            out = augment(make_word("ab"), delete_heavy, charset, rng)
            assert len(out) >= 1

    def test_length_bounds(self, charset, rng):
        for _ in range(200):
            w = Word.from_text(random_word(rng, LATIN_LOWER, 1, 8), charset)
            out = augment(w, PAPER_RATIOS, charset, rng)
            assert 1 <= len(out) <= 2 * len(w)

    def test_max_len_truncates(self, make_word, charset):
        rng = np.random.default_rng(0)
        insert_only = EditOperatorRatios(1, 0, 0, 0)
        out = augment(make_word("abcdef"), insert_only, charset, rng, max_len=8)
        assert len(out) == 8

    def test_deterministic_for_fixed_seed(self, make_word, charset):
        w = make_word("google")
        a = augment(w, PAPER_RATIOS, charset, np.random.default_rng(11))
        b = augment(w, PAPER_RATIOS, charset, np.random.default_rng(11))
        assert a.indices == b.indices


class TestAugmentQuerySet:
    def test_all_keep_single(self, make_word, charset, rng):
        q = [make_word("taxi")]
        out = augment_query_set(q, KEEP_ONLY, charset, rng)
        assert [w.text for w in out] == ["taxi", "taxi"]

    def test_size_and_prefix(self, charset, rng):
        q = words_from_texts(["one", "two", "three"], charset)
        out = augment_query_set(q, PAPER_RATIOS, charset, rng)
        assert len(out) == 6
        assert [w.text for w in out[:3]] == ["one", "two", "three"]

    def test_pseudoword_i_comes_from_query_i(self, charset):
        rng = np.random.default_rng(5)
        q = words_from_texts(["aaaaaaaa", "zzzzzzzz"], charset)
        out = augment_query_set(q, PAPER_RATIOS, charset, rng)
        # with keep-heavy ratios each pseudoword stays closer to its source
        assert normalized_similarity(out[2], q[0]) > normalized_similarity(out[2], q[1])
        assert normalized_similarity(out[3], q[1]) > normalized_similarity(out[3], q[0])

    def test_pairs_more_similar_than_random(self, charset):
        rng = np.random.default_rng(21)
        lexicon = words_from_texts(
            list({random_word(rng, LATIN_LOWER, 3, 10) for _ in range(1100)})[:1000], charset
        )
        out = augment_query_set(lexicon, PAPER_RATIOS, charset, rng)
        n = len(lexicon)
        paired = np.mean(
            [normalized_sim(lexicon[i].text, out[n + i].text) for i in range(n)]
        )
        perm = rng.permutation(n)
        random_pairs = np.mean(
            [normalized_sim(lexicon[i].text, lexicon[j].text) for i, j in enumerate(perm) if i != j]
        )
        assert paired > random_pairs


class TestSimilarityHistogram:
    def test_identical_words_top_bin(self, make_word):
        freqs = similarity_histogram([make_word("a"), make_word("a")], bins=10)
        assert freqs[-1] == 1.0
        assert freqs.sum() == pytest.approx(1.0)

    def test_disjoint_words_bottom_bin(self, make_word):
        assert normalized_sim("ab", "xy") == 0.0
        freqs = similarity_histogram([make_word("ab"), make_word("xy")], bins=10)
        assert freqs[0] == 1.0

    def test_frequencies_sum_to_one(self, charset, rng):
        words = words_from_texts([random_word(rng, LATIN_LOWER, 2, 8) for _ in range(30)], charset)
        freqs = similarity_histogram(words, bins=7)
        assert freqs.sum() == pytest.approx(1.0)

    def test_validates_inputs(self, make_word):
        with pytest.raises(InvalidInputError):
            similarity_histogram([make_word("a")], bins=5)
        with pytest.raises(InvalidInputError):
            similarity_histogram([make_word("a"), make_word("b")], bins=1)

    def test_augmented_mass_shifts_high(self, charset):
        rng = np.random.default_rng(42)
        texts = list({random_word(rng, LATIN_LOWER, 3, 9) for _ in range(600)})[:500]
        lexicon = words_from_texts(texts, charset)
        augmented = augment_query_set(lexicon, PAPER_RATIOS, charset, rng)
        base = high_similarity_mass(lexicon)
        shifted = high_similarity_mass(augmented)
        assert shifted > base
