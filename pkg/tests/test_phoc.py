import numpy as np
import pytest

from wordseek.errors import DegenerateInputError, InvalidInputError
from wordseek.phoc import DEFAULT_LEVELS, phoc_dimension, phoc_encode, phoc_rank
from wordseek.similarity import Charset, Word


@pytest.fixture
def tiny_charset():
    return Charset(tuple("ab"))


class TestDimension:
    def test_table_anchor_1019(self):
        charset = Charset(tuple(chr(0x4E00 + i) for i in range(1019)))
        assert phoc_dimension(charset, (2, 3, 4, 5)) == 14266

    def test_latin_36(self, charset):
        assert phoc_dimension(charset, (2, 3, 4, 5)) == 504

    def test_single_symbol_single_level(self):
        assert phoc_dimension(Charset(("a",)), (2,)) == 2

    def test_empty_levels_rejected(self, charset):
        with pytest.raises(InvalidInputError):
            phoc_dimension(charset, ())


class TestEncode:
    def test_single_char_occupies_both_halves(self):
        charset = Charset(("a",))
        vec = phoc_encode(Word.from_text("a", charset), charset, levels=(2,))
        assert vec.bits.tolist() == [1, 1]

    def test_deterministic(self, charset, make_word):
        a = phoc_encode(make_word("motel"), charset)
        b = phoc_encode(make_word("motel"), charset)
        assert np.array_equal(a.bits, b.bits)

    def test_ab_level2_regions(self, tiny_charset):
        vec = phoc_encode(Word.from_text("ab", tiny_charset), tiny_charset, levels=(2,))
        # layout: region 0 (a, b), region 1 (a, b)
        assert vec.bits.tolist() == [1, 0, 0, 1]

    def test_length_matches_dimension(self, charset, make_word):
        for text in ("a", "taxi", "abcdefghij"):
            vec = phoc_encode(make_word(text), charset)
            assert len(vec) == phoc_dimension(charset, DEFAULT_LEVELS)

    def test_permutation_sensitive(self, tiny_charset):
        ab = phoc_encode(Word.from_text("ab", tiny_charset), tiny_charset, levels=(1, 2))
        ba = phoc_encode(Word.from_text("ba", tiny_charset), tiny_charset, levels=(1, 2))
        assert not np.array_equal(ab.bits, ba.bits)

    def test_wrong_charset_rejected(self, tiny_charset, charset, make_word):
        with pytest.raises(InvalidInputError):
            phoc_encode(make_word("ab"), tiny_charset)


class TestRank:
    def test_exact_match_scores_one(self, charset, make_word):
        q = make_word("taxi")
        exact = phoc_encode(q, charset).bits.astype(np.float64)
        score, ranked = phoc_rank(q, [exact], charset)
        assert score == pytest.approx(1.0)
        assert ranked[0][0] == 0

    def test_zero_vector_rejected(self, charset, make_word):
        q = make_word("taxi")
        dim = phoc_dimension(charset, DEFAULT_LEVELS)
        with pytest.raises(DegenerateInputError):
            phoc_rank(q, [np.zeros(dim)], charset)

    def test_image_score_is_max(self, charset, make_word):
        q = make_word("taxi")
        exact = phoc_encode(q, charset).bits.astype(np.float64)
        noisy = exact * 0.2 + 0.4  # lower cosine than exact
        score, ranked = phoc_rank(q, [noisy, exact], charset)
        assert ranked[0][0] == 1
        assert score == ranked[0][1]
        assert ranked[0][1] > ranked[1][1]

    def test_dimension_mismatch(self, charset, make_word):
        with pytest.raises(InvalidInputError):
            phoc_rank(make_word("taxi"), [np.ones(3)], charset)
