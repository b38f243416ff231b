import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from wordseek.similarity import Charset, Word


@pytest.fixture
def charset():
    return Charset.latin_lower()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def make_word(charset):
    def _make(text):
        return Word.from_text(text, charset)

    return _make
