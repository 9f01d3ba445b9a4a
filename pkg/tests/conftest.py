"""Shared fixtures: synthetic corpora, vector tables, reduced models."""

import numpy as np
import pytest

from csner.corpus_io import Dataset, parse_conll
from csner.embeddings import (
    CharVocabulary,
    EmbeddingTable,
    Vocabulary,
    build_char_vocab,
)
from csner.model import Tables, init_params

# 30 bilingual sentences, 4 entity categories, every token carrying one
# fixed tag; dense in entities so that span-level scores move early.
OVERFIT_SENTENCES = """\
Maria/B-PER Madrid/B-LOC va/O
Kendrick/B-PER Lamar/I-PER Coachella/B-EVENT sings/O
Jose/B-PER iPhone/B-PROD compra/O
Westland/B-LOC Mall/I-LOC Nutella/B-PROD en/O
Navidad/B-EVENT Madrid/B-LOC es/O
Texas/B-LOC iPhone/B-PROD is/O
Maria/B-PER Nutella/B-PROD loves/O
Coachella/B-EVENT Texas/B-LOC en/O
Jose/B-PER Navidad/B-EVENT canta/O
Kendrick/B-PER Lamar/I-PER Texas/B-LOC va/O
Madrid/B-LOC Nutella/B-PROD tiene/O
iPhone/B-PROD Navidad/B-EVENT para/O
Maria/B-PER Coachella/B-EVENT canta/O
Westland/B-LOC Mall/I-LOC opens/O es/O
Maria/B-PER iPhone/B-PROD buys/O
Nutella/B-PROD Coachella/B-EVENT is/O
Jose/B-PER Madrid/B-LOC vive/O
Texas/B-LOC Navidad/B-EVENT in/O
Kendrick/B-PER Lamar/I-PER Nutella/B-PROD loves/O
Maria/B-PER Texas/B-LOC va/O
iPhone/B-PROD Madrid/B-LOC en/O
Coachella/B-EVENT Navidad/B-EVENT y/O
Jose/B-PER Westland/B-LOC Mall/I-LOC en/O
Nutella/B-PROD iPhone/B-PROD y/O
Maria/B-PER Navidad/B-EVENT ama/O
Kendrick/B-PER Lamar/I-PER Madrid/B-LOC en/O
Texas/B-LOC Nutella/B-PROD has/O
Coachella/B-EVENT iPhone/B-PROD at/O
Jose/B-PER Texas/B-LOC y/O Maria/B-PER
Westland/B-LOC Mall/I-LOC Navidad/B-EVENT en/O
"""


def tagged_text(spec: str) -> str:
    """'tok/TAG tok/TAG' lines -> two-column CoNLL text."""
    lines = []
    for sentence in spec.strip().split("\n"):
        for pair in sentence.split(" "):
            token, tag = pair.rsplit("/", 1)
            lines.append(f"{token}\t{tag}")
        lines.append("")
    return "\n".join(lines) + "\n"


def corpus_from(spec: str, split: str = "") -> Dataset:
    return parse_conll(tagged_text(spec), split)


def random_table(words, dim, seed=123, scale=1.5) -> EmbeddingTable:
    """A merged-style table with synthetic vectors for the given words."""
    rng = np.random.default_rng(seed)
    vocab = Vocabulary(sorted(words), specials=True)
    vectors = np.vstack(
        [
            np.zeros(dim),
            rng.normal(size=(3, dim)) * 0.1,
            rng.normal(size=(len(vocab) - 4, dim)) * scale,
        ]
    )
    return EmbeddingTable(vocab, vectors)


def write_vec_file(path, words, dim, seed=123, scale=1.5) -> None:
    rng = np.random.default_rng(seed)
    with open(path, "w", encoding="utf-8") as fp:
        fp.write(f"{len(words)} {dim}\n")
        for word in words:
            values = rng.normal(size=dim) * scale
            fp.write(word + " " + " ".join(f"{v:.6f}" for v in values) + "\n")


@pytest.fixture(scope="session")
def overfit_corpus() -> Dataset:
    return corpus_from(OVERFIT_SENTENCES, "train")


@pytest.fixture(scope="session")
def overfit_tables(overfit_corpus) -> Tables:
    words = {t for s in overfit_corpus for t in s.tokens}
    return Tables(random_table(words, 300), build_char_vocab(overfit_corpus))


# reduced setup for gradient checks: 2 sentences, tiny dimensions
MICRO_SENTENCES = """\
Ana/B-PER come/O pan/O
el/O rio/B-LOC azul/O
"""

MICRO_DIMS = dict(char_dim=4, char_hidden=6, word_dim=8, word_hidden=10, n_tags=5)


@pytest.fixture()
def micro_setup():
    corpus = corpus_from(MICRO_SENTENCES)
    words = {t for s in corpus for t in s.tokens}
    rng = np.random.default_rng(7)
    vocab = Vocabulary(sorted(words), specials=True)
    vectors = np.vstack([np.zeros(8), rng.normal(size=(3, 8)), rng.normal(size=(len(vocab) - 4, 8))])
    table = EmbeddingTable(vocab, vectors)
    chars = CharVocabulary({c for w in words for c in w})
    params = init_params(
        n_chars=len(chars),
        word_dim=8,
        rng=rng,
        char_dim=MICRO_DIMS["char_dim"],
        char_hidden=MICRO_DIMS["char_hidden"],
        word_hidden=MICRO_DIMS["word_hidden"],
        n_tags=MICRO_DIMS["n_tags"],
        dtype=np.float64,
        special_rows=vectors[:4],
    )
    return corpus, Tables(table, chars), params


def small_model(n_chars=12, word_dim=6, seed=3, dtype=np.float64, **dims):
    defaults = dict(char_dim=3, char_hidden=4, word_hidden=5, n_tags=19)
    defaults.update(dims)
    rng = np.random.default_rng(seed)
    return init_params(n_chars=n_chars, word_dim=word_dim, rng=rng, dtype=dtype, **defaults)
