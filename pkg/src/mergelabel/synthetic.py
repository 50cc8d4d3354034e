"""Seeded generator of small nested-NER corpora with matching word vectors.

Sentences are filler words interleaved with entity phrases drawn from a
handful of templates, up to three nesting levels deep, e.g.::

    Kessia  Minister  Talo  Verin      (GPE / TITLE / PER, inside PER, inside PER)
    Minister of the Kessia ministry    (TITLE, GPE inside ORG, all inside PER)

Five entity types: PER, TITLE, GPE, ORG, LOC.
"""

from __future__ import annotations

import numpy as np

from .data import Article, Corpus, Sentence, Span, labels_from_spans, copy_spans_up

N_LEVELS = 3
TYPES = ("GPE", "LOC", "ORG", "PER", "TITLE")

_CLASS_SIZES = {
    "given": 22,
    "surname": 22,
    "gpe": 22,
    "loc": 16,
    "title": 14,
    "orgnoun": 12,
    "verb": 30,
    "noun": 30,
    "adj": 19,
}
_FUNCTION_WORDS = ["the", "of", "a", "in", "and", "said", "to", "on", "with", "for", "at", "by", "."]
_CAPITALISED = {"given", "surname", "gpe", "loc", "title"}
_ONSETS = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "tr", "st", "kh"]
_VOWELS = ["a", "e", "i", "o", "u", "ai", "ou"]


def _make_words(rng: np.random.Generator) -> dict[str, list[str]]:
    used = set(_FUNCTION_WORDS)
    classes = {}
    for name, size in _CLASS_SIZES.items():
        words = []
        while len(words) < size:
            n_syll = int(rng.integers(2, 4))
            w = "".join(rng.choice(_ONSETS) + rng.choice(_VOWELS) for _ in range(n_syll))
            if name in ("verb",):
                w += "ed"
            if w in used:
                continue
            used.add(w)
            words.append(w.capitalize() if name in _CAPITALISED else w)
        classes[name] = words
    return classes


class SyntheticGrammar:
    """Vocabulary (200 words) plus entity templates; fully determined by ``seed``."""

    def __init__(self, seed: int = 0):
        self.seed = seed
        rng = np.random.default_rng([seed, 0])
        self.classes = _make_words(rng)
        self.vocab = [w for ws in self.classes.values() for w in ws] + _FUNCTION_WORDS

    def _pick(self, rng, cls: str) -> str:
        words = self.classes[cls]
        return words[int(rng.integers(len(words)))]

    def entity(self, rng: np.random.Generator, start: int) -> tuple[list[str], list[Span]]:
        kind = int(rng.integers(6))
        p = lambda c: self._pick(rng, c)
        if kind == 0:
            toks = [p("given"), p("surname")]
            spans = [Span(0, 2, 1, "PER")]
        elif kind == 1:
            toks = [p("gpe")]
            spans = [Span(0, 1, 1, "GPE")]
        elif kind == 2:
            toks = ["the", p("gpe"), p("orgnoun")]
            spans = [Span(1, 2, 1, "GPE"), Span(0, 3, 2, "ORG")]
        elif kind == 3:
            toks = [p("title"), "of", "the", p("gpe"), p("orgnoun")]
            spans = [Span(0, 1, 1, "TITLE"), Span(3, 4, 1, "GPE"), Span(2, 5, 2, "ORG"), Span(0, 5, 3, "PER")]
        elif kind == 4:
            toks = [p("gpe"), p("title"), p("given"), p("surname")]
            spans = [
                Span(0, 1, 1, "GPE"),
                Span(1, 2, 1, "TITLE"),
                Span(2, 4, 1, "PER"),
                Span(1, 4, 2, "PER"),
                Span(0, 4, 3, "PER"),
            ]
        else:
            toks = [p("loc")] if rng.random() < 0.5 else [p("loc"), p("loc")]
            spans = [Span(0, len(toks), 1, "LOC")]
        return toks, [Span(s.start + start, s.end + start, s.level, s.label) for s in spans]

    def filler(self, rng: np.random.Generator) -> list[str]:
        n = int(rng.integers(1, 4))
        out = []
        for _ in range(n):
            r = rng.random()
            if r < 0.3:
                out.append(self._pick(rng, "verb"))
            elif r < 0.5:
                out += ["the", self._pick(rng, "noun")]
            elif r < 0.65:
                out += [self._pick(rng, "adj"), self._pick(rng, "noun")]
            else:
                out.append(["in", "and", "said", "to", "on", "with", "for", "at", "by", "a"][int(rng.integers(10))])
        return out

    def sentence(self, rng: np.random.Generator) -> Sentence:
        tokens: list[str] = []
        spans: list[Span] = []
        if rng.random() < 0.5:
            tokens += self.filler(rng)
        for _ in range(int(rng.integers(1, 4))):
            toks, sps = self.entity(rng, len(tokens))
            tokens += toks
            spans += sps
            tokens += self.filler(rng)
        tokens.append(".")
        spans = copy_spans_up(spans, N_LEVELS)
        return Sentence(tokens, labels_from_spans(spans, len(tokens), N_LEVELS))

    def corpus(self, n_sentences: int, stream: int, per_article: int = 10) -> Corpus:
        rng = np.random.default_rng([self.seed, 1, stream])
        corpus = Corpus()
        for i in range(n_sentences):
            if i % per_article == 0:
                corpus.articles.append(Article(f"s{stream}-a{i // per_article}"))
            corpus.articles[-1].sentences.append(self.sentence(rng))
        return corpus

    def vectors(self, dim: int = 24) -> dict[str, np.ndarray]:
        """Word vectors clustered by word class (centroid plus per-word noise)."""
        rng = np.random.default_rng([self.seed, 2])
        out = {}
        for cls, words in list(self.classes.items()) + [("function", _FUNCTION_WORDS)]:
            centre = rng.normal(0.0, 0.5, dim)
            for w in words:
                out[w] = (centre + rng.normal(0.0, 0.3, dim)).astype(np.float32)
        return out


def format_vectors(vectors: dict[str, np.ndarray]) -> str:
    return "".join(w + " " + " ".join(f"{v:.6f}" for v in vec) + "\n" for w, vec in vectors.items())


def generate(seed: int = 0, size: int = 200, dim: int = 24):
    """Return ``(train, dev, test, vectors)`` with dev/test a quarter the size of train."""
    g = SyntheticGrammar(seed)
    held_out = max(size // 4, 1)
    return g.corpus(size, 0), g.corpus(held_out, 1), g.corpus(held_out, 2), g.vectors(dim)


# Small model that fits the synthetic corpus in about a minute on a CPU.
SYNTHETIC_MODEL = dict(
    word_dim=24,
    cap_dim=8,
    d=16,
    a=8,
    L=N_LEVELS,
    u=1,
    k_static=4,
    k_levels=(4, 6, 8),
    ff_s_hidden=(32,),
    ff_eu_hidden=(40,),
    out_hidden=(32,),
    theme_hidden=(16,),
    n_classes=len(TYPES) + 1,
    lr=0.003,
)


def synthetic_model_config(**overrides):
    from .model import ModelConfig

    return ModelConfig(**{**SYNTHETIC_MODEL, **overrides})
