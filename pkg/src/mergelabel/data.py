"""Corpus reading and writing, nested label handling, features and batches.

Corpus files are UTF-8 with one token per line::

    #doc <article id>
    token<TAB>label_level1<TAB>...<TAB>label_levelL

Blank lines separate sentences. Labels are IOB2 (``O``, ``B-X``, ``I-X``),
one column per nesting level, innermost first.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .model import ModelInput

logger = logging.getLogger(__name__)

OUTSIDE = "O"
_LABEL_RE = re.compile(r"^(?:O|[BI]-\S+)$")

CAP_NONE, CAP_INITIAL, CAP_ALL, CAP_OTHER = range(4)


class CorpusError(ValueError):
    """Malformed or inconsistent corpus input."""


@dataclass
class Sentence:
    tokens: list[str]
    labels: list[list[str]] = field(default_factory=list)  # labels[level][position]

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def n_levels(self) -> int:
        return len(self.labels)


@dataclass
class Article:
    doc_id: str
    sentences: list[Sentence] = field(default_factory=list)

    @property
    def n_tokens(self) -> int:
        return sum(len(s) for s in self.sentences)


@dataclass
class Corpus:
    articles: list[Article] = field(default_factory=list)

    def sentences(self) -> list[Sentence]:
        return [s for a in self.articles for s in a.sentences]

    @property
    def n_levels(self) -> int:
        for s in self.sentences():
            return s.n_levels
        return 0

    @property
    def n_tokens(self) -> int:
        return sum(a.n_tokens for a in self.articles)

    def entity_types(self) -> list[str]:
        types = set()
        for s in self.sentences():
            for column in s.labels:
                types.update(lab[2:] for lab in column if lab != OUTSIDE)
        return sorted(types)


class Span(NamedTuple):
    start: int
    end: int  # exclusive
    level: int  # 1-based
    label: str


# ---------------------------------------------------------------------------
# reading / writing
# ---------------------------------------------------------------------------


def read_corpus(path, labeled: bool = True) -> Corpus:
    """Parse a column-format corpus, validating IOB2 per level.

    With ``labeled=False`` any label columns are ignored and sentences carry
    no labels.
    """
    corpus = Corpus()
    article: Article | None = None
    tokens: list[str] = []
    columns: list[list[str]] = []
    n_cols = None
    start_line = 0

    def close_sentence():
        nonlocal tokens, columns, article
        if not tokens:
            return
        if article is None:
            article = Article("doc0")
            corpus.articles.append(article)
        sent = Sentence(tokens, [list(c) for c in columns] if labeled else [])
        _validate_iob2(sent, start_line)
        article.sentences.append(sent)
        tokens, columns = [], []

    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip():
                close_sentence()
                continue
            if line.startswith("#doc"):
                close_sentence()
                doc_id = line[4:].strip() or f"doc{len(corpus.articles)}"
                article = Article(doc_id)
                corpus.articles.append(article)
                continue
            parts = line.split("\t")
            if not labeled:
                if not tokens:
                    start_line = lineno
                tokens.append(parts[0])
                continue
            if n_cols is None:
                n_cols = len(parts)
                if n_cols < 2:
                    raise CorpusError(f"line {lineno}: expected token and at least one label column")
            if len(parts) != n_cols:
                raise CorpusError(f"line {lineno}: expected {n_cols} columns, got {len(parts)}")
            for lab in parts[1:]:
                if not _LABEL_RE.match(lab):
                    raise CorpusError(f"line {lineno}: unknown label {lab!r}")
            if not tokens:
                start_line = lineno
                columns = [[] for _ in range(n_cols - 1)]
            tokens.append(parts[0])
            for c, lab in zip(columns, parts[1:]):
                c.append(lab)
    close_sentence()
    return corpus


def _validate_iob2(sent: Sentence, first_line: int) -> None:
    for level, column in enumerate(sent.labels, 1):
        prev = OUTSIDE
        for i, lab in enumerate(column):
            if lab.startswith("I-") and (prev == OUTSIDE or prev[2:] != lab[2:]):
                raise CorpusError(
                    f"line {first_line + i}: {lab} at level {level} does not continue an entity of the same type"
                )
            prev = lab


def write_corpus(corpus: Corpus, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_corpus(corpus))


def format_corpus(corpus: Corpus) -> str:
    out = []
    for art in corpus.articles:
        out.append(f"#doc {art.doc_id}\n")
        for sent in art.sentences:
            for i, tok in enumerate(sent.tokens):
                out.append("\t".join([tok, *(col[i] for col in sent.labels)]) + "\n")
            out.append("\n")
    return "".join(out)


# ---------------------------------------------------------------------------
# labels and spans
# ---------------------------------------------------------------------------


def column_spans(column: Sequence[str], level: int = 1) -> list[Span]:
    """IOB2 column -> spans (I- without a matching predecessor starts a span)."""
    spans = []
    start, kind = None, None
    for i, lab in enumerate(list(column) + [OUTSIDE]):
        cont = lab.startswith("I-") and kind == lab[2:]
        if start is not None and not cont:
            spans.append(Span(start, i, level, kind))
            start, kind = None, None
        if lab != OUTSIDE and not cont:
            start, kind = i, lab[2:]
    return spans


def sentence_spans(sent: Sentence) -> list[Span]:
    return [sp for lvl, col in enumerate(sent.labels, 1) for sp in column_spans(col, lvl)]


def b_to_i(labels: Sequence[str]) -> list[str]:
    return ["I-" + lab[2:] if lab.startswith("B-") else lab for lab in labels]


def i_to_b(spans: Iterable, n: int) -> list[str]:
    """Spans of one level (anything with start/end/label) -> IOB2 labels of length ``n``."""
    labels = [OUTSIDE] * n
    for sp in sorted(spans, key=lambda sp: sp.start):
        labels[sp.start] = "B-" + sp.label
        for i in range(sp.start + 1, sp.end):
            labels[i] = "I-" + sp.label
    return labels


def labels_from_spans(spans: Iterable[Span], n: int, n_levels: int) -> list[list[str]]:
    return [i_to_b([sp for sp in spans if sp.level == lvl], n) for lvl in range(1, n_levels + 1)]


def _contains(outer: Span, inner: Span) -> bool:
    return outer.start <= inner.start and inner.end <= outer.end


def _overlaps(a: Span, b: Span) -> bool:
    return a.start < b.end and b.start < a.end


def copy_spans_up(spans: Sequence[Span], n_levels: int) -> list[Span]:
    """Replicate every span not contained in a span one level up onto that level."""
    by_level = {lvl: [sp for sp in spans if sp.level == lvl] for lvl in range(1, n_levels + 1)}
    for lvl in range(1, n_levels):
        upper = by_level[lvl + 1]
        for sp in by_level[lvl]:
            if any(_contains(u, sp) for u in upper):
                continue
            clash = [u for u in upper if _overlaps(u, sp)]
            if clash:
                raise CorpusError(
                    f"span {sp.start}-{sp.end} ({sp.label}) at level {lvl} is split by "
                    f"{clash[0].start}-{clash[0].end} ({clash[0].label}) at level {lvl + 1}"
                )
            upper.append(Span(sp.start, sp.end, lvl + 1, sp.label))
    return [sp for lvl in range(1, n_levels + 1) for sp in sorted(by_level[lvl])]


def copy_labels_up(article: Article, n_levels: int | None = None) -> Article:
    """Return a copy of ``article`` whose uncontained entities are copied to higher levels."""
    out = Article(article.doc_id)
    for sent in article.sentences:
        L = n_levels or sent.n_levels
        spans = [sp for sp in sentence_spans(sent) if sp.level <= L]
        spans = copy_spans_up(spans, L)
        out.sentences.append(Sentence(list(sent.tokens), labels_from_spans(spans, len(sent), L)))
    return out


def flatten_spans(spans: Iterable, np_label: str = "NP") -> list:
    """Outermost non-NP spans, one per region; duplicates across levels collapse."""
    named = {}
    for sp in spans:
        if sp.label == np_label:
            continue
        key = (sp.start, sp.end)
        if key not in named or sp.level > named[key].level:
            named[key] = sp
    keep = []
    for sp in named.values():
        inside = any(
            o is not sp and o.start <= sp.start and sp.end <= o.end and (o.start, o.end) != (sp.start, sp.end)
            for o in named.values()
        )
        if not inside:
            keep.append(sp)
    return sorted(keep, key=lambda sp: sp.start)


def flatten_targets(article: Article, np_label: str = "NP") -> Article:
    """Single-column labels: the outermost named entity over each token, NP-only tokens -> O."""
    out = Article(article.doc_id)
    for sent in article.sentences:
        flat = flatten_spans(sentence_spans(sent), np_label)
        out.sentences.append(Sentence(list(sent.tokens), [i_to_b(flat, len(sent))]))
    return out


class LabelSet:
    """Class indices: 0 is the outside class, then entity types in sorted order."""

    def __init__(self, types: Iterable[str]):
        self.names = [OUTSIDE] + sorted(set(types))
        self.index = {n: i for i, n in enumerate(self.names)}

    def __len__(self) -> int:
        return len(self.names)

    def __eq__(self, other) -> bool:
        return isinstance(other, LabelSet) and self.names == other.names

    @classmethod
    def from_corpus(cls, corpus: Corpus) -> "LabelSet":
        return cls(corpus.entity_types())

    def encode(self, label: str) -> int:
        name = label if label in self.index else label[2:]
        try:
            return self.index[name]
        except KeyError:
            raise CorpusError(f"label {label!r} is not in the label set {self.names}") from None


@dataclass
class TrainingTargets:
    labels: np.ndarray  # [s, L] class indices, B- collapsed into I-
    merges: np.ndarray  # [s-1, L] 0 = merge with the next token, 1 = split
    mask: np.ndarray  # [s] positions scored


def build_merge_targets(
    sentences: Sequence[Sentence], n_levels: int, label_set: LabelSet
) -> TrainingTargets:
    """Per-level class targets and gold merge values for consecutive sentences.

    Sentences must already have labels copied up. Adjacent tokens get merge
    target 0 at a level when they sit inside the same gold span there;
    sentence boundaries are always splits.
    """
    lab_rows, merge_rows = [], []
    for si, sent in enumerate(sentences):
        n = len(sent)
        if sent.n_levels != n_levels:
            raise CorpusError(f"sentence has {sent.n_levels} label levels, expected {n_levels}")
        spans = sentence_spans(sent)
        _check_nesting(spans, n_levels)
        labels = np.array([[label_set.encode(lab) for lab in b_to_i(col)] for col in sent.labels], dtype=np.int64).T
        merges = np.ones((max(n - 1, 0), n_levels))
        for sp in spans:
            merges[sp.start : sp.end - 1, sp.level - 1] = 0.0
        lab_rows.append(labels.reshape(n, n_levels))
        if si:
            merge_rows.append(np.ones((1, n_levels)))
        merge_rows.append(merges)
    if not lab_rows:
        return TrainingTargets(np.zeros((0, n_levels), np.int64), np.zeros((0, n_levels)), np.zeros(0, bool))
    labels = np.concatenate(lab_rows)
    merges = np.concatenate(merge_rows) if merge_rows else np.zeros((0, n_levels))
    return TrainingTargets(labels, merges.reshape(-1, n_levels), np.ones(len(labels), bool))


def _check_nesting(spans: Sequence[Span], n_levels: int) -> None:
    for sp in spans:
        if sp.level == n_levels:
            continue
        upper = [u for u in spans if u.level == sp.level + 1]
        if not any(_contains(u, sp) for u in upper):
            raise CorpusError(
                f"span {sp.start}-{sp.end} ({sp.label}) at level {sp.level} is not contained in a "
                f"level-{sp.level + 1} span; copy labels up first or fix the nesting"
            )


# ---------------------------------------------------------------------------
# features
# ---------------------------------------------------------------------------


def cap_category(token: str) -> int:
    cased = [ch for ch in token if ch.isalpha() and (ch.isupper() or ch.islower())]
    uppers = sum(ch.isupper() for ch in cased)
    if uppers == 0:
        return CAP_NONE
    if uppers == len(cased) and len(cased) > 1:
        return CAP_ALL
    if token[0].isupper():
        return CAP_INITIAL
    return CAP_OTHER


@dataclass
class FeatureVocab:
    words: list[str]
    vectors: np.ndarray  # [V, word_dim]
    unk: np.ndarray  # [word_dim]
    cap_table: np.ndarray  # [4, cap_dim]

    def __post_init__(self):
        self.index = {w: i for i, w in enumerate(self.words)}

    @property
    def word_dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def cap_dim(self) -> int:
        return self.cap_table.shape[1]

    @property
    def e(self) -> int:
        return self.word_dim + self.cap_dim

    def vector(self, token: str) -> np.ndarray:
        i = self.index.get(token)
        return self.unk if i is None else self.vectors[i]


def make_cap_table(cap_dim: int = 20, seed: int = 0) -> np.ndarray:
    return np.random.default_rng([seed, 20]).uniform(-0.1, 0.1, (4, cap_dim)).astype(np.float32)


def load_embeddings(path, vocab: Iterable[str] | None = None, cap_dim: int = 20, seed: int = 0) -> FeatureVocab:
    """Read ``word v1 ... vn`` lines; the unknown vector is the mean of all vectors read."""
    keep = None if vocab is None else set(vocab)
    table: dict[str, np.ndarray] = {}
    total = None
    count = 0
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split(" ")
            if not parts or parts == [""]:
                continue
            word, vals = parts[0], parts[1:]
            if dim is None:
                dim = len(vals)
                if dim == 0:
                    raise CorpusError(f"line {lineno}: word {word!r} has no vector")
            if len(vals) != dim:
                raise CorpusError(f"line {lineno}: expected {dim} values, got {len(vals)}")
            try:
                vec = np.array([float(v) for v in vals], dtype=np.float32)
            except ValueError:
                raise CorpusError(f"line {lineno}: non-numeric vector entry") from None
            total = vec.astype(np.float64) if total is None else total + vec
            count += 1
            if keep is not None and word not in keep:
                continue
            if word in table:
                logger.warning("duplicate vector for %r on line %d; keeping the last one", word, lineno)
            table[word] = vec
    if dim is None:
        raise CorpusError(f"{path}: no vectors found")
    words = sorted(table)
    vectors = np.stack([table[w] for w in words]) if words else np.zeros((0, dim), np.float32)
    unk = (total / count).astype(np.float32)
    return FeatureVocab(words, vectors, unk, make_cap_table(cap_dim, seed))


def featurize(sentence: Sentence, vocab: FeatureVocab, contextual: np.ndarray | None = None) -> np.ndarray:
    """[s, word_dim + cap_dim] features: word (or precomputed contextual) vector + cap embedding."""
    n = len(sentence)
    if contextual is not None:
        contextual = np.asarray(contextual, dtype=np.float32)
        if contextual.shape[0] != n:
            raise CorpusError(f"{contextual.shape[0]} contextual vectors for a sentence of {n} tokens")
        if contextual.ndim != 2 or contextual.shape[1] != vocab.word_dim:
            raise CorpusError(f"contextual vectors must have width {vocab.word_dim}, got {contextual.shape}")
        words = contextual
    else:
        words = np.stack([vocab.vector(t) for t in sentence.tokens]) if n else np.zeros((0, vocab.word_dim), np.float32)
    caps = vocab.cap_table[[cap_category(t) for t in sentence.tokens]] if n else np.zeros((0, vocab.cap_dim), np.float32)
    return np.concatenate([words, caps], axis=1).astype(np.float32)


def read_contextual(path) -> list[list[np.ndarray]]:
    """Sidecar vectors laid out like the corpus: per article, per sentence, ``[s, dim]``."""
    articles: list[list[np.ndarray]] = []
    rows: list[list[float]] = []

    def close():
        nonlocal rows
        if rows:
            if not articles:
                articles.append([])
            articles[-1].append(np.array(rows, dtype=np.float32))
            rows = []

    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                close()
            elif line.startswith("#doc"):
                close()
                articles.append([])
            else:
                try:
                    rows.append([float(v) for v in line.split()])
                except ValueError:
                    raise CorpusError(f"line {lineno}: non-numeric contextual vector") from None
                if len(rows[-1]) != len(rows[0]):
                    raise CorpusError(f"line {lineno}: expected {len(rows[0])} values, got {len(rows[-1])}")
    close()
    return articles


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------


@dataclass
class Batch(ModelInput):
    article: int = 0
    sentence_index: list[int] = field(default_factory=list)  # global sentence id per row-0 sentence
    positions: np.ndarray | None = None  # [b, s] token index inside its sentence
    tokens: list[list[str]] = field(default_factory=list)
    labels: np.ndarray | None = None  # [b, s, L]
    merges: np.ndarray | None = None  # [b, s-1, L]
    pair_mask: np.ndarray | None = None  # [b, s-1]

    @property
    def n_tokens(self) -> int:
        return int(self.token_mask.sum())


def pack_sentences(corpus: Corpus, max_tokens: int = 900) -> list[tuple[int, list[int]]]:
    """Group each article's sentences greedily into chunks of at most ``max_tokens``.

    Returns ``(article index, [global sentence ids])`` per chunk.
    """
    chunks = []
    gid = 0
    for ai, art in enumerate(corpus.articles):
        cur, size = [], 0
        for sent in art.sentences:
            n = len(sent)
            if n > max_tokens:
                raise CorpusError(
                    f"sentence {gid} has {n} tokens, above the batch cap of {max_tokens}; raise max_tokens"
                )
            if cur and size + n > max_tokens:
                chunks.append((ai, cur))
                cur, size = [], 0
            cur.append(gid)
            size += n
            gid += 1
        if cur:
            chunks.append((ai, cur))
    return chunks


def make_batches(
    corpus: Corpus,
    vocab: FeatureVocab,
    label_set: LabelSet | None = None,
    n_levels: int | None = None,
    max_tokens: int = 900,
    contextual: list[list[np.ndarray]] | None = None,
) -> list[Batch]:
    """One batch per packed chunk of an article; labels/targets attached when available."""
    sentences = corpus.sentences()
    art_of = [ai for ai, art in enumerate(corpus.articles) for _ in art.sentences]
    local = [si for art in corpus.articles for si in range(len(art.sentences))]
    labeled = label_set is not None and n_levels is not None and bool(sentences) and sentences[0].n_levels > 0
    batches = []
    for ai, ids in pack_sentences(corpus, max_tokens):
        ctx = None
        if contextual is not None:
            try:
                ctx = [contextual[art_of[g]][local[g]] for g in ids]
            except IndexError:
                raise CorpusError("contextual vector file does not match the corpus layout") from None
        batches.append(
            collate([sentences[g] for g in ids], ids, ai, vocab, label_set if labeled else None, n_levels, ctx)
        )
    return batches


def collate(
    sentences: Sequence[Sentence],
    sentence_ids: Sequence[int],
    article: int,
    vocab: FeatureVocab,
    label_set: LabelSet | None = None,
    n_levels: int | None = None,
    contextual: Sequence[np.ndarray] | None = None,
) -> Batch:
    feats = [featurize(s, vocab, None if contextual is None else contextual[i]) for i, s in enumerate(sentences)]
    X = np.concatenate(feats)[None] if feats else np.zeros((1, 0, vocab.e), np.float32)
    n = X.shape[1]
    sid = np.concatenate([np.full(len(s), g) for s, g in zip(sentences, sentence_ids)])[None].astype(np.int64)
    pos = np.concatenate([np.arange(len(s)) for s in sentences])[None].astype(np.int64)
    batch = Batch(
        features=X,
        token_mask=np.ones((1, n), bool),
        sentence_ids=sid,
        article=article,
        sentence_index=list(sentence_ids),
        positions=pos,
        tokens=[[t for s in sentences for t in s.tokens]],
    )
    if label_set is not None:
        tg = build_merge_targets(sentences, n_levels, label_set)
        batch.labels = tg.labels[None]
        batch.merges = tg.merges[None]
        batch.pair_mask = np.ones((1, max(n - 1, 0)), bool)
    return batch
