"""Nearest-neighbour queries over entity embeddings and direction vectors.

Entities are the spans decoded from one forward pass per batch; each is
represented by the entity embedding of its first token at the span's level
(members of a merged entity carry near-identical vectors). Directions are the
accumulated direction vectors of the last structure level, read at the first
token of the source entity in the slot of the target entity's first token.
"""

from __future__ import annotations

import difflib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import nn
from .data import Batch
from .evaluate import EntitySpan, decode


class QueryError(ValueError):
    pass


@dataclass(frozen=True)
class EntityRecord:
    span: EntitySpan
    text: str
    batch: int
    offset: int  # position of the first token inside the batch row


@dataclass
class EntityTable:
    records: list[EntityRecord]
    vectors: np.ndarray  # [n, e]


@dataclass(frozen=True)
class DirectionRecord:
    source: EntityRecord
    target: EntityRecord

    @property
    def text(self) -> str:
        return f"{self.source.text} -> {self.target.text}"


@dataclass
class DirectionTable:
    records: list[DirectionRecord]
    vectors: np.ndarray  # [n, d]
    max_range: int


class Neighbor(tuple):
    """``(record, similarity)``."""

    __slots__ = ()

    def __new__(cls, record, similarity: float):
        return super().__new__(cls, (record, float(similarity)))

    record = property(lambda self: self[0])
    similarity = property(lambda self: self[1])


def _text(batch: Batch, start: int, end: int) -> str:
    return " ".join(batch.tokens[0][start:end])


def _batch_spans(out, batch: Batch, label_names, cutoff) -> list[tuple[EntitySpan, int]]:
    """Decoded spans with their offset inside row 0 of ``batch``."""
    where = {}
    for off, (sid, pos) in enumerate(zip(batch.sentence_ids[0], batch.positions[0])):
        where[(int(sid), int(pos))] = off
    return [(sp, where[(sp.sentence, sp.start)]) for sp in decode(out, batch, label_names, cutoff)]


def export_entities(outputs, batches: Sequence[Batch], label_names, cutoff: float = 0.75) -> EntityTable:
    """One record per distinct decoded span (the lowest level it was found on)."""
    records, vectors, seen = [], [], set()
    for bi, (out, batch) in enumerate(zip(outputs, batches)):
        T_all = out.structure.T.data  # [b, s, e, L]
        for sp, off in _batch_spans(out, batch, label_names, cutoff):
            where = (sp.sentence, sp.start, sp.end)
            if where in seen:
                continue
            seen.add(where)
            records.append(EntityRecord(sp, _text(batch, off, off + sp.end - sp.start), bi, off))
            vectors.append(T_all[0, off, :, sp.level - 1])
    e = outputs[0].structure.T.shape[2] if outputs else 0
    return EntityTable(records, np.array(vectors, dtype=np.float64).reshape(len(records), e))


def cosine_scores(vectors: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Cosine similarity of every row with ``query``; zero vectors score 0."""
    norms = np.linalg.norm(vectors, axis=1) * np.linalg.norm(query)
    dots = vectors @ query
    return np.divide(dots, norms, out=np.zeros_like(dots), where=norms > 0)


def _rank(scores: np.ndarray, keep: np.ndarray, n: int) -> list[int]:
    idx = np.flatnonzero(keep)
    order = idx[np.argsort(-scores[idx], kind="stable")]
    return [int(i) for i in order[:n]]


def find_entity(table: EntityTable, phrase: str) -> int:
    """Index of the first record whose surface text is ``phrase``."""
    for i, r in enumerate(table.records):
        if r.text == phrase:
            return i
    surfaces = sorted({r.text for r in table.records})
    close = difflib.get_close_matches(phrase, surfaces, n=3, cutoff=0.5)
    hint = f"; did you mean {', '.join(repr(c) for c in close)}?" if close else ""
    raise QueryError(f"no decoded entity with text {phrase!r}{hint}")


def entity_neighbors(table: EntityTable, query: int, n: int = 10) -> list[Neighbor]:
    """The ``n`` most cosine-similar entities, excluding the query span itself."""
    q = table.records[query].span
    keep = np.array([(r.span.sentence, r.span.start, r.span.end) != (q.sentence, q.start, q.end) for r in table.records])
    scores = cosine_scores(table.vectors, table.vectors[query])
    return [Neighbor(table.records[i], scores[i]) for i in _rank(scores, keep, n)]


def export_directions(outputs, batches: Sequence[Batch], entities: EntityTable) -> DirectionTable:
    """Direction vectors for ordered pairs of disjoint entities within kernel range.

    Entities sharing a first token share a vector, so only the first pair per
    (source token, target token) is kept.
    """
    records, vectors, seen = [], [], set()
    by_batch: dict[int, list[EntityRecord]] = {}
    for r in entities.records:
        by_batch.setdefault(r.batch, []).append(r)
    half = 0
    for bi, out in enumerate(outputs):
        last = out.structure.levels[-1]
        k = last.k
        half = k // 2
        D = last.D.data  # [b, s, k, d]
        for src in by_batch.get(bi, []):
            for dst in by_batch.get(bi, []):
                delta = dst.offset - src.offset
                if delta == 0 or abs(delta) > half or not last.mask[0, src.offset, nn.kernel_slot(k, delta)]:
                    continue
                a, b = src.span, dst.span
                if a.sentence == b.sentence and a.start < b.end and b.start < a.end:
                    continue
                if (bi, src.offset, dst.offset) in seen:
                    continue
                seen.add((bi, src.offset, dst.offset))
                records.append(DirectionRecord(src, dst))
                vectors.append(D[0, src.offset, nn.kernel_slot(k, delta)])
    d = outputs[0].structure.D.shape[-1] if outputs else 0
    return DirectionTable(records, np.array(vectors, dtype=np.float64).reshape(len(records), d), half)


def find_direction(table: DirectionTable, entities: EntityTable, source: str, target: str) -> int:
    """Index of the first in-range pair with the given surface texts."""
    src_ids = [i for i, r in enumerate(entities.records) if r.text == source]
    dst_ids = [i for i, r in enumerate(entities.records) if r.text == target]
    if not src_ids:
        find_entity(entities, source)
    if not dst_ids:
        find_entity(entities, target)
    for i, r in enumerate(table.records):
        if r.source.text == source and r.target.text == target:
            return i
    gaps = [
        abs(entities.records[a].offset - entities.records[b].offset)
        for a in src_ids
        for b in dst_ids
        if entities.records[a].batch == entities.records[b].batch and a != b
    ]
    nearest = f"closest occurrence {min(gaps)} tokens apart" if gaps else "never in the same article chunk"
    raise QueryError(f"pair {source!r} -> {target!r} out of range ({nearest}; max range {table.max_range})")


def direction_neighbors(table: DirectionTable, query: int, n: int = 10) -> list[Neighbor]:
    """The ``n`` most cosine-similar entity-pair directions; the query pair and zero vectors excluded."""
    keep = np.linalg.norm(table.vectors, axis=1) > 0
    keep[query] = False
    scores = cosine_scores(table.vectors, table.vectors[query])
    return [Neighbor(table.records[i], scores[i]) for i in _rank(scores, keep, n)]


def format_neighbors(title: str, neighbors: Sequence[Neighbor]) -> str:
    lines = [title]
    for rank, nb in enumerate(neighbors, 1):
        lines.append(f"{rank:2d}. {nb.record.text}\t{nb.similarity:.4f}")
    return "\n".join(lines) + "\n"
