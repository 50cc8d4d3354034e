"""Greedy span decoding from merge values and strict span-level scoring."""

from __future__ import annotations

from collections import Counter, defaultdict
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .data import OUTSIDE, Batch, Corpus, flatten_spans, sentence_spans
from .tensor import no_grad


class EntitySpan(NamedTuple):
    sentence: int
    start: int
    end: int  # exclusive
    level: int  # 1-based
    label: str

    def key(self) -> tuple:
        return (self.sentence, self.start, self.end, self.label)


def _vote(classes: Sequence[int]) -> int:
    counts = Counter(classes)
    best = max(counts.values())
    for c in classes:  # earliest token among the tied classes
        if counts[c] == best:
            return c
    raise AssertionError("unreachable")


def effective_merges(merges: np.ndarray, cutoff: float, same_sentence: np.ndarray | None = None) -> np.ndarray:
    """Thresholded merge decisions ``[n-1, L]``, OR-accumulated upward across levels."""
    eff = np.asarray(merges) < cutoff
    if same_sentence is not None:
        eff &= np.asarray(same_sentence, bool)[:, None]
    return np.logical_or.accumulate(eff, axis=1) if eff.size else eff


def decode_arrays(
    merges: np.ndarray,
    classes: np.ndarray,
    label_names: Sequence[str],
    cutoff: float = 0.75,
    sentence_ids: np.ndarray | None = None,
    positions: np.ndarray | None = None,
) -> list[EntitySpan]:
    """Spans from one sequence: ``merges [n-1, L]`` and predicted ``classes [n, L]``.

    Maximal runs of merged tokens at a level become spans labelled by
    majority vote; outside-labelled runs are dropped and a span repeated with
    the same label on several levels is reported once, at its lowest level.
    """
    classes = np.asarray(classes)
    n, L = classes.shape
    sids = np.zeros(n, np.int64) if sentence_ids is None else np.asarray(sentence_ids)
    pos = np.arange(n) if positions is None else np.asarray(positions)
    same = sids[:-1] == sids[1:] if n else np.zeros(0, bool)
    eff = effective_merges(np.asarray(merges).reshape(max(n - 1, 0), L), cutoff, same)
    seen = set()
    spans = []
    for lvl in range(L):
        start = 0
        for i in range(n):
            if i + 1 < n and eff[i, lvl]:
                continue
            label = label_names[_vote(list(classes[start : i + 1, lvl]))]
            if label != OUTSIDE:
                sp = EntitySpan(int(sids[start]), int(pos[start]), int(pos[i]) + 1, lvl + 1, label)
                if sp.key() not in seen:
                    seen.add(sp.key())
                    spans.append(sp)
            start = i + 1
    return spans


def decode(output, batch: Batch, label_names: Sequence[str], cutoff: float = 0.75) -> list[EntitySpan]:
    """Decode every row of a model output against its batch layout."""
    M = output.structure.M.data
    classes = output.logits.data.argmax(axis=-1)
    spans = []
    for r in range(classes.shape[0]):
        keep = np.asarray(batch.token_mask[r], bool)
        n = int(keep.sum())
        spans += decode_arrays(
            M[r, : max(n - 1, 0)],
            classes[r, :n],
            label_names,
            cutoff,
            batch.sentence_ids[r, :n],
            batch.positions[r, :n],
        )
    return spans


def strict_f1(pred: Iterable, gold: Iterable) -> tuple[float, float, float]:
    """Exact-match precision, recall and F1 over span keys."""
    pred, gold = set(pred), set(gold)
    if not pred and not gold:
        return 1.0, 1.0, 1.0
    hit = len(pred & gold)
    p = hit / len(pred) if pred else 0.0
    r = hit / len(gold) if gold else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


def per_label_scores(pred: Iterable[tuple], gold: Iterable[tuple]) -> dict[str, tuple[float, float, float]]:
    by_p, by_g = defaultdict(set), defaultdict(set)
    for k in pred:
        by_p[k[-1]].add(k)
    for k in gold:
        by_g[k[-1]].add(k)
    return {lab: strict_f1(by_p[lab], by_g[lab]) for lab in sorted(set(by_p) | set(by_g))}


def gold_spans(corpus: Corpus) -> list[EntitySpan]:
    out = []
    for sid, sent in enumerate(corpus.sentences()):
        seen = set()
        for sp in sentence_spans(sent):
            es = EntitySpan(sid, sp.start, sp.end, sp.level, sp.label)
            if es.key() not in seen:
                seen.add(es.key())
                out.append(es)
    return out


def flatten_entity_spans(spans: Iterable[EntitySpan], np_label: str = "NP") -> list[EntitySpan]:
    by_sentence = defaultdict(list)
    for sp in spans:
        by_sentence[sp.sentence].append(sp)
    out = []
    for sid in sorted(by_sentence):
        out += flatten_spans(by_sentence[sid], np_label)
    return out


def predict(model, batches: Sequence[Batch]) -> list:
    """One forward pass per batch with frozen parameters."""
    with no_grad():
        return [model.forward(b, training=False) for b in batches]


def decode_all(outputs, batches, label_names, cutoff) -> list[EntitySpan]:
    spans = []
    for out, b in zip(outputs, batches):
        spans += decode(out, b, label_names, cutoff)
    return sorted(spans)


def score(pred: Sequence[EntitySpan], gold: Sequence[EntitySpan], flat: bool = False, np_label: str = "NP") -> dict:
    """Strict P/R/F1 (level ignored); ``flat`` first reduces both sides to outermost named entities."""
    if flat:
        pred, gold = flatten_entity_spans(pred, np_label), flatten_entity_spans(gold, np_label)
    pk = {sp.key() for sp in pred}
    gk = {sp.key() for sp in gold}
    p, r, f = strict_f1(pk, gk)
    return {
        "precision": p,
        "recall": r,
        "f1": f,
        "n_pred": len(pk),
        "n_gold": len(gk),
        "per_label": {k: dict(zip(("precision", "recall", "f1"), v)) for k, v in per_label_scores(pk, gk).items()},
    }


def cutoff_search(model, batches, gold, label_names, grid=None, flat: bool = False) -> tuple[float, dict]:
    """Best cutoff on a dev set by strict F1; ties go to the lowest cutoff."""
    if not batches:
        raise ValueError("cutoff search needs a non-empty dev set")
    if grid is None:
        grid = np.round(np.arange(0.5, 0.951, 0.05), 2)
    outputs = predict(model, batches)
    results = {}
    for c in sorted(float(x) for x in grid):
        results[c] = score(decode_all(outputs, batches, label_names, c), gold, flat)["f1"]
    best = max(results.values())
    return min(c for c, f in results.items() if f == best), results
