import copy

import numpy as np
import pytest

from mergelabel import data, synthetic
from mergelabel import explore as ex
from mergelabel.evaluate import predict
from mergelabel.model import MergeLabelModel
from mergelabel.train import train


@pytest.fixture(scope="module")
def trained(synth):
    tr, dv, _, vocab, labels = synth
    model = MergeLabelModel(synthetic.synthetic_model_config(), 0)
    train(model, data.make_batches(tr, vocab, labels, 3, 200), 25, 0)
    return model, vocab, labels


def _tables(trained, corpus):
    model, vocab, labels = trained
    batches = data.make_batches(corpus, vocab, None, None, 200)
    outputs = predict(model, batches)
    entities = ex.export_entities(outputs, batches, labels.names)
    return entities, ex.export_directions(outputs, batches, entities)


@pytest.fixture(scope="module")
def tables(trained, synth):
    return _tables(trained, synth[1])


def test_entity_table_has_one_vector_per_span(tables):
    entities, _ = tables
    assert len(entities.records) > 10
    keys = [(r.span.sentence, r.span.start, r.span.end) for r in entities.records]
    assert len(keys) == len(set(keys)) and entities.vectors.shape == (len(keys), 24 + 8)


def test_twin_article_gives_similarity_one(trained, synth):
    art = synth[1].articles[0]
    twin = copy.deepcopy(art)
    twin.doc_id += "-twin"
    entities, _ = _tables(trained, data.Corpus([art, twin]))
    n = len(entities.records) // 2
    assert n > 0
    q = ex.find_entity(entities, entities.records[0].text)
    top = ex.entity_neighbors(entities, q, 1)[0]
    assert top.similarity == pytest.approx(1.0, abs=1e-6)
    assert top.record.text == entities.records[q].text


def test_query_span_excluded(tables):
    entities, _ = tables
    for q in range(len(entities.records)):
        qs = entities.records[q].span
        found = ex.entity_neighbors(entities, q, len(entities.records))
        assert all((r.span.sentence, r.span.start, r.span.end) != (qs.sentence, qs.start, qs.end) for r, _ in found)
        assert len(found) == len(entities.records) - 1


def _brute_force(vectors, q, keep):
    scored = []
    for i in range(len(vectors)):
        if not keep[i]:
            continue
        a, b = vectors[i], vectors[q]
        na, nb = np.sqrt(sum(x * x for x in a)), np.sqrt(sum(x * x for x in b))
        scored.append((-(float(a @ b) / (na * nb) if na * nb > 0 else 0.0), i))
    return [i for _, i in sorted(scored)]


def test_entity_ranking_matches_exhaustive_scan(tables):
    entities, _ = tables
    for q in range(0, len(entities.records), 5):
        keep = [i != q for i in range(len(entities.records))]
        got = [entities.records.index(nb.record) for nb in ex.entity_neighbors(entities, q, 10)]
        want = _brute_force(entities.vectors, q, keep)[:10]
        assert got == want


def test_ranking_invariant_to_positive_rescaling(tables):
    entities, _ = tables
    scaled = ex.EntityTable(entities.records, entities.vectors * 37.5)
    for q in range(0, len(entities.records), 7):
        a = [nb.record for nb in ex.entity_neighbors(entities, q)]
        b = [nb.record for nb in ex.entity_neighbors(scaled, q)]
        assert a == b


def test_unknown_phrase_suggests_close_matches(tables):
    entities, _ = tables
    text = entities.records[0].text
    with pytest.raises(ex.QueryError, match="did you mean") as info:
        ex.find_entity(entities, text[:-1])
    assert repr(text) in str(info.value)


def test_directions_are_antisymmetric(tables):
    _, directions = tables
    index = {(r.source.batch, r.source.offset, r.target.offset): i for i, r in enumerate(directions.records)}
    pairs = 0
    for (b, s, t), i in index.items():
        j = index.get((b, t, s))
        if j is not None:
            np.testing.assert_allclose(directions.vectors[j], -directions.vectors[i], atol=1e-6)
            pairs += 1
    assert pairs > 0


def test_direction_ranking_and_exclusions(tables):
    _, directions = tables
    assert len(directions.records) > 0 and directions.max_range == 4
    for r in directions.records:
        assert r.source.offset != r.target.offset
        assert abs(r.source.offset - r.target.offset) <= directions.max_range
    norms = np.linalg.norm(directions.vectors, axis=1)
    for q in range(0, len(directions.records), 9):
        keep = [norms[i] > 0 and i != q for i in range(len(norms))]
        got = [directions.records.index(nb.record) for nb in ex.direction_neighbors(directions, q, 10)]
        assert got == _brute_force(directions.vectors, q, keep)[:10]


def test_out_of_range_pair_reports_max_range(tables):
    entities, directions = tables
    rec = entities.records
    far = next(
        (a, b)
        for a in rec
        for b in rec
        if a.batch == b.batch and abs(a.offset - b.offset) > directions.max_range
        and not any(r.source.text == a.text and r.target.text == b.text for r in directions.records)
    )
    with pytest.raises(ex.QueryError, match=f"max range {directions.max_range}"):
        ex.find_direction(directions, entities, far[0].text, far[1].text)


def test_format_neighbors_lists_ranked_lines(tables):
    entities, _ = tables
    text = ex.format_neighbors("title", ex.entity_neighbors(entities, 0, 10))
    lines = text.splitlines()
    assert lines[0] == "title" and len(lines) == 11 and lines[1].startswith(" 1. ")
