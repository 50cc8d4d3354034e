"""Train on the synthetic nested corpus, score it, and look at the embeddings.

    python3 demos/03_synthetic_run.py --epochs 20

A 60-epoch run takes about a minute and a half on one CPU core and reaches a
dev F1 of 0.99 or more; fewer epochs give a quicker, rougher picture.
"""

import argparse
import time

import numpy as np

from mergelabel import data, synthetic
from mergelabel import explore as ex
from mergelabel.evaluate import decode_all, gold_spans, predict, score
from mergelabel.model import MergeLabelModel
from mergelabel.train import train

parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
parser.add_argument("--epochs", type=int, default=20)
parser.add_argument("--seed", type=int, default=0)
args = parser.parse_args()

train_set, dev, test, vectors = synthetic.generate(0, 200, 24)
words = sorted(vectors)
table = np.stack([vectors[w] for w in words])
vocab = data.FeatureVocab(words, table, table.mean(0), data.make_cap_table(8))
labels = data.LabelSet.from_corpus(train_set)
print(f"{len(train_set.sentences())} training sentences, labels {labels.names[1:]}")
print("example:", " ".join(train_set.sentences()[0].tokens))

model = MergeLabelModel(synthetic.synthetic_model_config(), seed=args.seed)
batches = data.make_batches(train_set, vocab, labels, model.config.L)
dev_batches = data.make_batches(dev, vocab)
start = time.perf_counter()
result = train(model, batches, args.epochs, args.seed, dev_batches, gold_spans(dev), labels.names,
               on_epoch=lambda r: print(r.line()) if r.epoch % 5 == 4 else None)
print(f"best dev F1 {result.best_f1:.4f} at epoch {result.best_epoch} ({time.perf_counter() - start:.0f}s)")

test_batches = data.make_batches(test, vocab)
outputs = predict(model, test_batches)
spans = decode_all(outputs, test_batches, labels.names, model.config.cutoff)
report = score(spans, gold_spans(test))
print(f"test P {report['precision']:.4f} R {report['recall']:.4f} F1 {report['f1']:.4f}")

sent = test.sentences()[0]
print("\n" + " ".join(sent.tokens))
for sp in sorted((s for s in spans if s.sentence == 0), key=lambda s: (s.level, s.start)):
    print(f"  level {sp.level} {sp.label:5s} {' '.join(sent.tokens[sp.start:sp.end])}")

entities = ex.export_entities(outputs, test_batches, labels.names)
query = next(i for i, r in enumerate(entities.records) if r.span.label == "ORG")
print()
print(ex.format_neighbors(f"nearest entities to {entities.records[query].text!r}",
                          ex.entity_neighbors(entities, query, 5)), end="")
