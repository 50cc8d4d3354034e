"""How merge values turn into entity embeddings and then into spans.

We push one seven-token sentence through a single structure level with the
merge values forced to a chosen pattern: 0 between tokens of the same entity,
1 everywhere else. Tokens of one entity then share an identical embedding, and
neighbours across a boundary get a weight of exactly zero.
"""

import numpy as np

from mergelabel import tensor as T
from mergelabel.evaluate import decode_arrays
from mergelabel.model import MergeLabelModel
from mergelabel.tensor import Tensor
from mergelabel.verify import gradcheck_config

tokens = ["the", "United", "Kingdom", "government", "said", "on", "Monday"]
# "United Kingdom" is one entity, everything else is a single token
merges = np.array([[1, 0, 1, 1, 1, 1]], dtype=np.float64)

cfg = gradcheck_config()
with T.precision(np.float64), T.no_grad():
    model = MergeLabelModel(cfg, seed=0)
    X = Tensor(np.random.default_rng(1).uniform(-1, 1, (1, len(tokens), cfg.e)))
    out = model.structure_level(X, 4, np.zeros((1, len(tokens)), np.int64), merge_override=merges)

emb = out.T.data[0]
print("max |T(United) - T(Kingdom)|  :", np.abs(emb[1] - emb[2]).max())
print("max |T(Kingdom) - T(government)|:", round(float(np.abs(emb[2] - emb[3]).max()), 4))
W = out.W.data[0, :, :, 0]  # slots: offsets -2 -1 +1 +2, then the token itself
print("weights seen from 'Kingdom'   :", np.round(W[2], 3))

# Decoding: effective merges are OR-ed upward, so a level-1 entity stays whole
# inside the larger level-2 entity.
names = ["O", "GPE", "ORG"]
level_merges = np.array([[0.9, 0.2], [0.1, 0.1], [0.9, 0.3], [0.9, 0.9], [0.9, 0.9], [0.9, 0.9]])
classes = np.array([[0, 2], [1, 2], [1, 2], [0, 2], [0, 0], [0, 0], [0, 0]])
for sp in decode_arrays(level_merges, classes, names, cutoff=0.75):
    print(f"level {sp.level}: {' '.join(tokens[sp.start:sp.end])!r} -> {sp.label}")
