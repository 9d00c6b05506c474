"""
Translational node embeddings and link prediction
=================================================

Train embeddings on a cube-shaped graph where every triple satisfies
subject + predicate = object, hold out a quarter of the triples, and
score them with the cosine rule.
"""

import itertools

import numpy as np

from ksat.evalharness import THRESHOLD_CANDIDATES, link_prediction_accuracy, tune_threshold
from ksat.knowledge import (
    KnowledgeGraph,
    Triple,
    holdout_split,
    sample_negatives,
    train_translational,
)

# vertices are sign patterns; flip<a> turns a + on axis a into a -
triples = []
for signs in itertools.product("pm", repeat=3):
    for axis in range(3):
        if signs[axis] == "p":
            target = signs[:axis] + ("m",) + signs[axis + 1:]
            triples.append(Triple("v" + "".join(signs), f"flip{axis}", "v" + "".join(target)))
kg = KnowledgeGraph.from_triples(triples)
print(f"{len(kg.nodes)} nodes, {len(kg.relations)} relations, {len(kg.triples)} triples")

train_kg, held = holdout_split(kg, 0.25, seed=0)
table = train_translational(train_kg, d_g=16, epochs=200, learning_rate=0.1, seed=0, batch_size=4)

# each held-out positive is paired with one corrupted negative
labeled = sample_negatives(kg, held, seed=0)
for t in THRESHOLD_CANDIDATES:
    print(f"threshold {t:<4}  accuracy {link_prediction_accuracy(table, labeled, t):.3f}")
print("tuned threshold:", tune_threshold(table, labeled))

# node vectors stay on the unit sphere
print("node norms:", np.round([np.linalg.norm(table[n]) for n in sorted(kg.nodes)], 6))
