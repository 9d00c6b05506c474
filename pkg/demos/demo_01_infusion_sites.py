"""
Where knowledge enters the encoder
==================================

Build a knowledge context for a short sentence, then look at how each
infusion policy changes the first block's attention.
"""

import numpy as np

from ksat.encoder import EncoderConfig, forward, init_params
from ksat.infusion import InfusionPolicy, sites_for
from ksat.knowledge import EmbeddingTable, build_context

np.set_printoptions(precision=3, suppress=True)

# two of the four tokens have node vectors; the others get zero rows
table = EmbeddingTable(4, {"paris": [1.0, 0.5, 0.0, 0.0], "france": [0.9, 0.6, 0.1, 0.0]})
tokens = ["Paris", "is", "in", "France"]
ctx = build_context(tokens, table)
print("links:", ctx.links)
print("K =\n", ctx.K)

# the sites each policy switches on in a 3-block encoder
for policy in InfusionPolicy:
    s = sites_for(policy, 3)
    print(f"{policy.value:>9}  latent {s.latent_at}  attention {s.attention_at}")

# same weights under every policy; only the sites differ
cfg = EncoderConfig(n_blocks=3, n_heads=2, d_model=8, d_ff=16, vocab_size=10, max_len=8, d_g=4)
params = init_params(cfg)
ids = np.array([3, 4, 5, 6])
for policy in InfusionPolicy:
    logits, trace = forward(params, ids, ctx, sites_for(policy, 3))
    print(f"\n{policy.value}: logits {logits}")
    print("block 1, head 1 attention from 'paris':", trace.weights[0][0, 0])
