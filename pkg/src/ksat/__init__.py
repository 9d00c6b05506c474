"""Knowledge-graph infusion into the hidden states and attention of a small numpy encoder."""

__version__ = "0.1.0"

from .infusion import InfusionPolicy, InfusionSites, infuse_attention, infuse_latent, sites_for
from .knowledge import (
    EmbeddingTable,
    KnowledgeContext,
    KnowledgeGraph,
    LabeledTriple,
    Triple,
    build_context,
    holdout_split,
    link_tokens,
    load_embedding_file,
    load_triples,
    sample_negatives,
    sum_tables,
    train_translational,
)

__all__ = [
    "EmbeddingTable",
    "InfusionPolicy",
    "InfusionSites",
    "KnowledgeContext",
    "KnowledgeGraph",
    "LabeledTriple",
    "Triple",
    "build_context",
    "holdout_split",
    "infuse_attention",
    "infuse_latent",
    "link_tokens",
    "load_embedding_file",
    "load_triples",
    "sample_negatives",
    "sites_for",
    "sum_tables",
    "train_translational",
]
