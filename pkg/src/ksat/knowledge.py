"""Knowledge graphs, node embeddings and their compression into per-sequence
vectors and Gram matrices.

Nodes and relations share one :class:`EmbeddingTable`; link prediction sums
subject and predicate vectors, so predicates need vectors too.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DegenerateGraphError, DomainError, ParseError

MARGIN = 1.0
MAX_OBJECT_RESAMPLES = 100


@dataclass(frozen=True, order=True)
class Triple:
    subject: str
    predicate: str
    object: str

    def __post_init__(self):
        for name in ("subject", "predicate", "object"):
            value = getattr(self, name)
            if not isinstance(value, str) or not value.strip():
                raise DomainError(f"triple {name} must be non-empty text, got {value!r}")
            object.__setattr__(self, name, value.strip())


@dataclass(frozen=True)
class KnowledgeGraph:
    nodes: frozenset
    relations: frozenset
    triples: frozenset

    def __post_init__(self):
        for t in self.triples:
            if t.subject not in self.nodes or t.object not in self.nodes:
                raise DomainError(f"triple {t} references a node outside the graph")
            if t.predicate not in self.relations:
                raise DomainError(f"triple {t} references an unknown relation")

    @classmethod
    def from_triples(cls, triples: Iterable[Triple]) -> "KnowledgeGraph":
        triples = frozenset(triples)
        nodes = frozenset(n for t in triples for n in (t.subject, t.object))
        relations = frozenset(t.predicate for t in triples)
        return cls(nodes, relations, triples)

    def __len__(self):
        return len(self.triples)

    def sorted_triples(self) -> list:
        return sorted(self.triples)

    def union(self, other: "KnowledgeGraph") -> "KnowledgeGraph":
        return KnowledgeGraph.from_triples(self.triples | other.triples)


@dataclass(frozen=True)
class LabeledTriple:
    triple: Triple
    label: bool


class EmbeddingTable(Mapping):
    """Immutable map from identifier to a finite vector of length ``dimension``."""

    def __init__(self, dimension: int, entries: Mapping[str, Sequence[float]]):
        if int(dimension) != dimension or dimension < 1:
            raise DomainError(f"dimension must be a positive integer, got {dimension}")
        self.dimension = int(dimension)
        self._entries = {}
        for key, vec in entries.items():
            arr = np.array(vec, dtype=np.float64).reshape(-1)
            if arr.shape[0] != self.dimension:
                raise DomainError(
                    f"vector for {key!r} has length {arr.shape[0]}, expected {self.dimension}"
                )
            if not np.all(np.isfinite(arr)):
                raise DomainError(f"vector for {key!r} has non-finite components")
            arr.setflags(write=False)
            self._entries[key] = arr

    def __getitem__(self, key):
        return self._entries[key]

    def __iter__(self):
        return iter(self._entries)

    def __len__(self):
        return len(self._entries)

    def __eq__(self, other):
        if not isinstance(other, EmbeddingTable):
            return NotImplemented
        return (
            self.dimension == other.dimension
            and self._entries.keys() == other._entries.keys()
            and all(np.array_equal(v, other._entries[k]) for k, v in self._entries.items())
        )

    def __repr__(self):
        return f"EmbeddingTable(dimension={self.dimension}, entries={len(self)})"

    def scaled(self, factor: float) -> "EmbeddingTable":
        return EmbeddingTable(self.dimension, {k: v * factor for k, v in self._entries.items()})


@dataclass(frozen=True, eq=False)
class KnowledgeContext:
    """Token-aligned knowledge for one sequence: ``K == G @ G.T``."""

    length: int
    G: np.ndarray
    K: np.ndarray
    links: tuple = field(default=())


# ---------------------------------------------------------------------------
# ingestion


def load_triples(path) -> KnowledgeGraph:
    """Read a tab-separated triple file; ``#`` lines are comments."""
    path = os.fspath(path)
    triples = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise ParseError(f"expected 3 tab-separated fields, got {len(fields)}", path, lineno)
            if any(not f.strip() for f in fields):
                raise ParseError("empty field", path, lineno)
            triples.add(Triple(*fields))
    return KnowledgeGraph.from_triples(triples)


def write_triples(kg: KnowledgeGraph, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in kg.sorted_triples():
            fh.write(f"{t.subject}\t{t.predicate}\t{t.object}\n")


def load_embedding_file(path) -> EmbeddingTable:
    """Parse the ``<count> <dim>`` header text format used by word-vector dumps."""
    path = os.fspath(path)
    entries = {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        parts = header.split()
        if len(parts) != 2:
            raise ParseError("header must be '<count> <dimension>'", path, 1)
        try:
            count, dim = int(parts[0]), int(parts[1])
        except ValueError:
            raise ParseError("header must hold two integers", path, 1) from None
        if count < 0 or dim < 1:
            raise ParseError("invalid header values", path, 1)
        for lineno, raw in enumerate(fh, start=2):
            line = raw.rstrip("\r\n")
            if not line.strip():
                continue
            items = line.split(" ")
            if len(items) - 1 != dim:
                raise ParseError(f"expected {dim} values, got {len(items) - 1}", path, lineno)
            try:
                vec = np.array([float(x) for x in items[1:]], dtype=np.float64)
            except ValueError:
                raise ParseError("non-numeric value", path, lineno) from None
            if not np.all(np.isfinite(vec)):
                raise ParseError("non-finite value", path, lineno)
            if items[0] in entries:
                raise ParseError(f"duplicate identifier {items[0]!r}", path, lineno)
            entries[items[0]] = vec
    if len(entries) != count:
        raise ParseError(f"header declares {count} entries, body has {len(entries)}", path)
    return EmbeddingTable(dim, entries)


def write_embedding_file(table: EmbeddingTable, path, digits: int = 17) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(table)} {table.dimension}\n")
        for key in table:
            values = " ".join(format(float(x), f".{digits}g") for x in table[key])
            fh.write(f"{key} {values}\n")


# ---------------------------------------------------------------------------
# splits and negatives


def holdout_split(kg: KnowledgeGraph, fraction: float, seed: int):
    if not 0.0 < fraction < 1.0:
        raise DomainError(f"fraction must lie in (0, 1), got {fraction}")
    n = len(kg.triples)
    n_held = math.ceil(fraction * n)
    if n < 2 or n_held >= n:
        raise DomainError(f"cannot hold out {n_held} of {n} triples")
    ordered = kg.sorted_triples()
    rng = np.random.default_rng(seed)
    chosen = rng.choice(n, size=n_held, replace=False)
    heldout = frozenset(ordered[i] for i in chosen)
    # keep every node and relation so held-out triples stay embeddable
    train = KnowledgeGraph(kg.nodes, kg.relations, kg.triples - heldout)
    return train, heldout


def sample_negatives(kg: KnowledgeGraph, positives: Iterable[Triple], seed: int) -> list:
    """Label ``positives`` true and pair each with one corrupted false triple.

    The object is resampled up to ``MAX_OBJECT_RESAMPLES`` times, then the
    subject, before giving up.
    """
    nodes = sorted(kg.nodes)
    if len(nodes) < 2:
        raise DomainError("need at least 2 nodes to corrupt triples")
    rng = np.random.default_rng(seed)
    positives = sorted(positives)
    out = [LabeledTriple(t, True) for t in positives]
    for t in positives:
        neg = None
        for _ in range(MAX_OBJECT_RESAMPLES):
            cand = Triple(t.subject, t.predicate, nodes[rng.integers(len(nodes))])
            if cand not in kg.triples:
                neg = cand
                break
        if neg is None:
            for _ in range(MAX_OBJECT_RESAMPLES):
                cand = Triple(nodes[rng.integers(len(nodes))], t.predicate, t.object)
                if cand not in kg.triples:
                    neg = cand
                    break
        if neg is None:
            # random search exhausted; settle it by enumeration
            options = [Triple(t.subject, t.predicate, n) for n in nodes]
            options += [Triple(n, t.predicate, t.object) for n in nodes]
            options = [c for c in options if c not in kg.triples]
            if not options:
                raise DegenerateGraphError(f"every corruption of {t} is in the graph")
            neg = options[rng.integers(len(options))]
        out.append(LabeledTriple(neg, False))
    return out


# ---------------------------------------------------------------------------
# translational embeddings


def train_translational(
    kg: KnowledgeGraph,
    d_g: int,
    epochs: int,
    learning_rate: float,
    seed: int,
    batch_size: int = 32,
) -> EmbeddingTable:
    """Fit subject + predicate ~ object vectors by margin ranking.

    Loss per positive is ``max(0, MARGIN + |s+p-o| - |s'+p-o'|)`` against one
    corrupted triple (subject or object replaced uniformly). Node vectors are
    projected back to the unit sphere after every minibatch update.
    """
    if len(kg.triples) == 0:
        raise DomainError("cannot train embeddings on an empty graph")
    if d_g < 1 or epochs < 1 or learning_rate <= 0:
        raise DomainError("d_g and epochs must be positive, learning_rate > 0")
    nodes = sorted(kg.nodes)
    relations = sorted(kg.relations)
    clash = set(nodes) & set(relations)
    if clash:
        raise DomainError(f"identifiers used as both node and relation: {sorted(clash)[:5]}")
    node_idx = {n: i for i, n in enumerate(nodes)}
    rel_idx = {r: i for i, r in enumerate(relations)}
    trip = np.array(
        [(node_idx[t.subject], rel_idx[t.predicate], node_idx[t.object]) for t in kg.sorted_triples()],
        dtype=np.int64,
    )
    rng = np.random.default_rng(seed)
    bound = 6.0 / math.sqrt(d_g)
    E = rng.uniform(-bound, bound, size=(len(nodes), d_g))
    R = rng.uniform(-bound, bound, size=(len(relations), d_g))
    R /= np.linalg.norm(R, axis=1, keepdims=True)
    E /= np.linalg.norm(E, axis=1, keepdims=True)
    n_nodes = len(nodes)

    for _ in range(epochs):
        order = rng.permutation(len(trip))
        for start in range(0, len(trip), batch_size):
            batch = trip[order[start:start + batch_size]]
            s, p, o = batch[:, 0], batch[:, 1], batch[:, 2]
            replacement = rng.integers(n_nodes, size=len(batch))
            corrupt_subject = rng.random(len(batch)) < 0.5
            s_neg = np.where(corrupt_subject, replacement, s)
            o_neg = np.where(corrupt_subject, o, replacement)

            diff_pos = E[s] + R[p] - E[o]
            diff_neg = E[s_neg] + R[p] - E[o_neg]
            d_pos = np.linalg.norm(diff_pos, axis=1)
            d_neg = np.linalg.norm(diff_neg, axis=1)
            active = (MARGIN + d_pos - d_neg) > 0
            if not np.any(active):
                continue
            u_pos = diff_pos / np.maximum(d_pos, 1e-12)[:, None]
            u_neg = diff_neg / np.maximum(d_neg, 1e-12)[:, None]
            w = active[:, None] / len(batch)
            gE = np.zeros_like(E)
            gR = np.zeros_like(R)
            np.add.at(gE, s, w * u_pos)
            np.add.at(gE, o, -w * u_pos)
            np.add.at(gE, s_neg, -w * u_neg)
            np.add.at(gE, o_neg, w * u_neg)
            np.add.at(gR, p, w * (u_pos - u_neg))
            E -= learning_rate * gE
            R -= learning_rate * gR
            E /= np.maximum(np.linalg.norm(E, axis=1, keepdims=True), 1e-12)

    entries = {n: E[i] for n, i in node_idx.items()}
    entries.update({r: R[i] for r, i in rel_idx.items()})
    return EmbeddingTable(d_g, entries)


def sum_tables(tables: Sequence[EmbeddingTable]) -> EmbeddingTable:
    """Componentwise sum over tables; a key missing from a table counts as zero."""
    if not tables:
        raise DomainError("sum_tables needs at least one table")
    dim = tables[0].dimension
    for t in tables[1:]:
        if t.dimension != dim:
            raise DomainError(f"dimension mismatch: {dim} vs {t.dimension}")
    out = {}
    for t in tables:
        for key in t:
            if key in out:
                out[key] = out[key] + t[key]
            else:
                out[key] = np.array(t[key])
    return EmbeddingTable(dim, out)


# ---------------------------------------------------------------------------
# compression


def link_tokens(tokens: Sequence[str], table: Mapping) -> list:
    links = []
    for tok in tokens:
        key = tok.lower()
        links.append(key if key in table else None)
    return links


def build_context(tokens: Sequence[str], table: EmbeddingTable) -> KnowledgeContext:
    links = link_tokens(tokens, table)
    G = np.zeros((len(tokens), table.dimension))
    for i, key in enumerate(links):
        if key is not None:
            G[i] = table[key]
    K = G @ G.T
    # the product is symmetric mathematically; pin it bitwise
    K = np.triu(K) + np.triu(K, 1).T
    G.setflags(write=False)
    K.setflags(write=False)
    return KnowledgeContext(len(tokens), G, K, tuple(links))


def zero_context(length: int, d_g: int) -> KnowledgeContext:
    G = np.zeros((length, d_g))
    K = np.zeros((length, length))
    return KnowledgeContext(length, G, K, (None,) * length)
