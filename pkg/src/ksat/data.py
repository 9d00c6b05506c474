"""Sentence-pair classification tasks: TSV ingestion, vocabulary, DE@k
subsampling and a synthetic task whose labels live in a knowledge graph."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import DomainError, ParseError
from .knowledge import KnowledgeGraph, Triple, write_triples

PAD, UNK, SEP = "[PAD]", "[UNK]", "[SEP]"
PAD_ID, UNK_ID, SEP_ID = 0, 1, 2
SPLIT_FILES = {"train": "train.tsv", "validation": "dev.tsv", "test": "test.tsv"}
SYNTH_RELATION = "rel"


@dataclass(frozen=True)
class Example:
    label: int
    tokens: tuple

    def __post_init__(self):
        if not self.tokens:
            raise DomainError("an example needs at least one token")
        if self.label < 0:
            raise DomainError(f"negative label {self.label}")


@dataclass(frozen=True)
class Dataset:
    name: str
    n_classes: int
    train: tuple
    validation: tuple
    test: tuple
    vocabulary: dict = field(compare=False)

    def encode(self, tokens: Sequence[str]) -> np.ndarray:
        vocab = self.vocabulary
        return np.array([vocab.get(t, UNK_ID) for t in tokens], dtype=np.int64)

    def splits(self):
        return {"train": self.train, "validation": self.validation, "test": self.test}


def tokenize(*sentences: str) -> tuple:
    """Lowercase whitespace tokens; non-empty sentences are joined by ``[SEP]``."""
    out = []
    for i, s in enumerate(x for x in sentences if x is not None and x.strip()):
        if i:
            out.append(SEP)
        out.extend(s.lower().split())
    return tuple(out)


def build_vocabulary(examples: Sequence[Example]) -> dict:
    vocab = {PAD: PAD_ID, UNK: UNK_ID, SEP: SEP_ID}
    for ex in examples:
        for tok in ex.tokens:
            if tok not in vocab:
                vocab[tok] = len(vocab)
    return vocab


def _read_split(path, n_classes):
    examples = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\r\n").split("\t")
        if header not in (["label", "sentence1"], ["label", "sentence1", "sentence2"]):
            raise ParseError("header must be 'label<TAB>sentence1[<TAB>sentence2]'", path, 1)
        for lineno, raw in enumerate(fh, start=2):
            line = raw.rstrip("\r\n")
            if not line.strip():
                continue
            cols = line.split("\t")
            if len(cols) not in (2, 3) or len(cols) > len(header):
                raise ParseError(f"expected {len(header)} columns, got {len(cols)}", path, lineno)
            try:
                label = int(cols[0])
            except ValueError:
                raise ParseError(f"label {cols[0]!r} is not an integer", path, lineno) from None
            if not 0 <= label < n_classes:
                raise ParseError(f"label {label} outside [0, {n_classes})", path, lineno)
            tokens = tokenize(*cols[1:])
            if not tokens:
                raise ParseError("row has no tokens", path, lineno)
            examples.append(Example(label, tokens))
    return tuple(examples)


def load_tsv_task(path, n_classes: int, name: str | None = None) -> Dataset:
    if n_classes < 2:
        raise DomainError(f"n_classes must be >= 2, got {n_classes}")
    path = os.fspath(path)
    splits = {}
    for split, filename in SPLIT_FILES.items():
        fpath = os.path.join(path, filename)
        if not os.path.isfile(fpath):
            raise FileNotFoundError(f"missing split file: {fpath}")
        splits[split] = _read_split(fpath, n_classes)
    return Dataset(
        name=name or os.path.basename(os.path.normpath(path)),
        n_classes=n_classes,
        vocabulary=build_vocabulary(splits["train"]),
        **splits,
    )


def write_task(dataset: Dataset, directory, kg: KnowledgeGraph | None = None) -> list:
    """Write the splits as task TSVs (and ``triples.tsv`` when ``kg`` is given)."""
    os.makedirs(directory, exist_ok=True)
    paths = []
    for split, filename in SPLIT_FILES.items():
        fpath = os.path.join(directory, filename)
        with open(fpath, "w", encoding="utf-8") as fh:
            fh.write("label\tsentence1\tsentence2\n")
            for ex in getattr(dataset, split):
                toks = list(ex.tokens)
                if SEP in toks:
                    cut = toks.index(SEP)
                    first, second = toks[:cut], toks[cut + 1:]
                else:
                    first, second = toks, []
                fh.write(f"{ex.label}\t{' '.join(first)}\t{' '.join(second)}\n")
        paths.append(fpath)
    if kg is not None:
        tpath = os.path.join(directory, "triples.tsv")
        write_triples(kg, tpath)
        paths.append(tpath)
    return paths


def subsample(dataset: Dataset, k_percent: float, seed: int) -> Dataset:
    """Keep ``ceil(k/100 * |train|)`` training examples, in their original order."""
    if not 0 < k_percent <= 100:
        raise DomainError(f"k_percent must lie in (0, 100], got {k_percent}")
    n = len(dataset.train)
    size = math.ceil(k_percent / 100.0 * n)
    if size >= n:
        return dataset
    rng = np.random.default_rng(seed)
    keep = np.sort(rng.choice(n, size=size, replace=False))
    return replace(dataset, train=tuple(dataset.train[i] for i in keep))


def entity_name(i: int) -> str:
    return f"e_{i}"


def generate_synthetic_task(
    n_entities: int,
    n_train: int,
    n_val: int,
    n_test: int,
    seed: int,
    latent_dim: int = 3,
):
    """Build a random graph and a question task answerable only through it.

    Each entity gets a hidden Gaussian vector and ``e_i rel e_j`` holds iff
    the two vectors have a positive inner product, so every ordered pair is
    linked with probability 1/2 while the graph stays compressible into
    low-dimensional node embeddings. Questions read
    ``does [SEP] e_i relate e_j``. Unordered pairs are dealt out disjointly
    to the splits, half positive and half negative in each.
    """
    if n_entities < 4:
        raise DomainError(f"need at least 4 entities, got {n_entities}")
    if min(n_train, n_val, n_test) < 1:
        raise DomainError("split sizes must be positive")
    rng = np.random.default_rng(seed)
    latent = rng.standard_normal((n_entities, latent_dim))
    gram = latent @ latent.T
    iu, ju = np.triu_indices(n_entities, k=1)
    linked = gram[iu, ju] > 0

    triples = []
    for i, j, lk in zip(iu, ju, linked):
        if lk:
            triples.append(Triple(entity_name(i), SYNTH_RELATION, entity_name(j)))
            triples.append(Triple(entity_name(j), SYNTH_RELATION, entity_name(i)))
    kg = KnowledgeGraph(
        nodes=frozenset(entity_name(i) for i in range(n_entities)),
        relations=frozenset([SYNTH_RELATION]),
        triples=frozenset(triples),
    )

    pos_pairs = [(i, j) for i, j, lk in zip(iu, ju, linked) if lk]
    neg_pairs = [(i, j) for i, j, lk in zip(iu, ju, linked) if not lk]
    pos_order = rng.permutation(len(pos_pairs))
    neg_order = rng.permutation(len(neg_pairs))
    sizes = (n_train, n_val, n_test)
    need_pos = sum((s + 1) // 2 for s in sizes)
    need_neg = sum(s // 2 for s in sizes)
    if need_pos > len(pos_pairs) or need_neg > len(neg_pairs):
        raise DomainError(
            f"{n_entities} entities give {len(pos_pairs)} linked and {len(neg_pairs)} unlinked "
            f"pairs; splits need {need_pos} and {need_neg}"
        )

    splits = []
    p_at = n_at = 0
    for size in sizes:
        n_pos, n_neg = (size + 1) // 2, size // 2
        chosen = [(pos_pairs[k], 1) for k in pos_order[p_at:p_at + n_pos]]
        chosen += [(neg_pairs[k], 0) for k in neg_order[n_at:n_at + n_neg]]
        p_at += n_pos
        n_at += n_neg
        flip = rng.random(len(chosen)) < 0.5
        examples = []
        for ((i, j), label), f in zip(chosen, flip):
            a, b = (j, i) if f else (i, j)
            tokens = ("does", SEP, entity_name(a), "relate", entity_name(b))
            examples.append(Example(label, tokens))
        order = rng.permutation(len(examples))
        splits.append(tuple(examples[k] for k in order))

    train, validation, test = splits
    dataset = Dataset(
        name=f"synthetic-{n_entities}",
        n_classes=2,
        train=train,
        validation=validation,
        test=test,
        vocabulary=build_vocabulary(train),
    )
    return dataset, kg


def pair_of(example: Example):
    """Unordered entity pair asked about by a synthetic example."""
    toks = example.tokens
    return frozenset((toks[2], toks[4]))
