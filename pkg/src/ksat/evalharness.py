"""Classification metrics, embedding link prediction, CGKA and DE@k."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field, fields
from typing import Optional, Sequence

import numpy as np

from . import encoder
from .data import Dataset, subsample
from .errors import DomainError, MissingIdentifierError
from .infusion import InfusionPolicy, sites_for
from .knowledge import EmbeddingTable, build_context, zero_context

THRESHOLD_CANDIDATES = (0.0, 0.25, 0.5, 0.75)


@dataclass
class MetricReport:
    task: str
    accuracy: float
    f1: float
    link_prediction_accuracy: Optional[float] = None
    cgka: Optional[float] = None
    de_curve: Optional[list] = None
    policy: str = "none"
    seed: int = 0
    timing_seconds: float = 0.0

    def __post_init__(self):
        self.policy = InfusionPolicy.parse(self.policy).value
        for name in ("accuracy", "f1", "link_prediction_accuracy", "cgka"):
            value = getattr(self, name)
            if value is not None and not 0.0 <= value <= 1.0:
                raise DomainError(f"{name}={value} outside [0, 1]")
        if self.de_curve is not None:
            self.de_curve = [[float(k), float(a)] for k, a in self.de_curve]
            ks = [k for k, _ in self.de_curve]
            if any(b <= a for a, b in zip(ks, ks[1:])):
                raise DomainError("de_curve k values must be strictly increasing")
            for _, acc in self.de_curve:
                if not 0.0 <= acc <= 1.0:
                    raise DomainError(f"de_curve accuracy {acc} outside [0, 1]")

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]

    def to_json(self, exclude=()) -> str:
        data = {k: v for k, v in asdict(self).items() if k not in exclude}
        return json.dumps(data, indent=2, sort_keys=False)

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        data = json.loads(text)
        unknown = set(data) - set(cls.field_names())
        if unknown:
            raise DomainError(f"unknown report fields: {sorted(unknown)}")
        return cls(**data)

    def to_csv(self) -> str:
        row = []
        for name in self.field_names():
            value = getattr(self, name)
            if value is None:
                row.append("")
            elif name == "de_curve":
                row.append(";".join(f"{k:g}:{a!r}" for k, a in value))
            else:
                row.append(repr(value) if isinstance(value, float) else str(value))
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.field_names())
        writer.writerow(row)
        return buf.getvalue()


# ---------------------------------------------------------------------------
# classification metrics


def _check_pair(predictions, labels):
    if len(predictions) != len(labels):
        raise DomainError(f"{len(predictions)} predictions for {len(labels)} labels")
    if len(labels) == 0:
        raise DomainError("metrics need at least one prediction")


def accuracy(predictions: Sequence[int], labels: Sequence[int]) -> float:
    _check_pair(predictions, labels)
    return sum(int(p) == int(y) for p, y in zip(predictions, labels)) / len(labels)


def f1(predictions: Sequence[int], labels: Sequence[int], positive_class: int = 1) -> float:
    """Binary F1 of ``positive_class``; 0 when there are no positives at all."""
    _check_pair(predictions, labels)
    tp = fp = fn = 0
    for p, y in zip(predictions, labels):
        if p == positive_class and y == positive_class:
            tp += 1
        elif p == positive_class:
            fp += 1
        elif y == positive_class:
            fn += 1
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


# ---------------------------------------------------------------------------
# link prediction


def _lookup(table, key):
    try:
        return table[key]
    except KeyError:
        raise MissingIdentifierError(key) from None


def link_cosines(table: EmbeddingTable, labeled: Sequence) -> np.ndarray:
    """Cosine of ``g_s + g_p`` against ``g_o`` per triple; NaN for zero norms."""
    triples = [getattr(item, "triple", item) for item in labeled]
    sp = np.array([_lookup(table, t.subject) + _lookup(table, t.predicate) for t in triples])
    o = np.array([_lookup(table, t.object) for t in triples])
    sp = sp.reshape(len(triples), -1)
    o = o.reshape(len(triples), -1)
    norms = np.linalg.norm(sp, axis=1) * np.linalg.norm(o, axis=1)
    dots = np.einsum("ij,ij->i", sp, o)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(norms > 0, dots / np.where(norms > 0, norms, 1.0), np.nan)


def link_predictions(table: EmbeddingTable, labeled: Sequence, threshold: float) -> list:
    cos = link_cosines(table, labeled)
    # NaN > threshold is False: zero-norm vectors never predict a link
    return [bool(c > threshold) for c in cos]


def link_prediction_accuracy(table: EmbeddingTable, labeled: Sequence, threshold: float) -> float:
    if len(labeled) == 0:
        raise DomainError("link prediction needs at least one labeled triple")
    preds = link_predictions(table, labeled, threshold)
    return sum(p == item.label for p, item in zip(preds, labeled)) / len(labeled)


def tune_threshold(table: EmbeddingTable, validation: Sequence) -> float:
    """Best threshold among ``THRESHOLD_CANDIDATES``; ties go to the smallest."""
    if len(validation) == 0:
        raise DomainError("threshold tuning needs a non-empty validation set")
    best, best_acc = None, -1.0
    for tau in THRESHOLD_CANDIDATES:
        acc = link_prediction_accuracy(table, validation, tau)
        if acc > best_acc:
            best, best_acc = tau, acc
    return best


def cgka(link_accuracy: float, mean_task_accuracy: float) -> float:
    """Arithmetic mean of graph-encoder link accuracy and downstream accuracy."""
    for name, value in (("link_accuracy", link_accuracy), ("mean_task_accuracy", mean_task_accuracy)):
        if not 0.0 <= value <= 1.0:
            raise DomainError(f"{name}={value} outside [0, 1]")
    return (link_accuracy + mean_task_accuracy) / 2.0


# ---------------------------------------------------------------------------
# downstream training runs


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 30
    learning_rate: float = 0.05
    batch_size: int = 16
    max_grad_norm: Optional[float] = 1.0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or not self.learning_rate > 0:
            raise DomainError("epochs >= 0, batch_size >= 1 and learning_rate > 0 required")
        if self.max_grad_norm is not None and not self.max_grad_norm > 0:
            raise DomainError("max_grad_norm must be positive when set")


def encode_split(dataset: Dataset, split, table: Optional[EmbeddingTable], d_g: int) -> list:
    """``(ids, context, label)`` tuples; no table means all-zero knowledge."""
    out = []
    for ex in split:
        if table is None:
            ctx = zero_context(len(ex.tokens), d_g)
        else:
            ctx = build_context(ex.tokens, table)
        out.append((dataset.encode(ex.tokens), ctx, ex.label))
    return out


@dataclass
class TaskRun:
    params: encoder.ModelParams
    losses: list
    predictions: list
    labels: list
    accuracy: float
    f1: float
    initial_hash: str = field(default="")


def run_task(
    dataset: Dataset,
    table: Optional[EmbeddingTable],
    policy,
    config: encoder.EncoderConfig,
    training: TrainingConfig,
    seed: int,
    positive_class: int = 1,
    contexts: Optional[dict] = None,
) -> TaskRun:
    """Fresh seeded init, train on ``dataset.train``, evaluate on ``dataset.test``.

    ``contexts`` may carry pre-encoded ``{"train": [...], "test": [...]}``
    splits; they must correspond to ``dataset`` and ``table``.
    """
    if table is not None and table.dimension != config.d_g:
        raise DomainError(f"table dimension {table.dimension} != encoder d_g {config.d_g}")
    sites = sites_for(policy, config.n_blocks)
    if contexts is None:
        contexts = {}
    train_set = contexts.get("train") or encode_split(dataset, dataset.train, table, config.d_g)
    test_set = contexts.get("test") or encode_split(dataset, dataset.test, table, config.d_g)
    init = encoder.init_params(config)
    params, losses = encoder.train(
        init, train_set, sites,
        epochs=training.epochs,
        learning_rate=training.learning_rate,
        batch_size=training.batch_size,
        seed=seed,
        max_grad_norm=training.max_grad_norm,
    )
    labels = [ex[2] for ex in test_set]
    preds = encoder.predict_many(params, test_set, sites)
    return TaskRun(
        params=params,
        losses=losses,
        predictions=preds,
        labels=labels,
        accuracy=accuracy(preds, labels),
        f1=f1(preds, labels, positive_class),
        initial_hash=init.base_hash(),
    )


def de_at_k(
    dataset: Dataset,
    k_percent: float,
    policy,
    config: encoder.EncoderConfig,
    training: TrainingConfig,
    seed: int,
    table: Optional[EmbeddingTable] = None,
):
    """Test accuracy after training on ``k_percent`` of the training split."""
    if not 0 < k_percent <= 100:
        raise DomainError(f"k_percent must lie in (0, 100], got {k_percent}")
    reduced = subsample(dataset, k_percent, seed)
    run = run_task(reduced, table, policy, config, training, seed)
    return (k_percent, run.accuracy)


def de_curve(dataset, k_list, policy, config, training, seed, table=None) -> list:
    ks = list(k_list)
    if any(b <= a for a, b in zip(ks, ks[1:])):
        raise DomainError("k values must be strictly increasing")
    return [list(de_at_k(dataset, k, policy, config, training, seed, table)) for k in ks]
