"""Experiment orchestration: flat ``key = value`` configs, the end-to-end
pipeline, and on-disk artifacts."""

from __future__ import annotations

import csv
import dataclasses
import datetime
import logging
import os
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import __version__
from .data import generate_synthetic_task, load_tsv_task, write_task
from .encoder import EncoderConfig
from .errors import ConfigError, KsatError, StageError
from .evalharness import (
    MetricReport,
    TrainingConfig,
    cgka,
    de_curve,
    encode_split,
    link_prediction_accuracy,
    run_task,
    tune_threshold,
)
from .infusion import InfusionPolicy
from .knowledge import (
    KnowledgeGraph,
    holdout_split,
    load_embedding_file,
    load_triples,
    sample_negatives,
    sum_tables,
    train_translational,
)

log = logging.getLogger(__name__)


def _text(v):
    return v.strip()


def _opt_text(v):
    v = v.strip()
    return v or None


def _path_list(v):
    return tuple(p.strip() for p in v.split(",") if p.strip())


def _int(v):
    try:
        return int(v)
    except ValueError:
        raise ConfigError(f"expected an integer, got {v!r}") from None


def _opt_int(v):
    return None if v.strip().lower() in ("", "none") else _int(v)


def _float(v):
    try:
        return float(v)
    except ValueError:
        raise ConfigError(f"expected a number, got {v!r}") from None


def _opt_float(v):
    return None if v.strip().lower() in ("", "none") else _float(v)


def _k_list(v):
    return tuple(_float(x) for x in v.split(",") if x.strip())


def _policy(v):
    try:
        return InfusionPolicy.parse(v)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _tri_state(v):
    v = v.strip().lower()
    if v not in ("auto", "true", "false"):
        raise ConfigError(f"expected auto, true or false, got {v!r}")
    return v


# key -> (parser, default as config text)
SCHEMA = {
    "task_path": (_opt_text, ""),
    "n_classes": (_int, "2"),
    "positive_class": (_int, "1"),
    "synthetic_entities": (_opt_int, ""),
    "synthetic_train": (_int, "2000"),
    "synthetic_val": (_int, "200"),
    "synthetic_test": (_int, "500"),
    "synthetic_latent_dim": (_int, "3"),
    "triple_paths": (_path_list, ""),
    "embedding_paths": (_path_list, ""),
    "kg_train": (_tri_state, "auto"),
    "kg_dim": (_int, "8"),
    "kg_epochs": (_int, "100"),
    "kg_learning_rate": (_float, "0.1"),
    "kg_batch_size": (_int, "32"),
    "holdout_fraction": (_float, "0.1"),
    "policy": (_policy, "none"),
    "n_blocks": (_int, "2"),
    "n_heads": (_int, "2"),
    "d_model": (_int, "16"),
    "d_ff": (_int, "32"),
    "max_len": (_int, "64"),
    "epochs": (_int, "30"),
    "learning_rate": (_float, "0.05"),
    "batch_size": (_int, "16"),
    "max_grad_norm": (_opt_float, "1.0"),
    "de_k_list": (_k_list, "50,75,100"),
    "seed": (_int, "0"),
    "out_dir": (_text, "ksat-out"),
}


@dataclass(frozen=True)
class ExperimentConfig:
    task_path: Optional[str]
    n_classes: int
    positive_class: int
    synthetic_entities: Optional[int]
    synthetic_train: int
    synthetic_val: int
    synthetic_test: int
    synthetic_latent_dim: int
    triple_paths: tuple
    embedding_paths: tuple
    kg_train: str
    kg_dim: int
    kg_epochs: int
    kg_learning_rate: float
    kg_batch_size: int
    holdout_fraction: float
    policy: InfusionPolicy
    n_blocks: int
    n_heads: int
    d_model: int
    d_ff: int
    max_len: int
    epochs: int
    learning_rate: float
    batch_size: int
    max_grad_norm: Optional[float]
    de_k_list: tuple
    seed: int
    out_dir: str

    @property
    def synthetic(self):
        return self.synthetic_entities is not None

    @property
    def trains_embeddings(self):
        if self.kg_train == "auto":
            return not self.embedding_paths and (self.synthetic or bool(self.triple_paths))
        return self.kg_train == "true"

    @property
    def has_knowledge(self):
        return bool(self.embedding_paths) or self.trains_embeddings

    def training(self) -> TrainingConfig:
        return TrainingConfig(self.epochs, self.learning_rate, self.batch_size, self.max_grad_norm)

    def replace(self, **changes) -> "ExperimentConfig":
        return validate(dataclasses.replace(self, **changes))

    def snapshot(self) -> str:
        lines = [f"# ksat {__version__} resolved configuration"]
        for key in SCHEMA:
            lines.append(f"{key} = {_format_value(getattr(self, key))}")
        return "\n".join(lines) + "\n"


def _format_value(value):
    if value is None:
        return ""
    if isinstance(value, InfusionPolicy):
        return value.value
    if isinstance(value, tuple):
        return ",".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return f"{value:g}" if float(f"{value:g}") == value else repr(value)
    return str(value)


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    if cfg.task_path is None and not cfg.synthetic:
        raise ConfigError("set task_path or synthetic_entities")
    if cfg.task_path is not None and cfg.synthetic:
        raise ConfigError("task_path and synthetic_entities are mutually exclusive")
    if cfg.policy is not InfusionPolicy.NONE and not cfg.has_knowledge:
        raise ConfigError(f"policy {cfg.policy.value} needs a knowledge source")
    if cfg.trains_embeddings and not (cfg.synthetic or cfg.triple_paths):
        raise ConfigError("kg_train needs triples (triple_paths or a synthetic task)")
    ks = cfg.de_k_list
    if any(not 0 < k <= 100 for k in ks):
        raise ConfigError("de_k_list values must lie in (0, 100]")
    if any(b <= a for a, b in zip(ks, ks[1:])):
        raise ConfigError("de_k_list must be strictly increasing")
    if not 0 < cfg.holdout_fraction < 1:
        raise ConfigError("holdout_fraction must lie in (0, 1)")
    for key in ("n_blocks", "n_heads", "d_model", "d_ff", "max_len", "batch_size", "kg_dim",
                "kg_epochs", "kg_batch_size", "synthetic_train", "synthetic_val",
                "synthetic_test", "synthetic_latent_dim"):
        if getattr(cfg, key) < 1:
            raise ConfigError(f"{key} must be positive")
    if cfg.epochs < 0:
        raise ConfigError("epochs must be >= 0")
    if cfg.learning_rate <= 0 or cfg.kg_learning_rate <= 0:
        raise ConfigError("learning rates must be positive")
    if cfg.max_grad_norm is not None and cfg.max_grad_norm <= 0:
        raise ConfigError("max_grad_norm must be positive or none")
    if cfg.d_model % cfg.n_heads:
        raise ConfigError(f"d_model={cfg.d_model} is not divisible by n_heads={cfg.n_heads}")
    if not 0 <= cfg.positive_class < cfg.n_classes:
        raise ConfigError("positive_class must be a valid class index")
    return cfg


def parse_config_text(text: str, overrides: Optional[dict] = None) -> ExperimentConfig:
    raw = {key: default for key, (_, default) in SCHEMA.items()}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in stripped.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        raw[key] = value
    for key, value in (overrides or {}).items():
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r}")
        if value is not None:
            raw[key] = str(value)
    values = {}
    for key, (parse, _) in SCHEMA.items():
        try:
            values[key] = parse(raw[key])
        except ConfigError as exc:
            raise ConfigError(f"{key}: {exc}") from None
    return validate(ExperimentConfig(**values))


def parse_config(path, overrides: Optional[dict] = None) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read(), overrides)


# ---------------------------------------------------------------------------
# pipeline


@dataclass
class KnowledgeBundle:
    graph: Optional[KnowledgeGraph]
    table: Optional[object]
    threshold: Optional[float]
    link_accuracy: Optional[float]


@dataclass
class RunArtifacts:
    report: MetricReport
    losses: list
    config_snapshot: str
    version: str
    timestamp: str
    base_params_hash: str


class _stage:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is None or isinstance(exc, StageError):
            return False
        if isinstance(exc, (KsatError, OSError, ValueError, KeyError, ArithmeticError)):
            raise StageError(self.name, exc) from exc
        return False


def load_dataset(cfg: ExperimentConfig):
    """The task and, for synthetic tasks, the graph that decides its labels."""
    if cfg.synthetic:
        return generate_synthetic_task(
            cfg.synthetic_entities, cfg.synthetic_train, cfg.synthetic_val,
            cfg.synthetic_test, cfg.seed, latent_dim=cfg.synthetic_latent_dim,
        )
    return load_tsv_task(cfg.task_path, cfg.n_classes), None


def build_knowledge(cfg: ExperimentConfig, task_graph: Optional[KnowledgeGraph]) -> KnowledgeBundle:
    graph = task_graph
    for path in cfg.triple_paths:
        g = load_triples(path)
        graph = g if graph is None else graph.union(g)
    tables = [load_embedding_file(p) for p in cfg.embedding_paths]

    train_graph, heldout = graph, None
    if graph is not None and len(graph.triples) >= 2:
        train_graph, heldout = holdout_split(graph, cfg.holdout_fraction, cfg.seed)
    if cfg.trains_embeddings:
        if graph is None or len(graph.triples) == 0:
            raise ConfigError("no triples to train embeddings on")
        tables.insert(0, train_translational(
            train_graph, cfg.kg_dim, cfg.kg_epochs, cfg.kg_learning_rate, cfg.seed,
            batch_size=cfg.kg_batch_size,
        ))
    table = sum_tables(tables) if tables else None

    threshold = link_acc = None
    missing = set()
    if table is not None and heldout:
        missing = (graph.nodes | graph.relations) - set(table)
        if missing:
            # loaded tables often carry no predicate vectors; infusion still works
            log.warning("skipping link prediction: %d graph identifiers have no embedding, e.g. %r",
                        len(missing), sorted(missing)[0])
    if table is not None and heldout and not missing:
        held = sorted(heldout)
        rng = np.random.default_rng([cfg.seed, 7])
        held = [held[i] for i in rng.permutation(len(held))]
        # held-out triples are halved: one half tunes the threshold, the other scores it
        cut = len(held) // 2 if len(held) >= 2 else len(held)
        val_pos, test_pos = held[:cut], held[cut:] or held[:cut]
        val = sample_negatives(graph, val_pos, cfg.seed)
        test = sample_negatives(graph, test_pos, cfg.seed + 1)
        threshold = tune_threshold(table, val)
        link_acc = link_prediction_accuracy(table, test, threshold)
    return KnowledgeBundle(graph, table, threshold, link_acc)


def encoder_config(cfg: ExperimentConfig, dataset, table) -> EncoderConfig:
    longest = max(len(ex.tokens) for split in dataset.splits().values() for ex in split)
    if longest > cfg.max_len:
        raise ConfigError(f"longest example has {longest} tokens, max_len is {cfg.max_len}")
    return EncoderConfig(
        n_blocks=cfg.n_blocks, n_heads=cfg.n_heads, d_model=cfg.d_model, d_ff=cfg.d_ff,
        vocab_size=len(dataset.vocabulary), max_len=cfg.max_len,
        n_classes=dataset.n_classes, d_g=table.dimension if table is not None else cfg.kg_dim,
        seed=cfg.seed,
    )


def run_experiment(cfg: ExperimentConfig) -> RunArtifacts:
    started = time.perf_counter()
    with _stage("data"):
        dataset, task_graph = load_dataset(cfg)
    with _stage("knowledge"):
        know = build_knowledge(cfg, task_graph if cfg.has_knowledge else None)
    with _stage("compression"):
        enc_cfg = encoder_config(cfg, dataset, know.table)
        contexts = {
            "train": encode_split(dataset, dataset.train, know.table, enc_cfg.d_g),
            "test": encode_split(dataset, dataset.test, know.table, enc_cfg.d_g),
        }
    with _stage("training"):
        run = run_task(dataset, know.table, cfg.policy, enc_cfg, cfg.training(), cfg.seed,
                       positive_class=cfg.positive_class, contexts=contexts)
        log.info("policy=%s base_params_sha256=%s", cfg.policy.value, run.initial_hash)
    with _stage("evaluation"):
        curve = de_curve(dataset, cfg.de_k_list, cfg.policy, enc_cfg, cfg.training(),
                         cfg.seed, know.table) if cfg.de_k_list else None
        report = MetricReport(
            task=dataset.name,
            accuracy=run.accuracy,
            f1=run.f1,
            link_prediction_accuracy=know.link_accuracy,
            cgka=cgka(know.link_accuracy, run.accuracy) if know.link_accuracy is not None else None,
            de_curve=curve,
            policy=cfg.policy.value,
            seed=cfg.seed,
            timing_seconds=round(time.perf_counter() - started, 3),
        )
    return RunArtifacts(
        report=report,
        losses=run.losses,
        config_snapshot=cfg.snapshot(),
        version=__version__,
        timestamp=datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds"),
        base_params_hash=run.initial_hash,
    )


def emit_report(artifacts: RunArtifacts, directory) -> list:
    """Write report.json, report.csv, losses.csv and config.snapshot."""
    try:
        os.makedirs(directory, exist_ok=True)
        paths = [os.path.join(directory, name)
                 for name in ("report.json", "report.csv", "losses.csv", "config.snapshot")]
        with open(paths[0], "w", encoding="utf-8") as fh:
            fh.write(artifacts.report.to_json() + "\n")
        with open(paths[1], "w", encoding="utf-8") as fh:
            fh.write(artifacts.report.to_csv())
        with open(paths[2], "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["epoch", "loss"])
            for i, loss in enumerate(artifacts.losses, start=1):
                writer.writerow([i, repr(float(loss))])
        with open(paths[3], "w", encoding="utf-8") as fh:
            fh.write(f"# generated {artifacts.timestamp}\n")
            fh.write(f"# base_params_sha256 {artifacts.base_params_hash}\n")
            fh.write(artifacts.config_snapshot)
    except OSError as exc:
        raise StageError("report", exc) from exc
    return paths


def run_grid(cfg: ExperimentConfig) -> dict:
    """Run all four policies on one config; base parameters match per seed."""
    out = {}
    for policy in InfusionPolicy:
        out[policy.value] = run_experiment(cfg.replace(policy=policy))
    return out


def write_synthetic(cfg: ExperimentConfig, directory) -> list:
    if not cfg.synthetic:
        raise ConfigError("synth needs synthetic_entities")
    with _stage("data"):
        dataset, kg = load_dataset(cfg)
    with _stage("report"):
        return write_task(dataset, directory, kg)


def evaluate_links(cfg: ExperimentConfig) -> dict:
    """Embeddings-only evaluation: tuned threshold and held-out link accuracy."""
    with _stage("data"):
        task_graph = load_dataset(cfg)[1] if cfg.synthetic else None
    with _stage("knowledge"):
        know = build_knowledge(cfg, task_graph)
    if know.table is None or know.link_accuracy is None:
        raise StageError("evaluation", ConfigError("linkpred needs embeddings and held-out triples"))
    return {
        "threshold": know.threshold,
        "link_prediction_accuracy": know.link_accuracy,
        "n_triples": len(know.graph.triples),
        "seed": cfg.seed,
    }
