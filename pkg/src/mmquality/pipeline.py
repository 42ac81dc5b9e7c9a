"""End-to-end steps shared by the CLI and the acceptance tests:
labeling, pairing, training, the square-loss baseline and evaluation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .config import RunConfig
from .core_math import load_checkpoint, save_checkpoint
from .dataset_io import ContentItem, CorpusHeader, SplitAssignment, split
from .labeling import LabelWeights, engagement_score, make_labels, make_pairs, rank_normalize
from .metrics import EvalReport, evaluate
from .ranker import RankerConfig, RankerModel, TrainLog, train, train_square_loss

TRAIN_PAIR_STREAM = 1
EVAL_PAIR_STREAM = 2


@dataclass
class Splits:
    assignment: SplitAssignment
    train: list[ContentItem]
    val: list[ContentItem]
    test: list[ContentItem]


def make_splits(items: Sequence[ContentItem], cfg: RunConfig) -> Splits:
    sa = split(items, cfg.split_ratios(), cfg["seed"])
    return Splits(sa, sa.select(items, "train"), sa.select(items, "val"), sa.select(items, "test"))


def raw_scores(items: Sequence[ContentItem], weights: LabelWeights, use_human_score: bool = False,
               transform: Callable | None = None) -> np.ndarray:
    raw = np.array([engagement_score(it, weights, use_human_score) for it in items], dtype=np.float64)
    return raw if transform is None else np.asarray(transform(raw), dtype=np.float64)


def build_model(header: CorpusHeader, cfg: RunConfig) -> RankerModel:
    rc = cfg.ranker()
    return RankerModel(header.d_text, cfg.vlad(header.d_image), rc.widths, rc.m_max, seed=rc.seed)


def train_pairs(train_items: Sequence[ContentItem], cfg: RunConfig, rc: RankerConfig | None = None):
    rc = rc or cfg.ranker()
    labels = make_labels(train_items, cfg.label_weights(), cfg["labels.use_human_score"], cfg.transform())
    count = cfg["labels.n_pairs"] or rc.total_iterations * rc.batch_pairs
    return make_pairs(train_items, labels, cfg["labels.delta"], count, [cfg["seed"], TRAIN_PAIR_STREAM],
                      include_ties=cfg["labels.include_ties"])


def train_rank_model(header: CorpusHeader, train_items: Sequence[ContentItem], cfg: RunConfig,
                     progress=None) -> tuple[RankerModel, TrainLog]:
    rc = cfg.ranker()
    model = build_model(header, cfg)
    log = train(model, train_items, train_pairs(train_items, cfg, rc), rc, progress)
    return model, log


def baseline_targets(train_items: Sequence[ContentItem], cfg: RunConfig) -> np.ndarray:
    """Regression targets for the square-loss baseline.

    The (optionally distorted) raw engagement score, min-max scaled to
    [0, 1]. No rank normalization, so a monotone distortion of the raw
    scores changes what the regression fits.
    """
    raw = raw_scores(train_items, cfg.label_weights(), cfg["labels.use_human_score"], cfg.transform())
    lo, hi = raw.min(), raw.max()
    if hi == lo:
        return np.full_like(raw, 0.5)
    return (raw - lo) / (hi - lo)


def baseline_square_loss(header: CorpusHeader, train_items: Sequence[ContentItem], cfg: RunConfig,
                         progress=None) -> tuple[RankerModel, TrainLog]:
    """Same architecture, optimizer and seed as the rank model; pointwise squared loss."""
    model = build_model(header, cfg)
    log = train_square_loss(model, train_items, baseline_targets(train_items, cfg), cfg.ranker(), progress)
    return model, log


def eval_labels(items: Sequence[ContentItem], cfg: RunConfig) -> np.ndarray:
    """Ground truth for evaluation: annotator scores when every item has one,
    otherwise rank-normalized engagement labels."""
    if cfg["eval.use_human_score"] and all(it.human_score is not None for it in items):
        return np.array([it.human_score for it in items], dtype=np.float64)
    return make_labels(items, cfg.label_weights())


def eval_pairs(items: Sequence[ContentItem], labels: np.ndarray, cfg: RunConfig):
    return make_pairs(items, rank_normalize(labels), cfg["eval.delta"], cfg["eval.n_pairs"],
                      [cfg["seed"], EVAL_PAIR_STREAM])


def evaluate_split(items: Sequence[ContentItem], model, cfg: RunConfig, name: str = "rank") -> EvalReport:
    labels = eval_labels(items, cfg)
    pairs = eval_pairs(items, labels, cfg)
    return evaluate(items, labels, pairs, model, fingerprint=cfg.fingerprint(), name=name)


def save_model(path, model: RankerModel, cfg: RunConfig) -> None:
    save_checkpoint(path, model.params, {"model": model.spec(), "config": cfg.as_dict()})


def load_model(path) -> tuple[RankerModel, dict]:
    params, meta = load_checkpoint(path)
    return RankerModel.from_spec(meta["model"], params=params), meta
