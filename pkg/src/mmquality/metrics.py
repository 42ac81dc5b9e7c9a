"""Evaluation: linear correlation (Pearson LCC), pairwise ordering accuracy
and report assembly."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Mapping, Protocol, Sequence

import numpy as np

from .dataset_io import ContentItem
from .labeling import PairSample


class DegenerateVarianceError(ArithmeticError):
    """One of the compared score vectors is constant, so LCC is undefined."""


class Scorer(Protocol):
    def predict_batch(self, items: Sequence[ContentItem]) -> list[float]: ...


def lcc(y: Sequence[float], y_hat: Sequence[float]) -> float:
    """Pearson linear correlation coefficient between ``y`` and ``y_hat``."""
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.ndim != 1 or y.shape != y_hat.shape:
        raise ValueError(f"lcc needs two equal-length vectors, got {y.shape} and {y_hat.shape}")
    if y.size < 2:
        raise ValueError("lcc needs at least two points")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(y_hat))):
        raise ValueError("lcc inputs must be finite")
    dy = y - y.mean()
    dh = y_hat - y_hat.mean()
    ny = math.sqrt(float(dy @ dy))
    nh = math.sqrt(float(dh @ dh))
    if ny == 0.0 or nh == 0.0:
        which = "ground truth" if ny == 0.0 else "prediction"
        raise DegenerateVarianceError(f"lcc undefined: {which} vector has zero variance")
    r = float(dy @ dh) / (ny * nh)
    return max(-1.0, min(1.0, r))


def pairwise_accuracy(pairs: Sequence[PairSample], scores: Mapping[str, float]) -> float:
    """Fraction of decisive pairs ordered correctly; exact score ties count half."""
    hits = 0.0
    n = 0
    for p in pairs:
        if p.x == 0:
            continue
        d = scores[p.id_a] - scores[p.id_b]
        n += 1
        if d == 0.0:
            hits += 0.5
        elif (d > 0) == (p.x > 0):
            hits += 1.0
    if n == 0:
        raise ValueError("pairwise_accuracy needs at least one decisive pair")
    return hits / n


@dataclass
class EvalReport:
    lcc: float
    pairwise_accuracy: float
    n_items: int
    n_pairs: int
    fingerprint: str
    name: str = "rank"

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def evaluate(items: Sequence[ContentItem], labels: Sequence[float], pairs: Sequence[PairSample],
             model: Scorer, fingerprint: str = "", name: str = "rank") -> EvalReport:
    """Score ``items`` with ``model``; LCC against ``labels``, accuracy on ``pairs``."""
    if not items:
        raise ValueError("cannot evaluate an empty split")
    predictions = model.predict_batch(items)
    scores = {it.id: s for it, s in zip(items, predictions)}
    return EvalReport(
        lcc=lcc(labels, predictions),
        pairwise_accuracy=pairwise_accuracy(pairs, scores),
        n_items=len(items),
        n_pairs=sum(1 for p in pairs if p.x != 0),
        fingerprint=fingerprint,
        name=name,
    )


def format_table(reports: Sequence[EvalReport]) -> str:
    """Fixed-width comparison table, one row per report."""
    lines = [f"{'model':<20}{'LCC':>10}{'pair acc':>10}{'items':>8}{'pairs':>8}", "-" * 56]
    for r in reports:
        lines.append(f"{r.name:<20}{r.lcc:>10.4f}{r.pairwise_accuracy:>10.4f}{r.n_items:>8d}{r.n_pairs:>8d}")
    return "\n".join(lines)
