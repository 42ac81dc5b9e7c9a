"""Engagement-derived quality labels and ordered training pairs."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.stats import rankdata

from .dataset_io import ContentItem


class LabelConfigError(ValueError):
    pass


class PairingError(ValueError):
    pass


@dataclass(frozen=True)
class LabelWeights:
    likes: float = 1.0
    retweets: float = 1.5
    comments: float = 1.2

    def __post_init__(self):
        ws = (self.likes, self.retweets, self.comments)
        if any(w < 0 or not math.isfinite(w) for w in ws):
            raise LabelConfigError(f"label weights must be finite and non-negative, got {ws}")
        if not any(w > 0 for w in ws):
            raise LabelConfigError("at least one label weight must be positive")


@dataclass(frozen=True)
class PairSample:
    id_a: str
    id_b: str
    x: int

    def swapped(self) -> "PairSample":
        return PairSample(self.id_b, self.id_a, -self.x)


def engagement_score(item: ContentItem, weights: LabelWeights = LabelWeights(),
                     use_human_score: bool = False) -> float:
    """Weighted sum of ``log(1 + count)`` over likes, retweets and comments.

    With ``use_human_score`` an annotator score on the item replaces the
    engagement value.
    """
    if use_human_score and item.human_score is not None:
        return float(item.human_score)
    if min(item.likes, item.retweets, item.comments) < 0:
        raise ValueError(f"item {item.id!r}: negative engagement count")
    return (
        weights.likes * math.log1p(item.likes)
        + weights.retweets * math.log1p(item.retweets)
        + weights.comments * math.log1p(item.comments)
    )


def rank_normalize(scores: Sequence[float]) -> np.ndarray:
    """Map scores to ``(rank - 1) / (n - 1)`` using average ranks for ties."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1 or scores.size == 0:
        raise ValueError("rank_normalize needs a non-empty 1-d list")
    if scores.size == 1:
        return np.array([0.5])
    return (rankdata(scores, method="average") - 1.0) / (scores.size - 1.0)


def make_labels(items: Sequence[ContentItem], weights: LabelWeights = LabelWeights(),
                use_human_score: bool = False,
                transform: Callable[[np.ndarray], np.ndarray] | None = None) -> np.ndarray:
    """Rank-normalized labels for ``items``.

    ``transform`` is applied to the raw scores first; any strictly
    increasing transform leaves the result unchanged.
    """
    raw = np.array([engagement_score(it, weights, use_human_score) for it in items])
    if transform is not None:
        raw = np.asarray(transform(raw), dtype=np.float64)
    return rank_normalize(raw)


def pair_direction(label_a: float, label_b: float, delta: float) -> int:
    gap = label_a - label_b
    if gap >= delta and gap != 0.0:
        return 1
    if gap <= -delta and gap != 0.0:
        return -1
    return 0


def make_pairs(items: Sequence[ContentItem | str], labels: Sequence[float], delta: float = 0.1,
               count: int = 1000, seed: int | Sequence[int] = 7, include_ties: bool = False,
               max_attempts: int | None = None) -> list[PairSample]:
    """Draw ``count`` uniformly random ordered pairs of distinct items.

    Pairs whose label gap is below ``delta`` are emitted with ``x = 0`` when
    ``include_ties`` is set and resampled otherwise. Gives up with
    ``PairingError`` after ``max_attempts`` draws (default ``100 * count + 1000``).
    """
    ids = [it if isinstance(it, str) else it.id for it in items]
    labels = np.asarray(labels, dtype=np.float64)
    if len(ids) < 2:
        raise PairingError("need at least two items to form pairs")
    if labels.shape != (len(ids),):
        raise ValueError("labels must align with items")
    if not 0.0 <= delta < 1.0:
        raise ValueError(f"delta must lie in [0, 1), got {delta}")
    if count < 1:
        raise ValueError("count must be >= 1")
    if max_attempts is None:
        max_attempts = 100 * count + 1000

    rng = np.random.default_rng(seed)
    n = len(ids)
    out: list[PairSample] = []
    attempts = 0
    while len(out) < count:
        if attempts >= max_attempts:
            raise PairingError(
                f"only {len(out)} of {count} decisive pairs found after {attempts} draws "
                f"(delta={delta}); labels may be too concentrated"
            )
        chunk = min(max(2 * (count - len(out)), 64), max_attempts - attempts)
        a = rng.integers(0, n, size=chunk)
        b = rng.integers(0, n - 1, size=chunk)
        b = b + (b >= a)  # uniform over b != a
        attempts += chunk
        gap = labels[a] - labels[b]
        x = np.where((gap >= delta) & (gap != 0), 1, np.where((gap <= -delta) & (gap != 0), -1, 0))
        for ai, bi, xi in zip(a.tolist(), b.tolist(), x.tolist()):
            if xi == 0 and not include_ties:
                continue
            out.append(PairSample(ids[ai], ids[bi], xi))
            if len(out) == count:
                break
    return out


def dump_pairs(path, pairs: Sequence[PairSample]) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for p in pairs:
            fh.write(json.dumps({"a": p.id_a, "b": p.id_b, "x": p.x}, separators=(",", ":")) + "\n")


def load_pairs(path) -> list[PairSample]:
    out = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                out.append(PairSample(rec["a"], rec["b"], int(rec["x"])))
    return out
